#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "eegcvae/nn/layers.hpp"
#include "eegcvae/nn/losses.hpp"
#include "eegcvae/nn/optim.hpp"

// Constrained variational autoencoder.
//
// An LSTM encoder summarizes a T x D feature sequence into its last hidden
// state; two dense heads map that state to a T-vector mean and a T-vector
// log standard deviation, each replicated into K = 5 identical latent rows.
// A reparameterized sample z (K x T) is decoded by two stacked LSTMs back to
// T x D. The last latent row z[4] is additionally read as a T-step scalar
// sequence by a GRU classifier, and the classifier's cross-entropy is added to
// the reconstruction and KL terms so that this row is pushed towards the
// class-relevant part of the input. After training z[4] at eps = 0 is the
// one-dimensional feature sequence.

namespace eegcvae::cvae {

using Eigen::Index;

inline constexpr Index kLatentDim = 5;
inline constexpr Index kTaskRow = kLatentDim - 1;

struct LossWeights {
  double mse = 1.0;
  double kl = 1.0;
  double ce = 1.0;
};

struct CvaeShape {
  Index seq_len = 200;
  Index feature_dim = 30;
  Index encoder_hidden = 128;
  Index decoder_hidden = 128;
  Index classifier_gru1 = 128;
  Index classifier_gru2 = 64;
  Index classifier_dense = 64;
  Index n_classes = 2;
};

struct CvaeParams {
  nn::Lstm encoder;
  nn::Dense mean_head;
  nn::Dense log_sigma_head;
  nn::Lstm decoder1;
  nn::Lstm decoder2;  // hidden size = feature_dim; its hidden sequence is the reconstruction
  nn::Gru cls_gru1;
  nn::Gru cls_gru2;
  nn::Dense cls_dense;
  nn::Dense cls_out;

  static CvaeParams init(const CvaeShape& s, Rng& rng) {
    CvaeParams p;
    p.encoder = nn::Lstm::init(s.feature_dim, s.encoder_hidden, rng);
    p.mean_head = nn::Dense::init(s.encoder_hidden, s.seq_len, rng);
    p.log_sigma_head = nn::Dense::init(s.encoder_hidden, s.seq_len, rng);
    p.decoder1 = nn::Lstm::init(kLatentDim, s.decoder_hidden, rng);
    p.decoder2 = nn::Lstm::init(s.decoder_hidden, s.feature_dim, rng);
    p.cls_gru1 = nn::Gru::init(1, s.classifier_gru1, rng);
    p.cls_gru2 = nn::Gru::init(s.classifier_gru1, s.classifier_gru2, rng);
    p.cls_dense = nn::Dense::init(s.classifier_gru2, s.classifier_dense, rng);
    p.cls_out = nn::Dense::init(s.classifier_dense, s.n_classes, rng);
    return p;
  }

  Index seq_len() const { return mean_head.output_size(); }
  Index feature_dim() const { return encoder.input_size(); }
  Index n_classes() const { return cls_out.output_size(); }

  CvaeShape shape() const {
    return {seq_len(),
            feature_dim(),
            encoder.hidden_size(),
            decoder1.hidden_size(),
            cls_gru1.hidden_size(),
            cls_gru2.hidden_size(),
            cls_dense.output_size(),
            n_classes()};
  }

  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    auto sub = [&](const std::string& prefix, auto& layer) {
      layer.for_each_param([&](const std::string& name, auto& t) { f(prefix + "." + name, t); });
    };
    sub("encoder", self.encoder);
    sub("mean_head", self.mean_head);
    sub("log_sigma_head", self.log_sigma_head);
    sub("decoder1", self.decoder1);
    sub("decoder2", self.decoder2);
    sub("cls_gru1", self.cls_gru1);
    sub("cls_gru2", self.cls_gru2);
    sub("cls_dense", self.cls_dense);
    sub("cls_out", self.cls_out);
  }
  template <typename F> void for_each_param(F&& f) { visit(*this, f); }
  template <typename F> void for_each_param(F&& f) const { visit(*this, f); }
};

struct LatentTensor {
  Tensor2 z;          // K x T
  Tensor2 mu;         // K x T, identical rows
  Tensor2 log_sigma;  // K x T, identical rows
};

struct LossBreakdown {
  double mse = 0.0;
  double kl = 0.0;
  double asr_ce = 0.0;
  double net = 0.0;
  LossWeights weights;
};

inline Tensor2 replicate_rows(const RowVec& v) { return v.replicate(kLatentDim, 1); }

inline void check_input(const CvaeParams& p, const Tensor2& features) {
  if (features.cols() != p.feature_dim()) {
    throw ShapeError("cvae input feature dim " + std::to_string(features.cols()) + " != " +
                     std::to_string(p.feature_dim()));
  }
  if (features.rows() != p.seq_len()) {
    throw ShapeError("cvae sequence length " + std::to_string(features.rows()) +
                     " != configured length " + std::to_string(p.seq_len()));
  }
}

struct EncodeCache {
  nn::Lstm::Cache lstm;
  Tensor2 last_hidden;  // 1 x H
};

inline std::pair<Tensor2, Tensor2> encode(const CvaeParams& p, const Tensor2& features,
                                          EncodeCache* cache = nullptr) {
  check_input(p, features);
  const Tensor2 hs = p.encoder.forward(features, cache ? &cache->lstm : nullptr);
  Tensor2 last = hs.bottomRows(1);
  const RowVec mu = p.mean_head.forward(last).row(0);
  const RowVec log_sigma = p.log_sigma_head.forward(last).row(0);
  if (cache) cache->last_hidden = std::move(last);
  return {replicate_rows(mu), replicate_rows(log_sigma)};
}

// z = mu + exp(log_sigma) ⊙ eps
inline Tensor2 sample(const Tensor2& mu, const Tensor2& log_sigma, const Tensor2& eps) {
  require_shape(log_sigma, mu.rows(), mu.cols(), "sample log_sigma");
  require_shape(eps, mu.rows(), mu.cols(), "sample eps");
  return (mu.array() + log_sigma.array().exp() * eps.array()).matrix();
}

struct DecodeCache {
  nn::Lstm::Cache l1;
  nn::Lstm::Cache l2;
};

// z (K x T) is read as T frames of K features.
inline Tensor2 decode(const CvaeParams& p, const Tensor2& z, DecodeCache* cache = nullptr) {
  require_shape(z, kLatentDim, p.seq_len(), "decode z");
  const Tensor2 frames = z.transpose();
  const Tensor2 h1 = p.decoder1.forward(frames, cache ? &cache->l1 : nullptr);
  return p.decoder2.forward(h1, cache ? &cache->l2 : nullptr);
}

struct ClassifierCache {
  nn::Gru::Cache g1;
  Tensor2 mask;  // empty in inference mode
  nn::Gru::Cache g2;
  Tensor2 g2_last;
  Tensor2 dense_out;
  RowVec probs;
};

// z_task is the task row as a T x 1 sequence. dropout_mask (T x gru1 hidden)
// selects training mode; nullptr is inference.
inline RowVec classify_latent(const CvaeParams& p, const Tensor2& z_task,
                              const Tensor2* dropout_mask = nullptr,
                              ClassifierCache* cache = nullptr) {
  require_shape(z_task, p.seq_len(), 1, "classifier input");
  ClassifierCache local;
  ClassifierCache& c = cache ? *cache : local;
  Tensor2 h1 = p.cls_gru1.forward(z_task, &c.g1);
  if (dropout_mask) {
    require_shape(*dropout_mask, h1.rows(), h1.cols(), "classifier dropout mask");
    c.mask = *dropout_mask;
    h1 = h1.cwiseProduct(*dropout_mask);
  } else {
    c.mask.resize(0, 0);
  }
  const Tensor2 h2 = p.cls_gru2.forward(h1, &c.g2);
  c.g2_last = h2.bottomRows(1);
  c.dense_out = p.cls_dense.forward(c.g2_last);
  const Tensor2 logits = p.cls_out.forward(c.dense_out);
  c.probs = nn::softmax(logits.row(0));
  return c.probs;
}

struct NetLossOptions {
  LossWeights weights;
  bool kl_count_replicas = false;  // count the KL of all K replicated rows
  const Tensor2* dropout_mask = nullptr;
  bool compute_grads = true;
};

struct NetLossResult {
  LossBreakdown loss;
  CvaeParams grads;  // meaningful when compute_grads
  Tensor2 dfeatures;
};

inline NetLossResult net_loss(const CvaeParams& p, const Tensor2& features, Index label,
                              const Tensor2& eps, const NetLossOptions& opt = {}) {
  if (label < 0 || label >= p.n_classes()) throw ParameterError("cvae label out of range");
  EncodeCache enc;
  const auto [mu, log_sigma] = encode(p, features, &enc);
  const Tensor2 z = sample(mu, log_sigma, eps);
  DecodeCache dec;
  const Tensor2 recon = decode(p, z, &dec);
  ClassifierCache cls;
  const RowVec probs = classify_latent(p, z.row(kTaskRow).transpose(), opt.dropout_mask, &cls);

  const nn::LossGrad mse = nn::mse_loss(recon, features);
  const double replicas = opt.kl_count_replicas ? static_cast<double>(kLatentDim) : 1.0;
  const nn::KlResult kl = nn::kl_loss(mu.topRows(1), log_sigma.topRows(1));
  const nn::CeResult ce = nn::ce_loss(probs, label);

  NetLossResult out;
  const LossWeights& w = opt.weights;
  out.loss = {mse.value, replicas * kl.value, ce.value, 0.0, w};
  out.loss.net = w.mse * out.loss.mse + w.kl * out.loss.kl + w.ce * out.loss.asr_ce;
  if (!opt.compute_grads) return out;

  CvaeParams& g = out.grads;
  g = nn::zeros_like(p);

  // Reconstruction path back to z.
  const Tensor2 dh1 = p.decoder2.backward(dec.l2, mse.grad * w.mse, g.decoder2);
  const Tensor2 dframes = p.decoder1.backward(dec.l1, dh1, g.decoder1);
  Tensor2 dz = dframes.transpose();

  // Classifier path into the task row; skipped entirely when it carries no weight.
  if (w.ce != 0.0) {
    const Tensor2 dlogits = ce.dlogits * w.ce;
    const Tensor2 ddense = p.cls_out.backward(cls.dense_out, dlogits, g.cls_out);
    const Tensor2 dg2_last = p.cls_dense.backward(cls.g2_last, ddense, g.cls_dense);
    Tensor2 dg2 = Tensor2::Zero(p.seq_len(), p.cls_gru2.hidden_size());
    dg2.bottomRows(1) = dg2_last;
    Tensor2 dh = p.cls_gru2.backward(cls.g2, dg2, g.cls_gru2);
    if (cls.mask.size() > 0) dh = dh.cwiseProduct(cls.mask);
    const Tensor2 dz_task = p.cls_gru1.backward(cls.g1, dh, g.cls_gru1);
    dz.row(kTaskRow) += dz_task.transpose();
  }

  // Reparameterization, then fold the K replicas back onto the shared T-vectors.
  const Tensor2 dls_rows = (dz.array() * log_sigma.array().exp() * eps.array()).matrix();
  RowVec dmu = dz.colwise().sum();
  RowVec dls = dls_rows.colwise().sum();
  dmu += kl.dmu.row(0) * (w.kl * replicas);
  dls += kl.dlog_sigma.row(0) * (w.kl * replicas);

  const Tensor2 dlast = p.mean_head.backward(enc.last_hidden, dmu, g.mean_head) +
                        p.log_sigma_head.backward(enc.last_hidden, dls, g.log_sigma_head);
  Tensor2 dhs = Tensor2::Zero(p.seq_len(), p.encoder.hidden_size());
  dhs.bottomRows(1) = dlast;
  out.dfeatures = p.encoder.backward(enc.lstm, dhs, g.encoder);
  return out;
}

// Task-row sequence at eps = 0 (the latent mean), T x 1.
inline Tensor2 extract_dim1(const CvaeParams& p, const Tensor2& features) {
  const auto [mu, log_sigma] = encode(p, features);
  return mu.row(kTaskRow).transpose();
}

// ---------------------------------------------------------------------------

struct Example {
  Tensor2 features;  // T x D
  Index label = 0;
};

struct TrainConfig {
  int epochs = 100;
  LossWeights weights;
  bool kl_count_replicas = false;
  double dropout = 0.2;
  double lr = 1e-3;
  double rho = 0.9;
  double eps = 1e-7;
};

struct TrainResult {
  CvaeParams params;
  std::vector<LossBreakdown> curve;  // per-epoch means
};

// Joint training of VAE and latent classifier with batch size one and a single
// RMSProp optimizer over all parameters. Shuffling, eps draws and dropout
// masks all come from one stream derived from `seed`.
inline TrainResult train_joint(CvaeParams params, const std::vector<Example>& data,
                               const TrainConfig& cfg, std::uint64_t seed) {
  if (data.empty()) throw ParameterError("train_joint: empty training set");
  if (cfg.epochs < 1) throw ConfigError("cvae.epochs must be >= 1");
  for (const auto& ex : data) check_input(params, ex.features);

  Rng rng = make_rng(seed, 0xC0AE);
  nn::RmsProp opt{cfg.lr, cfg.rho, cfg.eps, {}};
  const std::vector<ParamRef> refs = nn::collect_params(params);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  NetLossOptions lopt;
  lopt.weights = cfg.weights;
  lopt.kl_count_replicas = cfg.kl_count_replicas;

  TrainResult out;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    LossBreakdown mean;
    mean.weights = cfg.weights;
    for (std::size_t idx : order) {
      Tensor2 eps(kLatentDim, params.seq_len());
      for (Index i = 0; i < eps.size(); ++i) eps.data()[i] = normal(rng);
      const Tensor2 mask =
          nn::dropout_mask(params.seq_len(), params.cls_gru1.hidden_size(), cfg.dropout, rng);
      lopt.dropout_mask = &mask;
      NetLossResult r = net_loss(params, data[idx].features, data[idx].label, eps, lopt);
      mean.mse += r.loss.mse;
      mean.kl += r.loss.kl;
      mean.asr_ce += r.loss.asr_ce;
      mean.net += r.loss.net;
      opt.step(refs, nn::collect_params(r.grads));
    }
    const double n = static_cast<double>(data.size());
    mean.mse /= n;
    mean.kl /= n;
    mean.asr_ce /= n;
    mean.net /= n;
    out.curve.push_back(mean);
  }
  out.params = std::move(params);
  return out;
}

}  // namespace eegcvae::cvae
