#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "eegcvae/cvae.hpp"
#include "eegcvae/nn/gradcheck.hpp"
#include "eegcvae/nn/layers.hpp"
#include "eegcvae/nn/losses.hpp"

// Fixed table of finite-difference checks: every layer, every loss and the
// composed constrained-VAE net loss. Layer rows push a random linear probe
// sum(R ⊙ y) through the layer so every output entry carries gradient.

namespace eegcvae::gradcheck {

using Eigen::Index;

inline constexpr double kLayerThreshold = 1e-5;
inline constexpr double kComposedThreshold = 1e-4;
inline constexpr double kStep = 1e-5;

struct Row {
  std::string name;
  double threshold = 0.0;
  nn::GradCheckResult result;
  bool pass = false;
};

struct Options {
  std::uint64_t seed = 7;
  std::string corrupt;  // row whose analytic gradient is perturbed (negative control)
  Index composed_max_checks = 1000;
};

namespace detail {

inline Tensor2 random_tensor(Index rows, Index cols, Rng& rng, double scale = 1.0) {
  Tensor2 t(rows, cols);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = scale * normal(rng);
  return t;
}

inline long double probe(const Tensor2& y, const Tensor2& r) {
  long double s = 0.0L;
  for (Index i = 0; i < y.size(); ++i) s += static_cast<long double>(y.data()[i]) * r.data()[i];
  return s;
}

// Extended-precision reference forward. Re-derives the constrained-VAE net
// loss from the raw parameters in long double, independently of the layer
// code, so the finite-difference quotient is not swamped by double rounding.
namespace ext {

using Real = long double;
using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Row = Eigen::Matrix<Real, 1, Eigen::Dynamic>;

inline Mat up(const Tensor2& t) { return t.cast<Real>(); }
inline Real sigmoid(Real v) { return 1.0L / (1.0L + std::exp(-v)); }

inline Mat dense(const nn::Dense& d, const Mat& x) {
  Mat y = x * up(d.w);
  y.rowwise() += up(d.b).row(0);
  return y;
}

inline Mat lstm(const nn::Lstm& l, const Mat& x) {
  const Index hid = l.hidden_size();
  const Mat wx = up(l.wx), wh = up(l.wh);
  const Row b = up(l.b).row(0);
  Row h = Row::Zero(hid), c = Row::Zero(hid);
  Mat hs(x.rows(), hid);
  for (Index t = 0; t < x.rows(); ++t) {
    const Row a = x.row(t) * wx + h * wh + b;
    for (Index j = 0; j < hid; ++j) {
      const Real i = sigmoid(a(j)), f = sigmoid(a(hid + j)), g = std::tanh(a(2 * hid + j)),
                 o = sigmoid(a(3 * hid + j));
      c(j) = f * c(j) + i * g;
      h(j) = o * std::tanh(c(j));
    }
    hs.row(t) = h;
  }
  return hs;
}

inline Mat gru(const nn::Gru& l, const Mat& x) {
  const Index hid = l.hidden_size();
  const Mat wx = up(l.wx), wh = up(l.wh);
  const Row b = up(l.b).row(0);
  Row h = Row::Zero(hid);
  Mat hs(x.rows(), hid);
  for (Index t = 0; t < x.rows(); ++t) {
    const Row px = x.row(t) * wx + b;
    const Row zr = px.head(2 * hid) + h * wh.leftCols(2 * hid);
    Row rh(hid), z(hid);
    for (Index j = 0; j < hid; ++j) {
      z(j) = sigmoid(zr(j));
      rh(j) = sigmoid(zr(hid + j)) * h(j);
    }
    const Row n = px.tail(hid) + rh * wh.rightCols(hid);
    for (Index j = 0; j < hid; ++j) h(j) = (1.0L - z(j)) * h(j) + z(j) * std::tanh(n(j));
    hs.row(t) = h;
  }
  return hs;
}

inline Real net_loss(const cvae::CvaeParams& p, const Tensor2& x, Index label, const Tensor2& eps,
                     const cvae::NetLossOptions& opt) {
  const Mat xs = up(x);
  const Mat last = lstm(p.encoder, xs).bottomRows(1);
  const Row mu = dense(p.mean_head, last).row(0);
  const Row ls = dense(p.log_sigma_head, last).row(0);
  const Index steps = mu.size();

  Mat z(cvae::kLatentDim, steps);
  for (Index k = 0; k < cvae::kLatentDim; ++k) {
    for (Index t = 0; t < steps; ++t) z(k, t) = mu(t) + std::exp(ls(t)) * eps(k, t);
  }
  const Mat recon = lstm(p.decoder2, lstm(p.decoder1, z.transpose()));
  const Real mse = (recon - xs).squaredNorm() / static_cast<Real>(x.size());

  Real kl = 0.0L;
  for (Index t = 0; t < steps; ++t) kl += 0.5L * (mu(t) * mu(t) + std::exp(2.0L * ls(t)) - 1.0L - 2.0L * ls(t));
  if (opt.kl_count_replicas) kl *= cvae::kLatentDim;

  Mat h1 = gru(p.cls_gru1, z.row(cvae::kTaskRow).transpose());
  if (opt.dropout_mask) h1 = h1.cwiseProduct(up(*opt.dropout_mask));
  const Mat h2 = gru(p.cls_gru2, h1);
  const Row logits = dense(p.cls_out, dense(p.cls_dense, h2.bottomRows(1))).row(0);
  const Real top = logits.maxCoeff();
  const Real ce = -(logits(label) - top - std::log((logits.array() - top).exp().sum()));

  const auto& w = opt.weights;
  return static_cast<Real>(w.mse) * mse + static_cast<Real>(w.kl) * kl + static_cast<Real>(w.ce) * ce;
}

}  // namespace ext

// Adds 1% of its magnitude (or 1e-3) to one analytic entry.
inline void corrupt(std::vector<ParamRef>& analytic) {
  for (auto& a : analytic) {
    if (a.value->size() == 0) continue;
    double& v = a.value->data()[0];
    v += std::max(0.01 * std::abs(v), 1e-3);
    return;
  }
}

struct Case {
  const char* name;
  double threshold;
  nn::GradCheckResult (*run)(const Options&, bool corrupt);
};

template <typename Layer, typename Forward, typename Backward>
nn::GradCheckResult check_layer(Layer& layer, Tensor2& x, const Tensor2& r, Forward fwd, Backward bwd, bool bad,
                                std::uint64_t seed) {
  Layer grad = nn::zeros_like(layer);
  const Tensor2 dx = bwd(layer, x, r, grad);
  Tensor2 dx_copy = dx;
  std::vector<ParamRef> params = nn::collect_params(layer);
  std::vector<ParamRef> analytic = nn::collect_params(grad);
  params.push_back({"x", &x});
  analytic.push_back({"x", &dx_copy});
  if (bad) corrupt(analytic);
  return nn::grad_check([&] { return probe(fwd(layer, x), r); }, params, analytic, kStep, 100000, seed);
}

inline nn::GradCheckResult dense_case(const Options& o, bool bad) {
  Rng rng = make_rng(o.seed, 11);
  nn::Dense layer = nn::Dense::init(4, 3, rng);
  layer.b = random_tensor(1, 3, rng, 0.1);
  Tensor2 x = random_tensor(5, 4, rng);
  const Tensor2 r = random_tensor(5, 3, rng);
  return check_layer(
      layer, x, r, [](const nn::Dense& l, const Tensor2& in) { return l.forward(in); },
      [](const nn::Dense& l, const Tensor2& in, const Tensor2& dy, nn::Dense& g) { return l.backward(in, dy, g); },
      bad, o.seed);
}

inline nn::GradCheckResult lstm_case(const Options& o, bool bad) {
  Rng rng = make_rng(o.seed, 12);
  nn::Lstm layer = nn::Lstm::init(4, 3, rng);
  layer.b += random_tensor(1, layer.b.cols(), rng, 0.1);
  Tensor2 x = random_tensor(6, 4, rng);
  const Tensor2 r = random_tensor(6, 3, rng);
  return check_layer(
      layer, x, r, [](const nn::Lstm& l, const Tensor2& in) { return l.forward(in); },
      [](const nn::Lstm& l, const Tensor2& in, const Tensor2& dy, nn::Lstm& g) {
        nn::Lstm::Cache c;
        l.forward(in, &c);
        return l.backward(c, dy, g);
      },
      bad, o.seed);
}

inline nn::GradCheckResult gru_case(const Options& o, bool bad) {
  Rng rng = make_rng(o.seed, 13);
  nn::Gru layer = nn::Gru::init(4, 3, rng);
  layer.b += random_tensor(1, layer.b.cols(), rng, 0.1);
  Tensor2 x = random_tensor(6, 4, rng);
  const Tensor2 r = random_tensor(6, 3, rng);
  return check_layer(
      layer, x, r, [](const nn::Gru& l, const Tensor2& in) { return l.forward(in); },
      [](const nn::Gru& l, const Tensor2& in, const Tensor2& dy, nn::Gru& g) {
        nn::Gru::Cache c;
        l.forward(in, &c);
        return l.backward(c, dy, g);
      },
      bad, o.seed);
}

inline nn::GradCheckResult tcn_case(const Options& o, bool bad) {
  Rng rng = make_rng(o.seed, 14);
  nn::Tcn layer = nn::Tcn::init(3, 4, rng);
  for (auto& lv : layer.levels) lv.b = random_tensor(1, lv.b.cols(), rng, 0.1);
  Tensor2 x = random_tensor(12, 3, rng);
  const Tensor2 r = random_tensor(12, 4, rng);
  return check_layer(
      layer, x, r, [](const nn::Tcn& l, const Tensor2& in) { return l.forward(in); },
      [](const nn::Tcn& l, const Tensor2& in, const Tensor2& dy, nn::Tcn& g) {
        nn::Tcn::Cache c;
        l.forward(in, &c);
        return l.backward(c, dy, g);
      },
      bad, o.seed);
}

inline nn::GradCheckResult mse_case(const Options& o, bool bad) {
  Rng rng = make_rng(o.seed, 21);
  Tensor2 pred = random_tensor(5, 4, rng);
  const Tensor2 target = random_tensor(5, 4, rng);
  Tensor2 g = nn::mse_loss(pred, target).grad;
  std::vector<ParamRef> analytic{{"pred", &g}};
  if (bad) corrupt(analytic);
  return nn::grad_check([&] { return nn::mse_loss(pred, target).value; }, {{"pred", &pred}}, analytic, kStep);
}

inline nn::GradCheckResult ce_case(const Options& o, bool bad) {
  Rng rng = make_rng(o.seed, 22);
  Tensor2 logits = random_tensor(1, 4, rng);
  Tensor2 g = nn::ce_loss(nn::softmax(logits.row(0)), 2).dlogits;
  std::vector<ParamRef> analytic{{"logits", &g}};
  if (bad) corrupt(analytic);
  return nn::grad_check([&] { return nn::ce_loss(nn::softmax(logits.row(0)), 2).value; }, {{"logits", &logits}},
                        analytic, kStep);
}

inline nn::GradCheckResult kl_case(const Options& o, bool bad) {
  Rng rng = make_rng(o.seed, 23);
  Tensor2 mu = random_tensor(1, 8, rng);
  Tensor2 ls = random_tensor(1, 8, rng, 0.5);
  const nn::KlResult k = nn::kl_loss(mu, ls);
  Tensor2 dmu = k.dmu;
  Tensor2 dls = k.dlog_sigma;
  std::vector<ParamRef> analytic{{"mu", &dmu}, {"log_sigma", &dls}};
  if (bad) corrupt(analytic);
  return nn::grad_check([&] { return nn::kl_loss(mu, ls).value; }, {{"mu", &mu}, {"log_sigma", &ls}}, analytic,
                        kStep);
}

inline nn::GradCheckResult ctc_case(const Options& o, bool bad) {
  Rng rng = make_rng(o.seed, 24);
  Tensor2 logits = random_tensor(7, 4, rng);  // V = 3 plus blank
  const std::vector<int> target{0, 2, 2};
  const Tensor2 lp = nn::log_softmax_rows(logits);
  Tensor2 g = nn::log_softmax_rows_backward(lp, nn::ctc_loss(lp, target).grad);
  std::vector<ParamRef> analytic{{"logits", &g}};
  if (bad) corrupt(analytic);
  return nn::grad_check([&] { return nn::ctc_loss(nn::log_softmax_rows(logits), target).value; },
                        {{"logits", &logits}}, analytic, kStep);
}

inline nn::GradCheckResult composed(const Options& o, bool bad, const cvae::CvaeShape& shape, Index max_checks,
                                    std::uint64_t stream) {
  Rng rng = make_rng(o.seed, stream);
  cvae::CvaeParams p = cvae::CvaeParams::init(shape, rng);
  const Tensor2 x = random_tensor(shape.seq_len, shape.feature_dim, rng, 0.5);
  const Tensor2 eps = random_tensor(cvae::kLatentDim, shape.seq_len, rng);
  const Tensor2 mask = nn::dropout_mask(shape.seq_len, shape.classifier_gru1, 0.2, rng);
  cvae::NetLossOptions opt;
  opt.dropout_mask = &mask;
  cvae::NetLossResult r = cvae::net_loss(p, x, 1, eps, opt);
  std::vector<ParamRef> analytic = nn::collect_params(r.grads);
  if (bad) corrupt(analytic);
  return nn::grad_check([&] { return ext::net_loss(p, x, 1, eps, opt); }, nn::collect_params(p), analytic,
                        kStep, max_checks, o.seed);
}

inline nn::GradCheckResult composed_narrow_case(const Options& o, bool bad) {
  return composed(o, bad, {8, 30, 16, 16, 16, 8, 8, 2}, 1000000, 31);
}

inline nn::GradCheckResult composed_full_case(const Options& o, bool bad) {
  return composed(o, bad, {8, 30, 128, 128, 128, 64, 64, 2}, o.composed_max_checks, 32);
}

inline const std::array<Case, 10>& cases() {
  static const std::array<Case, 10> table{{
      {"dense", kLayerThreshold, dense_case},
      {"lstm", kLayerThreshold, lstm_case},
      {"gru", kLayerThreshold, gru_case},
      {"tcn", kLayerThreshold, tcn_case},
      {"mse_loss", kLayerThreshold, mse_case},
      {"ce_loss", kLayerThreshold, ce_case},
      {"kl_loss", kLayerThreshold, kl_case},
      {"ctc_loss", kLayerThreshold, ctc_case},
      {"cvae_net_loss_narrow", kComposedThreshold, composed_narrow_case},
      {"cvae_net_loss_full", kComposedThreshold, composed_full_case},
  }};
  return table;
}

}  // namespace detail

inline std::vector<std::string> row_names() {
  std::vector<std::string> out;
  for (const auto& c : detail::cases()) out.emplace_back(c.name);
  return out;
}

inline std::vector<Row> run_suite(const Options& o = {}) {
  std::vector<Row> rows;
  for (const auto& c : detail::cases()) {
    Row row{c.name, c.threshold, c.run(o, o.corrupt == c.name), false};
    row.pass = row.result.checked > 0 && row.result.max_rel_error <= row.threshold;
    rows.push_back(std::move(row));
  }
  return rows;
}

inline bool all_pass(const std::vector<Row>& rows) {
  for (const auto& r : rows) {
    if (!r.pass) return false;
  }
  return !rows.empty();
}

}  // namespace eegcvae::gradcheck
