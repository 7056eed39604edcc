#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "eegcvae/nn/layers.hpp"
#include "eegcvae/nn/losses.hpp"
#include "eegcvae/nn/optim.hpp"

// Downstream recognizers: an isolated-utterance classifier (TCN -> GRU ->
// softmax), a CTC transcriber over word tokens with best-path and
// LM-fused prefix beam decoding, and the accuracy / WER metrics.

namespace eegcvae::asr {

using Eigen::Index;

// ---------------------------------------------------------------------------
// Isolated recognition.

struct IsolatedShape {
  Index input_dim = 30;
  Index tcn_filters = 128;
  Index gru_hidden = 32;
  Index n_classes = 2;
};

struct IsolatedModel {
  nn::Tcn tcn;
  nn::Gru gru;
  nn::Dense out;

  static IsolatedModel init(const IsolatedShape& s, Rng& rng) {
    if (s.n_classes < 2) throw ConfigError("isolated.n_classes must be >= 2");
    IsolatedModel m;
    m.tcn = nn::Tcn::init(s.input_dim, s.tcn_filters, rng);
    m.gru = nn::Gru::init(s.tcn_filters, s.gru_hidden, rng);
    m.out = nn::Dense::init(s.gru_hidden, s.n_classes, rng);
    return m;
  }

  Index input_dim() const { return tcn.input_size(); }
  Index n_classes() const { return out.output_size(); }

  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    auto sub = [&](const std::string& prefix, auto& layer) {
      layer.for_each_param([&](const std::string& name, auto& t) { f(prefix + "." + name, t); });
    };
    sub("tcn", self.tcn);
    sub("gru", self.gru);
    sub("out", self.out);
  }
  template <typename F> void for_each_param(F&& f) { visit(*this, f); }
  template <typename F> void for_each_param(F&& f) const { visit(*this, f); }
};

struct IsolatedExample {
  Tensor2 features;  // T x D
  Index label = 0;
};

struct IsolatedPass {
  nn::Tcn::Cache tcn;
  Tensor2 mask;
  nn::Gru::Cache gru;
  Tensor2 last;
  RowVec probs;
};

inline RowVec isolated_forward(const IsolatedModel& m, const Tensor2& x, const Tensor2* mask = nullptr,
                               IsolatedPass* pass = nullptr) {
  IsolatedPass local;
  IsolatedPass& c = pass ? *pass : local;
  Tensor2 h = m.tcn.forward(x, &c.tcn);
  if (mask) {
    require_shape(*mask, h.rows(), h.cols(), "isolated dropout mask");
    c.mask = *mask;
    h = h.cwiseProduct(*mask);
  } else {
    c.mask.resize(0, 0);
  }
  const Tensor2 g = m.gru.forward(h, &c.gru);
  c.last = g.bottomRows(1);
  c.probs = nn::softmax(m.out.forward(c.last).row(0));
  return c.probs;
}

// Cross-entropy of one example; gradients scaled by `scale` are accumulated into grad.
inline double isolated_loss(const IsolatedModel& m, const Tensor2& x, Index label, const Tensor2* mask,
                            IsolatedModel* grad, double scale = 1.0) {
  IsolatedPass pass;
  const RowVec probs = isolated_forward(m, x, mask, &pass);
  const nn::CeResult ce = nn::ce_loss(probs, label);
  if (grad) {
    const Tensor2 dlast = m.out.backward(pass.last, ce.dlogits * scale, grad->out);
    Tensor2 dg = Tensor2::Zero(x.rows(), m.gru.hidden_size());
    dg.bottomRows(1) = dlast;
    Tensor2 dh = m.gru.backward(pass.gru, dg, grad->gru);
    if (pass.mask.size() > 0) dh = dh.cwiseProduct(pass.mask);
    m.tcn.backward(pass.tcn, dh, grad->tcn);
  }
  return ce.value;
}

// Arg-max with ties resolved towards the lower class index.
inline Index argmax(const RowVec& v) {
  Index best = 0;
  for (Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = i;
  }
  return best;
}

inline Index predict(const IsolatedModel& m, const Tensor2& x) { return argmax(isolated_forward(m, x)); }

inline double accuracy(const std::vector<Index>& predicted, const std::vector<Index>& truth) {
  if (predicted.size() != truth.size()) throw ShapeError("accuracy: prediction/truth count mismatch");
  if (truth.empty()) throw ParameterError("accuracy: empty test set");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) correct += predicted[i] == truth[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(truth.size());
}

inline double accuracy(const IsolatedModel& m, const std::vector<IsolatedExample>& test) {
  std::vector<Index> pred, truth;
  for (const auto& ex : test) {
    pred.push_back(predict(m, ex.features));
    truth.push_back(ex.label);
  }
  return accuracy(pred, truth);
}

struct IsolatedTrainConfig {
  int epochs = 200;
  Index batch = 200;
  double dropout = 0.2;
  double lr = 1e-3;
  Index tcn_filters = 128;
  Index gru_hidden = 32;
};

struct IsolatedTrainResult {
  IsolatedModel model;
  std::vector<double> curve;  // mean training CE per epoch
  Index effective_batch = 0;
};

// Adam on mean cross-entropy over mini-batches; a batch larger than the
// dataset is clamped to the dataset size.
inline IsolatedTrainResult train_isolated(const std::vector<IsolatedExample>& data, Index n_classes,
                                          const IsolatedTrainConfig& cfg, std::uint64_t seed) {
  if (data.empty()) throw ParameterError("train_isolated: empty dataset");
  if (cfg.epochs < 1) throw ConfigError("isolated.epochs must be >= 1");
  if (cfg.batch < 1) throw ConfigError("isolated.batch must be >= 1");
  const Index steps = data.front().features.rows();
  const Index dim = data.front().features.cols();
  for (std::size_t i = 0; i < data.size(); ++i) {
    require_shape(data[i].features, steps, dim, "isolated example " + std::to_string(i));
    if (data[i].label < 0 || data[i].label >= n_classes) {
      throw ParameterError("isolated example " + std::to_string(i) + " label out of range");
    }
  }

  Rng rng = make_rng(seed, 0x150);
  IsolatedTrainResult out;
  out.model = IsolatedModel::init({dim, cfg.tcn_filters, cfg.gru_hidden, n_classes}, rng);
  out.effective_batch = std::min<Index>(cfg.batch, static_cast<Index>(data.size()));
  IsolatedModel& model = out.model;
  const std::vector<ParamRef> refs = nn::collect_params(model);
  nn::Adam opt;
  opt.lr = cfg.lr;

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(out.effective_batch)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(out.effective_batch));
      const double scale = 1.0 / static_cast<double>(stop - start);
      IsolatedModel grad = nn::zeros_like(model);
      for (std::size_t k = start; k < stop; ++k) {
        const auto& ex = data[order[k]];
        const Tensor2 mask = nn::dropout_mask(steps, model.tcn.output_size(), cfg.dropout, rng);
        total += isolated_loss(model, ex.features, ex.label, &mask, &grad, scale);
      }
      opt.step(refs, nn::collect_params(grad));
    }
    out.curve.push_back(total / static_cast<double>(data.size()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Transcripts and vocabulary.

inline std::vector<std::string> split_words(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> words;
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

inline std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
    for (std::size_t i = 0; i < words_.size(); ++i) index_[words_[i]] = static_cast<int>(i);
  }

  // Unique words in first-appearance order.
  static Vocabulary from_corpus(const std::vector<std::string>& transcripts) {
    std::vector<std::string> words;
    std::unordered_map<std::string, int> seen;
    for (const auto& t : transcripts) {
      for (const auto& w : split_words(t)) {
        if (seen.emplace(w, 0).second) words.push_back(w);
      }
    }
    return Vocabulary(std::move(words));
  }

  int size() const { return static_cast<int>(words_.size()); }
  int blank() const { return size(); }
  const std::vector<std::string>& words() const { return words_; }

  std::vector<int> encode(const std::string& text) const {
    std::vector<int> ids;
    for (const auto& w : split_words(text)) {
      auto it = index_.find(w);
      if (it == index_.end()) throw ParameterError("word not in vocabulary: " + w);
      ids.push_back(it->second);
    }
    return ids;
  }

  std::string decode(const std::vector<int>& ids) const {
    std::vector<std::string> words;
    for (int id : ids) words.push_back(words_.at(static_cast<std::size_t>(id)));
    return join_words(words);
  }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

// ---------------------------------------------------------------------------
// Word error rate.

inline std::size_t edit_distance(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  std::vector<std::size_t> prev(hyp.size() + 1), cur(hyp.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= hyp.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[hyp.size()];
}

inline double wer(const std::string& reference, const std::string& hypothesis) {
  const auto ref = split_words(reference);
  if (ref.empty()) throw ParameterError("wer: empty reference");
  return static_cast<double>(edit_distance(ref, split_words(hypothesis))) / static_cast<double>(ref.size());
}

// Corpus-level WER: total edits over total reference words.
inline double corpus_wer(const std::vector<std::string>& refs, const std::vector<std::string>& hyps) {
  if (refs.size() != hyps.size()) throw ShapeError("corpus_wer: size mismatch");
  std::size_t edits = 0, words = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto r = split_words(refs[i]);
    if (r.empty()) throw ParameterError("wer: empty reference");
    edits += edit_distance(r, split_words(hyps[i]));
    words += r.size();
  }
  return static_cast<double>(edits) / static_cast<double>(words);
}

// ---------------------------------------------------------------------------
// Bigram language model with add-one smoothing over the vocabulary.

class BigramLm {
 public:
  static constexpr int kStart = -1;

  BigramLm() = default;
  BigramLm(const Vocabulary& vocab, const std::vector<std::string>& corpus) : vocab_size_(vocab.size()) {
    if (vocab_size_ < 1) throw ParameterError("language model needs a non-empty vocabulary");
    for (const auto& line : corpus) {
      int prev = kStart;
      for (int w : vocab.encode(line)) {
        ++bigram_[{prev, w}];
        ++history_[prev];
        prev = w;
      }
    }
  }

  int vocab_size() const { return vocab_size_; }

  double prob(int history, int word) const {
    if (word < 0 || word >= vocab_size_) throw ParameterError("language model word out of range");
    const auto b = bigram_.find({history, word});
    const auto h = history_.find(history);
    const double num = (b == bigram_.end() ? 0.0 : static_cast<double>(b->second)) + 1.0;
    const double den = (h == history_.end() ? 0.0 : static_cast<double>(h->second)) + vocab_size_;
    return num / den;
  }

  double log_prob(int history, int word) const { return std::log(prob(history, word)); }

  double sentence_log_prob(const std::vector<int>& words) const {
    double lp = 0.0;
    int prev = kStart;
    for (int w : words) {
      lp += log_prob(prev, w);
      prev = w;
    }
    return lp;
  }

  // Raw counts, for persistence.
  const std::map<std::pair<int, int>, std::int64_t>& bigram_counts() const { return bigram_; }
  void set_counts(int vocab_size, std::map<std::pair<int, int>, std::int64_t> bigrams) {
    vocab_size_ = vocab_size;
    bigram_ = std::move(bigrams);
    history_.clear();
    for (const auto& [key, n] : bigram_) history_[key.first] += n;
  }

 private:
  int vocab_size_ = 0;
  std::map<std::pair<int, int>, std::int64_t> bigram_;
  std::map<int, std::int64_t> history_;
};

inline BigramLm train_lm(const Vocabulary& vocab, const std::vector<std::string>& corpus) {
  return BigramLm(vocab, corpus);
}

// ---------------------------------------------------------------------------
// CTC decoding.

// Per-frame arg-max, collapse repeats, drop blanks (blank = last column).
inline std::vector<int> ctc_greedy_decode(const Tensor2& log_probs) {
  const int blank = static_cast<int>(log_probs.cols()) - 1;
  std::vector<int> out;
  int prev = -1;
  for (Index t = 0; t < log_probs.rows(); ++t) {
    const int best = static_cast<int>(argmax(log_probs.row(t)));
    if (best != blank && best != prev) out.push_back(best);
    prev = best;
  }
  return out;
}

// log P_ctc(words) + lm_weight · log P_lm(words)
inline double fused_score(const Tensor2& log_probs, const std::vector<int>& words, const BigramLm* lm,
                          double lm_weight) {
  if (nn::ctc_min_frames(words) > log_probs.rows()) return -std::numeric_limits<double>::infinity();
  double s = -nn::ctc_loss(log_probs, words).value;
  if (lm && lm_weight != 0.0) s += lm_weight * lm->sentence_log_prob(words);
  return s;
}

struct BeamOptions {
  int beam_width = 16;
  double lm_weight = 0.5;
};

// Prefix beam search. Each prefix carries its blank-ending and
// non-blank-ending CTC mass separately; prefixes are ranked by
// log(p_b + p_nb) + lm_weight · log P_lm(prefix). Surviving prefixes and the
// best-path hypothesis are rescored exactly and the best is returned.
inline std::vector<int> ctc_beam_decode(const Tensor2& log_probs, const BigramLm* lm,
                                        const BeamOptions& opt = {}) {
  if (opt.beam_width < 1) throw ParameterError("beam width must be >= 1");
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  const int blank = static_cast<int>(log_probs.cols()) - 1;
  if (lm && lm->vocab_size() != blank) throw ShapeError("language model vocabulary does not match model");

  struct Entry {
    double pb = kNegInf;
    double pnb = kNegInf;
    double lm = 0.0;
    double total() const { return nn::detail::log_add(pb, pnb); }
  };
  auto fused = [&](const Entry& e) { return e.total() + opt.lm_weight * e.lm; };
  auto lm_term = [&](const std::vector<int>& prefix, int word) {
    if (!lm) return 0.0;
    return lm->log_prob(prefix.empty() ? BigramLm::kStart : prefix.back(), word);
  };

  std::map<std::vector<int>, Entry> beam;
  beam[{}] = Entry{0.0, kNegInf, 0.0};
  for (Index t = 0; t < log_probs.rows(); ++t) {
    std::map<std::vector<int>, Entry> next;
    for (const auto& [prefix, e] : beam) {
      // Blank keeps the prefix.
      {
        Entry& n = next[prefix];
        n.lm = e.lm;
        n.pb = nn::detail::log_add(n.pb, e.total() + log_probs(t, blank));
      }
      for (int c = 0; c < blank; ++c) {
        const double lp = log_probs(t, c);
        if (!prefix.empty() && prefix.back() == c) {
          // Repeat without separating blank collapses into the same prefix.
          Entry& same = next[prefix];
          same.lm = e.lm;
          same.pnb = nn::detail::log_add(same.pnb, e.pnb + lp);
          std::vector<int> ext = prefix;
          ext.push_back(c);
          Entry& n = next[ext];
          n.lm = e.lm + lm_term(prefix, c);
          n.pnb = nn::detail::log_add(n.pnb, e.pb + lp);
        } else {
          std::vector<int> ext = prefix;
          ext.push_back(c);
          Entry& n = next[ext];
          n.lm = e.lm + lm_term(prefix, c);
          n.pnb = nn::detail::log_add(n.pnb, e.total() + lp);
        }
      }
    }
    std::vector<std::pair<std::vector<int>, Entry>> ranked(next.begin(), next.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [&](const auto& a, const auto& b) { return fused(a.second) > fused(b.second); });
    if (static_cast<int>(ranked.size()) > opt.beam_width) ranked.resize(static_cast<std::size_t>(opt.beam_width));
    beam.clear();
    for (auto& [p, e] : ranked) beam.emplace(std::move(p), e);
  }

  std::vector<std::vector<int>> candidates;
  for (const auto& [p, e] : beam) candidates.push_back(p);
  candidates.push_back(ctc_greedy_decode(log_probs));
  std::vector<int> best;
  double best_score = kNegInf;
  bool have = false;
  for (const auto& c : candidates) {
    const double s = fused_score(log_probs, c, lm, opt.lm_weight);
    if (!have || s > best_score) {
      best = c;
      best_score = s;
      have = true;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// CTC transcriber: GRU encoder -> per-frame projection -> log-softmax.

struct CtcModel {
  nn::Gru encoder;
  nn::Dense proj;  // hidden -> V + 1, blank last
  Vocabulary vocab;

  static CtcModel init(Index input_dim, Index hidden, Vocabulary vocab, Rng& rng) {
    CtcModel m;
    m.encoder = nn::Gru::init(input_dim, hidden, rng);
    m.proj = nn::Dense::init(hidden, vocab.size() + 1, rng);
    m.vocab = std::move(vocab);
    return m;
  }

  Index input_dim() const { return encoder.input_size(); }

  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    auto sub = [&](const std::string& prefix, auto& layer) {
      layer.for_each_param([&](const std::string& name, auto& t) { f(prefix + "." + name, t); });
    };
    sub("encoder", self.encoder);
    sub("proj", self.proj);
  }
  template <typename F> void for_each_param(F&& f) { visit(*this, f); }
  template <typename F> void for_each_param(F&& f) const { visit(*this, f); }
};

inline Tensor2 ctc_log_probs(const CtcModel& m, const Tensor2& x) {
  return nn::log_softmax_rows(m.proj.forward(m.encoder.forward(x)));
}

// CTC loss of one example; gradients scaled by `scale` accumulate into grad.
inline double ctc_example_loss(const CtcModel& m, const Tensor2& x, const std::vector<int>& target,
                               CtcModel* grad, double scale = 1.0) {
  nn::Gru::Cache cache;
  const Tensor2 h = m.encoder.forward(x, &cache);
  const Tensor2 lp = nn::log_softmax_rows(m.proj.forward(h));
  const nn::LossGrad loss = nn::ctc_loss(lp, target);
  if (grad) {
    const Tensor2 dlogits = nn::log_softmax_rows_backward(lp, loss.grad * scale);
    const Tensor2 dh = m.proj.backward(h, dlogits, grad->proj);
    m.encoder.backward(cache, dh, grad->encoder);
  }
  return loss.value;
}

struct CtcExample {
  Tensor2 features;
  std::string transcript;
};

struct CtcTrainConfig {
  int epochs = 100;
  Index batch = 8;
  double lr = 3e-3;
  Index hidden = 128;
};

struct CtcTrainResult {
  CtcModel model;
  std::vector<double> curve;
};

inline CtcTrainResult train_ctc(const std::vector<CtcExample>& data, const CtcTrainConfig& cfg,
                                std::uint64_t seed) {
  if (data.empty()) throw ParameterError("train_ctc: empty dataset");
  if (cfg.epochs < 1) throw ConfigError("ctc.epochs must be >= 1");
  if (cfg.batch < 1) throw ConfigError("ctc.batch must be >= 1");
  std::vector<std::string> corpus;
  for (const auto& ex : data) corpus.push_back(ex.transcript);
  Vocabulary vocab = Vocabulary::from_corpus(corpus);
  std::vector<std::vector<int>> targets;
  const Index dim = data.front().features.cols();
  for (std::size_t i = 0; i < data.size(); ++i) {
    require_cols(data[i].features, dim, "ctc example " + std::to_string(i));
    targets.push_back(vocab.encode(data[i].transcript));
    if (nn::ctc_min_frames(targets.back()) > data[i].features.rows()) {
      throw InfeasibleError("ctc example " + std::to_string(i) + " (\"" + data[i].transcript +
                            "\") needs more frames than its " + std::to_string(data[i].features.rows()));
    }
  }

  Rng rng = make_rng(seed, 0xC7C);
  CtcTrainResult out;
  out.model = CtcModel::init(dim, cfg.hidden, std::move(vocab), rng);
  CtcModel& model = out.model;
  const std::vector<ParamRef> refs = nn::collect_params(model);
  nn::Adam opt;
  opt.lr = cfg.lr;
  const std::size_t batch = static_cast<std::size_t>(std::min<Index>(cfg.batch, static_cast<Index>(data.size())));

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t stop = std::min(order.size(), start + batch);
      const double scale = 1.0 / static_cast<double>(stop - start);
      CtcModel grad = nn::zeros_like(model);
      for (std::size_t k = start; k < stop; ++k) {
        total += ctc_example_loss(model, data[order[k]].features, targets[order[k]], &grad, scale);
      }
      opt.step(refs, nn::collect_params(grad));
    }
    out.curve.push_back(total / static_cast<double>(data.size()));
  }
  return out;
}

}  // namespace eegcvae::asr
