#pragma once

#include <string>
#include <vector>

#include "eegcvae/tensor.hpp"

// Layers with hand-derived gradients. Every layer stores its parameters as
// named Tensor2 blocks; the gradient of a layer is another instance of the
// same type (see zeros_like), so optimizers and checkpoints can walk both in
// lockstep through for_each_param. Backward passes accumulate into the
// gradient object, they never overwrite it.

namespace eegcvae::nn {

using Eigen::Index;

enum class Mode { kTrain, kInference };

// Collects named parameter handles from anything exposing for_each_param.
template <typename Model>
std::vector<ParamRef> collect_params(Model& model) {
  std::vector<ParamRef> out;
  model.for_each_param([&](const std::string& name, Tensor2& t) { out.push_back({name, &t}); });
  return out;
}

template <typename Model>
Index parameter_count(const Model& model) {
  Index n = 0;
  model.for_each_param([&](const std::string&, const Tensor2& t) { n += t.size(); });
  return n;
}

template <typename Model>
Model zeros_like(const Model& model) {
  Model out = model;
  out.for_each_param([](const std::string&, Tensor2& t) { t.setZero(); });
  return out;
}

// ---------------------------------------------------------------------------
// Dense: y = x W + b, applied per row.

struct Dense {
  Tensor2 w;  // in x out
  Tensor2 b;  // 1 x out

  static Dense init(Index in, Index out, Rng& rng) {
    return {glorot_uniform(in, out, rng), Tensor2::Zero(1, out)};
  }
  static Dense zeros(Index in, Index out) { return {Tensor2::Zero(in, out), Tensor2::Zero(1, out)}; }

  Index input_size() const { return w.rows(); }
  Index output_size() const { return w.cols(); }

  Tensor2 forward(const Tensor2& x) const {
    require_cols(x, input_size(), "dense input");
    Tensor2 y = x * w;
    y.rowwise() += b.row(0);
    return y;
  }

  // Returns dL/dx and accumulates dL/dW, dL/db into grad.
  Tensor2 backward(const Tensor2& x, const Tensor2& dy, Dense& grad) const {
    require_shape(dy, x.rows(), output_size(), "dense dy");
    grad.w.noalias() += x.transpose() * dy;
    grad.b += dy.colwise().sum();
    return dy * w.transpose();
  }

  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    f("w", self.w);
    f("b", self.b);
  }
  template <typename F> void for_each_param(F&& f) { visit(*this, f); }
  template <typename F> void for_each_param(F&& f) const { visit(*this, f); }
};

// ---------------------------------------------------------------------------
// LSTM, gate column blocks ordered [input, forget, candidate, output].
// h0 = c0 = 0.

struct Lstm {
  Tensor2 wx;  // in x 4H
  Tensor2 wh;  // H x 4H
  Tensor2 b;   // 1 x 4H

  struct Cache {
    Tensor2 x;
    Tensor2 gates;   // T x 4H, post-activation
    Tensor2 c;       // T x H
    Tensor2 tanh_c;  // T x H
    Tensor2 h;       // T x H
  };

  static Lstm init(Index in, Index hidden, Rng& rng) {
    Lstm l;
    l.wx = glorot_uniform(in, 4 * hidden, rng);
    l.wh = glorot_uniform(hidden, 4 * hidden, rng);
    l.b = Tensor2::Zero(1, 4 * hidden);
    l.b.block(0, hidden, 1, hidden).setConstant(1.0);  // forget gate
    return l;
  }
  static Lstm zeros(Index in, Index hidden) {
    return {Tensor2::Zero(in, 4 * hidden), Tensor2::Zero(hidden, 4 * hidden),
            Tensor2::Zero(1, 4 * hidden)};
  }

  Index input_size() const { return wx.rows(); }
  Index hidden_size() const { return wh.rows(); }

  // Full hidden sequence, T x H.
  Tensor2 forward(const Tensor2& x, Cache* cache = nullptr) const {
    require_cols(x, input_size(), "lstm input");
    const Index steps = x.rows();
    const Index hid = hidden_size();
    Tensor2 pre = x * wx;
    pre.rowwise() += b.row(0);

    Tensor2 hs(steps, hid);
    Tensor2 gates, cs, tcs;
    if (cache) {
      gates.resize(steps, 4 * hid);
      cs.resize(steps, hid);
      tcs.resize(steps, hid);
    }
    RowVec h = RowVec::Zero(hid);
    RowVec c = RowVec::Zero(hid);
    RowVec a(4 * hid);
    for (Index t = 0; t < steps; ++t) {
      a.noalias() = pre.row(t);
      a.noalias() += h * wh;
      a.segment(0, 2 * hid) = (1.0 / (1.0 + (-a.segment(0, 2 * hid).array()).exp())).matrix();
      a.segment(2 * hid, hid) = tanh_exp(a.segment(2 * hid, hid).array()).matrix();
      a.segment(3 * hid, hid) = (1.0 / (1.0 + (-a.segment(3 * hid, hid).array()).exp())).matrix();
      c = a.segment(hid, hid).cwiseProduct(c) + a.segment(0, hid).cwiseProduct(a.segment(2 * hid, hid));
      RowVec tc = tanh_exp(c.array()).matrix();
      h = a.segment(3 * hid, hid).cwiseProduct(tc);
      hs.row(t) = h;
      if (cache) {
        gates.row(t) = a;
        cs.row(t) = c;
        tcs.row(t) = tc;
      }
    }
    if (cache) {
      cache->x = x;
      cache->gates = std::move(gates);
      cache->c = std::move(cs);
      cache->tanh_c = std::move(tcs);
      cache->h = hs;
    }
    return hs;
  }

  // Backprop through time. dh_seq holds dL/dh_t for every step (zero rows
  // where the step's output is unused). Returns dL/dx.
  Tensor2 backward(const Cache& cache, const Tensor2& dh_seq, Lstm& grad) const {
    const Index steps = cache.x.rows();
    const Index hid = hidden_size();
    require_shape(dh_seq, steps, hid, "lstm dh");
    Tensor2 dpre(steps, 4 * hid);
    RowVec dh_next = RowVec::Zero(hid);
    RowVec dc_next = RowVec::Zero(hid);
    for (Index t = steps - 1; t >= 0; --t) {
      const auto g = cache.gates.row(t);
      const auto i = g.segment(0, hid).array();
      const auto f = g.segment(hid, hid).array();
      const auto cand = g.segment(2 * hid, hid).array();
      const auto o = g.segment(3 * hid, hid).array();
      const auto tc = cache.tanh_c.row(t).array();
      const Eigen::ArrayXXd dh = (dh_seq.row(t) + dh_next).array();
      Eigen::ArrayXXd dc = dc_next.array() + dh * o * (1.0 - tc * tc);
      auto drow = dpre.row(t);
      if (t > 0) {
        drow.segment(hid, hid) = (dc * cache.c.row(t - 1).array() * f * (1.0 - f)).matrix();
      } else {
        drow.segment(hid, hid).setZero();
      }
      drow.segment(0, hid) = (dc * cand * i * (1.0 - i)).matrix();
      drow.segment(2 * hid, hid) = (dc * i * (1.0 - cand * cand)).matrix();
      drow.segment(3 * hid, hid) = (dh * tc * o * (1.0 - o)).matrix();
      dc_next = (dc * f).matrix();
      dh_next.noalias() = drow * wh.transpose();
    }
    grad.wx.noalias() += cache.x.transpose() * dpre;
    if (steps > 1) {
      grad.wh.noalias() += cache.h.topRows(steps - 1).transpose() * dpre.bottomRows(steps - 1);
    }
    grad.b += dpre.colwise().sum();
    return dpre * wx.transpose();
  }

  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    f("wx", self.wx);
    f("wh", self.wh);
    f("b", self.b);
  }
  template <typename F> void for_each_param(F&& f) { visit(*this, f); }
  template <typename F> void for_each_param(F&& f) const { visit(*this, f); }
};

// ---------------------------------------------------------------------------
// GRU, column blocks ordered [update z, reset r, candidate n]:
//   n_t = tanh(x Wn + (r ⊙ h_{t-1}) Un + bn)
//   h_t = (1 - z) ⊙ h_{t-1} + z ⊙ n_t

struct Gru {
  Tensor2 wx;  // in x 3H
  Tensor2 wh;  // H x 3H
  Tensor2 b;   // 1 x 3H

  struct Cache {
    Tensor2 x;
    Tensor2 gates;  // T x 3H, post-activation [z, r, n]
    Tensor2 h;      // T x H
  };

  static Gru init(Index in, Index hidden, Rng& rng) {
    Gru g;
    g.wx = glorot_uniform(in, 3 * hidden, rng);
    g.wh = glorot_uniform(hidden, 3 * hidden, rng);
    g.b = Tensor2::Zero(1, 3 * hidden);
    return g;
  }
  static Gru zeros(Index in, Index hidden) {
    return {Tensor2::Zero(in, 3 * hidden), Tensor2::Zero(hidden, 3 * hidden),
            Tensor2::Zero(1, 3 * hidden)};
  }

  Index input_size() const { return wx.rows(); }
  Index hidden_size() const { return wh.rows(); }

  Tensor2 forward(const Tensor2& x, Cache* cache = nullptr) const {
    require_cols(x, input_size(), "gru input");
    const Index steps = x.rows();
    const Index hid = hidden_size();
    Tensor2 pre = x * wx;
    pre.rowwise() += b.row(0);

    Tensor2 hs(steps, hid);
    Tensor2 gates;
    if (cache) gates.resize(steps, 3 * hid);
    RowVec h = RowVec::Zero(hid);
    RowVec zr(2 * hid);
    RowVec n(hid);
    for (Index t = 0; t < steps; ++t) {
      zr.noalias() = pre.row(t).segment(0, 2 * hid);
      zr.noalias() += h * wh.leftCols(2 * hid);
      zr = (1.0 / (1.0 + (-zr.array()).exp())).matrix();
      const RowVec rh = zr.segment(hid, hid).cwiseProduct(h);
      n.noalias() = pre.row(t).segment(2 * hid, hid);
      n.noalias() += rh * wh.rightCols(hid);
      n = tanh_exp(n.array()).matrix();
      const auto z = zr.segment(0, hid).array();
      h = ((1.0 - z) * h.array() + z * n.array()).matrix();
      hs.row(t) = h;
      if (cache) {
        gates.row(t).segment(0, 2 * hid) = zr;
        gates.row(t).segment(2 * hid, hid) = n;
      }
    }
    if (cache) {
      cache->x = x;
      cache->gates = std::move(gates);
      cache->h = hs;
    }
    return hs;
  }

  Tensor2 backward(const Cache& cache, const Tensor2& dh_seq, Gru& grad) const {
    const Index steps = cache.x.rows();
    const Index hid = hidden_size();
    require_shape(dh_seq, steps, hid, "gru dh");
    Tensor2 dpre(steps, 3 * hid);
    Tensor2 rh_prev = Tensor2::Zero(steps, hid);  // r_t ⊙ h_{t-1}
    RowVec dh_next = RowVec::Zero(hid);
    const RowVec zero_h = RowVec::Zero(hid);
    for (Index t = steps - 1; t >= 0; --t) {
      const auto g = cache.gates.row(t);
      const auto z = g.segment(0, hid).array();
      const auto r = g.segment(hid, hid).array();
      const auto n = g.segment(2 * hid, hid).array();
      const RowVec h_prev = t > 0 ? RowVec(cache.h.row(t - 1)) : zero_h;
      const Eigen::ArrayXXd dh = (dh_seq.row(t) + dh_next).array();
      auto drow = dpre.row(t);
      drow.segment(2 * hid, hid) = (dh * z * (1.0 - n * n)).matrix();
      const RowVec d_rh = drow.segment(2 * hid, hid) * wh.rightCols(hid).transpose();
      drow.segment(0, hid) = (dh * (n - h_prev.array()) * z * (1.0 - z)).matrix();
      drow.segment(hid, hid) = (d_rh.array() * h_prev.array() * r * (1.0 - r)).matrix();
      rh_prev.row(t) = (r * h_prev.array()).matrix();
      dh_next = (dh * (1.0 - z) + d_rh.array() * r).matrix();
      dh_next.noalias() += drow.segment(0, 2 * hid) * wh.leftCols(2 * hid).transpose();
    }
    grad.wx.noalias() += cache.x.transpose() * dpre;
    if (steps > 1) {
      grad.wh.leftCols(2 * hid).noalias() +=
          cache.h.topRows(steps - 1).transpose() * dpre.bottomRows(steps - 1).leftCols(2 * hid);
    }
    grad.wh.rightCols(hid).noalias() += rh_prev.transpose() * dpre.rightCols(hid);
    grad.b += dpre.colwise().sum();
    return dpre * wx.transpose();
  }

  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    f("wx", self.wx);
    f("wh", self.wh);
    f("b", self.b);
  }
  template <typename F> void for_each_param(F&& f) { visit(*this, f); }
  template <typename F> void for_each_param(F&& f) const { visit(*this, f); }
};

// ---------------------------------------------------------------------------
// Temporal convolutional network: a stack of causal dilated convolutions,
// one per level, each followed by a residual add and a rectifier:
//   y_t = relu(sum_j x_{t - (k-1-j)·d} W_j + b + res(x_t))
// Tap k-1 sees the current frame; taps reaching before t = 0 read zeros.

struct TcnLevel {
  Tensor2 w;     // (k·in) x out, tap-major rows
  Tensor2 b;     // 1 x out
  Tensor2 proj;  // in x out when in != out, empty otherwise
  Index dilation = 1;
  Index kernel = 3;
  bool residual = true;

  Index input_size() const { return w.rows() / kernel; }
  Index output_size() const { return w.cols(); }

  struct Cache {
    Tensor2 x;
    Tensor2 cols;  // T x (k·in) unfolded input
    Tensor2 pre;   // pre-activation
  };

  Tensor2 unfold(const Tensor2& x) const {
    const Index steps = x.rows();
    const Index in = x.cols();
    Tensor2 cols = Tensor2::Zero(steps, kernel * in);
    for (Index j = 0; j < kernel; ++j) {
      const Index shift = (kernel - 1 - j) * dilation;
      if (shift >= steps) continue;
      cols.block(shift, j * in, steps - shift, in) = x.topRows(steps - shift);
    }
    return cols;
  }

  Tensor2 forward(const Tensor2& x, Cache* cache = nullptr) const {
    require_cols(x, input_size(), "tcn input");
    Tensor2 cols = unfold(x);
    Tensor2 pre = cols * w;
    pre.rowwise() += b.row(0);
    if (residual) {
      if (proj.size() > 0) {
        pre.noalias() += x * proj;
      } else {
        pre += x;
      }
    }
    Tensor2 y = pre.cwiseMax(0.0);
    if (cache) {
      cache->x = x;
      cache->cols = std::move(cols);
      cache->pre = std::move(pre);
    }
    return y;
  }

  Tensor2 backward(const Cache& cache, const Tensor2& dy, TcnLevel& grad) const {
    const Index steps = cache.x.rows();
    const Index in = input_size();
    require_shape(dy, steps, output_size(), "tcn dy");
    const Tensor2 dpre = (cache.pre.array() > 0.0).select(dy, 0.0);
    grad.w.noalias() += cache.cols.transpose() * dpre;
    grad.b += dpre.colwise().sum();
    const Tensor2 dcols = dpre * w.transpose();
    Tensor2 dx = Tensor2::Zero(steps, in);
    for (Index j = 0; j < kernel; ++j) {
      const Index shift = (kernel - 1 - j) * dilation;
      if (shift >= steps) continue;
      dx.topRows(steps - shift) += dcols.block(shift, j * in, steps - shift, in);
    }
    if (residual) {
      if (proj.size() > 0) {
        grad.proj.noalias() += cache.x.transpose() * dpre;
        dx.noalias() += dpre * proj.transpose();
      } else {
        dx += dpre;
      }
    }
    return dx;
  }

  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    f("w", self.w);
    f("b", self.b);
    if (self.proj.size() > 0) f("proj", self.proj);
  }
};

struct Tcn {
  std::vector<TcnLevel> levels;

  struct Cache {
    std::vector<TcnLevel::Cache> levels;
  };

  static Tcn init(Index in, Index filters, Rng& rng, Index kernel = 3,
                  const std::vector<Index>& dilations = {1, 2, 4}, bool residual = true) {
    Tcn net;
    Index width = in;
    for (Index d : dilations) {
      TcnLevel level;
      level.kernel = kernel;
      level.dilation = d;
      level.residual = residual;
      level.w = glorot_uniform(kernel * width, filters, rng);
      level.b = Tensor2::Zero(1, filters);
      if (residual && width != filters) level.proj = glorot_uniform(width, filters, rng);
      net.levels.push_back(std::move(level));
      width = filters;
    }
    return net;
  }

  Index input_size() const { return levels.front().input_size(); }
  Index output_size() const { return levels.back().output_size(); }

  Tensor2 forward(const Tensor2& x, Cache* cache = nullptr) const {
    if (x.rows() < 1) throw ShapeError("tcn input must have at least one frame");
    if (cache) cache->levels.resize(levels.size());
    Tensor2 y = x;
    for (std::size_t l = 0; l < levels.size(); ++l) {
      y = levels[l].forward(y, cache ? &cache->levels[l] : nullptr);
    }
    return y;
  }

  Tensor2 backward(const Cache& cache, const Tensor2& dy, Tcn& grad) const {
    Tensor2 d = dy;
    for (std::size_t l = levels.size(); l-- > 0;) {
      d = levels[l].backward(cache.levels[l], d, grad.levels[l]);
    }
    return d;
  }

  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    for (std::size_t l = 0; l < self.levels.size(); ++l) {
      const std::string prefix = "level" + std::to_string(l) + ".";
      TcnLevel::visit(self.levels[l], [&](const std::string& name, auto& t) { f(prefix + name, t); });
    }
  }
  template <typename F> void for_each_param(F&& f) { visit(*this, f); }
  template <typename F> void for_each_param(F&& f) const { visit(*this, f); }
};

// ---------------------------------------------------------------------------
// Inverted dropout.

inline Tensor2 dropout_mask(Index rows, Index cols, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ParameterError("dropout rate must lie in [0, 1)");
  Tensor2 mask(rows, cols);
  const double keep_scale = 1.0 / (1.0 - rate);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = u(rng) < rate ? 0.0 : keep_scale;
  return mask;
}

inline Tensor2 dropout(const Tensor2& x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ParameterError("dropout rate must lie in [0, 1)");
  if (mode == Mode::kInference || rate == 0.0) return x;
  return x.cwiseProduct(dropout_mask(x.rows(), x.cols(), rate, rng));
}

// ---------------------------------------------------------------------------

inline RowVec softmax(const RowVec& logits) {
  const double m = logits.maxCoeff();
  RowVec e = (logits.array() - m).exp().matrix();
  return e / e.sum();
}

// Row-wise log-softmax.
inline Tensor2 log_softmax_rows(const Tensor2& logits) {
  Tensor2 out(logits.rows(), logits.cols());
  for (Index t = 0; t < logits.rows(); ++t) {
    const double m = logits.row(t).maxCoeff();
    const double lse = m + std::log((logits.row(t).array() - m).exp().sum());
    out.row(t) = (logits.row(t).array() - lse).matrix();
  }
  return out;
}

// Backward of row-wise log-softmax given its output and upstream gradient.
inline Tensor2 log_softmax_rows_backward(const Tensor2& log_probs, const Tensor2& dlogp) {
  Tensor2 d = dlogp;
  for (Index t = 0; t < log_probs.rows(); ++t) {
    const double s = dlogp.row(t).sum();
    d.row(t) -= (log_probs.row(t).array().exp() * s).matrix();
  }
  return d;
}

}  // namespace eegcvae::nn
