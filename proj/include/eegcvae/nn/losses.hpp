#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "eegcvae/tensor.hpp"

namespace eegcvae::nn {

struct LossGrad {
  double value = 0.0;
  Tensor2 grad;
};

// Mean over all entries of (pred - target)^2.
inline LossGrad mse_loss(const Tensor2& pred, const Tensor2& target) {
  require_shape(target, pred.rows(), pred.cols(), "mse target");
  const double n = static_cast<double>(pred.size());
  const Tensor2 diff = pred - target;
  return {diff.squaredNorm() / n, diff * (2.0 / n)};
}

struct CeResult {
  double value = 0.0;
  RowVec dlogits;  // gradient of the combined softmax + CE w.r.t. logits
};

// Categorical cross-entropy on softmax output; gradient is probs - onehot.
inline CeResult ce_loss(const RowVec& probs, Eigen::Index label) {
  if (label < 0 || label >= probs.size()) throw ParameterError("class label out of range");
  RowVec d = probs;
  d(label) -= 1.0;
  return {-std::log(probs(label)), std::move(d)};
}

struct KlResult {
  double value = 0.0;
  Tensor2 dmu;
  Tensor2 dlog_sigma;
};

// KL(N(mu, e^{2 log_sigma}) || N(0, 1)) summed over entries.
inline KlResult kl_loss(const Tensor2& mu, const Tensor2& log_sigma) {
  require_shape(log_sigma, mu.rows(), mu.cols(), "kl log_sigma");
  const Eigen::ArrayXXd var = (2.0 * log_sigma.array()).exp();
  const double value =
      0.5 * (mu.array().square() + var - 1.0 - 2.0 * log_sigma.array()).sum();
  return {value, mu, (var - 1.0).matrix()};
}

// ---------------------------------------------------------------------------
// Connectionist temporal classification.

namespace detail {

inline double log_add(double a, double b) {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  if (a < b) std::swap(a, b);
  return a + std::log1p(std::exp(b - a));
}

}  // namespace detail

// Smallest number of frames able to emit `target`: one per label plus one
// separating blank for every adjacent repeated pair.
inline Eigen::Index ctc_min_frames(const std::vector<int>& target) {
  Eigen::Index n = static_cast<Eigen::Index>(target.size());
  for (std::size_t i = 1; i < target.size(); ++i) n += target[i] == target[i - 1] ? 1 : 0;
  return n;
}

inline std::vector<int> ctc_extend(const std::vector<int>& target, int blank) {
  std::vector<int> ext;
  ext.reserve(2 * target.size() + 1);
  ext.push_back(blank);
  for (int label : target) {
    ext.push_back(label);
    ext.push_back(blank);
  }
  return ext;
}

// Negative log-likelihood of `target` given per-frame log-probabilities
// (T x (V+1), blank = last column), and its gradient w.r.t. the log-probs.
inline LossGrad ctc_loss(const Tensor2& log_probs, const std::vector<int>& target) {
  using Eigen::Index;
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  const Index steps = log_probs.rows();
  const int blank = static_cast<int>(log_probs.cols()) - 1;
  if (blank < 0) throw ShapeError("ctc log-probs need at least the blank column");
  for (int label : target) {
    if (label < 0 || label >= blank) throw ParameterError("ctc target label out of range");
  }
  if (ctc_min_frames(target) > steps) {
    throw InfeasibleError("ctc target of length " + std::to_string(target.size()) +
                          " needs at least " + std::to_string(ctc_min_frames(target)) +
                          " frames, got " + std::to_string(steps));
  }
  if (steps == 0) return {0.0, Tensor2::Zero(0, log_probs.cols())};

  const std::vector<int> ext = ctc_extend(target, blank);
  const Index S = static_cast<Index>(ext.size());
  Tensor2 alpha = Tensor2::Constant(steps, S, kNegInf);
  Tensor2 beta = Tensor2::Constant(steps, S, kNegInf);

  auto can_skip = [&](Index s) { return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]; };

  alpha(0, 0) = log_probs(0, ext[0]);
  if (S > 1) alpha(0, 1) = log_probs(0, ext[1]);
  for (Index t = 1; t < steps; ++t) {
    for (Index s = 0; s < S; ++s) {
      double a = alpha(t - 1, s);
      if (s >= 1) a = detail::log_add(a, alpha(t - 1, s - 1));
      if (can_skip(s)) a = detail::log_add(a, alpha(t - 1, s - 2));
      if (a != kNegInf) alpha(t, s) = a + log_probs(t, ext[s]);
    }
  }

  beta(steps - 1, S - 1) = log_probs(steps - 1, ext[S - 1]);
  if (S > 1) beta(steps - 1, S - 2) = log_probs(steps - 1, ext[S - 2]);
  for (Index t = steps - 2; t >= 0; --t) {
    for (Index s = 0; s < S; ++s) {
      double b = beta(t + 1, s);
      if (s + 1 < S) b = detail::log_add(b, beta(t + 1, s + 1));
      if (s + 2 < S && can_skip(s + 2)) b = detail::log_add(b, beta(t + 1, s + 2));
      if (b != kNegInf) beta(t, s) = b + log_probs(t, ext[s]);
    }
  }

  double log_p = alpha(steps - 1, S - 1);
  if (S > 1) log_p = detail::log_add(log_p, alpha(steps - 1, S - 2));

  // d(-log p)/d log y_t(k) = -(sum_{s: ext[s]=k} alpha_t(s) beta_t(s) / y_t(k)) / p
  Tensor2 grad = Tensor2::Zero(steps, log_probs.cols());
  for (Index t = 0; t < steps; ++t) {
    for (Index s = 0; s < S; ++s) {
      const double ab = alpha(t, s) + beta(t, s);
      if (ab == kNegInf) continue;
      grad(t, ext[s]) -= std::exp(ab - log_probs(t, ext[s]) - log_p);
    }
  }
  return {-log_p, std::move(grad)};
}

}  // namespace eegcvae::nn
