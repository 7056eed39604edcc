#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "eegcvae/errors.hpp"
#include "eegcvae/random.hpp"

namespace eegcvae {

// Dense 64-bit matrix; sequences are stored time-major (one frame per row).
using Tensor2 = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::RowVectorXd;

// Non-owning handle to a named parameter block.
struct ParamRef {
  std::string name;
  Tensor2* value;
};

inline void require_shape(const Tensor2& m, Eigen::Index rows, Eigen::Index cols,
                          const std::string& what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ShapeError(what + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) +
                     ", got " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
}

inline void require_cols(const Tensor2& m, Eigen::Index cols, const std::string& what) {
  if (m.cols() != cols) {
    throw ShapeError(what + ": expected " + std::to_string(cols) + " columns, got " +
                     std::to_string(m.cols()));
  }
}

inline bool all_finite(const Tensor2& m) { return m.allFinite(); }

// Glorot-uniform initializer.
inline Tensor2 glorot_uniform(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng,
                              Eigen::Index cols_override = -1) {
  const Eigen::Index cols = cols_override < 0 ? fan_out : cols_override;
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor2 w(fan_in, cols);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = uniform(rng, -limit, limit);
  return w;
}

// Pads with zero rows or truncates so the sequence has exactly `length` frames.
inline Tensor2 fit_length(const Tensor2& seq, Eigen::Index length) {
  Tensor2 out = Tensor2::Zero(length, seq.cols());
  const Eigen::Index n = std::min(length, seq.rows());
  if (n > 0) out.topRows(n) = seq.topRows(n);
  return out;
}

namespace detail {

template <typename Derived>
Tensor2 sigmoid(const Eigen::MatrixBase<Derived>& x) {
  return (1.0 / (1.0 + (-x.array()).exp())).matrix();
}

template <typename Derived>
Tensor2 tanh(const Eigen::MatrixBase<Derived>& x) {
  return x.array().tanh().matrix();
}

}  // namespace detail

// tanh through the vectorized exp: 1 - 2 / (e^{2x} + 1). Saturates cleanly at
// both ends; within a few ulp of std::tanh.
template <typename Derived>
auto tanh_exp(const Eigen::ArrayBase<Derived>& x) {
  return 1.0 - 2.0 / ((2.0 * x).exp() + 1.0);
}

}  // namespace eegcvae
