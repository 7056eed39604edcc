#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "eegcvae/tensor.hpp"

// Kernel PCA with a polynomial kernel k(x, y) = (scale·x·y + offset)^degree.
//
// The training kernel matrix is double-centered and diagonalized with a
// cyclic Jacobi solver. Dual coefficients are scaled so that every retained
// feature-space eigenvector has unit norm (λ_j α_j·α_j = 1); out-of-sample
// points are centered with the stored training statistics before projection.

namespace eegcvae::kpca {

using Eigen::Index;

struct KernelParams {
  int degree = 3;
  double scale = 0.0;  // <= 0 selects 1/D at fit time
  double offset = 1.0;
};

struct EigenDecomposition {
  RowVec values;    // descending
  Tensor2 vectors;  // column j pairs with values(j)
  int sweeps = 0;
};

// Cyclic one-sided (Hestenes) Jacobi eigensolver for a dense symmetric
// positive semi-definite matrix. Rows of the working copy U are rotated in
// pairs until mutually orthogonal; then U = V^T A with orthonormal V, row j of
// U is λ_j v_j, and λ_j = v_j·u_j. Negative eigenvalues (roundoff in a PSD
// matrix) come out with their sign from the Rayleigh quotient.
inline EigenDecomposition jacobi_eigen(const Tensor2& a, int max_sweeps = 60) {
  const Index n = a.rows();
  if (a.cols() != n) throw ShapeError("jacobi_eigen: matrix must be square");
  constexpr double kEps = std::numeric_limits<double>::epsilon();
  Tensor2 u = a;  // symmetric, so rows are columns
  Tensor2 vt = Tensor2::Identity(n, n);
  Eigen::VectorXd norms(n);
  RowVec tmp(n);

  EigenDecomposition out;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    for (Index i = 0; i < n; ++i) norms(i) = u.row(i).squaredNorm();
    bool rotated = false;
    for (Index p = 0; p < n - 1; ++p) {
      for (Index q = p + 1; q < n; ++q) {
        const double alpha = norms(p);
        const double beta = norms(q);
        const double gamma = u.row(p).dot(u.row(q));
        if (gamma == 0.0 || std::abs(gamma) <= kEps * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        tmp = u.row(p);
        u.row(p) = c * tmp - s * u.row(q);
        u.row(q) = s * tmp + c * u.row(q);
        tmp = vt.row(p);
        vt.row(p) = c * tmp - s * vt.row(q);
        vt.row(q) = s * tmp + c * vt.row(q);
        norms(p) = alpha - t * gamma;
        norms(q) = beta + t * gamma;
      }
    }
    ++out.sweeps;
    if (!rotated) break;
  }

  RowVec values(n);
  for (Index j = 0; j < n; ++j) values(j) = vt.row(j).dot(u.row(j));
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index i, Index j) { return values(i) > values(j); });
  out.values.resize(n);
  out.vectors.resize(n, n);
  for (Index j = 0; j < n; ++j) {
    out.values(j) = values(order[j]);
    out.vectors.col(j) = vt.row(order[j]).transpose();
  }
  return out;
}

struct KpcaModel {
  Tensor2 training_points;  // N x D
  Tensor2 alphas;           // N x M
  RowVec eigenvalues;       // M retained, descending
  RowVec spectrum;          // every eigenvalue above the positivity threshold, descending
  KernelParams kernel;      // scale resolved
  RowVec train_row_means;   // mean of each training kernel row
  double train_total_mean = 0.0;
  Index source_points = 0;  // rows supplied to fit before subsampling

  Index out_dim() const { return alphas.cols(); }
  Index input_dim() const { return training_points.cols(); }
};

inline constexpr double kPositiveEigenvalue = 1e-12;

inline Tensor2 kernel_matrix(const Tensor2& x, const Tensor2& y, const KernelParams& k) {
  Tensor2 g = x * y.transpose();
  return (g.array() * k.scale + k.offset).pow(static_cast<double>(k.degree)).matrix();
}

// Double centering: K - 1K/N - K1/N + 1K1/N^2.
inline Tensor2 center_kernel(const Tensor2& k) {
  const RowVec col_means = k.colwise().mean();
  const Eigen::VectorXd row_means = k.rowwise().mean();
  const double total = k.mean();
  Tensor2 c = k;
  c.rowwise() -= col_means;
  c.colwise() -= row_means;
  c.array() += total;
  return c;
}

// Rows i·N/max_points for i < max_points when N exceeds max_points.
inline Tensor2 strided_subsample(const Tensor2& x, Index max_points) {
  if (max_points <= 0 || x.rows() <= max_points) return x;
  Tensor2 out(max_points, x.cols());
  for (Index i = 0; i < max_points; ++i) out.row(i) = x.row(i * x.rows() / max_points);
  return out;
}

inline KpcaModel fit(const Tensor2& x_in, Index out_dim, KernelParams kernel = {},
                     Index max_points = 2000) {
  if (!x_in.allFinite()) throw ParameterError("kpca fit: non-finite input");
  if (out_dim < 1) throw ParameterError("kpca fit: out_dim must be >= 1");
  const Tensor2 x = strided_subsample(x_in, max_points);
  const Index n = x.rows();
  if (out_dim > n - 1) {
    throw RankError("kpca fit: out_dim " + std::to_string(out_dim) + " exceeds centered kernel rank bound " +
                        std::to_string(std::max<Index>(n - 1, 0)),
                    static_cast<std::size_t>(std::max<Index>(n - 1, 0)));
  }
  if (kernel.scale <= 0.0) kernel.scale = 1.0 / static_cast<double>(x.cols());

  KpcaModel m;
  m.kernel = kernel;
  m.training_points = x;
  m.source_points = x_in.rows();
  const Tensor2 k = kernel_matrix(x, x, kernel);
  m.train_row_means = k.rowwise().mean().transpose();
  m.train_total_mean = k.mean();

  const EigenDecomposition eig = jacobi_eigen(center_kernel(k));
  Index positive = 0;
  while (positive < n && eig.values(positive) > kPositiveEigenvalue) ++positive;
  if (positive < out_dim) {
    throw RankError("kpca fit: only " + std::to_string(positive) + " eigenvalues exceed " +
                        std::to_string(kPositiveEigenvalue) + "; achievable dimension is " +
                        std::to_string(positive),
                    static_cast<std::size_t>(positive));
  }
  m.spectrum = eig.values.head(positive);
  m.eigenvalues = eig.values.head(out_dim);
  m.alphas.resize(n, out_dim);
  for (Index j = 0; j < out_dim; ++j) {
    Eigen::VectorXd v = eig.vectors.col(j);
    Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    m.alphas.col(j) = v / std::sqrt(eig.values(j));
  }
  return m;
}

// Projects rows of x (any count) onto the retained components.
inline Tensor2 transform_rows(const KpcaModel& m, const Tensor2& x) {
  if (x.cols() != m.input_dim()) {
    throw ShapeError("kpca transform: input dim " + std::to_string(x.cols()) + " != " +
                     std::to_string(m.input_dim()));
  }
  Tensor2 k = kernel_matrix(x, m.training_points, m.kernel);
  const Eigen::VectorXd own_means = k.rowwise().mean();
  k.rowwise() -= m.train_row_means;
  k.colwise() -= own_means;
  k.array() += m.train_total_mean;
  return k * m.alphas;
}

inline RowVec transform(const KpcaModel& m, const RowVec& x) {
  return transform_rows(m, Tensor2(x)).row(0);
}

// Cumulative explained-variance ratios over the positive spectrum.
inline std::vector<double> explained_variance(const KpcaModel& m) {
  std::vector<double> out;
  const double total = m.spectrum.sum();
  double acc = 0.0;
  for (Index j = 0; j < m.spectrum.size(); ++j) {
    acc += m.spectrum(j);
    out.push_back(std::min(1.0, acc / total));
  }
  return out;
}

}  // namespace eegcvae::kpca
