#include <gtest/gtest.h>

#include <random>

#include "eegcvae/kpca.hpp"
#include "oracles/kpca_oracle.hpp"

using namespace eegcvae;

namespace {

Tensor2 gaussian(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Tensor2 x(n, d);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = nd(rng);
  return x;
}

}  // namespace

TEST(Kpca, RankBound) {
  EXPECT_THROW(kpca::fit(gaussian(5, 3, 1), 30), RankError);
  try {
    kpca::fit(gaussian(5, 3, 1), 30);
  } catch (const RankError& e) {
    EXPECT_EQ(e.achievable_dim, 4u);
  }
  EXPECT_NO_THROW(kpca::fit(gaussian(5, 3, 1), 4));
}

TEST(Kpca, TooFewPositiveEigenvaluesNamesDimension) {
  // Ten copies of two distinct points: centered rank 1.
  Tensor2 x(10, 2);
  for (Eigen::Index i = 0; i < 10; ++i) x.row(i) = i % 2 ? RowVec{{1.0, 2.0}} : RowVec{{-1.0, 0.5}};
  try {
    kpca::fit(x, 3);
    ADD_FAILURE() << "expected RankError";
  } catch (const RankError& e) {
    EXPECT_EQ(e.achievable_dim, 1u);
    EXPECT_NE(std::string(e.what()).find("achievable dimension is 1"), std::string::npos);
  }
}

TEST(Kpca, MatchesDenseOracle) {
  const Tensor2 x = gaussian(40, 6, 7);
  const Tensor2 q = gaussian(9, 6, 8);
  const auto m = kpca::fit(x, 3);
  const auto ref = oracle::kpca(x, q, 3, 1.0 / 6.0);
  EXPECT_LE(oracle::max_diff_up_to_sign(kpca::transform_rows(m, x), ref.train_projection), 1e-8);
  EXPECT_LE(oracle::max_diff_up_to_sign(kpca::transform_rows(m, q), ref.test_projection), 1e-8);
  for (Eigen::Index j = 0; j < 3; ++j) EXPECT_NEAR(m.eigenvalues(j), ref.eigenvalues(j), 1e-9);
}

TEST(Kpca, ManyRandomDatasets) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = 8 + static_cast<Eigen::Index>(rng() % 33);
    const Eigen::Index d = 2 + static_cast<Eigen::Index>(rng() % 9);
    const Eigen::Index out = 1 + static_cast<Eigen::Index>(rng() % 4);
    const Tensor2 x = gaussian(n, d, rng());
    const Tensor2 q = gaussian(5, d, rng());
    const auto m = kpca::fit(x, out);
    const auto ref = oracle::kpca(x, q, out, 1.0 / static_cast<double>(d));
    EXPECT_LE(oracle::max_diff_up_to_sign(kpca::transform_rows(m, x), ref.train_projection), 1e-8) << trial;
    EXPECT_LE(oracle::max_diff_up_to_sign(kpca::transform_rows(m, q), ref.test_projection), 1e-8) << trial;
  }
}

TEST(Kpca, DuplicateRowsProjectIdentically) {
  Tensor2 x = gaussian(12, 4, 3);
  x.row(7) = x.row(2);
  const Tensor2 k = kpca::kernel_matrix(x, x, {3, 0.25, 1.0});
  EXPECT_EQ(k, k.transpose());
  EXPECT_EQ(k.row(7), k.row(2));
  EXPECT_EQ(k.col(7), k.col(2));
  const auto m = kpca::fit(x, 3);
  const Tensor2 y = kpca::transform_rows(m, x);
  EXPECT_LE((y.row(7) - y.row(2)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Kpca, InSampleConsistency) {
  const Tensor2 x = gaussian(30, 5, 4);
  const auto m = kpca::fit(x, 4);
  const Tensor2 all = kpca::transform_rows(m, x);
  const Tensor2 kc = kpca::center_kernel(kpca::kernel_matrix(x, x, m.kernel));
  const Tensor2 fit_time = kc * m.alphas;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    EXPECT_LE((kpca::transform(m, x.row(i)) - fit_time.row(i)).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE((all.row(i) - fit_time.row(i)).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Kpca, PaperDimensions) {
  const auto m = kpca::fit(gaussian(60, 155, 5), 30);
  EXPECT_EQ(kpca::transform(m, gaussian(1, 155, 6).row(0)).size(), 30);
  EXPECT_THROW(kpca::transform(m, gaussian(1, 154, 6).row(0)), ShapeError);
}

TEST(Kpca, Invariants) {
  const Tensor2 x = gaussian(35, 6, 10);
  const auto m = kpca::fit(x, 5);
  for (Eigen::Index j = 0; j < 5; ++j) {
    EXPECT_GT(m.eigenvalues(j), 0.0);
    if (j > 0) EXPECT_LE(m.eigenvalues(j), m.eigenvalues(j - 1));
    EXPECT_NEAR(m.eigenvalues(j) * m.alphas.col(j).squaredNorm(), 1.0, 1e-10);
    Eigen::Index arg = 0;
    m.alphas.col(j).cwiseAbs().maxCoeff(&arg);
    EXPECT_GT(m.alphas(arg, j), 0.0);
  }
  const Tensor2 kc = kpca::center_kernel(kpca::kernel_matrix(x, x, m.kernel));
  EXPECT_LE(kc.rowwise().sum().cwiseAbs().maxCoeff(), 1e-8);
  const Tensor2 y = kpca::transform_rows(m, x);
  const Tensor2 gram = y.transpose() * y;
  const double off = (gram - Tensor2(gram.diagonal().asDiagonal())).cwiseAbs().sum();
  EXPECT_LE(off / gram.diagonal().cwiseAbs().sum(), 1e-6);
}

TEST(Kpca, ExplainedVariance) {
  const Tensor2 x = gaussian(25, 4, 12);
  const auto m = kpca::fit(x, 3);
  const auto ratios = kpca::explained_variance(m);
  const auto ref = oracle::kpca(x, x, 3, 0.25);
  double total = 0.0;
  for (Eigen::Index j = 0; j < ref.eigenvalues.size(); ++j) if (ref.eigenvalues(j) > 1e-12) total += ref.eigenvalues(j);
  double acc = 0.0;
  for (std::size_t j = 0; j < ratios.size(); ++j) {
    acc += ref.eigenvalues(static_cast<Eigen::Index>(j));
    EXPECT_NEAR(ratios[j], acc / total, 1e-10);
    EXPECT_GE(ratios[j], 0.0);
    EXPECT_LE(ratios[j], 1.0);
    if (j > 0) EXPECT_GE(ratios[j], ratios[j - 1]);
  }
}

TEST(Kpca, LineDatasetHasOneDominantComponent) {
  // Small offsets along one direction keep the kernel near its linear term.
  const RowVec dir = RowVec{{0.6, -0.8, 0.0}};
  const RowVec mean = RowVec{{0.1, 0.2, -0.1}};
  Tensor2 x(21, 3);
  for (Eigen::Index i = 0; i < 21; ++i) x.row(i) = mean + 0.01 * static_cast<double>(i - 10) * dir;
  const auto m = kpca::fit(x, 1);
  EXPECT_GE(kpca::explained_variance(m).front(), 0.99);
}

TEST(Kpca, StridedSubsample) {
  const Tensor2 x = gaussian(10, 2, 1);
  const Tensor2 s = kpca::strided_subsample(x, 4);
  ASSERT_EQ(s.rows(), 4);
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_EQ(s.row(i), x.row(i * 10 / 4));
  EXPECT_EQ(kpca::strided_subsample(x, 20), x);
  const auto m = kpca::fit(gaussian(50, 3, 2), 2, {}, 20);
  EXPECT_EQ(m.training_points.rows(), 20);
  EXPECT_EQ(m.source_points, 50);
}

TEST(Kpca, JacobiMatchesEigen) {
  const Tensor2 a = gaussian(15, 15, 21);
  const Tensor2 spd = a * a.transpose();
  const auto eig = kpca::jacobi_eigen(spd);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(spd);
  for (Eigen::Index j = 0; j < 15; ++j) {
    EXPECT_NEAR(eig.values(j), es.eigenvalues()(14 - j), 1e-9 * es.eigenvalues().maxCoeff());
  }
  EXPECT_LE((spd * eig.vectors - eig.vectors * Tensor2(eig.values.transpose().asDiagonal())).cwiseAbs().maxCoeff(), 1e-8);
}
