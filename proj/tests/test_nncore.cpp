#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "eegcvae/gradcheck_suite.hpp"
#include "eegcvae/nn/gradcheck.hpp"
#include "eegcvae/nn/layers.hpp"
#include "eegcvae/nn/losses.hpp"
#include "eegcvae/nn/optim.hpp"
#include "oracles/ctc_oracle.hpp"

using namespace eegcvae;

namespace {

double sig(double v) { return 1.0 / (1.0 + std::exp(-v)); }

Tensor2 randn(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  Tensor2 t(r, c);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = scale * normal(rng);
  return t;
}

// Linear probe L = Σ r ⊙ f(x); its gradient w.r.t. f(x) is r.
long double probe(const Tensor2& y, const Tensor2& r) {
  long double s = 0.0L;
  for (Eigen::Index i = 0; i < y.size(); ++i) s += static_cast<long double>(y.data()[i]) * r.data()[i];
  return s;
}

template <typename Layer, typename Fwd, typename Bwd>
double layer_check(Layer& layer, Tensor2 x, Eigen::Index out_cols, Fwd fwd, Bwd bwd, Rng& rng) {
  const Tensor2 r = randn(x.rows(), out_cols, rng);
  Layer grad = nn::zeros_like(layer);
  Tensor2 dx = bwd(layer, x, r, grad);
  auto params = nn::collect_params(layer);
  auto analytic = nn::collect_params(grad);
  params.push_back({"x", &x});
  analytic.push_back({"x", &dx});
  return nn::grad_check([&] { return probe(fwd(layer, x), r); }, params, analytic).max_rel_error;
}

Tensor2 log_softmax_random(Eigen::Index t, Eigen::Index v, Rng& rng) {
  return nn::log_softmax_rows(randn(t, v, rng, 1.5));
}

}  // namespace

// --- Dense ------------------------------------------------------------------

TEST(Dense, IdentityWeights) {
  nn::Dense d{Tensor2::Identity(3, 3), Tensor2::Zero(1, 3)};
  Rng rng = make_rng(1);
  const Tensor2 x = randn(4, 3, rng);
  EXPECT_EQ(d.forward(x), x);
}

TEST(Dense, ScalarHandCase) {
  nn::Dense d{Tensor2::Constant(1, 1, 3.0), Tensor2::Constant(1, 1, 1.0)};
  const Tensor2 x = Tensor2::Constant(1, 1, 2.0);
  EXPECT_EQ(d.forward(x)(0, 0), 7.0);
  nn::Dense g = nn::zeros_like(d);
  const Tensor2 dx = d.backward(x, Tensor2::Constant(1, 1, 1.0), g);
  EXPECT_EQ(g.w(0, 0), 2.0);
  EXPECT_EQ(dx(0, 0), 3.0);
  EXPECT_EQ(g.b(0, 0), 1.0);
}

TEST(Dense, ShapeMismatch) {
  Rng rng = make_rng(1);
  const auto d = nn::Dense::init(3, 2, rng);
  EXPECT_THROW(d.forward(Tensor2::Zero(2, 4)), ShapeError);
}

TEST(Dense, GradCheck) {
  Rng rng = make_rng(2);
  auto d = nn::Dense::init(5, 4, rng);
  d.b = randn(1, 4, rng);
  const double err = layer_check(
      d, randn(6, 5, rng), 4, [](const nn::Dense& l, const Tensor2& x) { return l.forward(x); },
      [](const nn::Dense& l, const Tensor2& x, const Tensor2& r, nn::Dense& g) { return l.backward(x, r, g); }, rng);
  EXPECT_LE(err, 1e-6);
}

// --- LSTM -------------------------------------------------------------------

TEST(Lstm, ZeroWeightsGiveZeroOutput) {
  const auto l = nn::Lstm::zeros(3, 4);
  Rng rng = make_rng(3);
  EXPECT_EQ(l.forward(randn(5, 3, rng)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Lstm, ScalarHandRecurrence) {
  auto l = nn::Lstm::zeros(1, 1);
  const double wx[4] = {0.3, -0.2, 0.5, 0.7}, wh[4] = {0.1, 0.4, -0.6, 0.2}, b[4] = {0.05, 1.0, -0.1, 0.0};
  for (int k = 0; k < 4; ++k) {
    l.wx(0, k) = wx[k];
    l.wh(0, k) = wh[k];
    l.b(0, k) = b[k];
  }
  const double xs[2] = {0.8, -1.3};
  double h = 0.0, c = 0.0;
  Tensor2 x(2, 1);
  x << xs[0], xs[1];
  const Tensor2 out = l.forward(x);
  for (int t = 0; t < 2; ++t) {
    const double i = sig(xs[t] * wx[0] + h * wh[0] + b[0]);
    const double f = sig(xs[t] * wx[1] + h * wh[1] + b[1]);
    const double g = std::tanh(xs[t] * wx[2] + h * wh[2] + b[2]);
    const double o = sig(xs[t] * wx[3] + h * wh[3] + b[3]);
    c = f * c + i * g;
    h = o * std::tanh(c);
    EXPECT_NEAR(out(t, 0), h, 1e-12);
  }
}

TEST(Lstm, GradCheck) {
  Rng rng = make_rng(4);
  auto l = nn::Lstm::init(4, 5, rng);
  const double err = layer_check(
      l, randn(3, 4, rng), 5, [](const nn::Lstm& m, const Tensor2& x) { return m.forward(x); },
      [](const nn::Lstm& m, const Tensor2& x, const Tensor2& r, nn::Lstm& g) {
        nn::Lstm::Cache cache;
        m.forward(x, &cache);
        return m.backward(cache, r, g);
      },
      rng);
  EXPECT_LE(err, 1e-5);
}

TEST(Lstm, ForgetBiasInitialisedToOne) {
  Rng rng = make_rng(5);
  const auto l = nn::Lstm::init(2, 3, rng);
  EXPECT_EQ(l.b.block(0, 3, 1, 3), Tensor2::Ones(1, 3));
  EXPECT_EQ(l.b.block(0, 0, 1, 3), Tensor2::Zero(1, 3));
}

// --- GRU --------------------------------------------------------------------

TEST(Gru, ZeroWeightsGiveZeroOutput) {
  const auto g = nn::Gru::zeros(3, 4);
  Rng rng = make_rng(6);
  EXPECT_EQ(g.forward(randn(5, 3, rng)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Gru, ScalarHandRecurrence) {
  auto l = nn::Gru::zeros(1, 1);
  const double wx[3] = {0.6, -0.3, 0.9}, wh[3] = {0.2, 0.5, -0.7}, b[3] = {0.1, -0.2, 0.05};
  for (int k = 0; k < 3; ++k) {
    l.wx(0, k) = wx[k];
    l.wh(0, k) = wh[k];
    l.b(0, k) = b[k];
  }
  const double xs[3] = {1.1, -0.4, 0.3};
  Tensor2 x(3, 1);
  x << xs[0], xs[1], xs[2];
  const Tensor2 out = l.forward(x);
  double h = 0.0;
  for (int t = 0; t < 3; ++t) {
    const double z = sig(xs[t] * wx[0] + h * wh[0] + b[0]);
    const double r = sig(xs[t] * wx[1] + h * wh[1] + b[1]);
    const double n = std::tanh(xs[t] * wx[2] + (r * h) * wh[2] + b[2]);
    h = (1.0 - z) * h + z * n;
    EXPECT_NEAR(out(t, 0), h, 1e-12);
  }
}

TEST(Gru, GradCheck) {
  Rng rng = make_rng(7);
  auto l = nn::Gru::init(4, 5, rng);
  l.b = randn(1, 15, rng, 0.3);
  const double err = layer_check(
      l, randn(4, 4, rng), 5, [](const nn::Gru& m, const Tensor2& x) { return m.forward(x); },
      [](const nn::Gru& m, const Tensor2& x, const Tensor2& r, nn::Gru& g) {
        nn::Gru::Cache cache;
        m.forward(x, &cache);
        return m.backward(cache, r, g);
      },
      rng);
  EXPECT_LE(err, 1e-5);
}

// --- TCN --------------------------------------------------------------------

TEST(Tcn, CurrentTapIdentityIsRectifier) {
  nn::TcnLevel level;
  level.kernel = 3;
  level.dilation = 1;
  level.residual = false;
  level.w = Tensor2::Zero(9, 3);
  level.w.bottomRows(3) = Tensor2::Identity(3, 3);
  level.b = Tensor2::Zero(1, 3);
  nn::Tcn net{{level}};
  Rng rng = make_rng(8);
  const Tensor2 x = randn(6, 3, rng);
  EXPECT_EQ(net.forward(x), x.cwiseMax(0.0));
}

TEST(Tcn, Causal) {
  Rng rng = make_rng(9);
  const auto net = nn::Tcn::init(3, 6, rng);
  const Tensor2 x = randn(12, 3, rng);
  const Tensor2 y = net.forward(x);
  for (Eigen::Index t = 0; t < 12; ++t) {
    Tensor2 xp = x;
    xp.row(t).array() += 0.5;
    const Tensor2 yp = net.forward(xp);
    if (t > 0) EXPECT_EQ(yp.topRows(t), y.topRows(t)) << t;
  }
  EXPECT_EQ(y.rows(), 12);
  EXPECT_EQ(y.cols(), 6);
  EXPECT_THROW(net.forward(Tensor2::Zero(0, 3)), ShapeError);
  EXPECT_THROW(net.forward(Tensor2::Zero(4, 2)), ShapeError);
}

TEST(Tcn, GradCheck) {
  Rng rng = make_rng(10);
  auto net = nn::Tcn::init(3, 4, rng);
  for (auto& l : net.levels) l.b = randn(1, 4, rng, 0.2);
  const double err = layer_check(
      net, randn(9, 3, rng), 4, [](const nn::Tcn& m, const Tensor2& x) { return m.forward(x); },
      [](const nn::Tcn& m, const Tensor2& x, const Tensor2& r, nn::Tcn& g) {
        nn::Tcn::Cache cache;
        m.forward(x, &cache);
        return m.backward(cache, r, g);
      },
      rng);
  EXPECT_LE(err, 1e-5);
}

// --- Dropout / softmax ------------------------------------------------------

TEST(Dropout, IdentityCases) {
  Rng rng = make_rng(11);
  const Tensor2 x = randn(5, 5, rng);
  EXPECT_EQ(nn::dropout(x, 0.0, nn::Mode::kTrain, rng), x);
  EXPECT_EQ(nn::dropout(x, 0.7, nn::Mode::kInference, rng), x);
  EXPECT_THROW(nn::dropout(x, 1.0, nn::Mode::kTrain, rng), ParameterError);
  EXPECT_THROW(nn::dropout(x, -0.1, nn::Mode::kTrain, rng), ParameterError);
}

TEST(Dropout, MonteCarlo) {
  Rng rng = make_rng(12);
  const Tensor2 x = Tensor2::Constant(400, 250, 3.0);
  const Tensor2 y = nn::dropout(x, 0.5, nn::Mode::kTrain, rng);
  const double survivors = static_cast<double>((y.array() != 0.0).count()) / static_cast<double>(y.size());
  EXPECT_NEAR(survivors, 0.5, 0.02);
  EXPECT_NEAR(y.mean() / 3.0, 1.0, 0.02);
  EXPECT_TRUE(((y.array() == 0.0) || (y.array() == 6.0)).all());
}

TEST(Softmax, Basics) {
  const RowVec p = nn::softmax(RowVec{{0.0, 0.0}});
  EXPECT_DOUBLE_EQ(p(0), 0.5);
  EXPECT_DOUBLE_EQ(p(1), 0.5);
  const RowVec v{{0.3, -1.2, 2.5, 0.0}};
  const RowVec shifted = (v.array() + 17.0).matrix();
  EXPECT_LE((nn::softmax(v) - nn::softmax(shifted)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_NEAR(nn::softmax(v).sum(), 1.0, 1e-12);
  EXPECT_TRUE((nn::softmax(v).array() > 0.0).all());
  const RowVec big = nn::softmax(RowVec{{1000.0, 0.0}});
  EXPECT_TRUE(big.allFinite());
  EXPECT_NEAR(big(0), 1.0, 1e-15);
  EXPECT_NEAR(big(1), 0.0, 1e-15);
}

TEST(Softmax, LogSoftmaxRowsNormalised) {
  Rng rng = make_rng(13);
  const Tensor2 lp = log_softmax_random(7, 4, rng);
  for (Eigen::Index t = 0; t < 7; ++t) EXPECT_NEAR(lp.row(t).array().exp().sum(), 1.0, 1e-9);
}

// --- Losses -----------------------------------------------------------------

TEST(Mse, Values) {
  Rng rng = make_rng(14);
  const Tensor2 a = randn(3, 4, rng);
  EXPECT_EQ(nn::mse_loss(a, a).value, 0.0);
  EXPECT_EQ(nn::mse_loss(Tensor2::Zero(1, 1), Tensor2::Constant(1, 1, 2.0)).value, 4.0);
}

TEST(Mse, GradCheck) {
  Rng rng = make_rng(15);
  Tensor2 pred = randn(4, 3, rng);
  const Tensor2 target = randn(4, 3, rng);
  Tensor2 grad = nn::mse_loss(pred, target).grad;
  const auto r = nn::grad_check([&] { return static_cast<long double>(nn::mse_loss(pred, target).value); },
                                {{"pred", &pred}}, {{"pred", &grad}});
  EXPECT_LE(r.max_rel_error, 1e-8);
}

TEST(Ce, Values) {
  EXPECT_EQ(nn::ce_loss(RowVec{{0.0, 1.0}}, 1).value, 0.0);
  EXPECT_NEAR(nn::ce_loss(RowVec{{0.5, 0.5}}, 0).value, std::numbers::ln2, 1e-15);
}

TEST(Ce, GradCheckThroughSoftmax) {
  Rng rng = make_rng(16);
  Tensor2 logits = randn(1, 4, rng);
  Tensor2 grad = nn::ce_loss(nn::softmax(logits.row(0)), 2).dlogits;
  // Extended-precision log-sum-exp as the loss oracle.
  auto loss = [&] {
    long double m = logits.maxCoeff(), s = 0.0L;
    for (Eigen::Index j = 0; j < 4; ++j) s += std::exp(static_cast<long double>(logits(0, j)) - m);
    return m + std::log(s) - logits(0, 2);
  };
  EXPECT_LE(nn::grad_check(loss, {{"logits", &logits}}, {{"logits", &grad}}).max_rel_error, 1e-8);
}

TEST(Kl, ClosedForms) {
  EXPECT_EQ(nn::kl_loss(Tensor2::Zero(1, 1), Tensor2::Zero(1, 1)).value, 0.0);
  EXPECT_DOUBLE_EQ(nn::kl_loss(Tensor2::Ones(1, 1), Tensor2::Zero(1, 1)).value, 0.5);
  EXPECT_NEAR(nn::kl_loss(Tensor2::Zero(1, 1), Tensor2::Constant(1, 1, std::numbers::ln2)).value, 0.806853, 1e-6);
  EXPECT_NEAR(nn::kl_loss(Tensor2::Zero(1, 1), Tensor2::Constant(1, 1, std::numbers::ln2)).value,
              0.5 * (3.0 - 2.0 * std::numbers::ln2), 1e-15);
}

TEST(Kl, NonNegativeAndGradients) {
  Rng rng = make_rng(17);
  for (int i = 0; i < 50; ++i) {
    const Tensor2 mu = randn(3, 2, rng), ls = randn(3, 2, rng);
    EXPECT_GE(nn::kl_loss(mu, ls).value, 0.0);
  }
  Tensor2 mu = randn(2, 3, rng), ls = randn(2, 3, rng, 0.5);
  auto k = nn::kl_loss(mu, ls);
  EXPECT_EQ(k.dmu, mu);
  const auto r = nn::grad_check([&] { return static_cast<long double>(nn::kl_loss(mu, ls).value); },
                                {{"mu", &mu}, {"ls", &ls}}, {{"mu", &k.dmu}, {"ls", &k.dlog_sigma}});
  EXPECT_LE(r.max_rel_error, 1e-8);
}

// --- CTC --------------------------------------------------------------------

TEST(Ctc, SinglePath) {
  Tensor2 lp(1, 2);
  lp << std::log(0.7), std::log(0.3);
  EXPECT_NEAR(nn::ctc_loss(lp, {0}).value, -std::log(0.7), 1e-15);
}

TEST(Ctc, ThreePathsForTwoFrames) {
  const double a1 = 0.6, b1 = 0.4, a2 = 0.25, b2 = 0.75;
  Tensor2 lp(2, 2);
  lp << std::log(a1), std::log(b1), std::log(a2), std::log(b2);
  EXPECT_NEAR(nn::ctc_loss(lp, {0}).value, -std::log(a1 * a2 + a1 * b2 + b1 * a2), 1e-14);
}

TEST(Ctc, MatchesEnumeration) {
  Rng rng = make_rng(18);
  int checked = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const Eigen::Index t = 1 + static_cast<Eigen::Index>(rng() % 6);
    const Eigen::Index v = 1 + static_cast<Eigen::Index>(rng() % 3);
    std::vector<int> target(rng() % 3);
    for (int& s : target) s = static_cast<int>(rng() % static_cast<std::uint64_t>(v));
    const Tensor2 lp = log_softmax_random(t, v + 1, rng);
    if (nn::ctc_min_frames(target) > t) {
      EXPECT_THROW(nn::ctc_loss(lp, target), InfeasibleError);
      continue;
    }
    EXPECT_NEAR(-nn::ctc_loss(lp, target).value, oracle::ctc_log_prob_bruteforce(lp, target), 1e-8);
    ++checked;
  }
  EXPECT_GE(checked, 200);
}

TEST(Ctc, GradCheck) {
  Rng rng = make_rng(19);
  Tensor2 lp = log_softmax_random(6, 4, rng);
  const std::vector<int> target{1, 1, 0};
  Tensor2 grad = nn::ctc_loss(lp, target).grad;
  const auto r = nn::grad_check([&] { return static_cast<long double>(nn::ctc_loss(lp, target).value); },
                                {{"lp", &lp}}, {{"lp", &grad}});
  EXPECT_LE(r.max_rel_error, 1e-5);
}

TEST(Ctc, Infeasible) {
  const Tensor2 lp = Tensor2::Constant(2, 3, std::log(1.0 / 3.0));
  EXPECT_EQ(nn::ctc_min_frames({0, 0}), 3);
  EXPECT_EQ(nn::ctc_min_frames({0, 1}), 2);
  EXPECT_THROW(nn::ctc_loss(lp, {0, 0}), InfeasibleError);
  EXPECT_NO_THROW(nn::ctc_loss(lp, {0, 1}));
}

// --- Optimizers ---------------------------------------------------------------

TEST(Optim, RmsPropFirstStep) {
  Tensor2 p = Tensor2::Zero(1, 1), g = Tensor2::Ones(1, 1);
  nn::RmsProp opt;
  opt.step({{"p", &p}}, {{"p", &g}});
  EXPECT_NEAR(-p(0, 0), 0.001 / (std::sqrt(0.1) + 1e-7), 1e-15);
  EXPECT_NEAR(-p(0, 0), 0.00316228, 1e-8);
}

TEST(Optim, AdamFirstStep) {
  for (double gv : {1e-3, -0.5, 40.0}) {
    Tensor2 p = Tensor2::Zero(1, 1), g = Tensor2::Constant(1, 1, gv);
    nn::Adam opt;
    opt.step({{"p", &p}}, {{"p", &g}});
    EXPECT_NEAR(p(0, 0), -std::copysign(1e-3, gv), 1e-8);
  }
}

TEST(Optim, ZeroGradientLeavesParameters) {
  Rng rng = make_rng(20);
  Tensor2 p = randn(3, 3, rng);
  const Tensor2 before = p;
  Tensor2 g = Tensor2::Zero(3, 3);
  nn::RmsProp rms;
  nn::Adam adam;
  rms.step({{"p", &p}}, {{"p", &g}});
  adam.step({{"p", &p}}, {{"p", &g}});
  EXPECT_EQ(p, before);
}

// --- Gradient checker -------------------------------------------------------

TEST(GradCheck, LinearFunctionExact) {
  Tensor2 w = Tensor2::Zero(1, 3);
  Tensor2 coef(1, 3);
  coef << 2.0, -3.5, 0.25;
  auto loss = [&] { return static_cast<long double>((w.array() * coef.array()).sum()); };
  EXPECT_LE(nn::grad_check(loss, {{"w", &w}}, {{"w", &coef}}).max_rel_error, 1e-10);
}

TEST(GradCheck, DenseWithMse) {
  Rng rng = make_rng(21);
  auto d = nn::Dense::init(4, 3, rng);
  const Tensor2 x = randn(5, 4, rng), target = randn(5, 3, rng);
  auto grad = nn::zeros_like(d);
  d.backward(x, nn::mse_loss(d.forward(x), target).grad, grad);
  const auto r = nn::grad_check([&] { return static_cast<long double>(nn::mse_loss(d.forward(x), target).value); },
                                nn::collect_params(d), nn::collect_params(grad));
  EXPECT_LE(r.max_rel_error, 1e-7);
}

TEST(GradCheck, DetectsWrongGradient) {
  Tensor2 w = Tensor2::Ones(1, 2);
  Tensor2 wrong = Tensor2::Constant(1, 2, 3.0);  // true gradient of Σw² is 2w
  auto loss = [&] { return static_cast<long double>(w.squaredNorm()); };
  const auto r = nn::grad_check(loss, {{"w", &w}}, {{"w", &wrong}});
  EXPECT_GT(r.max_rel_error, 0.3);
  EXPECT_EQ(r.checked, 2);
}

TEST(GradCheck, SubsamplesLargeBlocks) {
  Tensor2 w = Tensor2::Ones(200, 100);
  Tensor2 g = 2.0 * w;
  const auto r = nn::grad_check([&] { return static_cast<long double>(w.squaredNorm()); }, {{"w", &w}}, {{"w", &g}},
                                1e-5, 500);
  EXPECT_EQ(r.checked, 500);
}

TEST(GradCheckSuite, CorruptedRowsFail) {
  gradcheck::Options o;
  for (const char* name : {"dense", "mse_loss", "ctc_loss"}) {
    o.corrupt = name;
    for (const auto& c : gradcheck::detail::cases()) {
      if (std::string(c.name) != name) continue;
      EXPECT_LE(c.run(o, false).max_rel_error, c.threshold) << name;
      EXPECT_GT(c.run(o, true).max_rel_error, c.threshold) << name;
    }
  }
}

TEST(GradCheckSuite, RowNames) {
  const auto names = gradcheck::row_names();
  EXPECT_EQ(names.size(), 10u);
  EXPECT_EQ(names.front(), "dense");
  EXPECT_EQ(names.back(), "cvae_net_loss_full");
}
