#include "gpllm/kernel.hpp"
#include "gpllm/model.hpp"
#include "gpllm/random.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

using namespace gpllm;

using namespace gpllm::oracle;

namespace {

MarginalInstance random_instance(Rng &rng, Eigen::Index n, Eigen::Index mx) {
  return random_marginal_instance(rng, n, mx);
}

} // namespace

TEST(BetaConditional, EmptyDataGivesPrior) {
  const auto hyper = HyperParams::defaults(3);
  Rng rng = make_stream(1);
  SharedState shared{Eigen::Vector3d(0.5, -1.0, 2.0), random_spd(3, rng), 1};
  const auto data = RegressionData::empty(2);
  const auto bc = beta_conditional(data, CovMatrix::linear(0, 0.1), shared, 1.7);
  EXPECT_TRUE(bc.mean.isApprox(shared.beta0, 1e-12));
  EXPECT_TRUE(bc.V.isApprox(1.7 * shared.W, 1e-12));
}

TEST(BetaConditional, FlatPriorLimitIsOls) {
  Rng rng = make_stream(2);
  const Eigen::MatrixXd X = random_matrix(20, 2, rng);
  Eigen::VectorXd y(20);
  for (int i = 0; i < 20; ++i) y(i) = 1.0 + X(i, 0) - 3.0 * X(i, 1) + 0.1 * draw_normal(rng);
  const RegressionData data(X, y);
  const auto hyper = HyperParams::defaults(3);
  const auto shared = SharedState::initial(hyper);
  // K = I is the linear path with a vanishing nugget.
  const auto bc = beta_conditional(data, CovMatrix::linear(20, 0.0), shared, 1e12);
  const Eigen::VectorXd ols = data.FtF.ldlt().solve(data.Fty);
  EXPECT_LE((bc.mean - ols).norm(), 1e-4 * ols.norm());
}

TEST(BetaConditional, MatchesDenseFormula) {
  Eigen::MatrixXd X(3, 1);
  X << 0.0, 0.5, 1.0;
  const Eigen::Vector3d y(0.3, 1.1, 2.4);
  const RegressionData data(X, y);
  const double g = 0.1;
  SharedState shared{Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity(), 1};
  const auto bc = beta_conditional(data, CovMatrix::linear(3, g), shared, 1.0);

  Eigen::MatrixXd F(3, 2);
  F << 1, 0, 1, 0.5, 1, 1;
  const Eigen::MatrixXd Ki = Eigen::MatrixXd::Identity(3, 3) / (1.0 + g);
  const Eigen::MatrixXd V = (F.transpose() * Ki * F + Eigen::Matrix2d::Identity()).inverse();
  const Eigen::VectorXd mean = V * (F.transpose() * Ki * y);
  EXPECT_TRUE(bc.V.isApprox(V, 1e-13));
  EXPECT_TRUE(bc.mean.isApprox(mean, 1e-13));
}

TEST(BetaConditional, LinearPathHasClosedForm) {
  Rng rng = make_stream(3);
  const auto in = random_instance(rng, 15, 3);
  const double g = 0.37;
  const auto bc = beta_conditional(in.data, CovMatrix::linear(15, g), in.shared, in.tau2);
  const Eigen::MatrixXd expected =
      (in.shared.W.inverse() / in.tau2 + in.data.F.transpose() * in.data.F / (1.0 + g)).inverse();
  EXPECT_TRUE(bc.V.isApprox(expected, 1e-12));
  EXPECT_EQ(Eigen::LLT<Eigen::MatrixXd>(bc.V).info(), Eigen::Success);
}

TEST(Beta0Conditional, NoLeavesGivesPrior) {
  const auto hyper = HyperParams::defaults(2);
  const auto out = beta0_conditional({}, Eigen::Matrix2d::Identity(), hyper);
  EXPECT_LT((out.mean - hyper.mu).norm(), 1e-14);
  EXPECT_TRUE(out.cov.isApprox(hyper.B, 1e-12));
}

TEST(Beta0Conditional, FlatPriorSingleLeaf) {
  auto hyper = HyperParams::defaults(2);
  hyper.B = 1e14 * Eigen::Matrix2d::Identity();
  Eigen::Matrix2d W;
  W << 2.0, 0.3, 0.3, 1.0;
  const LeafCoefficients leaf{Eigen::Vector2d(1.5, -0.5), 0.8, 1.25};
  const auto out = beta0_conditional(std::span<const LeafCoefficients>(&leaf, 1), W, hyper);
  EXPECT_TRUE(out.mean.isApprox(leaf.beta, 1e-9));
  EXPECT_TRUE(out.cov.isApprox(W * leaf.sigma2 * leaf.tau2, 1e-9));
}

TEST(Beta0Conditional, TwoLeavesMatchDense) {
  Rng rng = make_stream(4);
  auto hyper = HyperParams::defaults(3);
  hyper.mu << 0.1, 0.2, 0.3;
  hyper.B = random_spd(3, rng);
  const Eigen::MatrixXd W = random_spd(3, rng);
  std::vector<LeafCoefficients> leaves{{Eigen::Vector3d(1, 2, 3), 0.5, 2.0},
                                       {Eigen::Vector3d(-1, 0, 4), 1.5, 0.7}};
  const auto out = beta0_conditional(leaves, W, hyper);
  const Eigen::MatrixXd Bi = hyper.B.inverse(), Wi = W.inverse();
  const double w1 = 1.0 / (0.5 * 2.0), w2 = 1.0 / (1.5 * 0.7);
  const Eigen::MatrixXd V = (Bi + Wi * (w1 + w2)).inverse();
  const Eigen::VectorXd mean = V * (Bi * hyper.mu + Wi * (w1 * leaves[0].beta + w2 * leaves[1].beta));
  EXPECT_TRUE(out.cov.isApprox(V, 1e-12));
  EXPECT_TRUE(out.mean.isApprox(mean, 1e-12));
}

TEST(Sigma2Conditional, EmptyDataAtBeta0) {
  const auto hyper = HyperParams::defaults(3);
  const auto shared = SharedState::initial(hyper);
  const auto ig = sigma2_conditional(RegressionData::empty(2), CovMatrix::linear(0, 0.1),
                                     shared.beta0, shared, 1.0, hyper);
  EXPECT_DOUBLE_EQ(ig.shape, 0.5 * hyper.alpha_sigma + 1.5);
  EXPECT_DOUBLE_EQ(ig.scale, 0.5 * hyper.q_sigma);
}

TEST(Sigma2Conditional, TwoPointExpansion) {
  Eigen::MatrixXd X(2, 1);
  X << 0.0, 1.0;
  const Eigen::Vector2d y(1.0, 3.0);
  const RegressionData data(X, y);
  auto cs = CorrelationState::make(1, 1.0, 0.01);
  const auto cm = build_cov(X, cs);
  const auto hyper = HyperParams::defaults(2);
  SharedState shared{Eigen::Vector2d(0.5, 0.5), Eigen::Matrix2d::Identity() * 2.0, 1};
  const Eigen::Vector2d beta(1.0, 1.5);
  const double tau2 = 0.5;
  const auto ig = sigma2_conditional(data, cm, beta, shared, tau2, hyper);
  // r = (0, 0.5); K = [[1.01, e], [e, 1.01]] with e = exp(-1).
  const double e = std::exp(-1.0), a = 1.01;
  const double det = a * a - e * e;
  const double data_quad = 0.25 * a / det;
  const double prior_quad = (0.25 + 1.0) / 2.0 / tau2;
  EXPECT_DOUBLE_EQ(ig.shape, 0.5 * (5.0 + 2.0 + 2.0));
  EXPECT_NEAR(ig.scale, 0.5 * (10.0 + data_quad + prior_quad), 1e-13);
}

TEST(Tau2Conditional, AtBeta0) {
  const auto hyper = HyperParams::defaults(3);
  const Eigen::Vector3d b0(1, 2, 3);
  const auto ig = tau2_conditional(b0, b0, Eigen::Matrix3d::Identity(), 2.0, hyper);
  EXPECT_DOUBLE_EQ(ig.shape, 0.5 * (hyper.alpha_tau + 3.0));
  EXPECT_DOUBLE_EQ(ig.scale, 0.5 * hyper.q_tau);
}

TEST(Tau2Conditional, MatchesDense) {
  const auto hyper = HyperParams::defaults(2);
  Eigen::Matrix2d W;
  W << 1.0, 0.5, 0.5, 2.0;
  const Eigen::Vector2d beta(1.0, -1.0), b0(0.0, 0.5);
  const auto ig = tau2_conditional(beta, b0, W, 0.7, hyper);
  const Eigen::Vector2d dev = beta - b0;
  EXPECT_NEAR(ig.scale, 0.5 * (hyper.q_tau + dev.dot(W.inverse() * dev) / 0.7), 1e-13);
}

TEST(WishartConditional, NoLeavesGivesPrior) {
  const auto hyper = HyperParams::defaults(3);
  const auto wp = wishart_conditional({}, hyper.mu, hyper);
  EXPECT_DOUBLE_EQ(wp.dof, hyper.rho);
  EXPECT_TRUE(wp.scale.isApprox((hyper.rho * hyper.V).inverse(), 1e-13));
}

TEST(WishartConditional, MatchesDense) {
  Rng rng = make_stream(6);
  auto hyper = HyperParams::defaults(2);
  hyper.V = random_spd(2, rng);
  const Eigen::Vector2d b0(0.2, -0.1);
  std::vector<LeafCoefficients> leaves{{Eigen::Vector2d(1, 2), 0.5, 2.0},
                                       {Eigen::Vector2d(0, -1), 1.2, 0.3}};
  const auto wp = wishart_conditional(leaves, b0, hyper);
  Eigen::MatrixXd S = hyper.rho * hyper.V;
  for (const auto &l : leaves) S += (l.beta - b0) * (l.beta - b0).transpose() / (l.sigma2 * l.tau2);
  EXPECT_DOUBLE_EQ(wp.dof, hyper.rho + 2.0);
  EXPECT_TRUE(wp.scale.isApprox(S.inverse(), 1e-12));
}

TEST(LogMarginal, MatchesQuadratureOracle) {
  EXPECT_LT(marginal_oracle_error(7, 20), 1e-4);
}

TEST(LogMarginal, PermutationInvariant) {
  Rng rng = make_stream(8);
  const auto in = random_instance(rng, 12, 2);
  std::vector<int> perm(12);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const RegressionData permuted = in.data.subset(perm);
  const double a = log_marginal_posterior(in.data, build_cov(in.data.X, in.cs), in.shared,
                                          in.tau2, in.hyper, 0.0);
  const double b = log_marginal_posterior(permuted, build_cov(permuted.X, in.cs), in.shared,
                                          in.tau2, in.hyper, 0.0);
  EXPECT_NEAR(a, b, 1e-10);
}

TEST(LogMarginal, LinearPathEqualsDensePath) {
  Rng rng = make_stream(9);
  auto in = random_instance(rng, 25, 3);
  in.cs.active.assign(3, false);
  const auto fast = build_cov(in.data.X, in.cs);
  ASSERT_TRUE(fast.is_llm());
  const auto dense = CovMatrix::factor(
      (1.0 + in.cs.nugget) * Eigen::MatrixXd::Identity(25, 25), in.cs.nugget);
  ASSERT_TRUE(dense.has_value());
  ASSERT_FALSE(dense->is_llm());
  const double a = log_marginal_posterior(in.data, fast, in.shared, in.tau2, in.hyper, 0.0);
  const double b = log_marginal_posterior(in.data, *dense, in.shared, in.tau2, in.hyper, 0.0);
  EXPECT_NEAR(a, b, 1e-10);
}

TEST(HyperParams, Validation) {
  auto h = HyperParams::defaults(3);
  EXPECT_NO_THROW(h.validate());
  EXPECT_DOUBLE_EQ(h.rho, 4.0);
  h.rho = 2.0;
  EXPECT_THROW(h.validate(), std::invalid_argument);
  h = HyperParams::defaults(3);
  h.q_sigma = 0.0;
  EXPECT_THROW(h.validate(), std::invalid_argument);
  h = HyperParams::defaults(3);
  h.B(0, 0) = -1.0;
  EXPECT_THROW(h.validate(), std::invalid_argument);
}
