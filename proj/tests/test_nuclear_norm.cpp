#include <gtest/gtest.h>

#include <ifepanel.hpp>

#include "oracles.hpp"

using namespace ifepanel;

namespace {

PanelData rank_one_panel(Index n, Index t, double beta, double noise, std::mt19937_64& rng) {
  const Matrix l = oracle::gaussian(n, 1, rng), f = oracle::gaussian(t, 1, rng);
  const Matrix x = oracle::gaussian(n, t, rng);
  return PanelData(Mask::Constant(n, t, true), beta * x + l * f.transpose() + noise * oracle::gaussian(n, t, rng), {x});
}

}  // namespace

TEST(NuclearNorm, RecoversBetaOnNoiselessRankOne) {
  std::mt19937_64 rng(81);
  const PanelData d = rank_one_panel(60, 60, 1.0, 0.0, rng);
  const NnFit nn = fit_nuclear(d);
  EXPECT_NEAR(nn.beta_star(0), 1.0, 0.05);
  EXPECT_LE(nn.nuclear_objective, nuclear_objective(d, detail::within_ols(d).beta) + 1e-15);
}

TEST(NuclearNorm, ZeroOutcomeGivesZero) {
  std::mt19937_64 rng(82);
  const Mask m = oracle::random_mask(10, 8, 0.2, rng);
  const PanelData d(m, Matrix::Zero(10, 8), {oracle::gaussian(10, 8, rng), oracle::gaussian(10, 8, rng)});
  const NnFit nn = fit_nuclear(d);
  EXPECT_LT(nn.beta_star.cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(nn.nuclear_objective, 1e-12);
  EXPECT_TRUE(nn.converged);
}

TEST(NuclearNorm, ObjectiveIsConvex) {
  std::mt19937_64 rng(83);
  std::normal_distribution<double> z(0.0, 2.0);
  for (int rep = 0; rep < 30; ++rep) {
    const Mask m = oracle::random_mask(9, 7, 0.2, rng);
    const PanelData d = oracle::random_panel(m, 2, rng);
    const Vector b1{{z(rng), z(rng)}}, b2{{z(rng), z(rng)}};
    const double mid = nuclear_objective(d, 0.5 * (b1 + b2));
    EXPECT_LE(mid, 0.5 * (nuclear_objective(d, b1) + nuclear_objective(d, b2)) + 1e-9);
  }
}

TEST(NuclearNorm, ObjectiveIsScaledSingularValueSum) {
  std::mt19937_64 rng(84);
  const Mask m = oracle::random_mask(8, 6, 0.25, rng);
  const PanelData d = oracle::random_panel(m, 1, rng);
  const Vector beta = Vector::Constant(1, 0.4);
  const Vector s = Eigen::JacobiSVD<Matrix>(d.masked(d.residual_matrix(beta)).values).singularValues();
  EXPECT_NEAR(nuclear_objective(d, beta), s.sum() / (2.0 * d.n_obs()), 1e-12);
}

TEST(NuclearNorm, SolverPathIsNonIncreasing) {
  std::mt19937_64 rng(85);
  const PanelData d = rank_one_panel(30, 20, 0.5, 0.5, rng);
  NnOptions opts;
  opts.max_iter = 400;
  const NnFit nn = fit_nuclear(d, opts);
  ASSERT_FALSE(nn.solver_path.empty());
  for (std::size_t j = 1; j < nn.solver_path.size(); ++j)
    EXPECT_LE(nn.solver_path[j], nn.solver_path[j - 1] * (1.0 + 1e-9));
  EXPECT_DOUBLE_EQ(nn.solver_path.back(), nn.nuclear_objective);
  EXPECT_DOUBLE_EQ(nuclear_objective(d, nn.beta_star), nn.nuclear_objective);
}

TEST(NuclearNorm, ThrowsWhenAskedAndNotConverged) {
  std::mt19937_64 rng(86);
  const PanelData d = rank_one_panel(20, 15, 0.5, 1.0, rng);
  NnOptions opts;
  opts.max_iter = 3;
  opts.throw_on_failure = true;
  EXPECT_THROW(fit_nuclear(d, opts), NoConvergence<NnFit>);
}

TEST(PostEstimate, RankZeroIsPooledOls) {
  std::mt19937_64 rng(87);
  const Mask m = oracle::random_mask(10, 8, 0.2, rng);
  const PanelData d = two_way_within(oracle::random_panel(m, 2, rng));
  const NnFit nn = fit_nuclear(d);
  const IfeFit post = post_estimate(nn, d, 0, {.n_iters = 1});
  IfeOptions opts;
  opts.r = 0;
  EXPECT_LT((post.beta - fit(d, opts).beta).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(PostEstimate, FixedPointOnNoiselessData) {
  std::mt19937_64 rng(88);
  const PanelData d = rank_one_panel(25, 20, 1.3, 0.0, rng);
  NnFit at_truth;
  at_truth.beta_star = Vector::Constant(1, 1.3);
  const IfeFit one = post_estimate(at_truth, d, 1, {.n_iters = 1});
  const IfeFit three = post_estimate(at_truth, d, 1, {.n_iters = 3});
  EXPECT_NEAR(one.beta(0), 1.3, 1e-10);
  EXPECT_NEAR(one.beta(0), three.beta(0), 1e-12);
}

TEST(PostEstimate, ConvergesToAlternatingEstimator) {
  sim::DgpConfig c;
  c.n_bar = c.t_bar = 60;
  const sim::Draw draw = sim::generate(c, 2718);
  const NnFit nn = fit_nuclear(draw.data);
  IfeOptions opts;
  opts.r = 2;
  opts.beta_tol = opts.obj_tol = 1e-11;
  const double target = fit(draw.data, opts).beta(0);
  std::vector<double> path;
  for (int j = 1; j <= 8; ++j) path.push_back(post_estimate(nn, draw.data, 2, {.n_iters = j}).beta(0));
  for (std::size_t j = 2; j < path.size(); ++j)
    EXPECT_LE(std::abs(path[j] - path[j - 1]), std::abs(path[j - 1] - path[j - 2]) + 1e-12);
  EXPECT_NEAR(post_estimate(nn, draw.data, 2, {.n_iters = 30}).beta(0), target, 1e-4);
}

TEST(PostEstimate, Collinear) {
  std::mt19937_64 rng(89);
  const Matrix x = oracle::gaussian(8, 6, rng);
  const PanelData d(Mask::Constant(8, 6, true), oracle::gaussian(8, 6, rng), {x, -x});
  NnFit nn;
  nn.beta_star = Vector::Zero(2);
  try {
    post_estimate(nn, d, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Collinear);
  }
  EXPECT_THROW(post_estimate(nn, d, 1, {.n_iters = 0}), Error);
}
