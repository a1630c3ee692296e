#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include <Eigen/Eigenvalues>

#include "snowball_ns/lrps.hpp"
#include "support/oracles.hpp"

using namespace snowball_ns;

namespace {

Point make_point(std::vector<double> u, const Problem& p, OriginId id) {
  Point pt;
  pt.u = std::move(u);
  pt.theta = p.prior_transform(pt.u);
  pt.logl = p.log_likelihood(pt.theta);
  pt.origin_id = id;
  return pt;
}

/// L(theta) = theta on the unit interval, so ln L = ln theta.
Problem linear_1d() {
  return Problem(
      "linear", 1, [](std::span<const double> u) { return std::vector<double>(u.begin(), u.end()); },
      [](std::span<const double> t) { return std::log(t[0]); });
}

ProposalState fixed_proposal(std::size_t d, double scale, double sd) {
  ProposalState s = ProposalState::initial(d);
  s.scale = scale;
  s.cov_chol *= sd;
  return s;
}

}  // namespace

TEST(LiveCovariance, TwoPoints) {
  const Problem p = make_gaussian(2, 1.0);
  const std::vector<Point> live{make_point({0, 0}, p, 0), make_point({1, 1}, p, 1)};
  const Eigen::MatrixXd l = live_covariance(live);
  const Eigen::MatrixXd cov = l * l.transpose();
  EXPECT_NEAR(cov(0, 0), 0.5 + kCovarianceJitter, 1e-12);
  EXPECT_NEAR(cov(0, 1), 0.5, 1e-12);
  EXPECT_NEAR(cov(1, 0), 0.5, 1e-12);
  EXPECT_NEAR(cov(1, 1), 0.5 + kCovarianceJitter, 1e-12);
  EXPECT_TRUE(l.isLowerTriangular());
}

TEST(LiveCovariance, IdenticalPointsGiveJitter) {
  const Problem p = make_gaussian(3, 1.0);
  const std::vector<Point> live(6, make_point({0.3, 0.3, 0.3}, p, 0));
  const Eigen::MatrixXd l = live_covariance(live);
  const Eigen::MatrixXd cov = l * l.transpose();
  EXPECT_TRUE(cov.isApprox(kCovarianceJitter * Eigen::MatrixXd::Identity(3, 3), 1e-9));
}

TEST(LiveCovariance, UniformCubeMoments) {
  const Problem p = make_gaussian(3, 1.0);
  CounterRng rng(21, StreamId::kTest);
  std::vector<Point> live;
  for (int i = 0; i < 10'000; ++i) live.push_back(make_point({rng.uniform(), rng.uniform(), rng.uniform()}, p, i));
  const Eigen::MatrixXd l = live_covariance(live);
  const Eigen::MatrixXd cov = l * l.transpose();
  const Eigen::MatrixXd expected = Eigen::MatrixXd::Identity(3, 3) / 12.0;
  EXPECT_LT((cov - expected).cwiseAbs().maxCoeff(), 0.01);
  EXPECT_LT((cov - cov.transpose()).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_GE(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(cov).eigenvalues().minCoeff(), -1e-10);
  EXPECT_THROW(live_covariance(std::span<const Point>(live.data(), 1)), DomainError);
}

TEST(LiveCovariance, StableWhenPointsAreAdded) {
  // K = 1000 points plus K/10 more: entries move by O(1/sqrt(K)).
  const Problem p = make_gaussian(3, 1.0);
  CounterRng rng(8, StreamId::kTest);
  int within = 0;
  const int trials = 100;
  for (int t = 0; t < trials; ++t) {
    std::vector<Point> live;
    for (int i = 0; i < 1100; ++i) live.push_back(make_point({rng.uniform(), rng.uniform(), rng.uniform()}, p, i));
    const Eigen::MatrixXd l0 = live_covariance(std::span<const Point>(live.data(), 1000));
    const Eigen::MatrixXd l1 = live_covariance(live);
    const double delta = (l1 * l1.transpose() - l0 * l0.transpose()).cwiseAbs().maxCoeff();
    within += delta <= 1.0 / std::sqrt(1000.0);
  }
  EXPECT_GE(within, 95);
}

TEST(ProposalFactor, RankDeficientSetsUseTheDiagonal) {
  const Problem p = make_gaussian(3, 1.0);
  const std::vector<Point> live{make_point({0.1, 0.2, 0.3}, p, 0), make_point({0.3, 0.6, 0.9}, p, 1),
                                make_point({0.2, 0.4, 0.6}, p, 2)};
  const Eigen::MatrixXd f = proposal_factor(live);
  EXPECT_TRUE(f.isDiagonal());
  EXPECT_NEAR(f(0, 0) * f(0, 0), 0.01 + kCovarianceJitter, 1e-12);
  EXPECT_NEAR(f(2, 2) * f(2, 2), 0.09 + kCovarianceJitter, 1e-12);

  std::vector<Point> more = live;
  more.push_back(make_point({0.9, 0.1, 0.5}, p, 3));
  EXPECT_TRUE(proposal_factor(more).isApprox(live_covariance(more)));
}

TEST(Reflection, StaysInTheUnitInterval) {
  EXPECT_EQ(reflect_into_unit(0.25), 0.25);
  EXPECT_DOUBLE_EQ(reflect_into_unit(-0.25), 0.25);
  EXPECT_DOUBLE_EQ(reflect_into_unit(1.25), 0.75);
  EXPECT_DOUBLE_EQ(reflect_into_unit(2.25), 0.25);
  EXPECT_DOUBLE_EQ(reflect_into_unit(-1.75), 0.25);
  CounterRng rng(4, StreamId::kTest);
  for (int i = 0; i < 100'000; ++i) {
    const double x = rng.uniform() + 1e3 * rng.normal();
    const double r = reflect_into_unit(x);
    ASSERT_GE(r, 0.0);
    ASSERT_LE(r, 1.0);
  }
}

TEST(McmcWalk, HugeStepsStayInTheCube) {
  const Problem p = make_gaussian(4, 3.0);
  ProposalState prop = fixed_proposal(4, 1e3, 1.0);
  CounterRng rng(5, StreamId::kTest);
  const Point seed = make_point({0.5, 0.5, 0.5, 0.5}, p, 0);
  for (int i = 0; i < 200; ++i) {
    const auto w = mcmc_walk(seed, Threshold{-1e300, 0}, 10, prop, p, rng, kWalkIdOffset + i);
    for (double u : w.point.u) {
      ASSERT_GE(u, 0.0);
      ASSERT_LE(u, 1.0);
    }
    ASSERT_EQ(w.n_accepted, 10);
  }
}

TEST(McmcWalk, RejectsBadArguments) {
  const Problem p = make_gaussian(1, 1.0);
  const ProposalState prop = fixed_proposal(1, 1.0, 0.1);
  CounterRng rng(1, StreamId::kTest);
  const Point seed = make_point({0.5}, p, 0);
  EXPECT_THROW(mcmc_walk(seed, seed.logl - 1.0, 0, prop, p, rng, kWalkIdOffset), DomainError);
  EXPECT_THROW(mcmc_walk(seed, seed.logl, 5, prop, p, rng, kWalkIdOffset), DomainError);
}

TEST(McmcWalk, AllRejectedReturnsTheSeed) {
  // The seed sits at the unique maximum; every move lowers ln L below 0.
  const Problem p = make_gaussian(2, 1.0);
  const Point seed = make_point({0.5, 0.5}, p, 3);
  const ProposalState prop = fixed_proposal(2, 1.0, 0.1);
  CounterRng rng(1, StreamId::kTest);
  const auto w = mcmc_walk(seed, std::nextafter(seed.logl, kNegInf), 25, prop, p, rng, kWalkIdOffset + 1);
  EXPECT_EQ(w.n_accepted, 0);
  EXPECT_EQ(w.n_proposed, 25);
  EXPECT_EQ(w.point.u, seed.u);
  EXPECT_EQ(w.point.theta, seed.theta);
  EXPECT_EQ(w.point.logl, seed.logl);
  EXPECT_EQ(w.point.origin_id, kWalkIdOffset + 1);
  EXPECT_EQ(w.chain_start_id, 3u);
}

TEST(McmcWalk, NanLikelihoodAborts) {
  const Problem p(
      "hole", 1, [](std::span<const double> u) { return std::vector<double>(u.begin(), u.end()); },
      [](std::span<const double> t) { return t[0] > 0.6 ? std::nan("") : 0.0; });
  const Point seed = make_point({0.5}, p, 0);
  const ProposalState prop = fixed_proposal(1, 1.0, 1.0);
  CounterRng rng(1, StreamId::kTest);
  EXPECT_THROW(mcmc_walk(seed, -1.0, 50, prop, p, rng, kWalkIdOffset), NumericalError);
}

TEST(McmcWalk, HardConstraintHolds) {
  const Problem p = make_gaussian(2, 0.3);
  CounterRng rng(17, StreamId::kTest);
  for (int trial = 0; trial < 100'000; ++trial) {
    const double l_min = p.log_likelihood(p.prior_transform(std::array{rng.uniform(), rng.uniform()}));
    Point seed;
    do {
      seed = make_point({rng.uniform(), rng.uniform()}, p, 0);
    } while (!(seed.logl > l_min));
    const ProposalState prop = fixed_proposal(2, 0.5 + rng.uniform(), 0.3);
    const auto w = mcmc_walk(seed, l_min, 3, prop, p, rng, kWalkIdOffset + trial);
    ASSERT_GT(w.point.logl, l_min);
    ASSERT_LE(w.n_accepted, 3);
    ASSERT_GE(w.n_accepted, 0);
  }
}

TEST(McmcWalk, Deterministic) {
  const Problem p = make_rosenbrock(3);
  const Point seed = make_point({0.55, 0.55, 0.55}, p, 7);
  const ProposalState prop = fixed_proposal(3, 0.7, 0.05);
  CounterRng a(99, StreamId::kWalk, 3);
  CounterRng b(99, StreamId::kWalk, 3);
  const auto wa = mcmc_walk(seed, seed.logl - 50.0, 40, prop, p, a, kWalkIdOffset);
  const auto wb = mcmc_walk(seed, seed.logl - 50.0, 40, prop, p, b, kWalkIdOffset);
  EXPECT_EQ(wa, wb);
  EXPECT_GT(wa.n_accepted, 0);
}

TEST(McmcWalk, RestrictedPriorIsUniformAboveThreshold) {
  // L(theta) = theta, prior U(0, 1), threshold 0.5: the restricted prior is
  // U(0.5, 1). KS test at 1% significance.
  const Problem p = linear_1d();
  const double l_min = std::log(0.5);
  const ProposalState prop = fixed_proposal(1, 1.0, std::sqrt(1.0 / 48.0));
  CounterRng rng(2024, StreamId::kTest);
  std::vector<double> out;
  for (int i = 0; i < 10'000; ++i) {
    const Point seed = make_point({0.5 + 0.5 * (1.0 - rng.uniform())}, p, 0);
    const auto w = mcmc_walk(seed, l_min, 100, prop, p, rng, kWalkIdOffset + i);
    ASSERT_GT(w.point.logl, l_min);
    out.push_back(w.point.theta[0]);
  }
  const double d = oracle::ks_statistic(out, [](double x) { return std::clamp(2.0 * (x - 0.5), 0.0, 1.0); });
  EXPECT_GT(oracle::ks_pvalue(d, out.size()), 0.01) << "D=" << d;
}

TEST(KsOracle, DetectsAWrongDistribution) {
  CounterRng rng(3, StreamId::kTest);
  std::vector<double> xs;
  for (int i = 0; i < 10'000; ++i) xs.push_back(0.5 + 0.5 * std::sqrt(rng.uniform()));
  const double d = oracle::ks_statistic(xs, [](double x) { return std::clamp(2.0 * (x - 0.5), 0.0, 1.0); });
  EXPECT_LT(oracle::ks_pvalue(d, xs.size()), 1e-6);
}

TEST(AdaptScale, FixedPointAtTarget) {
  ProposalState s = ProposalState::initial(2);
  s.scale = 0.8;
  WalkResult w;
  w.n_proposed = 500;
  w.n_accepted = 117;  // 0.234
  const auto next = adapt_scale(s, w, 1);
  EXPECT_DOUBLE_EQ(next.scale, 0.8);
  ASSERT_EQ(next.accept_history.size(), 1u);
  EXPECT_EQ(next.accept_history.back(), (AdaptationRecord{0.8, 0.234}));
}

TEST(AdaptScale, AllAcceptedGrowsByExpOfExcess) {
  ProposalState s = ProposalState::initial(2);
  s.scale = 0.5;
  WalkResult w;
  w.n_proposed = 20;
  w.n_accepted = 20;
  EXPECT_DOUBLE_EQ(adapt_scale(s, w, 1).scale, 0.5 * std::exp(0.766));
  EXPECT_DOUBLE_EQ(adapt_scale(s, w, 4).scale, 0.5 * std::exp(0.766 / 2.0));
  EXPECT_THROW(adapt_scale(s, w, 0), DomainError);
}

TEST(AdaptScale, ClampedAndVanishing) {
  ProposalState s = ProposalState::initial(1);
  WalkResult all, none;
  all.n_proposed = none.n_proposed = 10;
  all.n_accepted = 10;
  for (std::uint64_t n = 1; n <= 5000; ++n) {
    const double before = s.scale;
    s = adapt_scale(std::move(s), n % 3 ? all : none, n);
    const double bound = 1.0 / std::sqrt(static_cast<double>(n)) * 0.766;
    ASSERT_LE(std::abs(std::log(s.scale) - std::log(before)), bound + 1e-12);
    ASSERT_GE(s.scale, kMinScale);
    ASSERT_LE(s.scale, kMaxScale);
  }
  EXPECT_EQ(s.accept_history.size(), ProposalState::kHistoryLength);
  s.scale = kMaxScale;
  EXPECT_EQ(adapt_scale(s, all, 1).scale, kMaxScale);
}

TEST(ChooseSeed, SingleCandidate) {
  const Problem p = make_gaussian(1, 1.0);
  const std::vector<Point> one{make_point({0.4}, p, 5)};
  CounterRng rng(1, StreamId::kTest);
  EXPECT_EQ(choose_seed(one, rng).origin_id, 5u);
  EXPECT_THROW(choose_seed(std::span<const Point>{}, rng), DomainError);
}

TEST(ChooseSeed, Uniform) {
  const Problem p = make_gaussian(1, 1.0);
  std::vector<Point> live;
  for (int i = 0; i < 5; ++i) live.push_back(make_point({0.1 * i}, p, i));
  CounterRng rng(31, StreamId::kTest);
  std::array<int, 5> counts{};
  const int n = 100'000;
  for (int i = 0; i < n; ++i) ++counts[choose_seed(live, rng).origin_id];
  for (int c : counts) EXPECT_NEAR(static_cast<double>(c) / n, 0.2, 0.01);
}

TEST(CounterRng, AddressableStreams) {
  CounterRng a(5, StreamId::kWalk, 10);
  CounterRng b(5, StreamId::kWalk, 10);
  CounterRng c(5, StreamId::kWalk, 11);
  CounterRng d(5, StreamId::kInitialPoints, 10);
  const auto x = a();
  EXPECT_EQ(x, b());
  EXPECT_NE(x, c());
  EXPECT_NE(x, d());

  CounterRng g(1, StreamId::kTest);
  double s = 0.0, s2 = 0.0;
  const int n = 200'000;
  for (int i = 0; i < n; ++i) {
    const double z = g.normal();
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.01);
}
