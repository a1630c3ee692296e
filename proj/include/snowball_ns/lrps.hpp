#pragma once

/// \file
/// Likelihood-restricted prior sampling by random-walk Metropolis in the
/// unit cube.
///
/// A walk starts at a live point and makes a fixed number of Gaussian
/// proposals shaped by the live-set covariance. Components leaving the cube
/// are reflected back. Under a flat prior in the cube the Metropolis ratio is
/// one inside the constraint, so a proposal is accepted iff it ranks above
/// the threshold. The step scale adapts toward a 23.4% acceptance rate with
/// a Robbins-Monro gain that vanishes with the number of walks.

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <limits>
#include <span>
#include <string>
#include <utility>

#include "snowball_ns/numeric.hpp"
#include "snowball_ns/point.hpp"
#include "snowball_ns/problems.hpp"
#include "snowball_ns/rng.hpp"

namespace snowball_ns {

inline constexpr double kTargetAcceptance = 0.234;
inline constexpr double kCovarianceJitter = 1e-10;
inline constexpr double kMinScale = 1e-8;
inline constexpr double kMaxScale = 10.0;

struct AdaptationRecord {
  double scale;
  double accepted_fraction;

  friend bool operator==(const AdaptationRecord&, const AdaptationRecord&) = default;
};

struct ProposalState {
  static constexpr std::size_t kHistoryLength = 256;

  double scale = 1.0;
  Eigen::MatrixXd cov_chol;  ///< lower-triangular factor of the live-set covariance
  std::deque<AdaptationRecord> accept_history;
  double target_accept = kTargetAcceptance;
  double gamma0 = 1.0;
  double kappa = 0.5;
  std::uint64_t call_index = 0;  ///< fresh walks made so far across the whole process

  /// Cold start: scale 2.38 / sqrt(d), identity shape.
  static ProposalState initial(std::size_t dim) {
    ProposalState s;
    s.scale = 2.38 / std::sqrt(static_cast<double>(dim));
    s.cov_chol = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
    return s;
  }
};

struct WalkResult {
  Point point;
  int n_accepted = 0;
  int n_proposed = 0;
  OriginId chain_start_id = 0;

  double accepted_fraction() const noexcept {
    return n_proposed > 0 ? static_cast<double>(n_accepted) / n_proposed : 0.0;
  }

  friend bool operator==(const WalkResult&, const WalkResult&) = default;
};

/// Cholesky factor of the Bessel-corrected sample covariance of the live
/// u-coordinates, with kCovarianceJitter added to the diagonal. Falls back to
/// the diagonal of per-coordinate variances if factorization fails.
inline Eigen::MatrixXd live_covariance(std::span<const Point> live) {
  if (live.size() < 2) throw DomainError("live_covariance: need at least 2 points");
  const auto d = static_cast<Eigen::Index>(live.front().u.size());
  const auto n = static_cast<Eigen::Index>(live.size());
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = live[static_cast<std::size_t>(i)].u[static_cast<std::size_t>(j)];
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n - 1);
  cov.diagonal().array() += kCovarianceJitter;

  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::MatrixXd diag = Eigen::MatrixXd::Zero(d, d);
  diag.diagonal() = cov.diagonal().cwiseMax(kCovarianceJitter).cwiseSqrt();
  return diag;
}

/// Proposal shape for a live set. A set of K <= d points spans at most a
/// (K-1)-dimensional affine subspace, and a walk shaped by its covariance can
/// never leave that subspace; such sets use the diagonal of per-coordinate
/// variances instead.
inline Eigen::MatrixXd proposal_factor(std::span<const Point> live) {
  const std::size_t d = live.front().u.size();
  if (live.size() > d) return live_covariance(live);
  const auto n = static_cast<double>(live.size());
  Eigen::MatrixXd diag = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (const auto& p : live) mean += p.u[j];
    mean /= n;
    double var = 0.0;
    for (const auto& p : live) var += (p.u[j] - mean) * (p.u[j] - mean);
    var /= (n - 1.0);
    diag(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)) = std::sqrt(var + kCovarianceJitter);
  }
  return diag;
}

/// Folds x into [0, 1] by repeated reflection at both walls.
inline double reflect_into_unit(double x) noexcept {
  if (x >= 0.0 && x <= 1.0) return x;
  double r = std::fmod(std::abs(x), 2.0);
  if (r > 1.0) r = 2.0 - r;
  return r;
}

/// Runs exactly `steps` proposals from `seed`. The returned point carries
/// `result_id`; if every proposal is rejected its coordinates equal the seed.
inline WalkResult mcmc_walk(const Point& seed, const Threshold& threshold, int steps,
                            const ProposalState& prop, const Problem& problem, CounterRng& rng,
                            OriginId result_id) {
  if (steps <= 0) throw DomainError("mcmc_walk: step count must be >= 1");
  if (!threshold.admits(seed.logl, result_id)) {
    throw InvariantError("mcmc_walk: seed point does not satisfy the likelihood constraint");
  }
  const std::size_t d = seed.u.size();
  WalkResult result;
  result.chain_start_id = seed.origin_id;
  result.n_proposed = steps;
  result.point = seed;
  result.point.origin_id = result_id;

  Eigen::VectorXd z(static_cast<Eigen::Index>(d));
  std::vector<double> candidate(d);
  for (int step = 0; step < steps; ++step) {
    for (std::size_t j = 0; j < d; ++j) z[static_cast<Eigen::Index>(j)] = rng.normal();
    const Eigen::VectorXd delta = prop.cov_chol.triangularView<Eigen::Lower>() * z;
    for (std::size_t j = 0; j < d; ++j) {
      candidate[j] = reflect_into_unit(result.point.u[j] + prop.scale * delta[static_cast<Eigen::Index>(j)]);
    }
    auto theta = problem.prior_transform(candidate);
    const double logl = problem.log_likelihood(theta);
    if (std::isnan(logl)) {
      throw NumericalError("likelihood returned NaN during walk step " + std::to_string(step));
    }
    if (threshold.admits(logl, result_id)) {
      result.point.u = candidate;
      result.point.theta = std::move(theta);
      result.point.logl = logl;
      ++result.n_accepted;
    }
  }
  return result;
}

/// Strict variant: accepts only likelihoods strictly above `l_min`.
inline WalkResult mcmc_walk(const Point& seed, double l_min, int steps, const ProposalState& prop,
                            const Problem& problem, CounterRng& rng, OriginId result_id) {
  if (!(seed.logl > l_min)) throw DomainError("mcmc_walk: seed must lie strictly above l_min");
  return mcmc_walk(seed, Threshold{l_min, std::numeric_limits<OriginId>::max()}, steps, prop, problem, rng,
                   result_id);
}

/// Robbins-Monro update of the log step scale with gain gamma0 / n^kappa.
inline ProposalState adapt_scale(ProposalState prop, const WalkResult& latest, std::uint64_t call_index) {
  if (call_index < 1) throw DomainError("adapt_scale: call_index must be >= 1");
  const double frac = latest.accepted_fraction();
  const double gain = prop.gamma0 / std::pow(static_cast<double>(call_index), prop.kappa);
  prop.accept_history.push_back({prop.scale, frac});
  prop.scale = std::clamp(prop.scale * std::exp(gain * (frac - prop.target_accept)), kMinScale, kMaxScale);
  while (prop.accept_history.size() > ProposalState::kHistoryLength) prop.accept_history.pop_front();
  return prop;
}

/// Uniform choice among `candidates`.
inline const Point& choose_seed(std::span<const Point> candidates, CounterRng& rng) {
  if (candidates.empty()) throw DomainError("choose_seed: no candidates");
  return candidates[static_cast<std::size_t>(rng.below(candidates.size()))];
}

}  // namespace snowball_ns
