#pragma once

/// \file
/// The nested-sampling loop.
///
/// The live set is kept sorted by (logl, origin_id), so the worst point is
/// always at the front and every decision that depends on the live set
/// (seed choice, covariance) is a function of the multiset of points rather
/// than of their arrival order.
///
/// Prior volume is deterministic: after t replacements with K live points,
/// ln X_t = t * ln((K - 1) / K). Dead point t gets the rectangle-rule weight
/// L_t * (X_{t-1} - X_t).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "snowball_ns/lrps.hpp"
#include "snowball_ns/memo.hpp"
#include "snowball_ns/numeric.hpp"
#include "snowball_ns/point.hpp"
#include "snowball_ns/problems.hpp"
#include "snowball_ns/rng.hpp"

namespace snowball_ns {

inline constexpr std::uint64_t kDefaultMaxDead = 1'000'000;

struct DeadRecord {
  Point point;
  std::uint64_t iteration = 0;
  double log_volume = 0.0;
  double log_weight = 0.0;
  std::size_t k_at_death = 0;

  friend bool operator==(const DeadRecord&, const DeadRecord&) = default;
};

struct EvidenceEstimate {
  double log_z = kNegInf;
  double log_z_err = 0.0;
  double info_h = 0.0;
  double ess = 0.0;
  std::size_t n_dead = 0;  ///< dead records including the final live top-up
  std::size_t k_final = 0;
};

struct SamplerSettings {
  int m_steps = 20;
  double term_epsilon = 1e-6;
  std::uint64_t max_dead = kDefaultMaxDead;
  bool use_memo = true;
  std::uint64_t seed = 0;
};

using WalkObserver = std::function<void(const WalkResult&)>;

/// Everything a run borrows from its caller. The proposal state and memo
/// table outlive individual runs.
struct SamplerContext {
  const Problem& problem;
  SamplerSettings settings;
  ProposalState& proposal;
  MemoTable* memo = nullptr;
  WalkObserver on_walk;
};

struct RunState {
  std::size_t k = 0;
  std::vector<Point> live;  ///< sorted ascending by ranks_below
  std::vector<DeadRecord> dead;
  std::uint64_t iteration = 0;
  double log_z = kNegInf;
  double info_h = 0.0;
  std::uint64_t n_like_evals = 0;
  std::uint64_t n_lrps_calls = 0;
  std::uint64_t n_memo_hits = 0;
  std::uint64_t steps_since_covariance = 0;
  /// Thresholds already served from the memo table in this run. A repeated
  /// threshold (plateau or duplicated point) gets a fresh walk instead, so a
  /// stored point is never inserted twice.
  std::unordered_set<std::uint64_t> consumed_keys;
};

struct RunResult {
  EvidenceEstimate estimate;
  std::vector<DeadRecord> dead;  ///< including the final live top-up
  std::vector<double> weights;   ///< normalized posterior weights, parallel to dead
};

// Volume bookkeeping

inline void require_live_count(std::size_t k) {
  if (k < 2) throw DomainError("live-point count must be >= 2, got " + std::to_string(k));
}

inline double log_prior_volume(std::uint64_t t, std::size_t k) {
  require_live_count(k);
  return static_cast<double>(t) * std::log1p(-1.0 / static_cast<double>(k));
}

/// ln X after one iteration at each of the given live-point counts.
inline double log_prior_volume(std::span<const std::size_t> k_per_iteration) {
  double acc = 0.0;
  for (std::size_t k : k_per_iteration) {
    require_live_count(k);
    acc += std::log1p(-1.0 / static_cast<double>(k));
  }
  return acc;
}

// Live set

inline Point draw_initial_point(const Problem& problem, std::uint64_t seed, std::uint64_t index) {
  CounterRng rng(seed, StreamId::kInitialPoints, index);
  Point p;
  p.u.resize(problem.dim());
  for (double& x : p.u) x = rng.uniform();
  p.theta = problem.prior_transform(p.u);
  p.logl = problem.log_likelihood(p.theta);
  p.origin_id = index;
  if (std::isnan(p.logl)) {
    throw NumericalError("likelihood returned NaN at initial point " + std::to_string(index));
  }
  return p;
}

/// K prior draws in draw order. Draw i depends only on (seed, i).
inline std::vector<Point> init_live_set(const Problem& problem, std::size_t k, std::uint64_t seed) {
  require_live_count(k);
  std::vector<Point> live;
  live.reserve(k);
  for (std::size_t i = 0; i < k; ++i) live.push_back(draw_initial_point(problem, seed, i));
  return live;
}

inline void sort_live(std::vector<Point>& live) { std::sort(live.begin(), live.end(), ranks_below); }

inline RunState start_run(std::vector<Point> live, SamplerContext& ctx) {
  require_live_count(live.size());
  RunState state;
  state.k = live.size();
  state.live = std::move(live);
  sort_live(state.live);
  ctx.proposal.cov_chol = proposal_factor(state.live);
  return state;
}

// Evidence accumulation

inline void accumulate_evidence(RunState& state, double logl, double log_weight) {
  const double log_z_new = log_add_exp(state.log_z, log_weight);
  if (log_z_new == kNegInf) return;
  const double own = log_weight == kNegInf ? 0.0 : std::exp(log_weight - log_z_new) * logl;
  const double carried =
      state.log_z == kNegInf ? 0.0 : std::exp(state.log_z - log_z_new) * (state.info_h + state.log_z);
  state.info_h = own + carried - log_z_new;
  state.log_z = log_z_new;
}

inline double log_z_live(const RunState& state) {
  std::vector<double> logls;
  logls.reserve(state.live.size());
  for (const auto& p : state.live) logls.push_back(p.logl);
  const double lse = log_sum_exp(logls);
  if (lse == kNegInf) return kNegInf;
  return lse + log_prior_volume(state.iteration, state.k) - std::log(static_cast<double>(state.k));
}

/// True once the live points hold less than `epsilon` of the evidence.
inline bool termination_check(const RunState& state, double epsilon) {
  const double live = log_z_live(state);
  if (live == kNegInf) return true;
  if (state.log_z == kNegInf) return false;
  return std::exp(live - state.log_z) < epsilon;
}

// One replacement

namespace detail {

inline WalkResult fresh_walk(const RunState& state, const Threshold& threshold, SamplerContext& ctx) {
  ProposalState& prop = ctx.proposal;
  const std::uint64_t call_index = ++prop.call_index;
  CounterRng rng(ctx.settings.seed, StreamId::kWalk, call_index);
  // The worst point has already been removed from `state.live`.
  const Point& seed = choose_seed(state.live, rng);
  WalkResult result =
      mcmc_walk(seed, threshold, ctx.settings.m_steps, prop, ctx.problem, rng, kWalkIdOffset + call_index);
  prop = adapt_scale(std::move(prop), result, call_index);
  if (ctx.on_walk) ctx.on_walk(result);
  return result;
}

inline void insert_sorted(std::vector<Point>& live, Point p) {
  const auto pos = std::upper_bound(live.begin(), live.end(), p, ranks_below);
  live.insert(pos, std::move(p));
}

}  // namespace detail

/// Discards the worst live point and replaces it, from the memo table when
/// the threshold was seen before, otherwise by a fresh walk.
inline void ns_step(RunState& state, SamplerContext& ctx) {
  if (state.live.empty()) throw DomainError("ns_step: empty live set");
  const std::size_t k = state.k;
  const double log_k = std::log(static_cast<double>(k));

  Point worst = std::move(state.live.front());
  state.live.erase(state.live.begin());
  const Threshold threshold{worst.logl, worst.origin_id};

  const std::uint64_t t = state.iteration + 1;
  const double log_x_prev = log_prior_volume(t - 1, k);
  DeadRecord rec;
  rec.iteration = t;
  rec.log_volume = log_prior_volume(t, k);
  rec.log_weight = worst.logl == kNegInf ? kNegInf : worst.logl + log_x_prev - log_k;
  rec.k_at_death = k;
  accumulate_evidence(state, worst.logl, rec.log_weight);
  rec.point = std::move(worst);
  state.dead.push_back(std::move(rec));

  std::optional<Point> replacement;
  bool may_store = false;
  if (ctx.settings.use_memo && ctx.memo != nullptr && std::isfinite(threshold.logl)) {
    const std::uint64_t key = double_bits(threshold.logl);
    if (state.consumed_keys.insert(key).second) {
      if (auto hit = ctx.memo->lookup(threshold.logl)) {
        if (threshold.admits(hit->point.logl, hit->point.origin_id)) {
          replacement = std::move(hit->point);
          ++state.n_memo_hits;
        }
      } else {
        may_store = true;
      }
    }
  }
  if (!replacement) {
    WalkResult walk = detail::fresh_walk(state, threshold, ctx);
    state.n_like_evals += static_cast<std::uint64_t>(walk.n_proposed);
    ++state.n_lrps_calls;
    if (may_store) ctx.memo->put(threshold.logl, walk);
    replacement = std::move(walk.point);
  }
  detail::insert_sorted(state.live, std::move(*replacement));

  state.iteration = t;
  if (++state.steps_since_covariance >= k) {
    ctx.proposal.cov_chol = proposal_factor(state.live);
    state.steps_since_covariance = 0;
  }
}

/// Runs replacements until termination or the dead-point cap.
inline void run_to_termination(RunState& state, SamplerContext& ctx) {
  do {
    ns_step(state, ctx);
  } while (!termination_check(state, ctx.settings.term_epsilon) && state.dead.size() < ctx.settings.max_dead);
}

// Results

/// 1 / sum(w^2) for normalized weights.
inline double ess(std::span<const double> weights) {
  if (weights.empty()) throw DomainError("ess: empty weight vector");
  double s2 = 0.0;
  for (double w : weights) s2 += w * w;
  return 1.0 / s2;
}

/// Moves the remaining live points onto the dead list, each taking an equal
/// share X_T / K of the final volume, and computes the evidence, information,
/// error and normalized weights from scratch.
inline RunResult finalize_run(const RunState& state) {
  RunResult out;
  out.dead = state.dead;
  const std::size_t k = state.k;
  const double log_x_final = log_prior_volume(state.iteration, k);
  const double log_k = std::log(static_cast<double>(k));
  for (std::size_t i = 0; i < state.live.size(); ++i) {
    const std::size_t remaining = k - i - 1;
    DeadRecord rec;
    rec.point = state.live[i];
    rec.iteration = state.iteration + i + 1;
    rec.log_volume =
        remaining == 0 ? kNegInf : log_x_final + std::log(static_cast<double>(remaining)) - log_k;
    rec.log_weight = rec.point.logl == kNegInf ? kNegInf : rec.point.logl + log_x_final - log_k;
    rec.k_at_death = k - i;
    out.dead.push_back(std::move(rec));
  }

  std::vector<double> log_w;
  log_w.reserve(out.dead.size());
  for (const auto& r : out.dead) log_w.push_back(r.log_weight);
  const double log_z = log_sum_exp(log_w);

  out.weights.resize(out.dead.size(), 0.0);
  double h = 0.0;
  if (log_z != kNegInf) {
    for (std::size_t i = 0; i < out.dead.size(); ++i) {
      const double p = std::exp(log_w[i] - log_z);
      out.weights[i] = p;
      if (p > 0.0) h += p * out.dead[i].point.logl;
    }
    h -= log_z;
  }
  h = std::max(h, 0.0);

  auto& est = out.estimate;
  est.log_z = log_z;
  est.info_h = h;
  est.log_z_err = std::sqrt(h / static_cast<double>(k));
  est.n_dead = out.dead.size();
  est.k_final = k;
  est.ess = log_z == kNegInf ? 0.0 : ess(out.weights);
  return out;
}

/// Convenience: one complete run from a given initial live set.
inline RunResult run_nested_sampling(std::vector<Point> live, SamplerContext& ctx) {
  RunState state = start_run(std::move(live), ctx);
  run_to_termination(state, ctx);
  return finalize_run(state);
}

// Diagnostics

struct BookkeepingCheck {
  double volume_sum = 0.0;        ///< sum of volume decrements plus the final volume
  bool likelihoods_nondecreasing = true;
  bool volumes_decreasing = true;
  double weight_sum = 0.0;
  double ess = 0.0;
  std::size_t n_dead = 0;

  bool ok() const {
    return std::abs(volume_sum - 1.0) <= 1e-10 && likelihoods_nondecreasing && volumes_decreasing &&
           std::abs(weight_sum - 1.0) <= 1e-12 && ess >= 1.0 - 1e-12 &&
           ess <= static_cast<double>(n_dead) + 1e-9;
  }
};

inline BookkeepingCheck check_bookkeeping(const RunResult& r) {
  BookkeepingCheck c;
  c.n_dead = r.dead.size();
  std::vector<double> log_widths;
  log_widths.reserve(r.dead.size());
  double log_x_prev = 0.0;
  for (std::size_t i = 0; i < r.dead.size(); ++i) {
    const double log_x = r.dead[i].log_volume;
    if (!(log_x < log_x_prev)) c.volumes_decreasing = false;
    // X_prev - X = X_prev * (1 - X / X_prev)
    log_widths.push_back(log_x_prev + std::log1p(-std::exp(log_x - log_x_prev)));
    log_x_prev = log_x;
    if (i > 0 && r.dead[i].point.logl < r.dead[i - 1].point.logl) c.likelihoods_nondecreasing = false;
  }
  log_widths.push_back(log_x_prev);
  c.volume_sum = std::exp(log_sum_exp(log_widths));
  for (double w : r.weights) c.weight_sum += w;
  c.ess = r.estimate.ess;
  return c;
}

// Export

inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

/// Dead-point CSV. When `weights` is non-empty a trailing `weight` column
/// carries the normalized posterior weight of each row.
inline void write_dead_csv(std::ostream& os, std::span<const DeadRecord> dead, std::size_t dim,
                           std::span<const double> weights = {}) {
  os << "iter,k_at_death,ln_x,ln_l,ln_w";
  for (std::size_t j = 0; j < dim; ++j) os << ",theta_" << j;
  if (!weights.empty()) os << ",weight";
  os << '\n';
  for (std::size_t i = 0; i < dead.size(); ++i) {
    const auto& r = dead[i];
    os << r.iteration << ',' << r.k_at_death << ',' << format_double(r.log_volume) << ','
       << format_double(r.point.logl) << ',' << format_double(r.log_weight);
    for (double x : r.point.theta) os << ',' << format_double(x);
    if (!weights.empty()) os << ',' << format_double(weights[i]);
    os << '\n';
  }
}

}  // namespace snowball_ns
