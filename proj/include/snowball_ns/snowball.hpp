#pragma once

/// \file
/// Snowballing nested sampling: repeat complete nested-sampling runs with a
/// live-point count that grows by k_inc each outer iteration.
///
/// Each outer iteration replays a run from the start. Work carries over in
/// two ways: the initial live set of run j is the initial live set of run
/// j-1 plus k_inc further prior draws, and every walk result is memoized by
/// the exact threshold it was produced for, so thresholds that recur in the
/// replay are served without likelihood evaluations.

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "snowball_ns/core.hpp"
#include "snowball_ns/lrps.hpp"
#include "snowball_ns/memo.hpp"
#include "snowball_ns/problems.hpp"

namespace snowball_ns {

struct SnowballConfig {
  ProblemSpec problem;
  std::uint64_t k0 = 20;
  std::uint64_t k_inc = 20;
  std::uint64_t m_steps = 20;
  double term_epsilon = 1e-6;
  std::uint64_t max_outer_iterations = 10;
  std::uint64_t seed = 0;
  bool use_memo = true;
  double gamma0 = 1.0;
  double kappa = 0.5;
  std::uint64_t max_dead = kDefaultMaxDead;

  void validate() const {
    if (k0 < 2) throw DomainError("k0 must be >= 2");
    if (k_inc < 1) throw DomainError("k_inc must be >= 1");
    if (m_steps < 1 || m_steps > 1'000'000) throw DomainError("m_steps must be in [1, 1e6]");
    if (!(term_epsilon > 0.0)) throw DomainError("term_epsilon must be > 0");
    if (max_outer_iterations < 1) throw DomainError("max_outer_iterations must be >= 1");
    if (!(gamma0 > 0.0) || !(kappa > 0.0)) throw DomainError("adaptation gain parameters must be > 0");
    if (max_dead < 1) throw DomainError("max_dead must be >= 1");
    if (problem.dim < 1) throw DomainError("dimension must be >= 1");
  }

  /// Live-point count of outer iteration j (1-based).
  std::uint64_t k_at(std::uint64_t j) const { return k0 + (j - 1) * k_inc; }

  friend bool operator==(const SnowballConfig&, const SnowballConfig&) = default;
};

struct SnowballReport {
  std::uint64_t outer_iteration = 0;
  std::uint64_t k = 0;
  double log_z = kNegInf;
  double log_z_err = 0.0;
  double ess = 0.0;
  std::uint64_t n_dead = 0;  ///< replacement steps of the inner run
  std::uint64_t n_like_evals_cumulative = 0;
  std::uint64_t n_lrps_calls_new = 0;
  std::uint64_t n_memo_hits = 0;
  double wall_seconds = 0.0;
  bool failed = false;

  friend bool operator==(const SnowballReport&, const SnowballReport&) = default;
};

/// Prior draws with indices [k_prev, k_new). Together with an earlier call
/// covering [0, k_prev) this yields the k_new-point initial set.
inline std::vector<Point> draw_initial_range(const Problem& problem, std::uint64_t k_prev, std::uint64_t k_new,
                                             std::uint64_t seed) {
  if (k_new < k_prev) throw DomainError("draw_initial_range: k_new < k_prev");
  std::vector<Point> out;
  out.reserve(k_new - k_prev);
  for (std::uint64_t i = k_prev; i < k_new; ++i) out.push_back(draw_initial_point(problem, seed, i));
  return out;
}

/// The k_new-point initial live set whose first k_prev points coincide with
/// the k_prev-point set of the same seed.
inline std::vector<Point> extend_initial(const Problem& problem, std::uint64_t k_prev, std::uint64_t k_new,
                                         std::uint64_t seed) {
  if (!(k_new > k_prev)) throw DomainError("extend_initial: requires k_new > k_prev");
  return draw_initial_range(problem, 0, k_new, seed);
}

/// Mutable state carried between outer iterations.
struct SnowballState {
  std::uint64_t completed_outer_iterations = 0;
  std::vector<SnowballReport> reports;
  MemoTable memo;
  ProposalState proposal;
};

class Snowball {
 public:
  explicit Snowball(SnowballConfig config) : Snowball(config, make_problem(config.problem)) {}

  /// Uses `problem` instead of the registry entry named in the config.
  Snowball(SnowballConfig config, Problem problem) : config_(std::move(config)), problem_(std::move(problem)) {
    config_.validate();
    if (problem_.dim() != config_.problem.dim) throw DomainError("snowball: problem dimension mismatch");
    state_.proposal = ProposalState::initial(problem_.dim());
    state_.proposal.gamma0 = config_.gamma0;
    state_.proposal.kappa = config_.kappa;
  }

  /// Continues from persisted state. The initial-point prefix is redrawn;
  /// those evaluations were already counted before the state was saved.
  Snowball(SnowballConfig config, SnowballState state) : Snowball(std::move(config)) {
    const auto gamma0 = state_.proposal.gamma0;
    const auto kappa = state_.proposal.kappa;
    state_ = std::move(state);
    state_.proposal.gamma0 = gamma0;
    state_.proposal.kappa = kappa;
    if (state_.reports.size() != state_.completed_outer_iterations) {
      throw DomainError("snowball state: report count does not match completed iterations");
    }
    if (state_.completed_outer_iterations > 0) {
      initial_ = draw_initial_range(problem_, 0, config_.k_at(state_.completed_outer_iterations), config_.seed);
      like_evals_ = state_.reports.back().n_like_evals_cumulative;
    }
  }

  const SnowballConfig& config() const noexcept { return config_; }
  const Problem& problem() const noexcept { return problem_; }
  const SnowballState& state() const noexcept { return state_; }
  const std::vector<SnowballReport>& reports() const noexcept { return state_.reports; }
  std::uint64_t completed() const noexcept { return state_.completed_outer_iterations; }
  bool failed() const noexcept { return failed_; }
  bool done() const noexcept { return failed_ || completed() >= config_.max_outer_iterations; }

  /// Raises the outer-iteration limit (used when resuming a finished run).
  void extend_limit(std::uint64_t max_outer_iterations) {
    config_.max_outer_iterations = std::max(config_.max_outer_iterations, max_outer_iterations);
  }

  void set_walk_observer(WalkObserver obs) { observer_ = std::move(obs); }
  void set_record_timing(bool on) noexcept { record_timing_ = on; }

  /// Dead points and weights of the most recent successful outer iteration.
  const std::optional<RunResult>& last_result() const noexcept { return last_; }

  /// Runs one outer iteration. On a numerical failure the returned report is
  /// flagged and the engine refuses further steps; the memo table and
  /// proposal state may then hold partial progress of the failed iteration.
  SnowballReport step() {
    if (failed_) throw InvariantError("snowball: cannot continue after a failed outer iteration");
    const auto start = std::chrono::steady_clock::now();
    const std::uint64_t j = completed() + 1;
    const std::uint64_t k = config_.k_at(j);

    SnowballReport rep;
    rep.outer_iteration = j;
    rep.k = k;
    SamplerContext ctx{problem_,
                       SamplerSettings{static_cast<int>(config_.m_steps), config_.term_epsilon, config_.max_dead,
                                       config_.use_memo, config_.seed},
                       state_.proposal, config_.use_memo ? &state_.memo : nullptr, observer_};
    std::optional<RunState> run;
    try {
      const std::uint64_t have = initial_.size();
      if (k > have) {
        auto fresh = draw_initial_range(problem_, have, k, config_.seed);
        like_evals_ += fresh.size();
        initial_.insert(initial_.end(), std::make_move_iterator(fresh.begin()),
                        std::make_move_iterator(fresh.end()));
      }
      run = start_run(std::vector<Point>(initial_.begin(), initial_.begin() + static_cast<std::ptrdiff_t>(k)), ctx);
      run_to_termination(*run, ctx);
    } catch (const NumericalError&) {
      failed_ = true;
      rep.failed = true;
      if (run) {
        rep.n_dead = run->iteration;
        rep.n_lrps_calls_new = run->n_lrps_calls;
        rep.n_memo_hits = run->n_memo_hits;
        like_evals_ += run->n_like_evals;
      }
      rep.n_like_evals_cumulative = like_evals_;
      rep.wall_seconds = elapsed(start);
      return rep;
    }

    last_ = finalize_run(*run);
    like_evals_ += run->n_like_evals;
    rep.log_z = last_->estimate.log_z;
    rep.log_z_err = last_->estimate.log_z_err;
    rep.ess = last_->estimate.ess;
    rep.n_dead = run->iteration;
    rep.n_like_evals_cumulative = like_evals_;
    rep.n_lrps_calls_new = run->n_lrps_calls;
    rep.n_memo_hits = run->n_memo_hits;
    rep.wall_seconds = elapsed(start);

    state_.reports.push_back(rep);
    state_.completed_outer_iterations = j;
    return rep;
  }

 private:
  double elapsed(std::chrono::steady_clock::time_point start) const {
    if (!record_timing_) return 0.0;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }

  SnowballConfig config_;
  Problem problem_;
  SnowballState state_;
  std::vector<Point> initial_;
  std::uint64_t like_evals_ = 0;
  std::optional<RunResult> last_;
  WalkObserver observer_;
  bool record_timing_ = false;
  bool failed_ = false;
};

/// Runs outer iterations until the configured limit or until `on_report`
/// returns false. Returns every report produced by this call.
inline std::vector<SnowballReport> snowball_run(Snowball& engine,
                                                const std::function<bool(const SnowballReport&)>& on_report = {}) {
  std::vector<SnowballReport> out;
  while (!engine.done()) {
    out.push_back(engine.step());
    if (out.back().failed) break;
    if (on_report && !on_report(out.back())) break;
  }
  return out;
}

inline std::vector<SnowballReport> snowball_run(const SnowballConfig& config) {
  Snowball engine(config);
  return snowball_run(engine);
}

}  // namespace snowball_ns
