// Command-line front end: `run`, `resume` and `trace`.

#include <fcntl.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>
#include <string>

#include "snowball_ns/snowball_ns.hpp"

namespace fs = std::filesystem;
using namespace snowball_ns;

namespace {

constexpr const char* kToolVersion = "1.0.0";
constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitAborted = 2;

enum class LogLevel { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("SNOWBALL_NS_LOG");
    const std::string v = env ? env : "warn";
    if (v == "error") return LogLevel::kError;
    if (v == "info") return LogLevel::kInfo;
    if (v == "debug") return LogLevel::kDebug;
    return LogLevel::kWarn;
  }();
  return level;
}

void log(LogLevel level, const std::string& msg) {
  static const char* names[] = {"error", "warn", "info", "debug"};
  if (level <= log_level()) std::cerr << "snowball_ns [" << names[static_cast<int>(level)] << "] " << msg << '\n';
}

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Exclusive lock on an output directory, released on destruction.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      throw UsageError("output directory " + dir.string() + " is locked by another run (remove " +
                       path_.string() + " if stale)");
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd_, pid.data(), pid.size());
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;
  ~DirLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }

 private:
  fs::path path_;
  int fd_ = -1;
};

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
    os << content;
    if (!os.flush()) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

nlohmann::ordered_json config_json(const SnowballConfig& c) {
  nlohmann::ordered_json j;
  j["problem"] = c.problem.name;
  j["dim"] = c.problem.dim;
  j["lo"] = c.problem.lo;
  j["hi"] = c.problem.hi;
  j["sigma"] = c.problem.sigma;
  j["const_logl"] = c.problem.const_logl;
  j["k0"] = c.k0;
  j["k_inc"] = c.k_inc;
  j["steps"] = c.m_steps;
  j["term_eps"] = c.term_epsilon;
  j["iters"] = c.max_outer_iterations;
  j["seed"] = c.seed;
  j["memo"] = c.use_memo;
  j["adapt_gamma0"] = c.gamma0;
  j["adapt_kappa"] = c.kappa;
  j["max_dead"] = c.max_dead;
  return j;
}

void write_manifest(const fs::path& out, const SnowballConfig& c) {
  nlohmann::ordered_json m;
  m["tool"] = "snowball_ns";
  m["tool_version"] = kToolVersion;
  m["start_timestamp"] = utc_timestamp();
  m["output_directory"] = fs::absolute(out).string();
  m["config"] = config_json(c);
  m["checkpoint_format"] = std::string(kCheckpointVersion);
  m["volume_estimator"] = "deterministic: ln X_t = sum_j ln((K_j - 1) / K_j)";
  m["weight_rule"] = "rectangle: w_t = L_t (X_{t-1} - X_t)";
  m["proposal_adaptation"] = "carried over between outer iterations";
  m["resumes"] = nlohmann::ordered_json::array();
  write_file_atomic(out / "manifest.json", m.dump(2) + "\n");
}

void append_resume_to_manifest(const fs::path& out, std::uint64_t from, std::uint64_t iters) {
  const fs::path path = out / "manifest.json";
  std::ifstream is(path);
  if (!is) return;
  nlohmann::ordered_json m = nlohmann::ordered_json::parse(is, nullptr, false);
  if (m.is_discarded()) return;
  m["resumes"].push_back({{"timestamp", utc_timestamp()}, {"after_iteration", from}, {"additional_iterations", iters}});
  write_file_atomic(path, m.dump(2) + "\n");
}

void write_posterior(const fs::path& out, const Snowball& engine) {
  const auto& last = engine.last_result();
  if (!last) return;
  std::ostringstream os;
  write_dead_csv(os, last->dead, engine.problem().dim(), last->weights);
  write_file_atomic(out / "posterior.csv", os.str());
}

std::string summary(const SnowballReport& r) {
  std::ostringstream os;
  os << "iteration " << r.outer_iteration << " K=" << r.k << " ln Z=" << format_double(r.log_z)
     << " +- " << format_double(r.log_z_err) << " dead=" << r.n_dead << " fresh=" << r.n_lrps_calls_new
     << " memo=" << r.n_memo_hits;
  return os.str();
}

/// Drives the engine, streaming reports and checkpointing at every
/// outer-iteration boundary.
int drive(Snowball& engine, const fs::path& out, std::ofstream& reports) {
  const fs::path ckpt = out / (std::string("checkpoint") + std::string(kCheckpointExtension));
  while (!engine.done()) {
    const SnowballReport rep = engine.step();
    reports << report_to_json(rep) << '\n';
    reports.flush();
    if (rep.failed) {
      log(LogLevel::kError, "outer iteration " + std::to_string(rep.outer_iteration) +
                                " aborted; checkpoint kept at iteration " + std::to_string(engine.completed()));
      return kExitAborted;
    }
    log(LogLevel::kInfo, summary(rep));
    save_checkpoint(make_checkpoint(engine), ckpt);
    write_posterior(out, engine);
  }
  return kExitOk;
}

struct ProblemFlags {
  std::string problem = "rosenbrock";
  std::size_t dim = 20;
  double lo = -10.0;
  double hi = 10.0;
  double sigma = 0.1;
  double const_logl = 0.0;
};

void add_config_flags(CLI::App* cmd, SnowballConfig& c) {
  cmd->add_option("--problem", c.problem.name, "problem name: rosenbrock | gaussian | constant")
      ->check(CLI::IsMember({"rosenbrock", "gaussian", "constant"}));
  cmd->add_option("--dim", c.problem.dim, "dimensionality")->check(CLI::PositiveNumber);
  cmd->add_option("--lo", c.problem.lo, "prior box lower bound");
  cmd->add_option("--hi", c.problem.hi, "prior box upper bound");
  cmd->add_option("--sigma", c.problem.sigma, "gaussian: standard deviation")->check(CLI::PositiveNumber);
  cmd->add_option("--const-logl", c.problem.const_logl, "constant: log-likelihood value");
  cmd->add_option("--k0", c.k0, "initial live-point count")->check(CLI::Range(2ULL, 100'000'000ULL));
  cmd->add_option("--k-inc", c.k_inc, "live points added per outer iteration")->check(CLI::PositiveNumber);
  cmd->add_option("--steps", c.m_steps, "MCMC steps per walk (M)")->check(CLI::Range(1ULL, 1'000'000ULL));
  cmd->add_option("--term-eps", c.term_epsilon, "stop when Z_live / Z falls below this")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--seed", c.seed, "master seed");
  cmd->add_option("--max-dead", c.max_dead, "dead-point cap per inner run")->check(CLI::PositiveNumber);
  cmd->add_option("--adapt-kappa", c.kappa, "exponent of the vanishing adaptation gain")
      ->check(CLI::PositiveNumber);
}

int cmd_run(SnowballConfig config, const fs::path& out, bool timing) {
  config.validate();
  make_problem(config.problem);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw UsageError("cannot create output directory " + out.string());
  DirLock lock(out);
  write_manifest(out, config);

  Snowball engine(config);
  engine.set_record_timing(timing);
  std::ofstream reports(out / "reports.jsonl", std::ios::trunc);
  if (!reports) throw UsageError("cannot write " + (out / "reports.jsonl").string());
  log(LogLevel::kInfo, "run: " + config_json(config).dump());
  return drive(engine, out, reports);
}

int cmd_resume(const fs::path& out, std::uint64_t iters, const SnowballConfig& requested, const CLI::App& sub,
               bool timing) {
  const fs::path ckpt_path = out / (std::string("checkpoint") + std::string(kCheckpointExtension));
  if (!fs::exists(ckpt_path)) throw UsageError("no checkpoint at " + ckpt_path.string());
  DirLock lock(out);
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const SnowballConfig& have = ck.config;

  auto conflict = [&](const char* flag, bool differs) {
    if (sub.count(flag) > 0 && differs) {
      throw UsageError(std::string("resume: ") + flag + " differs from the checkpointed run; refusing to continue");
    }
  };
  conflict("--problem", requested.problem.name != have.problem.name);
  conflict("--dim", requested.problem.dim != have.problem.dim);
  conflict("--lo", requested.problem.lo != have.problem.lo);
  conflict("--hi", requested.problem.hi != have.problem.hi);
  conflict("--sigma", requested.problem.sigma != have.problem.sigma);
  conflict("--const-logl", requested.problem.const_logl != have.problem.const_logl);
  conflict("--k0", requested.k0 != have.k0);
  conflict("--k-inc", requested.k_inc != have.k_inc);
  conflict("--steps", requested.m_steps != have.m_steps);
  conflict("--term-eps", requested.term_epsilon != have.term_epsilon);
  conflict("--seed", requested.seed != have.seed);
  conflict("--max-dead", requested.max_dead != have.max_dead);
  conflict("--adapt-kappa", requested.kappa != have.kappa);

  Snowball engine = resume_snowball(ck);
  engine.set_record_timing(timing);
  const std::uint64_t from = engine.completed();
  engine.extend_limit(from + iters);

  // Rewrite the stream from the checkpoint so that a partially written or
  // failed trailing line from an interrupted process is dropped.
  std::ofstream reports(out / "reports.jsonl", std::ios::trunc);
  if (!reports) throw UsageError("cannot write " + (out / "reports.jsonl").string());
  for (const auto& r : engine.reports()) reports << report_to_json(r) << '\n';
  reports.flush();
  append_resume_to_manifest(out, from, iters);
  log(LogLevel::kInfo, "resume after iteration " + std::to_string(from) + " for " + std::to_string(iters));
  return drive(engine, out, reports);
}

std::optional<std::uint64_t> steps_from_manifest(const fs::path& reports_path) {
  const fs::path manifest = reports_path.parent_path() / "manifest.json";
  std::ifstream is(manifest);
  if (!is) return std::nullopt;
  const auto m = nlohmann::json::parse(is, nullptr, false);
  if (m.is_discarded() || !m.contains("config") || !m["config"].contains("steps")) return std::nullopt;
  return m["config"]["steps"].get<std::uint64_t>();
}

int cmd_trace(fs::path in, std::optional<std::uint64_t> steps, const std::string& format,
              const std::string& output) {
  if (fs::is_directory(in)) in /= "reports.jsonl";
  std::ifstream is(in);
  if (!is) throw UsageError("cannot open " + in.string());
  std::vector<SnowballReport> reports;
  try {
    reports = read_reports(is);
  } catch (const TraceParseError& e) {
    throw UsageError(in.string() + ": " + e.what());
  }
  if (reports.empty()) throw UsageError(in.string() + ": no reports");
  if (!steps) steps = steps_from_manifest(in);
  if (!steps) throw UsageError("trace: cannot determine M; pass --steps");

  std::optional<TraceFit> fit;
  if (reports.size() < 2) {
    std::cerr << "trace: fewer than two iterations, fit skipped\n";
  } else {
    fit = fit_trace(reports, *steps);
    if (!fit) std::cerr << "trace: degenerate input, fit skipped\n";
  }
  const auto fmt = format == "csv" ? TraceFormat::kCsv : TraceFormat::kTable;
  if (output.empty() || output == "-") {
    write_trace(std::cout, reports, fit, fmt);
  } else {
    std::ofstream os(output);
    if (!os) throw UsageError("cannot write " + output);
    write_trace(os, reports, fit, fmt);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Snowballing nested sampling"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  SnowballConfig run_config;
  std::string run_out;
  bool timing = false;
  auto* run = app.add_subcommand("run", "start a new snowball run");
  add_config_flags(run, run_config);
  run->add_option("--iters", run_config.max_outer_iterations, "outer iterations")->check(CLI::PositiveNumber);
  run->add_option("--out", run_out, "output directory")->required();
  run->add_flag("--no-memo", [&](std::int64_t) { run_config.use_memo = false; }, "disable LRPS memoization");
  run->add_flag("--timing", timing, "record wall-clock seconds in reports (outputs are then not reproducible)");

  SnowballConfig resume_config;
  std::string resume_out;
  std::uint64_t resume_iters = 1;
  auto* resume = app.add_subcommand("resume", "continue a checkpointed run");
  add_config_flags(resume, resume_config);
  resume->add_option("--out", resume_out, "run directory holding checkpoint.snsckpt")->required();
  resume->add_option("--iters", resume_iters, "additional outer iterations")->check(CLI::PositiveNumber);
  resume->add_flag("--timing", timing, "record wall-clock seconds in reports");

  std::string trace_in;
  std::string trace_format = "csv";
  std::string trace_output;
  std::optional<std::uint64_t> trace_steps;
  auto* trace = app.add_subcommand("trace", "emit ln Z trace data and the 1/(M K) fit");
  trace->add_option("--in", trace_in, "reports.jsonl or a run directory")->required();
  trace->add_option("--format", trace_format, "csv | table")->check(CLI::IsMember({"csv", "table"}));
  trace->add_option("--steps", trace_steps, "M used by the run (default: read from manifest.json)");
  trace->add_option("--output", trace_output, "output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*run) return cmd_run(run_config, run_out, timing);
    if (*resume) return cmd_resume(resume_out, resume_iters, resume_config, *resume, timing);
    if (*trace) return cmd_trace(trace_in, trace_steps, trace_format, trace_output);
  } catch (const UsageError& e) {
    log(LogLevel::kError, e.what());
    return kExitUsage;
  } catch (const DomainError& e) {
    log(LogLevel::kError, e.what());
    return kExitUsage;
  } catch (const CheckpointError& e) {
    log(LogLevel::kError, e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    log(LogLevel::kError, e.what());
    return kExitAborted;
  }
  return kExitUsage;
}
