#pragma once

/// \file
/// Report stream I/O (JSON Lines) and the evidence-trace analysis behind
/// `snowball_ns trace`.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "snowball_ns/numeric.hpp"
#include "snowball_ns/snowball.hpp"

namespace snowball_ns {

class TraceParseError : public std::runtime_error {
 public:
  TraceParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

namespace detail {

inline nlohmann::ordered_json json_number(double x) {
  if (std::isfinite(x)) return x;
  return nullptr;
}

inline double number_or_neg_inf(const nlohmann::json& j) {
  return j.is_null() ? kNegInf : j.get<double>();
}

}  // namespace detail

/// One JSON object, no trailing newline. Non-finite values become null.
inline std::string report_to_json(const SnowballReport& r) {
  nlohmann::ordered_json j;
  j["outer_iteration"] = r.outer_iteration;
  j["k"] = r.k;
  j["log_z"] = detail::json_number(r.log_z);
  j["log_z_err"] = detail::json_number(r.log_z_err);
  j["ess"] = detail::json_number(r.ess);
  j["n_dead"] = r.n_dead;
  j["n_like_evals_cumulative"] = r.n_like_evals_cumulative;
  j["n_lrps_calls_new"] = r.n_lrps_calls_new;
  j["n_memo_hits"] = r.n_memo_hits;
  j["wall_seconds"] = r.wall_seconds;
  if (r.failed) j["failed"] = true;
  return j.dump();
}

inline SnowballReport report_from_json(const std::string& line, std::size_t line_no) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw TraceParseError(line_no, std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw TraceParseError(line_no, "expected a JSON object");
  try {
    SnowballReport r;
    r.outer_iteration = j.at("outer_iteration").get<std::uint64_t>();
    r.k = j.at("k").get<std::uint64_t>();
    r.log_z = detail::number_or_neg_inf(j.at("log_z"));
    r.log_z_err = detail::number_or_neg_inf(j.at("log_z_err"));
    r.ess = detail::number_or_neg_inf(j.at("ess"));
    r.n_dead = j.at("n_dead").get<std::uint64_t>();
    r.n_like_evals_cumulative = j.at("n_like_evals_cumulative").get<std::uint64_t>();
    r.n_lrps_calls_new = j.at("n_lrps_calls_new").get<std::uint64_t>();
    r.n_memo_hits = j.at("n_memo_hits").get<std::uint64_t>();
    r.wall_seconds = j.at("wall_seconds").get<double>();
    r.failed = j.value("failed", false);
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw TraceParseError(line_no, std::string("bad report object: ") + e.what());
  }
}

/// Reads every non-blank line of a JSON Lines report stream.
inline std::vector<SnowballReport> read_reports(std::istream& is) {
  std::vector<SnowballReport> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(report_from_json(line, line_no));
  }
  return out;
}

// Statistics

/// Ranks starting at 1, ties share their average rank.
inline std::vector<double> average_ranks(std::span<const double> xs) {
  std::vector<std::size_t> idx(xs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && xs[idx[j + 1]] == xs[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t m = i; m <= j; ++m) ranks[idx[m]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw DomainError("spearman: need two equal-length samples, n >= 2");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

struct LinearFit {
  double intercept = 0.0;
  double slope = 0.0;
  double rms_residual = 0.0;
};

/// Ordinary least squares y = intercept + slope * x. Empty if fewer than two
/// distinct x values.
inline std::optional<LinearFit> least_squares(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) return std::nullopt;
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0) return std::nullopt;
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (f.intercept + f.slope * x[i]);
    ss += r * r;
  }
  f.rms_residual = std::sqrt(ss / n);
  return f;
}

/// Fit of ln Z(K) = a + b / (M K) over the successful reports.
struct TraceFit {
  double a = 0.0;
  double b = 0.0;
  double rms_residual = 0.0;
  double spearman_iteration_log_z = 0.0;
};

inline std::optional<TraceFit> fit_trace(std::span<const SnowballReport> reports, std::uint64_t m_steps) {
  std::vector<double> x, y, it;
  for (const auto& r : reports) {
    if (r.failed || !std::isfinite(r.log_z)) continue;
    x.push_back(1.0 / (static_cast<double>(m_steps) * static_cast<double>(r.k)));
    y.push_back(r.log_z);
    it.push_back(static_cast<double>(r.outer_iteration));
  }
  const auto lin = least_squares(x, y);
  if (!lin) return std::nullopt;
  TraceFit f;
  f.a = lin->intercept;
  f.b = lin->slope;
  f.rms_residual = lin->rms_residual;
  f.spearman_iteration_log_z = spearman(it, y);
  return f;
}

enum class TraceFormat { kCsv, kTable };

/// Plot data: outer iteration, ln Z, its error, then the fit (if any) as
/// `#` comment lines.
inline void write_trace(std::ostream& os, std::span<const SnowballReport> reports,
                        const std::optional<TraceFit>& fit, TraceFormat format) {
  const char* sep = format == TraceFormat::kCsv ? "," : " ";
  if (format == TraceFormat::kCsv) {
    os << "outer_iteration,log_z,log_z_err\n";
  } else {
    os << "# outer_iteration log_z log_z_err\n";
  }
  for (const auto& r : reports) {
    os << r.outer_iteration << sep << format_double(r.log_z) << sep << format_double(r.log_z_err) << '\n';
  }
  if (fit) {
    os << "# fit: log_z = a + b / (M * K)\n";
    os << "# a = " << format_double(fit->a) << '\n';
    os << "# b = " << format_double(fit->b) << '\n';
    os << "# rms_residual = " << format_double(fit->rms_residual) << '\n';
    os << "# spearman(iteration, log_z) = " << format_double(fit->spearman_iteration_log_z) << '\n';
  }
}

}  // namespace snowball_ns
