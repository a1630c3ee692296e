#pragma once

/// \file
/// Inference problems: a box prior transform paired with a log-likelihood,
/// plus a name-keyed registry used by the command-line tool.

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "snowball_ns/numeric.hpp"

namespace snowball_ns {

// Likelihoods

/// -2 * sum_{i=0}^{d-2} [100 (x_{i+1} - x_i^2)^2 + (1 - x_i)^2]
inline double rosenbrock_loglike(std::span<const double> theta) {
  if (theta.size() < 2) throw DomainError("rosenbrock_loglike: dimension must be >= 2");
  double sum = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    if (!std::isfinite(theta[i])) {
      throw DomainError("rosenbrock_loglike: non-finite component " + std::to_string(i));
    }
    if (i + 1 < theta.size()) {
      const double a = theta[i + 1] - theta[i] * theta[i];
      const double b = 1.0 - theta[i];
      sum += 100.0 * a * a + b * b;
    }
  }
  return -2.0 * sum;
}

/// Isotropic normal density with standard deviation sigma, in log.
inline double gaussian_loglike(std::span<const double> theta, double sigma) {
  if (!(sigma > 0.0)) throw DomainError("gaussian_loglike: sigma must be > 0");
  double r2 = 0.0;
  for (double x : theta) r2 += x * x;
  const double d = static_cast<double>(theta.size());
  return -0.5 * d * std::log(2.0 * std::numbers::pi * sigma * sigma) - r2 / (2.0 * sigma * sigma);
}

inline double constant_loglike(std::span<const double> /*theta*/, double c) noexcept { return c; }

// Priors

/// Maps the unit cube onto [lo, hi]^d component-wise.
inline std::vector<double> box_prior_transform(std::span<const double> u, double lo, double hi) {
  if (!(lo < hi)) throw DomainError("box_prior_transform: requires lo < hi");
  std::vector<double> theta(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (!(u[i] >= 0.0 && u[i] <= 1.0)) {
      throw DomainError("box_prior_transform: u[" + std::to_string(i) + "] outside [0, 1]");
    }
    theta[i] = lo + (hi - lo) * u[i];
  }
  return theta;
}

inline std::vector<double> box_prior_inverse(std::span<const double> theta, double lo, double hi) {
  std::vector<double> u(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) u[i] = (theta[i] - lo) / (hi - lo);
  return u;
}

/// ln of the box-prior evidence of an isotropic Gaussian centred at the
/// origin, including the truncation of the Gaussian mass by the box.
inline double gaussian_box_log_evidence(std::size_t dim, double sigma, double lo, double hi) {
  const double s = sigma * std::numbers::sqrt2;
  const double mass_1d = 0.5 * (std::erf(hi / s) - std::erf(lo / s));
  return static_cast<double>(dim) * (std::log(mass_1d) - std::log(hi - lo));
}

/// Parameters that fully determine a registered problem.
struct ProblemSpec {
  std::string name = "rosenbrock";
  std::size_t dim = 2;
  double lo = -10.0;
  double hi = 10.0;
  double sigma = 0.1;
  double const_logl = 0.0;

  friend bool operator==(const ProblemSpec&, const ProblemSpec&) = default;
};

class Problem {
 public:
  using Transform = std::function<std::vector<double>(std::span<const double>)>;
  using LogLike = std::function<double(std::span<const double>)>;

  Problem(std::string name, std::size_t dim, Transform prior_transform, LogLike log_likelihood,
          std::optional<double> analytic_log_evidence = std::nullopt)
      : name_(std::move(name)),
        dim_(dim),
        prior_transform_(std::move(prior_transform)),
        log_likelihood_(std::move(log_likelihood)),
        analytic_log_evidence_(analytic_log_evidence) {
    if (dim_ == 0) throw DomainError("Problem: dimension must be positive");
  }

  const std::string& name() const noexcept { return name_; }
  std::size_t dim() const noexcept { return dim_; }
  std::optional<double> analytic_log_evidence() const noexcept { return analytic_log_evidence_; }

  std::vector<double> prior_transform(std::span<const double> u) const { return prior_transform_(u); }
  double log_likelihood(std::span<const double> theta) const { return log_likelihood_(theta); }

 private:
  std::string name_;
  std::size_t dim_;
  Transform prior_transform_;
  LogLike log_likelihood_;
  std::optional<double> analytic_log_evidence_;
};

inline Problem make_rosenbrock(std::size_t dim, double lo = -10.0, double hi = 10.0) {
  if (dim < 2) throw DomainError("rosenbrock: dimension must be >= 2");
  return Problem(
      "rosenbrock", dim, [lo, hi](std::span<const double> u) { return box_prior_transform(u, lo, hi); },
      [](std::span<const double> t) { return rosenbrock_loglike(t); });
}

inline Problem make_gaussian(std::size_t dim, double sigma, double lo = -10.0, double hi = 10.0) {
  if (!(sigma > 0.0)) throw DomainError("gaussian: sigma must be > 0");
  return Problem(
      "gaussian", dim, [lo, hi](std::span<const double> u) { return box_prior_transform(u, lo, hi); },
      [sigma](std::span<const double> t) { return gaussian_loglike(t, sigma); },
      gaussian_box_log_evidence(dim, sigma, lo, hi));
}

inline Problem make_constant(std::size_t dim, double c, double lo = -10.0, double hi = 10.0) {
  return Problem(
      "constant", dim, [lo, hi](std::span<const double> u) { return box_prior_transform(u, lo, hi); },
      [c](std::span<const double> t) { return constant_loglike(t, c); }, c);
}

/// Name-keyed factories for the built-in problems.
inline const std::map<std::string, std::function<Problem(const ProblemSpec&)>>& problem_registry() {
  static const std::map<std::string, std::function<Problem(const ProblemSpec&)>> registry = {
      {"rosenbrock", [](const ProblemSpec& s) { return make_rosenbrock(s.dim, s.lo, s.hi); }},
      {"gaussian", [](const ProblemSpec& s) { return make_gaussian(s.dim, s.sigma, s.lo, s.hi); }},
      {"constant", [](const ProblemSpec& s) { return make_constant(s.dim, s.const_logl, s.lo, s.hi); }},
  };
  return registry;
}

inline Problem make_problem(const ProblemSpec& spec) {
  const auto& registry = problem_registry();
  const auto it = registry.find(spec.name);
  if (it == registry.end()) throw DomainError("unknown problem '" + spec.name + "'");
  if (!(spec.lo < spec.hi)) throw DomainError("problem box requires lo < hi");
  return it->second(spec);
}

}  // namespace snowball_ns
