#pragma once

// I.i.d. ability distributions.

#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>

#include <boost/math/quadrature/tanh_sinh.hpp>
#include <nlohmann/json.hpp>

#include "cim/errors.hpp"
#include "cim/rng.hpp"

namespace cim {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Continuous, strictly increasing cdf on [lower, upper]; upper may be +inf.
class AbilityDistribution {
 public:
  virtual ~AbilityDistribution() = default;

  virtual double lower() const = 0;
  virtual double upper() const = 0;
  virtual double cdf(double x) const = 0;
  virtual double pdf(double x) const = 0;
  virtual std::string kind() const = 0;
  virtual nlohmann::json to_json() const = 0;

  virtual double log_cdf(double x) const { return std::log(cdf(x)); }

  /// Inverse cdf on [0, 1]. The default brackets the root and bisects to an
  /// absolute tolerance of 1e-12 (scaled by the magnitude of the answer).
  virtual double quantile(double p) const {
    check_probability(p);
    if (p == 0.0) return lower();
    if (p == 1.0) return upper();
    double lo = lower();
    double hi = upper();
    if (!std::isfinite(hi)) {
      hi = std::max(1.0, lo + 1.0);
      while (cdf(hi) < p) {
        lo = hi;
        hi *= 2.0;
        if (!std::isfinite(hi)) throw std::domain_error("quantile bracket overflow");
      }
    }
    for (int it = 0; it < 400; ++it) {
      double mid = 0.5 * (lo + hi);
      if (hi - lo <= 1e-12 * std::max(1.0, std::abs(mid))) break;
      (cdf(mid) < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  }

  /// quantile(exp(log_p)); overridden where a closed form keeps precision
  /// for probabilities very close to one.
  virtual double quantile_log(double log_p) const {
    if (log_p > 0.0) throw std::domain_error("log-probability above zero");
    return quantile(std::exp(log_p));
  }

  double sample(CounterRng& rng) const { return quantile(rng.uniform()); }

  /// A finite stand-in for `upper()` used to scale tolerances.
  double effective_upper() const {
    return std::isfinite(upper()) ? upper() : quantile(0.999999);
  }

 protected:
  void check_probability(double p) const {
    if (!(p >= 0.0 && p <= 1.0)) throw std::domain_error("probability outside [0, 1]");
    if (p == 1.0 && !std::isfinite(upper())) throw std::domain_error("unbounded quantile");
  }
};

class UniformAbility final : public AbilityDistribution {
 public:
  UniformAbility(double lo, double hi) : lo_(lo), hi_(hi) {
    if (!(lo >= 0.0) || !(hi > lo) || !std::isfinite(hi))
      throw std::invalid_argument("uniform ability needs 0 <= l < u < inf");
  }

  double lower() const override { return lo_; }
  double upper() const override { return hi_; }
  double cdf(double x) const override {
    if (x <= lo_) return 0.0;
    if (x >= hi_) return 1.0;
    return (x - lo_) / (hi_ - lo_);
  }
  double pdf(double x) const override { return (x < lo_ || x > hi_) ? 0.0 : 1.0 / (hi_ - lo_); }
  double quantile(double p) const override {
    check_probability(p);
    return lo_ + p * (hi_ - lo_);
  }
  std::string kind() const override { return "uniform"; }
  nlohmann::json to_json() const override { return {{"kind", "uniform"}, {"l", lo_}, {"u", hi_}}; }

 private:
  double lo_, hi_;
};

class ExponentialAbility final : public AbilityDistribution {
 public:
  explicit ExponentialAbility(double rate) : rate_(rate) {
    if (!(rate > 0.0) || !std::isfinite(rate)) throw std::invalid_argument("exponential rate must be positive");
  }

  double rate() const noexcept { return rate_; }
  double lower() const override { return 0.0; }
  double upper() const override { return kInf; }
  double cdf(double x) const override { return x <= 0.0 ? 0.0 : -std::expm1(-rate_ * x); }
  double log_cdf(double x) const override {
    if (x <= 0.0) return -kInf;
    return std::log1p(-std::exp(-rate_ * x));
  }
  double pdf(double x) const override { return x < 0.0 ? 0.0 : rate_ * std::exp(-rate_ * x); }
  double quantile(double p) const override {
    check_probability(p);
    return -std::log1p(-p) / rate_;
  }
  double quantile_log(double log_p) const override {
    if (log_p > 0.0) throw std::domain_error("log-probability above zero");
    if (log_p == 0.0) throw std::domain_error("unbounded quantile");
    // 1 - p = -expm1(log p) keeps full precision when p is near one.
    return -std::log(-std::expm1(log_p)) / rate_;
  }
  std::string kind() const override { return "exponential"; }
  nlohmann::json to_json() const override { return {{"kind", "exponential"}, {"lambda", rate_}}; }

 private:
  double rate_;
};

using DistributionPtr = std::shared_ptr<const AbilityDistribution>;

/// {"kind": "exponential", "lambda": 1.0} or {"kind": "uniform", "l": 0, "u": 1}.
/// A wrapping {"dist": {...}} object is accepted too.
inline DistributionPtr distribution_from_json(const nlohmann::json& j) {
  if (j.is_object() && j.contains("dist")) return distribution_from_json(j.at("dist"));
  if (!j.is_object() || !j.contains("kind")) throw ParseError("distribution needs a \"kind\"");
  auto kind = j.at("kind").get<std::string>();
  try {
    if (kind == "exponential") return std::make_shared<ExponentialAbility>(j.value("lambda", 1.0));
    if (kind == "uniform") return std::make_shared<UniformAbility>(j.value("l", 0.0), j.value("u", 1.0));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad distribution parameters: ") + e.what());
  }
  throw ParseError("unknown distribution kind '" + kind + "'");
}

/// E[max of n i.i.d. draws] = integral of n x F(x)^(n-1) f(x) over the support.
/// An unbounded support is mapped onto [0, 1) by x = l - log(1 - t).
inline double expected_max(const AbilityDistribution& d, std::size_t n) {
  if (n == 0) throw std::invalid_argument("expected_max needs n >= 1");
  const double l = d.lower();
  const double nn = static_cast<double>(n);
  auto density = [&](double x) {
    double f = d.pdf(x);
    if (f == 0.0) return 0.0;
    double pow_term = n == 1 ? 1.0 : std::exp((nn - 1.0) * d.log_cdf(x));
    return nn * x * pow_term * f;
  };
  boost::math::quadrature::tanh_sinh<double> integrator;
  double err = 0.0;
  double value = 0.0;
  constexpr double kTol = 1e-12;
  if (std::isfinite(d.upper())) {
    value = integrator.integrate(density, l, d.upper(), kTol, &err);
  } else {
    auto mapped = [&](double t) {
      if (t >= 1.0) return 0.0;
      double x = l - std::log1p(-t);
      return density(x) / (1.0 - t);
    };
    value = integrator.integrate(mapped, 0.0, 1.0, kTol, &err);
  }
  if (!std::isfinite(value) || err > 1e-8 * std::max(1.0, std::abs(value)))
    throw std::domain_error("expected_max: integral did not converge for this parameterization");
  return value;
}

inline double mean(const AbilityDistribution& d) { return expected_max(d, 1); }

}  // namespace cim
