#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "fluidq/errors.hpp"
#include "fluidq/rng.hpp"

namespace fluidq {

// Service-time law with unit mean. Families are parameterized by shape only;
// the scale is solved at construction so the mean is exactly 1. All of
// G, g, log-survival, the equilibrium CDF and the mean-residual-life
// function are closed-form per family; survival ratios used by the fluid
// solver are computed in log space to stay stable near the right endpoint
// of the support.
class ServiceDistribution {
 public:
  enum class Family { Exponential, Lognormal, Weibull, Pareto, Uniform, Coxian };

  static ServiceDistribution exponential() {
    return ServiceDistribution(Family::Exponential);
  }

  static ServiceDistribution lognormal(double sigma) {
    if (!(sigma > 0.0)) throw ConfigError("lognormal: sigma must be > 0");
    ServiceDistribution d(Family::Lognormal);
    d.sigma_ = sigma;
    d.mu_ = -0.5 * sigma * sigma;  // mean exp(mu + sigma^2/2) = 1
    return d;
  }

  static ServiceDistribution weibull(double k) {
    if (!(k > 0.0)) throw ConfigError("weibull: k must be > 0");
    ServiceDistribution d(Family::Weibull);
    d.shape_ = k;
    d.scale_ = 1.0 / std::tgamma(1.0 + 1.0 / k);  // mean scale*Gamma(1+1/k) = 1
    return d;
  }

  // Pareto in Lomax form, support [0, inf). Requires alpha > 1 for a finite
  // mean; the scale alpha-1 gives mean 1.
  static ServiceDistribution pareto(double alpha) {
    if (!(alpha > 1.0))
      throw ConfigError("pareto: alpha must be > 1 (finite mean required)");
    ServiceDistribution d(Family::Pareto);
    d.shape_ = alpha;
    d.scale_ = alpha - 1.0;
    return d;
  }

  static ServiceDistribution uniform() {  // on [0, 2]
    return ServiceDistribution(Family::Uniform);
  }

  // Two-phase Coxian: Exp(r1), then with probability p an Exp(r2) tail.
  // Rates are rescaled so the mean 1/r1 + p/r2 becomes 1. Covers
  // hyper-exponential-like (p<1) and Erlang-like (p=1) shapes with
  // closed-form G and g.
  static ServiceDistribution coxian(double p, double r1, double r2) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("coxian: p must be in [0,1]");
    if (!(r1 > 0.0) || !(r2 > 0.0))
      throw ConfigError("coxian: rates r1, r2 must be > 0");
    ServiceDistribution d(Family::Coxian);
    const double mean = 1.0 / r1 + p / r2;
    d.cox_p_ = p;
    d.cox_r1_ = r1 * mean;
    d.cox_r2_ = r2 * mean;
    d.cox_r1_raw_ = r1;
    d.cox_r2_raw_ = r2;
    return d;
  }

  // Grammar: exp | lognormal:sigma=<s> | weibull:k=<k> | pareto:alpha=<a> |
  //          uniform | coxian:p=<p>,r1=<r1>,r2=<r2>
  static ServiceDistribution parse(std::string_view spec);

  Family family() const { return fam_; }

  // sup{x : G(x) < 1}; infinity for all families except uniform.
  double support_end() const {
    return fam_ == Family::Uniform ? 2.0 : std::numeric_limits<double>::infinity();
  }

  double cdf(double x) const {
    require_nonneg(x);
    if (x >= support_end()) return 1.0;
    return -std::expm1(log_survival(x));
  }

  double survival(double x) const {
    require_nonneg(x);
    if (x >= support_end()) return 0.0;
    return std::exp(log_survival(x));
  }

  // ln(1 - G(x)), finite for x < M. Closed form per family.
  double log_survival(double x) const {
    require_nonneg(x);
    switch (fam_) {
      case Family::Exponential:
        return -x;
      case Family::Lognormal: {
        if (x == 0.0) return 0.0;
        const double z = (std::log(x) - mu_) / sigma_;
        return std::log(0.5 * std::erfc(z / kSqrt2));
      }
      case Family::Weibull:
        return -std::pow(x / scale_, shape_);
      case Family::Pareto:
        return -shape_ * std::log1p(x / scale_);
      case Family::Uniform:
        return x >= 2.0 ? -std::numeric_limits<double>::infinity()
                        : std::log1p(-0.5 * x);
      case Family::Coxian: {
        if (cox_equal_rates()) {
          const double r = cox_r1_;
          return std::log((1.0 - cox_p_) + cox_p_ * (1.0 + r * x)) - r * x;
        }
        const double w = (cox_r2_ * std::exp(-cox_r1_ * x) -
                          cox_r1_ * std::exp(-cox_r2_ * x)) /
                         (cox_r2_ - cox_r1_);
        return std::log((1.0 - cox_p_) * std::exp(-cox_r1_ * x) + cox_p_ * w);
      }
    }
    return 0.0;  // unreachable
  }

  // ln g(x); -inf where g vanishes. Needed for ratios like g(x+t)/(1-G(x))
  // whose numerator and denominator both underflow far in the tail.
  double log_density(double x) const {
    require_nonneg(x);
    if (x >= support_end()) return -std::numeric_limits<double>::infinity();
    switch (fam_) {
      case Family::Exponential:
        return -x;
      case Family::Lognormal: {
        if (x == 0.0) return -std::numeric_limits<double>::infinity();
        const double z = (std::log(x) - mu_) / sigma_;
        return -0.5 * z * z - std::log(x * sigma_ * kSqrt2Pi);
      }
      case Family::Weibull: {
        if (x == 0.0)
          return shape_ < 1.0 ? std::numeric_limits<double>::infinity()
                              : (shape_ == 1.0
                                     ? -std::log(scale_)
                                     : -std::numeric_limits<double>::infinity());
        const double y = x / scale_;
        return std::log(shape_ / scale_) + (shape_ - 1.0) * std::log(y) -
               std::pow(y, shape_);
      }
      case Family::Pareto:
        return std::log(shape_ / scale_) - (shape_ + 1.0) * std::log1p(x / scale_);
      case Family::Uniform:
        return std::log(0.5);
      case Family::Coxian: {
        const double g = density(x);
        return g > 0.0 ? std::log(g) : -std::numeric_limits<double>::infinity();
      }
    }
    return 0.0;  // unreachable
  }

  double density(double x) const {
    require_nonneg(x);
    if (x >= support_end()) return 0.0;
    switch (fam_) {
      case Family::Exponential:
        return std::exp(-x);
      case Family::Lognormal: {
        if (x == 0.0) return 0.0;
        const double z = (std::log(x) - mu_) / sigma_;
        return std::exp(-0.5 * z * z) / (x * sigma_ * kSqrt2Pi);
      }
      case Family::Weibull: {
        if (x == 0.0) {
          if (shape_ < 1.0) return std::numeric_limits<double>::infinity();
          return shape_ == 1.0 ? 1.0 / scale_ : 0.0;
        }
        const double y = x / scale_;
        return (shape_ / scale_) * std::pow(y, shape_ - 1.0) *
               std::exp(-std::pow(y, shape_));
      }
      case Family::Pareto:
        return (shape_ / scale_) * std::pow(1.0 + x / scale_, -shape_ - 1.0);
      case Family::Uniform:
        return 0.5;
      case Family::Coxian: {
        const double e1 = std::exp(-cox_r1_ * x);
        if (cox_equal_rates()) {
          const double r = cox_r1_;
          return (1.0 - cox_p_) * r * e1 + cox_p_ * r * r * x * e1;
        }
        const double e2 = std::exp(-cox_r2_ * x);
        return (1.0 - cox_p_) * cox_r1_ * e1 +
               cox_p_ * cox_r1_ * cox_r2_ * (e1 - e2) / (cox_r2_ - cox_r1_);
      }
    }
    return 0.0;  // unreachable
  }

  // g(x)/(1-G(x)) for x < M; +infinity at or beyond M.
  double hazard(double x) const {
    require_nonneg(x);
    if (x >= support_end()) return std::numeric_limits<double>::infinity();
    switch (fam_) {
      case Family::Exponential:
        return 1.0;
      case Family::Pareto:
        return (shape_ / scale_) / (1.0 + x / scale_);
      case Family::Uniform:
        return 0.5 / (1.0 - 0.5 * x);
      case Family::Weibull: {
        if (x == 0.0) return density(0.0);
        const double y = x / scale_;
        return (shape_ / scale_) * std::pow(y, shape_ - 1.0);
      }
      default:
        return density(x) / survival(x);
    }
  }

  struct Eval {
    double cdf = 0.0;
    double density = 0.0;
    double hazard = 0.0;
    bool at_or_beyond_support = false;
  };

  Eval evaluate(double x) const {
    require_nonneg(x);
    if (x >= support_end()) {
      return Eval{1.0, 0.0, std::numeric_limits<double>::infinity(), true};
    }
    return Eval{cdf(x), density(x), hazard(x), false};
  }

  // Integral of 1-G over [0, a]: the CDF of the equilibrium (stationary age)
  // measure; tends to 1 because the mean is 1. Closed form per family.
  double equilibrium_cdf(double a) const {
    require_nonneg(a);
    switch (fam_) {
      case Family::Exponential:
        return -std::expm1(-a);
      case Family::Lognormal: {
        if (a == 0.0) return 0.0;
        const double z = (std::log(a) - mu_) / sigma_;
        // a*S(a) + integral of x g(x) over [0,a]; the latter is Phi(z - sigma)
        // after the unit-mean normalization.
        return a * survival(a) + 0.5 * std::erfc(-(z - sigma_) / kSqrt2);
      }
      case Family::Weibull: {
        if (a == 0.0) return 0.0;
        const double y = std::pow(a / scale_, shape_);
        return a * std::exp(-y) +
               boost::math::gamma_p(1.0 + 1.0 / shape_, y);
      }
      case Family::Pareto:
        return -std::expm1((1.0 - shape_) * std::log1p(a / scale_));
      case Family::Uniform: {
        if (a >= 2.0) return 1.0;
        return a - 0.25 * a * a;
      }
      case Family::Coxian: {
        const double f1 = -std::expm1(-cox_r1_ * a);
        if (cox_equal_rates()) {
          const double r = cox_r1_;
          const double tail = (2.0 - (2.0 + r * a) * std::exp(-r * a)) / r;
          return (1.0 - cox_p_) * f1 / r + cox_p_ * tail;
        }
        const double f2 = -std::expm1(-cox_r2_ * a);
        const double w = (cox_r2_ * f1 / cox_r1_ - cox_r1_ * f2 / cox_r2_) /
                         (cox_r2_ - cox_r1_);
        return (1.0 - cox_p_) * f1 / cox_r1_ + cox_p_ * w;
      }
    }
    return 0.0;  // unreachable
  }

  // Mean residual life m(x) = E[V - x | V > x]; requires x < M.
  double mean_residual(double x) const {
    require_nonneg(x);
    if (x >= support_end())
      throw std::domain_error("mean_residual: age at or beyond support end");
    switch (fam_) {
      case Family::Exponential:
        return 1.0;
      case Family::Pareto:
        return (scale_ + x) / (shape_ - 1.0);
      case Family::Uniform:
        return 0.5 * (2.0 - x);
      default:
        return (1.0 - equilibrium_cdf(x)) / survival(x);
    }
  }

  // Whether the hazard rate is continuous on [0, M). False only for
  // Weibull with k < 1, where h blows up at 0.
  bool hazard_continuous() const {
    return !(fam_ == Family::Weibull && shape_ < 1.0);
  }

  // Renewal function U(t) = 1 + integral of U(t-s) g(s) ds, by trapezoidal
  // Volterra recursion on the given step. When g is unbounded at 0
  // (Weibull k < 1) the cell touching the singularity uses the exact kernel
  // mass against a linear interpolant instead of an endpoint value.
  double renewal_function(double t, double step = 1e-3) const {
    require_nonneg(t);
    if (!(step > 0.0)) throw ConfigError("renewal_function: step must be > 0");
    const int n = static_cast<int>(std::ceil(t / step - 1e-12));
    if (n == 0) return 1.0;
    const double dt = t / n;
    const bool singular = !std::isfinite(density(0.0));
    std::vector<double> u(static_cast<std::size_t>(n) + 1);
    std::vector<double> gk(static_cast<std::size_t>(n) + 1);
    for (int j = 0; j <= n; ++j) gk[static_cast<std::size_t>(j)] = density(j * dt);
    u[0] = 1.0;
    // Coefficients of u[k] and u[k-1] contributed by the cell adjacent to
    // the kernel origin: trapezoid normally, exact kernel mass against a
    // linear interpolant when g(0) is infinite.
    double c_self, c_prev;
    if (singular) {
      const double i0 = cdf(dt);
      const double i1 = first_moment(dt);
      c_self = i0 - i1 / dt;
      c_prev = i1 / dt;
    } else {
      c_self = 0.5 * dt * gk[0];
      c_prev = 0.5 * dt * gk[1];
    }
    for (int k = 1; k <= n; ++k) {
      double acc = c_prev * u[static_cast<std::size_t>(k - 1)];
      if (k >= 2) {  // composite trapezoid over [0, t_{k-1}]
        acc += 0.5 * dt * (gk[static_cast<std::size_t>(k)] * u[0] +
                           gk[1] * u[static_cast<std::size_t>(k - 1)]);
        for (int i = 1; i <= k - 2; ++i)
          acc += dt * gk[static_cast<std::size_t>(k - i)] * u[static_cast<std::size_t>(i)];
      }
      u[static_cast<std::size_t>(k)] = (1.0 + acc) / (1.0 - c_self);
    }
    return u[static_cast<std::size_t>(n)];
  }

  // One service requirement, distributed per G. Inverse-CDF or phase
  // sampling; the draw count per call is fixed per family.
  double sample(RandomStream& rng) const {
    switch (fam_) {
      case Family::Exponential:
        return rng.exponential(1.0);
      case Family::Lognormal:
        return std::exp(mu_ + sigma_ * rng.normal());
      case Family::Weibull:
        return scale_ * std::pow(-std::log(rng.uniform()), 1.0 / shape_);
      case Family::Pareto:
        return scale_ * std::expm1(-std::log(rng.uniform()) / shape_);
      case Family::Uniform:
        return 2.0 * rng.uniform();
      case Family::Coxian: {
        double v = rng.exponential(cox_r1_);
        const bool tail = rng.bernoulli(cox_p_);
        if (tail) v += rng.exponential(cox_r2_);
        return v;
      }
    }
    return 0.0;  // unreachable
  }

  // Residual requirement for a customer already in service with the given
  // age: r > 0 with density g(age+r)/(1-G(age)).
  double sample_residual(double age, RandomStream& rng) const {
    require_nonneg(age);
    if (age >= support_end())
      throw std::domain_error("sample_residual: age at or beyond support end");
    switch (fam_) {
      case Family::Exponential:
        return rng.exponential(1.0);  // memoryless
      case Family::Uniform:
        return (2.0 - age) * rng.uniform();
      case Family::Pareto:
        return (scale_ + age) * std::expm1(-std::log(rng.uniform()) / shape_);
      case Family::Weibull: {
        const double y = std::pow(age / scale_, shape_);
        const double total = scale_ * std::pow(y - std::log(rng.uniform()), 1.0 / shape_);
        return std::max(total - age, kTiny);
      }
      case Family::Lognormal: {
        const double lo = cdf(age);
        double p = lo + rng.uniform() * (1.0 - lo);
        p = std::min(p, 1.0 - 1e-16);
        const boost::math::normal_distribution<> std_normal;
        const double total = std::exp(mu_ + sigma_ * boost::math::quantile(std_normal, p));
        return std::max(total - age, kTiny);
      }
      case Family::Coxian: {
        // Conditional phase occupancy at the given age, then memoryless
        // phase remainders.
        const double pi1 = std::exp(-cox_r1_ * age);
        double pi2;
        if (cox_equal_rates()) {
          pi2 = cox_p_ * cox_r1_ * age * std::exp(-cox_r1_ * age);
        } else {
          pi2 = cox_p_ * cox_r1_ *
                (std::exp(-cox_r2_ * age) - std::exp(-cox_r1_ * age)) /
                (cox_r1_ - cox_r2_);
        }
        if (rng.uniform() * (pi1 + pi2) < pi1) {
          double v = rng.exponential(cox_r1_);
          if (rng.bernoulli(cox_p_)) v += rng.exponential(cox_r2_);
          return v;
        }
        return rng.exponential(cox_r2_);
      }
    }
    return 0.0;  // unreachable
  }

  std::string spec_string() const {
    char buf[160];
    switch (fam_) {
      case Family::Exponential:
        return "exp";
      case Family::Lognormal:
        std::snprintf(buf, sizeof buf, "lognormal:sigma=%.17g", sigma_);
        return buf;
      case Family::Weibull:
        std::snprintf(buf, sizeof buf, "weibull:k=%.17g", shape_);
        return buf;
      case Family::Pareto:
        std::snprintf(buf, sizeof buf, "pareto:alpha=%.17g", shape_);
        return buf;
      case Family::Uniform:
        return "uniform";
      case Family::Coxian:
        std::snprintf(buf, sizeof buf, "coxian:p=%.17g,r1=%.17g,r2=%.17g",
                      cox_p_, cox_r1_raw_, cox_r2_raw_);
        return buf;
    }
    return "";  // unreachable
  }

 private:
  explicit ServiceDistribution(Family fam) : fam_(fam) {}

  static void require_nonneg(double x) {
    if (!(x >= 0.0)) throw std::domain_error("negative argument to service distribution");
  }

  bool cox_equal_rates() const {
    return std::abs(cox_r1_ - cox_r2_) <= 1e-12 * (cox_r1_ + cox_r2_);
  }

  // Integral of x g(x) over [0, a] = equilibrium_cdf(a) - a (1 - G(a)).
  double first_moment(double a) const {
    return equilibrium_cdf(a) - a * survival(a);
  }

  static constexpr double kSqrt2 = 1.4142135623730950488;
  static constexpr double kSqrt2Pi = 2.5066282746310005024;
  static constexpr double kTiny = 1e-300;

  Family fam_;
  double sigma_ = 0.0, mu_ = 0.0;    // lognormal
  double shape_ = 0.0, scale_ = 0.0; // weibull / pareto
  double cox_p_ = 0.0, cox_r1_ = 0.0, cox_r2_ = 0.0;  // coxian (normalized)
  double cox_r1_raw_ = 0.0, cox_r2_raw_ = 0.0;        // as given, for spec_string

  friend class EquilibriumMeasure;
};

// View of the equilibrium (stationary age) measure of a service
// distribution: density 1 - G(x) on [0, M), total mass 1.
class EquilibriumMeasure {
 public:
  explicit EquilibriumMeasure(const ServiceDistribution& dist) : dist_(&dist) {}

  double density(double x) const { return dist_->survival(x); }
  double cdf(double a) const { return dist_->equilibrium_cdf(a); }

  // Inverse-CDF sample by bisection (the CDF is strictly increasing on the
  // support interior).
  double sample(RandomStream& rng) const {
    const double u = rng.uniform();
    double hi = 1.0;
    const double cap = std::min(dist_->support_end(), 1e9);
    while (cdf(std::min(hi, cap)) < u && hi < cap) hi *= 2.0;
    hi = std::min(hi, cap);
    double lo = 0.0;
    for (int it = 0; it < 200 && hi - lo > 1e-13 * (1.0 + hi); ++it) {
      const double mid = 0.5 * (lo + hi);
      (cdf(mid) < u ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  }

 private:
  const ServiceDistribution* dist_;
};

namespace detail {

inline std::vector<std::pair<std::string, std::string>> parse_kv_list(
    std::string_view text, std::string_view context) {
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = std::min(text.find(',', pos), text.size());
    const std::string_view item = text.substr(pos, comma - pos);
    const std::size_t eq = item.find('=');
    if (eq == std::string_view::npos || eq == 0)
      throw ConfigError(std::string(context) + ": expected key=value, got '" +
                        std::string(item) + "'");
    out.emplace_back(std::string(item.substr(0, eq)),
                     std::string(item.substr(eq + 1)));
    if (comma == text.size()) break;
    pos = comma + 1;
  }
  return out;
}

inline double parse_real(const std::string& value,
                                  std::string_view context) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    throw ConfigError(std::string(context) + ": bad number '" + value + "'");
  }
  if (used != value.size() || !std::isfinite(v))
    throw ConfigError(std::string(context) + ": bad number '" + value + "'");
  return v;
}

}  // namespace detail

inline ServiceDistribution ServiceDistribution::parse(std::string_view spec) {
  const std::size_t colon = spec.find(':');
  const std::string_view head = spec.substr(0, colon);
  const std::string_view rest =
      colon == std::string_view::npos ? std::string_view{} : spec.substr(colon + 1);

  auto kv = [&](std::string_view ctx) { return detail::parse_kv_list(rest, ctx); };

  if (head == "exp" || head == "exponential") {
    if (!rest.empty()) throw ConfigError("service 'exp' takes no parameters");
    return exponential();
  }
  if (head == "uniform") {
    if (!rest.empty()) throw ConfigError("service 'uniform' takes no parameters");
    return uniform();
  }
  if (head == "lognormal") {
    double sigma = std::numeric_limits<double>::quiet_NaN();
    for (const auto& [k, v] : kv("lognormal")) {
      if (k == "sigma") sigma = detail::parse_real(v, "lognormal.sigma");
      else throw ConfigError("lognormal: unknown key '" + k + "'");
    }
    if (std::isnan(sigma)) throw ConfigError("lognormal: missing key 'sigma'");
    return lognormal(sigma);
  }
  if (head == "weibull") {
    double k_param = std::numeric_limits<double>::quiet_NaN();
    for (const auto& [k, v] : kv("weibull")) {
      if (k == "k") k_param = detail::parse_real(v, "weibull.k");
      else throw ConfigError("weibull: unknown key '" + k + "'");
    }
    if (std::isnan(k_param)) throw ConfigError("weibull: missing key 'k'");
    return weibull(k_param);
  }
  if (head == "pareto") {
    double alpha = std::numeric_limits<double>::quiet_NaN();
    for (const auto& [k, v] : kv("pareto")) {
      if (k == "alpha") alpha = detail::parse_real(v, "pareto.alpha");
      else throw ConfigError("pareto: unknown key '" + k + "'");
    }
    if (std::isnan(alpha)) throw ConfigError("pareto: missing key 'alpha'");
    return pareto(alpha);
  }
  if (head == "coxian") {
    double p = -1.0, r1 = 0.0, r2 = 0.0;
    for (const auto& [k, v] : kv("coxian")) {
      if (k == "p") p = detail::parse_real(v, "coxian.p");
      else if (k == "r1") r1 = detail::parse_real(v, "coxian.r1");
      else if (k == "r2") r2 = detail::parse_real(v, "coxian.r2");
      else throw ConfigError("coxian: unknown key '" + k + "'");
    }
    if (p < 0.0 || r1 <= 0.0 || r2 <= 0.0)
      throw ConfigError("coxian: requires keys p, r1, r2");
    return coxian(p, r1, r2);
  }
  if (head == "deterministic") {
    throw ConfigError(
        "service 'deterministic' is not supported: the model requires a "
        "service-time density");
  }
  throw ConfigError("unknown service distribution '" + std::string(head) + "'");
}

}  // namespace fluidq
