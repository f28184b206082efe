#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "fluidq/arrivals.hpp"
#include "fluidq/distribution.hpp"
#include "fluidq/errors.hpp"
#include "fluidq/rng.hpp"

namespace fluidq {

// Sub-probability measure of initial ages. Either a density sampled on a
// uniform age grid (integrated by composite trapezoid) or a finite list of
// atoms. Atoms are admissible only when the hazard of the governing service
// law is continuous; that check happens at solve time.
class InitialMeasure {
 public:
  static InitialMeasure empty() { return InitialMeasure{}; }

  static InitialMeasure atoms(std::vector<std::pair<double, double>> points) {
    InitialMeasure m;
    m.kind_ = Kind::Atoms;
    for (const auto& [age, weight] : points) {
      if (!(age >= 0.0)) throw ConfigError("nu0: atom ages must be >= 0");
      if (!(weight >= 0.0)) throw ConfigError("nu0: atom weights must be >= 0");
    }
    m.atoms_ = std::move(points);
    return m;
  }

  static InitialMeasure density(std::vector<double> node_values, double max_age) {
    if (node_values.size() < 2)
      throw ConfigError("nu0: density grid needs at least two nodes");
    if (!(max_age > 0.0)) throw ConfigError("nu0: density max age must be > 0");
    for (double v : node_values)
      if (!(v >= 0.0)) throw ConfigError("nu0: density values must be >= 0");
    InitialMeasure m;
    m.kind_ = Kind::Density;
    m.values_ = std::move(node_values);
    m.spacing_ = max_age / static_cast<double>(m.values_.size() - 1);
    return m;
  }

  // mass * equilibrium measure of the law (density (1-G)), truncated where
  // the equilibrium tail drops below tail_eps and rescaled so the trapezoid
  // mass equals `mass` exactly.
  static InitialMeasure equilibrium(const ServiceDistribution& law, double mass,
                                    double node_spacing = 0.02,
                                    double tail_eps = 1e-6) {
    if (!(mass >= 0.0 && mass <= 1.0))
      throw ConfigError("nu0: equilibrium mass must lie in [0,1]");
    if (mass == 0.0) return empty();
    double upper = 4.0;
    while (1.0 - law.equilibrium_cdf(upper) > tail_eps && upper < 1e5) upper *= 2.0;
    upper = std::min(upper, law.support_end());
    const int cells = std::max(64, static_cast<int>(std::ceil(upper / node_spacing)));
    std::vector<double> values(static_cast<std::size_t>(cells) + 1);
    const double h = upper / cells;
    for (int i = 0; i <= cells; ++i)
      values[static_cast<std::size_t>(i)] = law.survival(i * h);
    InitialMeasure m = density(std::move(values), upper);
    const double raw = m.total_mass();
    for (double& v : m.values_) v *= mass / raw;
    return m;
  }

  bool is_atoms() const { return kind_ == Kind::Atoms; }
  bool is_empty() const { return kind_ == Kind::Empty; }

  double total_mass() const {
    return integrate([](double) { return 1.0; });
  }

  double max_support() const {
    switch (kind_) {
      case Kind::Empty:
        return 0.0;
      case Kind::Atoms: {
        double m = 0.0;
        for (const auto& [age, weight] : atoms_)
          if (weight > 0.0) m = std::max(m, age);
        return m;
      }
      case Kind::Density:
        return spacing_ * static_cast<double>(values_.size() - 1);
    }
    return 0.0;  // unreachable
  }

  // Integral of f against the measure. The trapezoid weights on the density
  // grid are fixed, so repeated evaluations are summation-order stable.
  template <class F>
  double integrate(F&& f) const {
    switch (kind_) {
      case Kind::Empty:
        return 0.0;
      case Kind::Atoms: {
        double acc = 0.0;
        for (const auto& [age, weight] : atoms_)
          if (weight > 0.0) acc += weight * f(age);
        return acc;
      }
      case Kind::Density: {
        double acc = 0.0;
        const std::size_t n = values_.size() - 1;
        for (std::size_t i = 0; i <= n; ++i) {
          const double w = (i == 0 || i == n) ? 0.5 : 1.0;
          if (values_[i] > 0.0)
            acc += w * spacing_ * values_[i] * f(spacing_ * static_cast<double>(i));
        }
        return acc;
      }
    }
    return 0.0;  // unreachable
  }

  // Same, but only over ages <= cut, splitting the straddling cell and
  // interpolating the density linearly inside it.
  template <class F>
  double integrate_below(double cut, F&& f) const {
    if (cut <= 0.0) {
      // Atom exactly at zero still counts.
      if (kind_ == Kind::Atoms && cut == 0.0) {
        double acc = 0.0;
        for (const auto& [age, weight] : atoms_)
          if (age == 0.0) acc += weight * f(0.0);
        return acc;
      }
      return 0.0;
    }
    switch (kind_) {
      case Kind::Empty:
        return 0.0;
      case Kind::Atoms: {
        double acc = 0.0;
        for (const auto& [age, weight] : atoms_)
          if (age <= cut && weight > 0.0) acc += weight * f(age);
        return acc;
      }
      case Kind::Density: {
        const std::size_t n = values_.size() - 1;
        const double upper = spacing_ * static_cast<double>(n);
        if (cut >= upper) return integrate(f);
        const std::size_t whole = static_cast<std::size_t>(cut / spacing_);
        double acc = 0.0;
        if (whole >= 1) {  // composite trapezoid over [0, x_whole]
          for (std::size_t i = 0; i <= whole; ++i) {
            const double w = (i == 0 || i == whole) ? 0.5 : 1.0;
            if (values_[i] > 0.0)
              acc += w * spacing_ * values_[i] * f(spacing_ * static_cast<double>(i));
          }
        }
        const double x0 = spacing_ * static_cast<double>(whole);
        const double frac = (cut - x0) / spacing_;
        if (frac > 0.0 && whole < n) {  // straddled cell [x_whole, cut]
          const double v_cut = values_[whole] * (1.0 - frac) + values_[whole + 1] * frac;
          acc += 0.5 * (cut - x0) * (values_[whole] * f(x0) + v_cut * f(cut));
        }
        return acc;
      }
    }
    return 0.0;  // unreachable
  }

  // One age drawn from the normalized measure.
  double sample(RandomStream& rng) const {
    if (kind_ == Kind::Empty)
      throw PreconditionError("nu0: cannot sample from an empty measure");
    const double mass = total_mass();
    if (!(mass > 0.0))
      throw PreconditionError("nu0: cannot sample from a zero-mass measure");
    const double u = rng.uniform() * mass;
    if (kind_ == Kind::Atoms) {
      double acc = 0.0;
      for (const auto& [age, weight] : atoms_) {
        acc += weight;
        if (u <= acc) return age;
      }
      return atoms_.back().first;
    }
    // Piecewise-linear CDF inversion on the grid.
    double acc = 0.0;
    const std::size_t n = values_.size() - 1;
    for (std::size_t i = 0; i < n; ++i) {
      const double cell = 0.5 * spacing_ * (values_[i] + values_[i + 1]);
      if (u <= acc + cell && cell > 0.0) {
        const double frac = (u - acc) / cell;
        return spacing_ * (static_cast<double>(i) + frac);
      }
      acc += cell;
    }
    return spacing_ * static_cast<double>(n);
  }

  void validate_support(const ServiceDistribution& law) const {
    const double m = law.support_end();
    if (kind_ == Kind::Atoms) {
      for (const auto& [age, weight] : atoms_)
        if (weight > 0.0 && age >= m)
          throw ConfigError("nu0: atom at or beyond the service support endpoint");
    } else if (kind_ == Kind::Density) {
      const std::size_t n = values_.size() - 1;
      for (std::size_t i = 0; i <= n; ++i)
        if (values_[i] > 0.0 && spacing_ * static_cast<double>(i) >= m)
          throw ConfigError("nu0: density mass at or beyond the service support");
    }
  }

 private:
  enum class Kind { Empty, Atoms, Density };

  InitialMeasure() = default;

  Kind kind_ = Kind::Empty;
  std::vector<std::pair<double, double>> atoms_;
  std::vector<double> values_;
  double spacing_ = 0.0;
};

// Admissible fluid input data: cumulative arrivals, initial head count and
// initial age measure tied together by the non-idling complementarity
// 1 - <1,nu0> = [1 - x0]+.
struct FluidInput {
  FluidArrival arrival = FluidArrival(RateCurve::constant(0.0));
  double x0 = 0.0;
  InitialMeasure nu0 = InitialMeasure::empty();

  void validate(double tol = 1e-9) const {
    if (!(x0 >= 0.0)) throw ConfigError("fluid input: x0 must be >= 0");
    const double mass = nu0.total_mass();
    if (mass > 1.0 + tol)
      throw ConfigError("fluid input: nu0 mass exceeds 1");
    const double slack = std::abs((1.0 - mass) - std::max(1.0 - x0, 0.0));
    if (slack > tol)
      throw ConfigError(
          "fluid input: (E, x0, nu0) violates 1 - <1,nu0> = [1 - x0]+ "
          "(admissible-input condition)");
  }
};

// Service-entry policy. The default reproduces the non-idling dynamics; a
// capped policy never lets the entry rate exceed the cap, so the system may
// idle while work waits.
struct EntryPolicy {
  static EntryPolicy non_idling() { return EntryPolicy{}; }
  static EntryPolicy capped(RateCurve cap) {
    EntryPolicy p;
    p.cap = std::move(cap);
    p.is_capped = true;
    return p;
  }

  bool is_capped = false;
  RateCurve cap = RateCurve::infinite();
};

struct SolveOptions {
  double horizon = 10.0;
  double step = 1e-3;
  EntryPolicy policy = EntryPolicy::non_idling();
  // Half-width of the critical band around x = 1; defaults to 2*step.
  double regime_band = -1.0;
  // Residual law of the initial cohort, when different from the service law.
  std::optional<ServiceDistribution> initial_residual_law;
};

class FluidSolution;

FluidSolution solve(const FluidInput& input, const ServiceDistribution& dist,
                    const SolveOptions& options);

// Deterministic solution of the fluid dynamics on a uniform time grid. The
// age measure is never stored; every measure functional is reconstructed
// from (nu0, kappa) through the survival-ratio representation
//   <f, nu_t> = int f(x+t) S(x+t)/S(x) nu0(dx)
//             + int_0^t f(t-s) (1-G(t-s)) kappa(s) ds.
class FluidSolution {
 public:
  double step() const { return dt_; }
  double horizon() const { return dt_ * static_cast<double>(steps_); }
  std::size_t grid_size() const { return kappa_.size(); }
  double time_at(std::size_t k) const { return dt_ * static_cast<double>(k); }

  const std::vector<double>& entry_rate() const { return kappa_; }      // kappa
  const std::vector<double>& entered() const { return entered_; }       // K
  const std::vector<double>& in_system() const { return in_system_; }   // X
  const std::vector<double>& departed() const { return departed_; }     // D
  const std::vector<double>& service_mass() const { return mass_; }     // <1,nu>
  const FluidInput& input() const { return input_; }
  const ServiceDistribution& service() const { return dist_; }

  double entered_at(double t) const { return interp(entered_, t); }
  double in_system_at(double t) const { return interp(in_system_, t); }
  double departed_at(double t) const { return interp(departed_, t); }
  double mass_at(double t) const { return interp(mass_, t); }

  // <f, nu_t> for bounded f. The survival kernels short-circuit at zero, so
  // f is never evaluated where the kernel already vanishes (e.g. beyond the
  // support endpoint).
  double eval_measure(double t, const std::function<double(double)>& f) const {
    require_time(t);
    const double init = initial_term(t, f);
    return init + entry_term(t, f);
  }

  // <1_{[0,a]}, nu_t>, with the integration limits clipped exactly instead
  // of sampling the discontinuous indicator.
  double measure_cdf(double t, double a) const {
    require_time(t);
    if (!(a >= 0.0)) throw std::domain_error("measure_cdf: negative age bound");
    double acc = 0.0;
    if (a >= t) {
      acc += input_.nu0.integrate_below(
          a - t, [&](double x) { return survival_ratio(x, t); });
    }
    acc += entry_term_clipped(t, std::max(t - a, 0.0),
                              [](double) { return 1.0; });
    return acc;
  }

  struct Functional {
    double value = 0.0;
    bool beyond_horizon = false;
  };

  // Virtual waiting time w(t) = Kinv(E(t)) - t via monotone inversion of K
  // on the grid.
  Functional waiting_time(double t) const {
    require_time(t);
    require_strictly_increasing(entered_, "entry process K");
    return invert_minus_t(entered_, t);
  }

  // Sojourn time v(t) = Dinv(E(t)) - t.
  Functional sojourn_time(double t) const {
    require_time(t);
    require_strictly_increasing(departed_, "departure process D");
    return invert_minus_t(departed_, t);
  }

  // Fluid workload U(t) = <m, nu_t> + (X(t) - 1)+ with m the mean residual
  // life of the service law.
  double workload(double t) const {
    require_time(t);
    const double measure_part = eval_measure(
        t, [&](double x) { return dist_.mean_residual(x); });
    return measure_part + std::max(in_system_at(t) - 1.0, 0.0);
  }

  // <f, eta_t> for the residual-service measure eta: the inner integral
  // r(x) = int_0^support g(x+u) f(u) du / (1-G(x)) is evaluated by
  // quadrature and then integrated against nu_t. f must vanish beyond
  // f_support.
  double residual_measure_integral(double t, const std::function<double(double)>& f,
                                   double f_support) const {
    require_time(t);
    if (!(f_support > 0.0))
      throw std::domain_error("residual measure: f_support must be positive");
    const double du = std::min(dt_, f_support / 512.0);
    const int cells = static_cast<int>(std::ceil(f_support / du));
    auto inner = [&](double x) {
      // int_0^{f_support} g(x+u) f(u) du / S(x), in log space against S(x).
      const double log_sx = dist_.log_survival(x);
      double acc = 0.0;
      const double h = f_support / cells;
      for (int i = 0; i <= cells; ++i) {
        const double u = h * static_cast<double>(i);
        const double w = (i == 0 || i == cells) ? 0.5 : 1.0;
        const double lg = dist_.log_density(x + u);
        if (lg == -std::numeric_limits<double>::infinity()) continue;
        acc += w * h * std::exp(lg - log_sx) * f(u);
      }
      return acc;
    };
    return eval_measure(t, inner);
  }

  // A-posteriori residual of the implicit Volterra equation satisfied by K:
  //   K(t) = <1,nu_t> - <1,nu_0> + int (G(x+t)-G(x))/(1-G(x)) nu0(dx)
  //        + int_0^t g(t-s) K(s) ds.
  double volterra_residual() const {
    std::vector<double> g_grid(grid_size());
    for (std::size_t j = 0; j < grid_size(); ++j)
      g_grid[j] = dist_.density(time_at(j));
    double worst = 0.0;
    for (std::size_t k = 0; k < grid_size(); ++k) {
      const double t = time_at(k);
      const double initial_surviving = initial_term(t, [](double) { return 1.0; });
      const double conv = convolve_with_density(g_grid, entered_, k);
      const double rhs = mass_[k] - initial_surviving + conv;
      worst = std::max(worst, std::abs(entered_[k] - rhs));
    }
    return worst;
  }

  // Grid-level checks of the defining relations; tolerance is expressed as
  // a multiple of the step. Returns an empty string when all hold.
  std::string check_invariants(double tol_steps = 5.0) const {
    const double tol = tol_steps * dt_;
    const double mass0 = mass_.front();
    for (std::size_t k = 0; k < grid_size(); ++k) {
      const double t = time_at(k);
      if (k > 0 && entered_[k] < entered_[k - 1] - 1e-12)
        return fail(t, "K must be nondecreasing");
      if (k > 0 && departed_[k] < departed_[k - 1] - 1e-12)
        return fail(t, "D must be nondecreasing");
      if (mass_[k] < -1e-12 || mass_[k] > 1.0 + tol)
        return fail(t, "<1,nu> must stay in [0,1]");
      if (std::abs((1.0 - mass_[k]) - std::max(1.0 - in_system_[k], 0.0)) > tol)
        return fail(t, "non-idling 1 - <1,nu> = [1 - X]+");
      const double mass_balance =
          input_.x0 + input_.arrival.cumulative(t) - departed_[k];
      if (std::abs(in_system_[k] - mass_balance) > tol)
        return fail(t, "mass balance X = x0 + E - D");
      if (std::abs(entered_[k] - (mass_[k] - mass0 + departed_[k])) > tol)
        return fail(t, "entry balance K = <1,nu> - <1,nu0> + D");
    }
    if (departed_.front() != 0.0) return fail(0.0, "D(0) = 0");
    return {};
  }

  void export_csv(std::ostream& os) const {
    os << "t,kappa,K,X,D,nu_mass\n";
    char buf[224];
    for (std::size_t k = 0; k < grid_size(); ++k) {
      std::snprintf(buf, sizeof buf, "%.12g,%.12g,%.12g,%.12g,%.12g,%.12g\n",
                    time_at(k), kappa_[k], entered_[k], in_system_[k],
                    departed_[k], mass_[k]);
      os << buf;
    }
  }

  void export_cdf_snapshots(std::ostream& os, const std::vector<double>& times,
                            double max_age, int cells) const {
    os << "t,a,cdf\n";
    char buf[128];
    for (double t : times) {
      for (int i = 0; i <= cells; ++i) {
        const double a = max_age * i / cells;
        std::snprintf(buf, sizeof buf, "%.12g,%.12g,%.12g\n", t, a,
                      measure_cdf(t, a));
        os << buf;
      }
    }
  }

 private:
  friend FluidSolution solve(const FluidInput&, const ServiceDistribution&,
                             const SolveOptions&);

  FluidSolution(FluidInput input, ServiceDistribution dist,
                std::optional<ServiceDistribution> initial_law, double dt,
                std::size_t steps)
      : input_(std::move(input)),
        dist_(std::move(dist)),
        initial_law_(std::move(initial_law)),
        dt_(dt),
        steps_(steps) {}

  const ServiceDistribution& initial_cohort_law() const {
    return initial_law_ ? *initial_law_ : dist_;
  }

  double survival_ratio(double x, double t) const {
    const ServiceDistribution& law = initial_cohort_law();
    if (x + t >= law.support_end()) return 0.0;
    return std::exp(law.log_survival(x + t) - law.log_survival(x));
  }

  double departure_kernel(double x, double t) const {
    // g(x+t)/(1-G(x)) for the initial cohort.
    const ServiceDistribution& law = initial_cohort_law();
    const double lg = law.log_density(x + t);
    if (lg == -std::numeric_limits<double>::infinity()) return 0.0;
    return std::exp(lg - law.log_survival(x));
  }

  template <class F>
  double initial_term(double t, F&& f) const {
    return input_.nu0.integrate([&](double x) {
      const double ratio = survival_ratio(x, t);
      return ratio > 0.0 ? ratio * f(x + t) : 0.0;
    });
  }

  // int_0^t f(t-s)(1-G(t-s)) kappa(s) ds by trapezoid on the kappa grid,
  // with a partial final cell when t is off the grid.
  template <class F>
  double entry_term(double t, F&& f) const {
    return entry_term_clipped(t, 0.0, std::forward<F>(f));
  }

  template <class F>
  double entry_term_clipped(double t, double s_lo, F&& f) const {
    if (t <= s_lo) return 0.0;
    auto kernel = [&](double age) {
      age = std::max(age, 0.0);
      if (age >= dist_.support_end()) return 0.0;
      const double s = dist_.survival(age);
      return s > 0.0 ? s * f(age) : 0.0;
    };
    auto kappa_at = [&](double s) {
      const double pos = s / dt_;
      const std::size_t i =
          std::min(static_cast<std::size_t>(pos), kappa_.size() - 2);
      const double frac = pos - static_cast<double>(i);
      return kappa_[i] * (1.0 - frac) + kappa_[i + 1] * frac;
    };
    const std::size_t k_hi =
        std::min(static_cast<std::size_t>(t / dt_ + 1e-9), kappa_.size() - 1);
    const std::size_t k_lo =
        static_cast<std::size_t>(std::ceil(s_lo / dt_ - 1e-9));
    if (k_lo > k_hi) {  // range inside a single grid cell
      return 0.5 * (t - s_lo) *
             (kernel(t - s_lo) * kappa_at(s_lo) + kernel(0.0) * kappa_at(t));
    }
    double acc = 0.0;
    if (k_lo < k_hi) {
      for (std::size_t i = k_lo; i <= k_hi; ++i) {
        const double w = (i == k_lo || i == k_hi) ? 0.5 : 1.0;
        acc += w * dt_ * kernel(t - time_at(i)) * kappa_[i];
      }
    }
    const double lo_node = time_at(k_lo);
    if (s_lo < lo_node - 1e-12 * std::max(1.0, lo_node)) {
      const double width = lo_node - s_lo;
      acc += 0.5 * width *
             (kernel(t - s_lo) * kappa_at(s_lo) +
              kernel(t - lo_node) * kappa_at(lo_node));
    }
    const double hi_node = time_at(k_hi);
    if (t > hi_node + 1e-12 * std::max(1.0, t)) {
      const double width = t - hi_node;
      acc += 0.5 * width *
             (kernel(t - hi_node) * kappa_at(hi_node) + kernel(0.0) * kappa_at(t));
    }
    return acc;
  }

  // Trapezoid of g(t_k - s) values(s) ds over the grid, with the
  // product-integration cell at the kernel origin when g(0) is infinite.
  double convolve_with_density(const std::vector<double>& g_grid,
                               const std::vector<double>& values,
                               std::size_t k) const {
    if (k == 0) return 0.0;
    const bool singular = !std::isfinite(g_grid[0]);
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 <= k; ++i) {
      const double w = (i == 0) ? 0.5 : 1.0;
      acc += w * dt_ * g_grid[k - i] * values[i];
    }
    if (singular) {
      const double i0 = dist_.cdf(dt_);
      const double i1 = dist_.equilibrium_cdf(dt_) - dt_ * dist_.survival(dt_);
      acc -= 0.5 * dt_ * g_grid[1] * values[k - 1];
      acc += (i1 / dt_) * values[k - 1] + (i0 - i1 / dt_) * values[k];
    } else {
      acc += 0.5 * dt_ * g_grid[0] * values[k];
    }
    return acc;
  }

  double interp(const std::vector<double>& xs, double t) const {
    require_time(t);
    const double pos = t / dt_;
    const std::size_t i = std::min(static_cast<std::size_t>(pos), xs.size() - 2);
    const double frac = pos - static_cast<double>(i);
    return xs[i] * (1.0 - frac) + xs[i + 1] * frac;
  }

  void require_time(double t) const {
    if (!(t >= 0.0) || t > horizon() * (1.0 + 1e-12))
      throw std::domain_error("fluid solution queried outside [0, T]");
  }

  void require_strictly_increasing(const std::vector<double>& xs,
                                   const char* name) const {
    const double min_slope = 1e-8;
    const double floor_rate = input_.arrival.curve().min_rate(0.0, horizon());
    if (!(floor_rate > 0.0))
      throw PreconditionError(
          std::string("arrival rate vanishes inside the horizon; ") + name +
          " inversion requires a strictly increasing E");
    for (std::size_t k = 0; k + 1 < xs.size(); ++k) {
      if ((xs[k + 1] - xs[k]) / dt_ < min_slope) {
        char buf[160];
        std::snprintf(buf, sizeof buf,
                      "%s is flat on [%.6g, %.6g]; inversion undefined", name,
                      time_at(k), time_at(k + 1));
        throw PreconditionError(buf);
      }
    }
  }

  Functional invert_minus_t(const std::vector<double>& xs, double t) const {
    const double target = input_.arrival.cumulative(t);
    if (target > xs.back()) return Functional{0.0, true};
    const auto it = std::lower_bound(xs.begin(), xs.end(), target);
    const std::size_t k = static_cast<std::size_t>(it - xs.begin());
    double s;
    if (k == 0) {
      s = 0.0;
    } else {
      const double frac = (target - xs[k - 1]) / (xs[k] - xs[k - 1]);
      s = time_at(k - 1) + dt_ * frac;
    }
    return Functional{std::max(s - t, 0.0), false};
  }

  static std::string fail(double t, const char* what) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s violated at t=%.9g", what, t);
    return buf;
  }

  FluidInput input_;
  ServiceDistribution dist_;
  std::optional<ServiceDistribution> initial_law_;
  double dt_ = 0.0;
  std::size_t steps_ = 0;

  std::vector<double> kappa_;
  std::vector<double> entered_;
  std::vector<double> in_system_;
  std::vector<double> departed_;
  std::vector<double> mass_;
};

// Time-stepper for the fluid dynamics. Entry-rate regimes follow the a.e.
// characterization of the entry density: lambda below capacity, the
// departure rate above it, and their minimum inside a band around x = 1.
// With a capped policy the regime rate is additionally clamped to the cap,
// and the feasibility <1,nu> <= X is verified along the trajectory.
inline FluidSolution solve(const FluidInput& input, const ServiceDistribution& dist,
                           const SolveOptions& options) {
  input.validate();
  if (!(options.step > 0.0)) throw ConfigError("fluid solve: step must be > 0");
  if (options.step >= options.horizon)
    throw ConfigError("fluid solve: step must be smaller than the horizon");

  const ServiceDistribution& initial_law =
      options.initial_residual_law ? *options.initial_residual_law : dist;
  input.nu0.validate_support(initial_law);
  if (input.nu0.is_atoms() && !initial_law.hazard_continuous())
    throw ConfigError(
        "fluid solve: atomic nu0 requires a continuous hazard rate; use a "
        "density representation instead");

  const double dt = options.step;
  const std::size_t steps =
      static_cast<std::size_t>(std::llround(options.horizon / dt));
  const double band = options.regime_band > 0.0 ? options.regime_band : 2.0 * dt;

  FluidSolution sol(input, dist, options.initial_residual_law, dt, steps);
  const std::size_t count = steps + 1;
  sol.kappa_.resize(count);
  sol.entered_.resize(count);
  sol.in_system_.resize(count);
  sol.departed_.resize(count);
  sol.mass_.resize(count);

  // Precomputed kernels on the time grid.
  std::vector<double> g_grid(count), s_grid(count), idr(count);
  for (std::size_t k = 0; k < count; ++k) {
    const double t = sol.time_at(k);
    g_grid[k] = dist.density(t);
    s_grid[k] = dist.survival(t);
    idr[k] = input.nu0.integrate(
        [&](double x) { return sol.departure_kernel(x, t); });
  }
  const bool singular = !std::isfinite(g_grid[0]);
  // Coefficients of the convolution cell adjacent to the kernel origin.
  double c_self, c_prev_extra;
  if (singular) {
    const double i0 = dist.cdf(dt);
    const double i1 = dist.equilibrium_cdf(dt) - dt * dist.survival(dt);
    c_self = i0 - i1 / dt;
    c_prev_extra = i1 / dt - 0.5 * dt * g_grid[1];
  } else {
    c_self = 0.5 * dt * g_grid[0];
    c_prev_extra = 0.0;
  }

  const RateCurve& lambda = input.arrival.curve();
  const double mass0 = input.nu0.total_mass();
  const double initial_backlog = input.x0 - mass0;
  double prev_x = input.x0;
  double prev_mass = mass0;
  double prev_kappa = 0.0;
  double prev_d_rate = 0.0;

  for (std::size_t k = 0; k < count; ++k) {
    const double t = sol.time_at(k);
    const double lam = lambda.rate(t);

    // Explicit part of the departure rate: initial cohort plus the
    // convolution of g with kappa over [0, t_{k-1}].
    double base = idr[k];
    if (k >= 1) {
      for (std::size_t i = 0; i + 1 <= k; ++i) {
        const double w = (i == 0) ? 0.5 : 1.0;
        base += w * dt * g_grid[k - i] * sol.kappa_[i];
      }
      base += c_prev_extra * sol.kappa_[k - 1];
    }
    const double self_coeff = k >= 1 ? c_self : 0.0;

    double kappa, d_rate;
    const double cap =
        options.policy.is_capped ? options.policy.cap.rate(t)
                                 : std::numeric_limits<double>::infinity();
    if (std::isfinite(cap)) {
      // Capped policy: enter at the cap whenever backlog or fresh arrivals
      // supply mass, but never above what eligibility and the service
      // capacity allow in one step.
      const double backlog =
          std::max(initial_backlog + input.arrival.cumulative(t) -
                       (k >= 1 ? sol.entered_[k - 1] : 0.0),
                   0.0);
      const double eligible_rate = lam + backlog / dt;
      const double d_estimate = base + self_coeff * prev_kappa;
      const double capacity_rate =
          d_estimate + std::max(1.0 - prev_mass, 0.0) / dt;
      kappa = std::max(std::min({cap, eligible_rate, capacity_rate}), 0.0);
      d_rate = base + self_coeff * kappa;
    } else if (prev_x > 1.0 + band) {
      d_rate = base / (1.0 - self_coeff);
      kappa = d_rate;
    } else if (prev_x < 1.0 - band) {
      kappa = lam;
      d_rate = base + self_coeff * kappa;
    } else {
      // Critical band: the entry rate is lambda and the departure rate,
      // whichever binds, resolved consistently with the implicit cell.
      const double d_with_lambda = base + self_coeff * lam;
      if (d_with_lambda >= lam) {
        kappa = lam;
        d_rate = d_with_lambda;
      } else {
        d_rate = base / (1.0 - self_coeff);
        kappa = d_rate;
      }
    }

    if (k == 0) {
      sol.kappa_[0] = kappa;
      sol.entered_[0] = 0.0;
      sol.departed_[0] = 0.0;
      sol.in_system_[0] = input.x0;
      sol.mass_[0] = mass0;
    } else {
      sol.kappa_[k] = kappa;
      sol.entered_[k] =
          sol.entered_[k - 1] + 0.5 * dt * (sol.kappa_[k - 1] + kappa);
      sol.departed_[k] = sol.departed_[k - 1] + 0.5 * dt * (prev_d_rate + d_rate);
      sol.in_system_[k] = input.x0 + input.arrival.cumulative(t) - sol.departed_[k];
      // Total in-service mass from the survival representation with f = 1.
      double surv = sol.initial_term(t, [](double) { return 1.0; });
      for (std::size_t i = 0; i <= k; ++i) {
        const double w = (i == 0 || i == k) ? 0.5 : 1.0;
        surv += w * dt * s_grid[k - i] * sol.kappa_[i];
      }
      sol.mass_[k] = surv;
    }

    if (options.policy.is_capped &&
        sol.mass_[k] > sol.in_system_[k] + std::max(5.0 * dt, 1e-9)) {
      char buf[160];
      std::snprintf(buf, sizeof buf,
                    "capped policy violates <1,nu> <= X at t=%.9g", t);
      throw PreconditionError(buf);
    }

    prev_x = sol.in_system_[k];
    prev_mass = sol.mass_[k];
    prev_kappa = kappa;
    prev_d_rate = d_rate;
  }
  return sol;
}

// First time the start-empty fluid system exhausts its service capacity:
// the root of int_0^t (1 - G(t-s)) lambda(s) ds = 1. The integral is exact
// for piecewise-constant rates via the equilibrium CDF; the first crossing
// is bracketed by a coarse scan and then bisected. Returns +inf when the
// supremum stays below 1 and the terminal rate is at most 1.
inline double tau1(const FluidArrival& arrival, const ServiceDistribution& dist,
                   double scan_limit = 64.0, double tol = 1e-9) {
  const RateCurve& curve = arrival.curve();
  auto filled = [&](double t) {
    double acc = 0.0;
    const auto& breaks = curve.breakpoints();
    const auto& values = curve.values();
    for (std::size_t i = 0; i < breaks.size(); ++i) {
      const double lo = breaks[i];
      if (lo >= t) break;
      const double hi =
          i + 1 < breaks.size() ? std::min(breaks[i + 1], t) : t;
      if (hi <= lo || values[i] <= 0.0) continue;
      acc += values[i] * (dist.equilibrium_cdf(t - lo) - dist.equilibrium_cdf(t - hi));
    }
    return acc;
  };

  // A genuine crossing strictly exceeds 1; an asymptotic approach (e.g.
  // constant lambda = 1) rounds to 1 in floating point without ever
  // exceeding it, and must map to the +inf sentinel.
  constexpr double kStrictlyAbove = 1.0 + 1e-9;
  double limit = scan_limit;
  for (int round = 0; round < 12; ++round) {
    const int cells = static_cast<int>(std::ceil(limit / 0.01));
    double prev_t = 0.0;
    for (int i = 1; i <= cells; ++i) {
      const double t = limit * i / cells;
      if (filled(t) >= kStrictlyAbove) {
        double lo = prev_t, hi = t;
        while (hi - lo > tol) {
          const double mid = 0.5 * (lo + hi);
          (filled(mid) >= 1.0 ? hi : lo) = mid;
        }
        return 0.5 * (lo + hi);
      }
      prev_t = t;
    }
    if (curve.final_rate() <= 1.0) return std::numeric_limits<double>::infinity();
    limit *= 2.0;
  }
  return std::numeric_limits<double>::infinity();
}

// Departure-rate contribution of the initial cohort at time t (standalone
// counterpart of the kernel used inside solve).
inline double initial_departure_rate(const InitialMeasure& nu0,
                                     const ServiceDistribution& dist, double t) {
  if (!(t >= 0.0)) throw std::domain_error("initial_departure_rate: negative time");
  return nu0.integrate([&](double x) {
    const double lg = dist.log_density(x + t);
    if (lg == -std::numeric_limits<double>::infinity()) return 0.0;
    return std::exp(lg - dist.log_survival(x));
  });
}

// int f(x+t) (1-G(x+t))/(1-G(x)) nu0(dx), the surviving-initial-mass term.
inline double initial_survival_integral(const InitialMeasure& nu0,
                                        const ServiceDistribution& dist, double t,
                                        const std::function<double(double)>& f) {
  if (!(t >= 0.0)) throw std::domain_error("initial_survival_integral: negative time");
  return nu0.integrate([&](double x) {
    if (x + t >= dist.support_end()) return 0.0;
    const double ratio = std::exp(dist.log_survival(x + t) - dist.log_survival(x));
    return ratio > 0.0 ? ratio * f(x + t) : 0.0;
  });
}

}  // namespace fluidq
