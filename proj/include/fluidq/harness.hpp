#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "fluidq/arrivals.hpp"
#include "fluidq/distribution.hpp"
#include "fluidq/errors.hpp"
#include "fluidq/fluid.hpp"
#include "fluidq/report.hpp"
#include "fluidq/rng.hpp"
#include "fluidq/simulation.hpp"

namespace fluidq {

namespace detail {

// Pure function of (master, tags...): replication streams and seeds do not
// depend on scheduling order.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a,
                                 std::uint64_t b, std::uint64_t c) {
  std::uint64_t s = master;
  s ^= 0x9e3779b97f4a7c15ULL * (a + 1);
  s = splitmix64(s);
  s ^= 0xa0761d6478bd642fULL * (b + 1);
  s = splitmix64(s);
  s ^= 0xe7037ed1a0b428dbULL * (c + 1);
  return splitmix64(s);
}

// Runs fn(0..count-1), each exactly once, on up to `threads` workers.
// Callers store results by index, so aggregation order is deterministic.
template <class Fn>
void run_replications(int count, int threads, Fn&& fn) {
  if (threads <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const int workers = std::min(threads, count);
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

inline int default_threads() {
  const unsigned hw = std::thread::hardware_concurrency();
  return static_cast<int>(std::min(hw == 0 ? 1u : hw, 8u));
}

class Stopwatch {
 public:
  long elapsed_ms() const {
    return static_cast<long>(
        std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::steady_clock::now() - start_)
            .count());
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

}  // namespace detail

// Template for simulation-vs-fluid convergence experiments. The scaled
// initial state (x0 fraction, age measure) is N-free so the whole ladder
// shares one fluid reference; per-N simulator configs realize it by
// drawing floor(N x0) customers and sampling their ages from nu0.
struct ExperimentSpec {
  ArrivalModel arrival = ArrivalModel::poisson(RateCurve::constant(1.0));
  ServiceDistribution service = ServiceDistribution::exponential();
  double x0_fraction = 0.0;
  InitialMeasure nu0 = InitialMeasure::empty();
  double horizon = 10.0;
  std::vector<int> n_ladder = {25, 100, 400};
  int replications = 20;
  double grid_step = 0.05;
  std::vector<double> checkpoints = {};
  double fluid_step = 1e-3;
  std::uint64_t master_seed = 1;
  int threads = 0;  // 0: hardware default

  // Optional pass thresholds applied to the largest ladder entry.
  std::optional<double> max_final_x_error;
  std::optional<double> max_final_wait_deviation;

  void validate() const {
    if (n_ladder.empty()) throw ConfigError("experiment: N ladder is empty");
    for (std::size_t i = 1; i < n_ladder.size(); ++i)
      if (n_ladder[i] <= n_ladder[i - 1])
        throw ConfigError("experiment: N ladder must be strictly increasing");
    if (replications < 1) throw ConfigError("experiment: replications must be >= 1");
    if (!(grid_step > 0.0) || grid_step >= horizon)
      throw ConfigError("experiment: grid step must lie in (0, T)");
    fluid_input().validate();
  }

  FluidInput fluid_input() const {
    FluidInput in;
    in.arrival = arrival.fluid_limit();
    in.x0 = x0_fraction;
    in.nu0 = nu0;
    return in;
  }

  SimConfig sim_config(int n, int replication) const {
    SimConfig cfg;
    cfg.num_servers = n;
    cfg.arrival = arrival;
    cfg.service = service;
    cfg.horizon = horizon;
    cfg.initial_count =
        static_cast<long>(std::floor(x0_fraction * static_cast<double>(n) + 1e-9));
    cfg.seed = detail::derive_seed(master_seed, static_cast<std::uint64_t>(n),
                                   static_cast<std::uint64_t>(replication), 0);
    const long in_service = cfg.initially_in_service();
    if (in_service > 0) {
      RandomStream ages(detail::derive_seed(master_seed,
                                            static_cast<std::uint64_t>(n),
                                            static_cast<std::uint64_t>(replication),
                                            1));
      cfg.initial_ages.reserve(static_cast<std::size_t>(in_service));
      for (long j = 0; j < in_service; ++j)
        cfg.initial_ages.push_back(nu0.sample(ages));
    }
    return cfg;
  }

  std::vector<double> grid() const {
    std::vector<double> g;
    for (double t = 0.0; t <= horizon + 1e-12; t += grid_step)
      g.push_back(std::min(t, horizon));
    return g;
  }

  int effective_threads() const {
    return threads > 0 ? threads : detail::default_threads();
  }
};

namespace detail {

inline void require_clean_path(const SimulationPath& path) {
  const std::string violation = path.check_invariants();
  if (!violation.empty())
    throw std::logic_error("simulation invariant violated: " + violation);
}

inline std::string group_label(int n) { return "N=" + std::to_string(n); }

}  // namespace detail

// Functional-LLN experiment: per ladder entry, the mean sup-distance of the
// scaled simulated paths to the shared fluid reference.
inline ErrorReport lln_experiment(const ExperimentSpec& spec) {
  spec.validate();
  const detail::Stopwatch timer;

  SolveOptions fluid_opts;
  fluid_opts.horizon = spec.horizon;
  fluid_opts.step = spec.fluid_step;
  const FluidSolution fluid = solve(spec.fluid_input(), spec.service, fluid_opts);

  const std::vector<double> grid = spec.grid();
  std::vector<double> fluid_x(grid.size()), fluid_k(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    fluid_x[i] = fluid.in_system_at(grid[i]);
    fluid_k[i] = fluid.entered_at(grid[i]);
  }
  const std::vector<double> checkpoints = spec.checkpoints;
  const double age_max = spec.nu0.max_support() + spec.horizon;

  ErrorReport report;
  report.experiment = "lln";
  report.master_seed = spec.master_seed;
  report.params = {{"arrival", spec.arrival.spec_string()},
                   {"service", spec.service.spec_string()},
                   {"x0", spec.x0_fraction},
                   {"T", spec.horizon},
                   {"replications", spec.replications},
                   {"fluid_step", spec.fluid_step}};
  report.series.push_back({"fluid_X", {}});
  for (std::size_t i = 0; i < grid.size(); ++i)
    report.series[0].points.emplace_back(grid[i], fluid_x[i]);

  std::vector<double> mean_x_errors;
  for (int n : spec.n_ladder) {
    std::vector<double> sup_x(spec.replications), sup_k(spec.replications),
        sup_kolmogorov(spec.replications);
    std::vector<std::vector<double>> abs_err(
        static_cast<std::size_t>(spec.replications));
    detail::run_replications(
        spec.replications, spec.effective_threads(), [&](int rep) {
          const SimulationPath path = simulate(spec.sim_config(n, rep));
          detail::require_clean_path(path);
          const auto scaled = path.scaled(grid);
          double dx = 0.0, dk = 0.0;
          auto& errs = abs_err[static_cast<std::size_t>(rep)];
          errs.resize(grid.size());
          for (std::size_t i = 0; i < grid.size(); ++i) {
            errs[i] = std::abs(scaled.in_system[i] - fluid_x[i]);
            dx = std::max(dx, errs[i]);
            dk = std::max(dk, std::abs(scaled.entries[i] - fluid_k[i]));
          }
          double dkol = 0.0;
          for (double t : checkpoints) {
            const AgeMeasure measure = path.age_measure_at(t);
            for (int ai = 0; ai <= 100; ++ai) {
              const double a = age_max * ai / 100.0;
              const double empirical =
                  static_cast<double>(measure.count_leq(a)) / n;
              dkol = std::max(dkol,
                              std::abs(empirical - fluid.measure_cdf(t, a)));
            }
          }
          sup_x[static_cast<std::size_t>(rep)] = dx;
          sup_k[static_cast<std::size_t>(rep)] = dk;
          sup_kolmogorov[static_cast<std::size_t>(rep)] = dkol;
        });

    ErrorReport::Group group;
    group.label = detail::group_label(n);
    group.metrics.emplace_back("sup_X_error", summarize(sup_x));
    group.metrics.emplace_back("sup_K_error", summarize(sup_k));
    if (!checkpoints.empty())
      group.metrics.emplace_back("sup_kolmogorov", summarize(sup_kolmogorov));
    report.groups.push_back(std::move(group));
    mean_x_errors.push_back(summarize(sup_x).mean);

    ErrorReport::Series err_series;
    err_series.name = "mean_abs_X_error_" + detail::group_label(n);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      double acc = 0.0;
      for (const auto& errs : abs_err) acc += errs[i];
      err_series.points.emplace_back(grid[i],
                                     acc / static_cast<double>(spec.replications));
    }
    report.series.push_back(std::move(err_series));
  }

  if (spec.n_ladder.size() >= 2) {
    bool decreasing = true;
    for (std::size_t i = 1; i < mean_x_errors.size(); ++i)
      decreasing = decreasing && mean_x_errors[i] < mean_x_errors[i - 1];
    report.verdicts.emplace_back("x_error_strictly_decreasing", decreasing);
  } else {
    report.notes.push_back("single-entry ladder: no monotonicity verdict");
  }
  if (spec.max_final_x_error)
    report.verdicts.emplace_back("final_x_error_within_threshold",
                                 mean_x_errors.back() <= *spec.max_final_x_error);
  if (!spec.arrival.within_markov_hypotheses())
    report.notes.push_back("arrival stream outside the residual-Markov hypotheses");
  report.runtime_ms = timer.elapsed_ms();
  return report;
}

// Long-time behaviour of the fluid age profile. For lambda >= 1 (and for
// subcritical start-empty ramps) the profile is compared against
// (lambda ^ 1) times the equilibrium measure at each checkpoint; subcritical
// start-empty runs additionally assert the monotone ramp-up.
struct EquilibriumExperimentConfig {
  ServiceDistribution service = ServiceDistribution::exponential();
  double lambda = 1.0;
  double x0 = 0.0;
  InitialMeasure nu0 = InitialMeasure::empty();
  std::vector<double> checkpoints = {10.0, 20.0, 40.0};
  double fluid_step = 5e-3;
  double tolerance = 0.02;
};

inline ErrorReport equilibrium_experiment(const EquilibriumExperimentConfig& cfg) {
  const detail::Stopwatch timer;
  if (cfg.checkpoints.empty())
    throw ConfigError("equilibrium experiment: no checkpoints");
  if (cfg.lambda < 1.0 && !cfg.nu0.is_empty())
    throw PreconditionError(
        "equilibrium experiment with lambda < 1 requires a start-empty "
        "system (long-time theorem hypothesis)");

  FluidInput in;
  in.arrival = FluidArrival(RateCurve::constant(cfg.lambda));
  in.x0 = cfg.x0;
  in.nu0 = cfg.nu0;
  SolveOptions opts;
  opts.horizon = *std::max_element(cfg.checkpoints.begin(), cfg.checkpoints.end());
  opts.step = cfg.fluid_step;
  const FluidSolution sol = solve(in, cfg.service, opts);

  const double target_mass = std::min(cfg.lambda, 1.0);
  const double age_max =
      std::min(cfg.service.support_end(), cfg.nu0.max_support() + opts.horizon);

  ErrorReport report;
  report.experiment = "equilibrium";
  report.params = {{"service", cfg.service.spec_string()},
                   {"lambda", cfg.lambda},
                   {"x0", cfg.x0},
                   {"fluid_step", cfg.fluid_step},
                   {"tolerance", cfg.tolerance}};

  std::vector<double> distances;
  for (double t : cfg.checkpoints) {
    double sup = std::abs(sol.mass_at(t) - target_mass);
    for (int ai = 1; ai <= 400; ++ai) {
      const double a = age_max * ai / 400.0;
      sup = std::max(sup, std::abs(sol.measure_cdf(t, a) -
                                   target_mass * cfg.service.equilibrium_cdf(a)));
    }
    distances.push_back(sup);
    ErrorReport::Group group;
    char label[48];
    std::snprintf(label, sizeof label, "t=%g", t);
    group.label = label;
    group.metrics.emplace_back("sup_cdf_distance", MetricStats{sup, 0.0, 1});
    report.groups.push_back(std::move(group));
    report.series.push_back({std::string("age_cdf_") + label, {}});
    for (int ai = 0; ai <= 100; ++ai) {
      const double a = age_max * ai / 100.0;
      report.series.back().points.emplace_back(a, sol.measure_cdf(t, a));
    }
  }

  // Distances at and near the floor set by the critical band wobble are
  // noise; compare with an absolute slack of that order.
  const double slack = std::max(1e-6, cfg.fluid_step);
  bool nonincreasing = true;
  for (std::size_t i = 1; i < distances.size(); ++i)
    nonincreasing = nonincreasing && distances[i] <= distances[i - 1] + slack;
  report.verdicts.emplace_back("distance_nonincreasing", nonincreasing);
  report.verdicts.emplace_back("final_distance_within_tolerance",
                               distances.back() <= cfg.tolerance);

  if (cfg.lambda <= 1.0 && cfg.nu0.is_empty() && cfg.x0 == 0.0) {
    bool monotone = true;
    const double ramp_slack = 3.0 * cfg.fluid_step;
    const auto& x = sol.in_system();
    for (std::size_t k = 1; k < x.size(); ++k)
      monotone = monotone && x[k] >= x[k - 1] - ramp_slack;
    for (double a : {0.25 * age_max, 0.5 * age_max}) {
      double prev = 0.0;
      for (double t : cfg.checkpoints) {
        const double v = sol.measure_cdf(t, a);
        monotone = monotone && v >= prev - ramp_slack;
        prev = v;
      }
    }
    report.verdicts.emplace_back("ramp_up_monotone", monotone);
  }
  report.runtime_ms = timer.elapsed_ms();
  return report;
}

// Decay of the departure martingale: mean sup |D - A_1| per ladder entry and
// the decay ratio between the smallest and largest N.
inline ErrorReport martingale_experiment(const ExperimentSpec& spec,
                                         double ratio_lo = 2.0,
                                         double ratio_hi = 8.0) {
  spec.validate();
  const detail::Stopwatch timer;
  const std::vector<double> grid = spec.grid();

  ErrorReport report;
  report.experiment = "martingale";
  report.master_seed = spec.master_seed;
  report.params = {{"arrival", spec.arrival.spec_string()},
                   {"service", spec.service.spec_string()},
                   {"T", spec.horizon},
                   {"replications", spec.replications}};

  std::vector<double> means;
  for (int n : spec.n_ladder) {
    std::vector<double> sups(spec.replications);
    detail::run_replications(
        spec.replications, spec.effective_threads(), [&](int rep) {
          const SimulationPath path = simulate(spec.sim_config(n, rep));
          detail::require_clean_path(path);
          const auto scaled = path.scaled(grid);
          const auto compensator = path.compensator_path(grid);
          double sup = 0.0;
          for (std::size_t i = 0; i < grid.size(); ++i)
            sup = std::max(sup, std::abs(scaled.departures[i] - compensator[i]));
          sups[static_cast<std::size_t>(rep)] = sup;
        });
    ErrorReport::Group group;
    group.label = detail::group_label(n);
    group.metrics.emplace_back("sup_martingale", summarize(sups));
    report.groups.push_back(std::move(group));
    means.push_back(summarize(sups).mean);
  }

  if (spec.n_ladder.size() >= 2 && means.back() > 0.0) {
    const double ratio = means.front() / means.back();
    ErrorReport::Group group;
    group.label = "decay";
    group.metrics.emplace_back("ratio", MetricStats{ratio, 0.0, 1});
    report.groups.push_back(std::move(group));
    report.verdicts.emplace_back("decay_ratio_in_range",
                                 ratio >= ratio_lo && ratio <= ratio_hi);
  } else {
    report.notes.push_back("single-entry ladder: decay ratio undefined");
  }
  report.runtime_ms = timer.elapsed_ms();
  return report;
}

// Waiting-time limit: empirical waits of the E(t)-th arrival against the
// fluid inverse w(t) at a checkpoint time.
inline ErrorReport waiting_time_experiment(const ExperimentSpec& spec,
                                           double t_check) {
  spec.validate();
  const detail::Stopwatch timer;

  SolveOptions fluid_opts;
  fluid_opts.horizon = spec.horizon;
  fluid_opts.step = spec.fluid_step;
  const FluidSolution fluid = solve(spec.fluid_input(), spec.service, fluid_opts);
  const auto fluid_wait = fluid.waiting_time(t_check);  // throws if K is flat
  if (fluid_wait.beyond_horizon)
    throw PreconditionError(
        "waiting-time experiment: fluid wait extends beyond the horizon; "
        "increase T");

  ErrorReport report;
  report.experiment = "waiting_time";
  report.master_seed = spec.master_seed;
  report.params = {{"arrival", spec.arrival.spec_string()},
                   {"service", spec.service.spec_string()},
                   {"t_check", t_check},
                   {"fluid_wait", fluid_wait.value},
                   {"replications", spec.replications}};

  std::vector<double> deviations;
  for (int n : spec.n_ladder) {
    std::vector<double> waits(spec.replications,
                              std::numeric_limits<double>::quiet_NaN());
    std::atomic<int> censored{0};
    detail::run_replications(
        spec.replications, spec.effective_threads(), [&](int rep) {
          const SimulationPath path = simulate(spec.sim_config(n, rep));
          detail::require_clean_path(path);
          const long count_at_t = path.at(t_check).entered_system;
          if (count_at_t == 0) {
            waits[static_cast<std::size_t>(rep)] = 0.0;
            return;
          }
          // Arrival epoch of customer number count_at_t and the first time
          // K reaches that index.
          double arrival_epoch = -1.0, entry_epoch = -1.0;
          long arrivals_seen = 0;
          for (const auto& e : path.events()) {
            if (e.kind == EventKind::Arrival) {
              ++arrivals_seen;
              if (arrivals_seen == count_at_t) arrival_epoch = e.time;
            }
            if (entry_epoch < 0.0 && e.entered_service >= count_at_t)
              entry_epoch = e.time;
            if (arrival_epoch >= 0.0 && entry_epoch >= 0.0) break;
          }
          if (entry_epoch < 0.0) {
            ++censored;
            return;  // not entered by the horizon
          }
          waits[static_cast<std::size_t>(rep)] = entry_epoch - arrival_epoch;
        });
    std::vector<double> clean;
    for (double w : waits)
      if (!std::isnan(w)) clean.push_back(w);
    const MetricStats stats = summarize(clean);
    ErrorReport::Group group;
    group.label = detail::group_label(n);
    group.metrics.emplace_back("mean_wait", stats);
    group.metrics.emplace_back(
        "abs_deviation",
        MetricStats{std::abs(stats.mean - fluid_wait.value), stats.std_error,
                    stats.count});
    report.groups.push_back(std::move(group));
    deviations.push_back(std::abs(stats.mean - fluid_wait.value));
    if (censored > 0)
      report.notes.push_back(detail::group_label(n) + ": " +
                             std::to_string(censored.load()) +
                             " censored replications excluded");
  }

  if (spec.n_ladder.size() >= 2)
    report.verdicts.emplace_back("deviation_decreasing",
                                 deviations.back() < deviations.front());
  else
    report.notes.push_back("single-entry ladder: no convergence verdict");
  if (spec.max_final_wait_deviation)
    report.verdicts.emplace_back(
        "final_deviation_within_threshold",
        deviations.back() <= *spec.max_final_wait_deviation);
  report.runtime_ms = timer.elapsed_ms();
  return report;
}

// Non-idling maximality: the default solution dominates any admissible
// capped policy in both cumulative entries and departures.
inline ErrorReport maximality_experiment(const FluidInput& input,
                                         const ServiceDistribution& dist,
                                         const RateCurve& cap, double horizon,
                                         double step) {
  const detail::Stopwatch timer;
  SolveOptions base_opts;
  base_opts.horizon = horizon;
  base_opts.step = step;
  const FluidSolution base = solve(input, dist, base_opts);

  SolveOptions capped_opts = base_opts;
  capped_opts.policy = EntryPolicy::capped(cap);
  const FluidSolution primed = solve(input, dist, capped_opts);

  double min_k = std::numeric_limits<double>::infinity();
  double min_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < base.grid_size(); ++k) {
    min_k = std::min(min_k, base.entered()[k] - primed.entered()[k]);
    min_d = std::min(min_d, base.departed()[k] - primed.departed()[k]);
  }

  ErrorReport report;
  report.experiment = "maximality";
  report.params = {{"service", dist.spec_string()},
                   {"T", horizon},
                   {"step", step}};
  ErrorReport::Group group;
  group.label = "margins";
  group.metrics.emplace_back("min_K_margin", MetricStats{min_k, 0.0, 1});
  group.metrics.emplace_back("min_D_margin", MetricStats{min_d, 0.0, 1});
  group.metrics.emplace_back(
      "final_K_gap",
      MetricStats{base.entered().back() - primed.entered().back(), 0.0, 1});
  report.groups.push_back(std::move(group));
  const double slack = 10.0 * step;
  report.verdicts.emplace_back("K_dominates", min_k >= -slack);
  report.verdicts.emplace_back("D_dominates", min_d >= -slack);
  report.runtime_ms = timer.elapsed_ms();
  return report;
}

// Short-interval departure bursts against the renewal-function bound: the
// empirical mean of D(t+delta) - D(t) never exceeds U(delta) within three
// standard errors.
inline ErrorReport renewal_bound_experiment(const ExperimentSpec& spec, double t,
                                            const std::vector<double>& deltas) {
  spec.validate();
  const detail::Stopwatch timer;
  const double max_delta = *std::max_element(deltas.begin(), deltas.end());
  if (t + max_delta > spec.horizon)
    throw ConfigError("renewal bound experiment: t + delta exceeds the horizon");

  ErrorReport report;
  report.experiment = "renewal_bound";
  report.master_seed = spec.master_seed;
  report.params = {{"arrival", spec.arrival.spec_string()},
                   {"service", spec.service.spec_string()},
                   {"t", t},
                   {"replications", spec.replications}};

  const int n = spec.n_ladder.back();
  std::vector<std::vector<double>> increments(
      deltas.size(), std::vector<double>(spec.replications));
  detail::run_replications(
      spec.replications, spec.effective_threads(), [&](int rep) {
        const SimulationPath path = simulate(spec.sim_config(n, rep));
        detail::require_clean_path(path);
        const double d_t = static_cast<double>(path.at(t).departed);
        for (std::size_t di = 0; di < deltas.size(); ++di) {
          const double d_later =
              static_cast<double>(path.at(t + deltas[di]).departed);
          increments[di][static_cast<std::size_t>(rep)] = (d_later - d_t) / n;
        }
      });

  for (std::size_t di = 0; di < deltas.size(); ++di) {
    const MetricStats stats = summarize(increments[di]);
    const double bound = spec.service.renewal_function(deltas[di]);
    ErrorReport::Group group;
    char label[48];
    std::snprintf(label, sizeof label, "delta=%g", deltas[di]);
    group.label = label;
    group.metrics.emplace_back("mean_increment", stats);
    group.metrics.emplace_back("renewal_bound", MetricStats{bound, 0.0, 1});
    report.groups.push_back(std::move(group));
    char verdict[64];
    std::snprintf(verdict, sizeof verdict, "within_bound_delta=%g", deltas[di]);
    report.verdicts.emplace_back(verdict,
                                 stats.mean <= bound + 3.0 * stats.std_error);
  }
  report.runtime_ms = timer.elapsed_ms();
  return report;
}

}  // namespace fluidq
