#pragma once

#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fluidq/arrivals.hpp"
#include "fluidq/distribution.hpp"
#include "fluidq/errors.hpp"
#include "fluidq/fluid.hpp"
#include "fluidq/harness.hpp"
#include "fluidq/report.hpp"
#include "fluidq/simulation.hpp"

namespace fluidq::cli {

// Exit codes: 0 success, 1 harness verdict failure, 2 configuration error,
// 3 precondition/domain error, 4 unexpected internal error.
enum ExitCode {
  kOk = 0,
  kVerdictFailure = 1,
  kConfigError = 2,
  kPreconditionError = 3,
  kInternalError = 4,
};

namespace detail {

inline std::vector<double> parse_double_list(const std::string& text,
                                             const char* field) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(fluidq::detail::parse_real(item, field));
  }
  if (out.empty())
    throw ConfigError(std::string(field) + ": expected a comma-separated list");
  return out;
}

// nu0 grammar: empty | equilibrium[:mass=<m>] | atoms:<age:weight,...>
inline InitialMeasure parse_nu0(const std::string& spec,
                                const ServiceDistribution& dist) {
  if (spec == "empty") return InitialMeasure::empty();
  if (spec.rfind("equilibrium", 0) == 0) {
    double mass = 1.0;
    if (spec.size() > 11) {
      if (spec.rfind("equilibrium:mass=", 0) != 0)
        throw ConfigError("nu0: expected equilibrium[:mass=<m>]");
      mass = fluidq::detail::parse_real(spec.substr(17), "nu0.mass");
    }
    return InitialMeasure::equilibrium(dist, mass);
  }
  if (spec.rfind("atoms:", 0) == 0) {
    std::vector<std::pair<double, double>> atoms;
    std::stringstream ss(spec.substr(6));
    std::string item;
    while (std::getline(ss, item, ',')) {
      const std::size_t sep = item.find(':');
      if (sep == std::string::npos)
        throw ConfigError("nu0: atoms items are age:weight");
      atoms.emplace_back(
          fluidq::detail::parse_real(item.substr(0, sep), "nu0.age"),
          fluidq::detail::parse_real(item.substr(sep + 1), "nu0.weight"));
    }
    return InitialMeasure::atoms(std::move(atoms));
  }
  throw ConfigError("nu0: unknown form '" + spec +
                    "' (use empty | equilibrium[:mass=] | atoms:..)");
}

class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty() && path != "-") {
      file_ = std::make_unique<std::ofstream>(path, std::ios::binary);
      if (!*file_) throw ConfigError("cannot open output file '" + path + "'");
    }
  }
  std::ostream& stream() { return file_ ? *file_ : std::cout; }

 private:
  std::unique_ptr<std::ofstream> file_;
};

inline int emit_report(const ErrorReport& report, const std::string& json_path,
                       const std::string& csv_path,
                       const std::string& long_csv_path) {
  // File outputs omit wall-clock timing so identical configs and seeds
  // reproduce byte-identical artifacts; timing goes to stderr instead.
  auto j = report.to_json();
  j.erase("runtime_ms");
  {
    Output out(json_path);
    out.stream() << j.dump(2) << "\n";
  }
  if (!csv_path.empty()) {
    Output out(csv_path);
    report.write_csv_summary(out.stream());
  }
  if (!long_csv_path.empty()) {
    Output out(long_csv_path);
    report.write_long_csv(out.stream());
  }
  std::cerr << report.experiment << ": "
            << (report.all_pass() ? "all verdicts pass" : "verdict FAILURE")
            << " (" << report.runtime_ms << " ms)\n";
  return report.all_pass() ? kOk : kVerdictFailure;
}

}  // namespace detail

inline int run(int argc, const char* const* argv) {
  CLI::App app{"G/GI/N queue simulator and fluid-limit solver"};
  app.set_config("--config", "", "Config file (INI/TOML); flags override it");
  app.require_subcommand(1);
  app.get_formatter()->column_width(34);

  // Shared option storage. Every numeric option carries its default in the
  // help text via capture_default_str.
  std::string arrival_spec = "poisson:lambda=1";
  std::string service_spec = "exp";
  std::string nu0_spec = "empty";
  std::string initial_law_spec;
  std::string out_path, json_path, csv_path, long_csv_path;
  double x0 = 0.0;
  double horizon = 10.0;
  double dt = 1e-3;
  std::uint64_t seed = 1;
  int threads = 0;

  auto add_model_flags = [&](CLI::App* cmd, bool with_nu0) {
    cmd->add_option("--arrival", arrival_spec, "Arrival model spec")
        ->capture_default_str();
    cmd->add_option("--service", service_spec, "Service distribution spec")
        ->required();
    if (with_nu0) {
      cmd->add_option("--x0", x0, "Initial scaled head count")
          ->capture_default_str();
      cmd->add_option("--nu0", nu0_spec,
                      "Initial age measure: empty | equilibrium[:mass=] | "
                      "atoms:a:w,...")
          ->capture_default_str();
      cmd->add_option("--initial-law", initial_law_spec,
                      "Alternate residual law for the initial cohort");
    }
  };

  // ---- fluid ----
  CLI::App* fluid_cmd = app.add_subcommand("fluid", "Fluid-limit computations");
  fluid_cmd->require_subcommand(1);

  CLI::App* fluid_solve = fluid_cmd->add_subcommand("solve", "Solve the fluid dynamics");
  add_model_flags(fluid_solve, true);
  fluid_solve->add_option("--T", horizon, "Horizon")->capture_default_str();
  fluid_solve->add_option("--dt", dt, "Time step")->capture_default_str();
  double policy_cap = std::numeric_limits<double>::infinity();
  fluid_solve->add_option("--policy-cap", policy_cap,
                          "Entry-rate cap (default: non-idling policy)");
  std::string cdf_times_text;
  double cdf_max_age = 8.0;
  int cdf_cells = 160;
  std::string cdf_out;
  fluid_solve->add_option("--cdf-times", cdf_times_text,
                          "Comma list of times for age-CDF snapshots");
  fluid_solve->add_option("--cdf-max-a", cdf_max_age, "Snapshot age range")
      ->capture_default_str();
  fluid_solve->add_option("--cdf-cells", cdf_cells, "Snapshot age cells")
      ->capture_default_str();
  fluid_solve->add_option("--cdf-out", cdf_out, "Snapshot output file");
  fluid_solve->add_option("--out", out_path, "Solution CSV (default stdout)");

  CLI::App* fluid_tau1 =
      fluid_cmd->add_subcommand("tau1", "First time service capacity fills");
  add_model_flags(fluid_tau1, false);
  double scan_limit = 64.0;
  fluid_tau1->add_option("--scan-limit", scan_limit, "Initial search horizon")
      ->capture_default_str();
  fluid_tau1->add_option("--out", out_path, "Output (default stdout)");

  CLI::App* fluid_func =
      fluid_cmd->add_subcommand("functionals", "Waiting/sojourn/workload/residual");
  add_model_flags(fluid_func, true);
  fluid_func->add_option("--T", horizon, "Horizon")->capture_default_str();
  fluid_func->add_option("--dt", dt, "Time step")->capture_default_str();
  std::string times_text = "1,2,5";
  fluid_func->add_option("--times", times_text, "Comma list of evaluation times")
      ->capture_default_str();
  std::string residual_ages_text;
  fluid_func->add_option("--residual-a", residual_ages_text,
                         "Comma list of residual-CDF thresholds");
  fluid_func->add_option("--out", out_path, "Output CSV (default stdout)");

  // ---- sim ----
  CLI::App* sim_cmd = app.add_subcommand("sim", "Event-driven simulation");
  CLI::App* sim_run = sim_cmd->add_subcommand("run", "Run one replication");
  sim_cmd->require_subcommand(1);
  add_model_flags(sim_run, false);
  int num_servers = 10;
  long sim_x0 = 0;
  std::string ages_text;
  double sim_grid_step = 0.0;
  std::string scaled_out;
  sim_run->add_option("--n", num_servers, "Number of servers")->required();
  sim_run->add_option("--x0", sim_x0, "Initial customers in system")
      ->capture_default_str();
  sim_run->add_option("--nu0", nu0_spec,
                      "Age measure to sample initial ages from")
      ->capture_default_str();
  sim_run->add_option("--initial-law", initial_law_spec,
                      "Alternate residual law for the initial cohort");
  sim_run->add_option("--init-ages", ages_text,
                      "Comma list of initial ages (overrides --nu0 sampling)");
  sim_run->add_option("--T", horizon, "Horizon")->capture_default_str();
  sim_run->add_option("--seed", seed, "Random seed")->capture_default_str();
  sim_run->add_option("--grid-step", sim_grid_step,
                      "Scaled-path sampling step (0: skip)")
      ->capture_default_str();
  sim_run->add_option("--scaled-out", scaled_out, "Scaled-path CSV file");
  sim_run->add_option("--out", out_path, "Event-log CSV (default stdout)");

  // ---- harness ----
  CLI::App* harness_cmd = app.add_subcommand("harness", "Statistical experiments");
  harness_cmd->require_subcommand(1);
  std::string ladder_text = "25,100,400";
  int replications = 20;
  double grid_step = 0.05;
  std::string checkpoints_text = "10,20,40";
  double fluid_step = 1e-3;
  auto add_harness_common = [&](CLI::App* cmd) {
    cmd->add_option("--json", json_path, "Report JSON file (default stdout)");
    cmd->add_option("--csv", csv_path, "Summary CSV file");
    cmd->add_option("--long-csv", long_csv_path, "Plot-ready long CSV file");
    cmd->add_option("--threads", threads, "Replication parallelism (0: auto)")
        ->capture_default_str();
    cmd->add_option("--seed", seed, "Master seed")->capture_default_str();
  };
  auto add_experiment_flags = [&](CLI::App* cmd) {
    add_model_flags(cmd, true);
    cmd->add_option("--T", horizon, "Horizon")->capture_default_str();
    cmd->add_option("--ladder", ladder_text, "Comma list of N values")
        ->capture_default_str();
    cmd->add_option("--replications", replications, "Replications per N")
        ->capture_default_str();
    cmd->add_option("--grid-step", grid_step, "Comparison grid step")
        ->capture_default_str();
    cmd->add_option("--fluid-step", fluid_step, "Fluid solver step")
        ->capture_default_str();
    add_harness_common(cmd);
  };

  CLI::App* h_lln = harness_cmd->add_subcommand("lln", "Law-of-large-numbers convergence");
  add_experiment_flags(h_lln);
  std::string lln_checkpoints = "5,10";
  double lln_threshold = -1.0;
  h_lln->add_option("--checkpoints", lln_checkpoints,
                    "Times for age-profile Kolmogorov distance")
      ->capture_default_str();
  h_lln->add_option("--max-final-error", lln_threshold,
                    "Pass threshold on the largest-N mean sup error (<0: none)")
      ->capture_default_str();

  CLI::App* h_eq = harness_cmd->add_subcommand("equilibrium",
                                               "Long-time fluid convergence");
  double eq_lambda = 1.0;
  double eq_tolerance = 0.02;
  h_eq->add_option("--service", service_spec, "Service distribution spec")->required();
  h_eq->add_option("--lambda", eq_lambda, "Constant arrival rate")
      ->capture_default_str();
  h_eq->add_option("--x0", x0, "Initial scaled head count")->capture_default_str();
  h_eq->add_option("--nu0", nu0_spec, "Initial age measure")->capture_default_str();
  h_eq->add_option("--checkpoints", checkpoints_text, "Checkpoint times")
      ->capture_default_str();
  h_eq->add_option("--fluid-step", fluid_step, "Fluid solver step")
      ->capture_default_str();
  h_eq->add_option("--tolerance", eq_tolerance, "Final distance tolerance")
      ->capture_default_str();
  add_harness_common(h_eq);

  CLI::App* h_mart = harness_cmd->add_subcommand("martingale",
                                                 "Departure-compensator decay");
  add_experiment_flags(h_mart);
  double ratio_lo = 2.0, ratio_hi = 8.0;
  h_mart->add_option("--ratio-lo", ratio_lo, "Minimum decay ratio")
      ->capture_default_str();
  h_mart->add_option("--ratio-hi", ratio_hi, "Maximum decay ratio")
      ->capture_default_str();

  CLI::App* h_wait = harness_cmd->add_subcommand("wait", "Waiting-time limit");
  add_experiment_flags(h_wait);
  double wait_t = 5.0;
  double wait_threshold = -1.0;
  h_wait->add_option("--t", wait_t, "Checkpoint time")->capture_default_str();
  h_wait->add_option("--max-final-deviation", wait_threshold,
                     "Pass threshold on the largest-N deviation (<0: none)")
      ->capture_default_str();

  CLI::App* h_max = harness_cmd->add_subcommand("maximality",
                                                "Non-idling dominance");
  add_model_flags(h_max, true);
  h_max->add_option("--T", horizon, "Horizon")->capture_default_str();
  h_max->add_option("--dt", dt, "Fluid step")->capture_default_str();
  double cap_value = 0.5;
  h_max->add_option("--cap", cap_value, "Entry-rate cap")->capture_default_str();
  add_harness_common(h_max);

  // ---- dist ----
  CLI::App* dist_cmd = app.add_subcommand("dist", "Distribution tables");
  CLI::App* dist_inspect = dist_cmd->add_subcommand("inspect", "Tabulate G, g, h, U");
  dist_cmd->require_subcommand(1);
  dist_inspect->add_option("--service", service_spec, "Service distribution spec")
      ->required();
  std::string inspect_times = "0,0.25,0.5,1,1.5,2";
  double renewal_step = 1e-3;
  dist_inspect->add_option("--t", inspect_times, "Comma list of abscissae")
      ->capture_default_str();
  dist_inspect->add_option("--renewal-step", renewal_step,
                           "Volterra step for the renewal function")
      ->capture_default_str();
  dist_inspect->add_option("--out", out_path, "Output CSV (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    const ServiceDistribution service = ServiceDistribution::parse(service_spec);
    std::optional<ServiceDistribution> initial_law;
    if (!initial_law_spec.empty())
      initial_law = ServiceDistribution::parse(initial_law_spec);

    if (fluid_solve->parsed() || fluid_func->parsed()) {
      const CLI::App* cmd = fluid_solve->parsed() ? fluid_solve : fluid_func;
      FluidInput input;
      input.arrival = ArrivalModel::parse(arrival_spec).fluid_limit();
      input.x0 = x0;
      const ServiceDistribution& law = initial_law ? *initial_law : service;
      input.nu0 = detail::parse_nu0(nu0_spec, law);
      SolveOptions options;
      options.horizon = horizon;
      options.step = dt;
      options.initial_residual_law = initial_law;
      if (cmd == fluid_solve && std::isfinite(policy_cap))
        options.policy = EntryPolicy::capped(RateCurve::constant(policy_cap));
      const FluidSolution sol = solve(input, service, options);

      if (cmd == fluid_solve) {
        {
          detail::Output out(out_path);
          sol.export_csv(out.stream());
        }
        if (!cdf_times_text.empty()) {
          detail::Output out(cdf_out);
          sol.export_cdf_snapshots(
              out.stream(),
              detail::parse_double_list(cdf_times_text, "cdf-times"),
              cdf_max_age, cdf_cells);
        }
      } else {
        detail::Output out(out_path);
        auto& os = out.stream();
        const auto times = detail::parse_double_list(times_text, "times");
        std::vector<double> residual_ages;
        if (!residual_ages_text.empty())
          residual_ages = detail::parse_double_list(residual_ages_text, "residual-a");
        os << "t,waiting,waiting_beyond_horizon,sojourn,sojourn_beyond_horizon,"
              "workload";
        char head[64];
        for (double a : residual_ages) {
          std::snprintf(head, sizeof head, ",residual_cdf_a=%g", a);
          os << head;
        }
        os << "\n";
        char buf[256];
        for (double t : times) {
          const auto w = sol.waiting_time(t);
          const auto v = sol.sojourn_time(t);
          std::snprintf(buf, sizeof buf, "%.12g,%.12g,%d,%.12g,%d,%.12g", t,
                        w.value, w.beyond_horizon ? 1 : 0, v.value,
                        v.beyond_horizon ? 1 : 0, sol.workload(t));
          os << buf;
          for (double a : residual_ages) {
            const double r = sol.residual_measure_integral(
                t, [&](double u) { return u <= a ? 1.0 : 0.0; }, a);
            std::snprintf(buf, sizeof buf, ",%.12g", r);
            os << buf;
          }
          os << "\n";
        }
      }
      return kOk;
    }

    if (fluid_tau1->parsed()) {
      const FluidArrival arrival = ArrivalModel::parse(arrival_spec).fluid_limit();
      const double value = tau1(arrival, service, scan_limit);
      detail::Output out(out_path);
      char buf[64];
      if (std::isinf(value)) {
        out.stream() << "tau1\ninf\n";
      } else {
        std::snprintf(buf, sizeof buf, "tau1\n%.12g\n", value);
        out.stream() << buf;
      }
      return kOk;
    }

    if (sim_run->parsed()) {
      SimConfig cfg;
      cfg.num_servers = num_servers;
      cfg.arrival = ArrivalModel::parse(arrival_spec);
      cfg.service = service;
      cfg.initial_count = sim_x0;
      cfg.horizon = horizon;
      cfg.seed = seed;
      cfg.initial_residual_law = initial_law;
      if (!ages_text.empty()) {
        cfg.initial_ages = detail::parse_double_list(ages_text, "init-ages");
      } else if (cfg.initially_in_service() > 0) {
        const ServiceDistribution& law = initial_law ? *initial_law : service;
        const InitialMeasure nu0 = detail::parse_nu0(nu0_spec, law);
        RandomStream ages(fluidq::detail::derive_seed(
            seed, static_cast<std::uint64_t>(num_servers), 0, 1));
        for (long j = 0; j < cfg.initially_in_service(); ++j)
          cfg.initial_ages.push_back(nu0.sample(ages));
      }
      const SimulationPath path = simulate(cfg);
      const std::string violation = path.check_invariants();
      if (!violation.empty())
        throw std::logic_error("simulation invariant violated: " + violation);
      {
        detail::Output out(out_path);
        path.export_events_csv(out.stream());
      }
      if (sim_grid_step > 0.0) {
        std::vector<double> grid;
        for (double t = 0.0; t <= horizon + 1e-12; t += sim_grid_step)
          grid.push_back(std::min(t, horizon));
        detail::Output out(scaled_out);
        path.export_scaled_csv(out.stream(), grid);
      }
      return kOk;
    }

    if (h_lln->parsed() || h_mart->parsed() || h_wait->parsed()) {
      ExperimentSpec spec;
      spec.arrival = ArrivalModel::parse(arrival_spec);
      spec.service = service;
      spec.x0_fraction = x0;
      spec.nu0 = detail::parse_nu0(nu0_spec, service);
      spec.horizon = horizon;
      spec.replications = replications;
      spec.grid_step = grid_step;
      spec.fluid_step = fluid_step;
      spec.master_seed = seed;
      spec.threads = threads;
      spec.n_ladder.clear();
      for (double v : detail::parse_double_list(ladder_text, "ladder"))
        spec.n_ladder.push_back(static_cast<int>(v));

      ErrorReport report;
      if (h_lln->parsed()) {
        spec.checkpoints = detail::parse_double_list(lln_checkpoints, "checkpoints");
        if (lln_threshold >= 0.0) spec.max_final_x_error = lln_threshold;
        report = lln_experiment(spec);
      } else if (h_mart->parsed()) {
        report = martingale_experiment(spec, ratio_lo, ratio_hi);
      } else {
        if (wait_threshold >= 0.0) spec.max_final_wait_deviation = wait_threshold;
        report = waiting_time_experiment(spec, wait_t);
      }
      return detail::emit_report(report, json_path, csv_path, long_csv_path);
    }

    if (h_eq->parsed()) {
      EquilibriumExperimentConfig cfg;
      cfg.service = service;
      cfg.lambda = eq_lambda;
      cfg.x0 = x0;
      cfg.nu0 = detail::parse_nu0(nu0_spec, service);
      cfg.checkpoints = detail::parse_double_list(checkpoints_text, "checkpoints");
      cfg.fluid_step = fluid_step;
      cfg.tolerance = eq_tolerance;
      return detail::emit_report(equilibrium_experiment(cfg), json_path,
                                 csv_path, long_csv_path);
    }

    if (h_max->parsed()) {
      FluidInput input;
      input.arrival = ArrivalModel::parse(arrival_spec).fluid_limit();
      input.x0 = x0;
      input.nu0 = detail::parse_nu0(nu0_spec, service);
      const RateCurve cap = std::isfinite(cap_value)
                                ? RateCurve::constant(cap_value)
                                : RateCurve::infinite();
      return detail::emit_report(
          maximality_experiment(input, service, cap, horizon, dt), json_path,
          csv_path, long_csv_path);
    }

    if (dist_inspect->parsed()) {
      detail::Output out(out_path);
      auto& os = out.stream();
      os << "x,G,g,h,at_support,equilibrium_cdf,renewal_U\n";
      char buf[256];
      for (double x : detail::parse_double_list(inspect_times, "t")) {
        const auto e = service.evaluate(x);
        std::snprintf(buf, sizeof buf, "%.12g,%.12g,%.12g,%.12g,%d,%.12g,%.12g\n",
                      x, e.cdf, e.density, e.hazard, e.at_or_beyond_support ? 1 : 0,
                      service.equilibrium_cdf(x),
                      service.renewal_function(x, renewal_step));
        os << buf;
      }
      return kOk;
    }

    throw ConfigError("no subcommand executed");
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const PreconditionError& e) {
    std::cerr << "precondition error: " << e.what() << "\n";
    return kPreconditionError;
  } catch (const std::domain_error& e) {
    std::cerr << "domain error: " << e.what() << "\n";
    return kPreconditionError;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternalError;
  }
}

}  // namespace fluidq::cli
