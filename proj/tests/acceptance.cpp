// Acceptance suite: runs every gate criterion at its stated tolerance and
// prints one PASS/FAIL line per criterion. Exits nonzero if any fail.

#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fluidq/cli.hpp"
#include "fluidq/fluid.hpp"
#include "fluidq/harness.hpp"
#include "fluidq/simulation.hpp"

using namespace fluidq;

namespace {

int failures = 0;

void report(int number, const char* title, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %2d: %s (%s)\n", pass ? "PASS" : "FAIL", number,
              title, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* format, ...) {
  char buf[512];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof buf, format, args);
  va_end(args);
  return buf;
}

SolveOptions solver_options(double horizon, double step) {
  SolveOptions o;
  o.horizon = horizon;
  o.step = step;
  return o;
}

FluidInput constant_rate_input(double lambda, double x0, InitialMeasure nu0) {
  FluidInput in;
  in.arrival = FluidArrival(RateCurve::constant(lambda));
  in.x0 = x0;
  in.nu0 = std::move(nu0);
  return in;
}

// 1. Start-empty underloaded exponential vs the closed form
//    X(t) = 0.5 (1 - e^-t), sup error at most 1e-4 with dt = 1e-3, T = 10.
void criterion_1() {
  const auto dist = ServiceDistribution::exponential();
  const auto sol = solve(constant_rate_input(0.5, 0.0, InitialMeasure::empty()),
                         dist, solver_options(10.0, 1e-3));
  double worst = 0.0;
  for (std::size_t k = 0; k < sol.grid_size(); ++k) {
    const double t = sol.time_at(k);
    worst = std::max(worst,
                     std::abs(sol.in_system()[k] - 0.5 * (1.0 - std::exp(-t))));
  }
  report(1, "fluid vs closed form (exponential)", worst <= 1e-4,
         fmt("sup error %.3g <= 1e-4", worst));
}

// 2. Volterra resolvent: lambda = 2 from the equilibrium profile keeps
//    K(t) = t within 5e-3, and the a-posteriori residual stays below 5e-3.
void criterion_2() {
  const auto dist = ServiceDistribution::exponential();
  const auto sol = solve(
      constant_rate_input(2.0, 1.0, InitialMeasure::equilibrium(dist, 1.0)),
      dist, solver_options(10.0, 1e-3));
  double worst = 0.0;
  for (std::size_t k = 0; k < sol.grid_size(); ++k)
    worst = std::max(worst, std::abs(sol.entered()[k] - sol.time_at(k)));
  const double residual = sol.volterra_residual();
  report(2, "Volterra resolvent check", worst <= 5e-3 && residual <= 5e-3,
         fmt("sup|K - t| %.3g, residual %.3g <= 5e-3", worst, residual));
}

// 3. Representation consistency on randomized smooth inputs: the unit test
//    function reproduces the stored mass to 1e-9 and the CDF at a large age
//    surrogate recovers the total mass to 1e-6.
void criterion_3() {
  RandomStream rng(2026);
  const std::vector<ServiceDistribution> dists = {
      ServiceDistribution::exponential(), ServiceDistribution::lognormal(1.0),
      ServiceDistribution::coxian(0.4, 2.0, 0.5),
      ServiceDistribution::lognormal(0.6), ServiceDistribution::exponential()};
  double worst_eval = 0.0, worst_cdf = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const auto& dist = dists[static_cast<std::size_t>(trial)];
    const double mass = trial % 2 == 0 ? 1.0 : 0.3 + 0.5 * rng.uniform();
    const double x0 = mass < 1.0 ? mass : 1.0 + rng.uniform();
    FluidInput in = constant_rate_input(0.5 + 1.5 * rng.uniform(), x0,
                                        InitialMeasure::equilibrium(dist, mass));
    const auto sol = solve(in, dist, solver_options(2.0, 2e-3));
    for (int probe = 0; probe <= 4; ++probe) {
      const std::size_t k =
          static_cast<std::size_t>(probe) * (sol.grid_size() - 1) / 4;
      const double t = sol.time_at(k);
      worst_eval = std::max(
          worst_eval, std::abs(sol.eval_measure(t, [](double) { return 1.0; }) -
                               sol.service_mass()[k]));
      const double big_age = in.nu0.max_support() + sol.horizon() + 1.0;
      worst_cdf = std::max(worst_cdf, std::abs(sol.measure_cdf(t, big_age) -
                                               sol.service_mass()[k]));
    }
  }
  report(3, "measure representation consistency",
         worst_eval <= 1e-9 && worst_cdf <= 1e-6,
         fmt("eval gap %.3g <= 1e-9, cdf gap %.3g <= 1e-6", worst_eval,
             worst_cdf));
}

// 4. Exact integer path identities on 100 randomized simulator configs.
void criterion_4() {
  RandomStream rng(777);
  const std::vector<ServiceDistribution> services = {
      ServiceDistribution::exponential(), ServiceDistribution::uniform(),
      ServiceDistribution::lognormal(0.8), ServiceDistribution::pareto(2.2),
      ServiceDistribution::weibull(1.5)};
  int clean = 0;
  std::string first_violation;
  for (int trial = 0; trial < 100; ++trial) {
    SimConfig cfg;
    cfg.num_servers = 1 + static_cast<int>(rng.uniform() * 25.0);
    const double lambda = rng.uniform() * 3.0;
    switch (static_cast<int>(rng.uniform() * 3.0)) {
      case 0:
        cfg.arrival = ArrivalModel::poisson(RateCurve::constant(lambda));
        break;
      case 1:
        cfg.arrival = ArrivalModel::deterministic(lambda);
        break;
      default:
        cfg.arrival = ArrivalModel::renewal(ServiceDistribution::uniform(), lambda);
    }
    cfg.service = services[static_cast<std::size_t>(
        rng.uniform() * static_cast<double>(services.size()))];
    cfg.initial_count = static_cast<long>(rng.uniform() * 2.0 * cfg.num_servers);
    for (long j = 0; j < cfg.initially_in_service(); ++j)
      cfg.initial_ages.push_back(rng.uniform() * 1.5);
    cfg.horizon = 0.5 + rng.uniform() * 2.5;
    cfg.seed = rng.next_u64();
    const std::string violation = simulate(cfg).check_invariants();
    if (violation.empty()) ++clean;
    else if (first_violation.empty()) first_violation = violation;
  }
  report(4, "simulator path identities (exact)", clean == 100,
         clean == 100 ? "100/100 configs clean"
                      : fmt("%d/100 clean; first: %s", clean,
                            first_violation.c_str()));
}

// 5. LLN ladder: mean sup |X^N - X| strictly decreasing over {25,100,400}
//    and at most 0.2 at N = 400.
void criterion_5() {
  ExperimentSpec spec;
  spec.arrival = ArrivalModel::poisson(RateCurve::constant(0.5));
  spec.service = ServiceDistribution::exponential();
  spec.horizon = 10.0;
  spec.n_ladder = {25, 100, 400};
  spec.replications = 20;
  spec.grid_step = 0.05;
  spec.checkpoints = {5.0, 10.0};
  spec.fluid_step = 1e-3;
  spec.master_seed = 20260809;
  spec.max_final_x_error = 0.2;
  const ErrorReport rep = lln_experiment(spec);
  const double final_mean = rep.find("N=400", "sup_X_error")->mean;
  report(5, "LLN convergence ladder", rep.all_pass(),
         fmt("monotone=%d, mean at N=400 %.3g <= 0.2",
             rep.verdicts.front().second ? 1 : 0, final_mean));
}

// 6. Long-time equilibrium convergence for exponential and lognormal, plus
//    the equilibrium fixed point staying within 5e-3.
void criterion_6() {
  bool pass = true;
  std::string detail;
  for (const auto& dist :
       {ServiceDistribution::exponential(), ServiceDistribution::lognormal(1.0)}) {
    EquilibriumExperimentConfig cfg;
    cfg.service = dist;
    cfg.lambda = 1.0;
    cfg.checkpoints = {10.0, 20.0, 40.0};
    cfg.fluid_step = 2e-3;
    cfg.tolerance = 0.02;
    const ErrorReport rep = equilibrium_experiment(cfg);
    const double final_distance = rep.find("t=40", "sup_cdf_distance")->mean;
    pass = pass && rep.all_pass();
    detail += fmt("%s ramp %.3g; ", dist.spec_string().c_str(), final_distance);

    EquilibriumExperimentConfig fixed;
    fixed.service = dist;
    fixed.lambda = 1.0;
    fixed.x0 = 1.0;
    fixed.nu0 = InitialMeasure::equilibrium(dist, 1.0);
    fixed.checkpoints = {10.0, 20.0, 40.0};
    fixed.fluid_step = 5e-3;
    fixed.tolerance = 5e-3;
    const ErrorReport fp = equilibrium_experiment(fixed);
    double worst_fp = 0.0;
    for (const auto& g : fp.groups)
      worst_fp = std::max(worst_fp, g.metrics.front().second.mean);
    pass = pass && worst_fp <= 5e-3;
    detail += fmt("fixed point %.3g; ", worst_fp);
  }
  report(6, "equilibrium convergence (Kolmogorov)", pass, detail);
}

// 7. Continuity of the solution map over 20 randomized perturbation pairs
//    sharing the initial measure.
void criterion_7() {
  const auto dist = ServiceDistribution::exponential();
  RandomStream rng(31415);
  const double dt = 2e-3;
  const double horizon = 2.0;
  bool pass = true;
  double worst_excess = -1e300;
  for (int trial = 0; trial < 20; ++trial) {
    const bool saturated = trial % 2 == 0;
    const double mass = saturated ? 1.0 : 0.3 + 0.6 * rng.uniform();
    const InitialMeasure nu0 = InitialMeasure::equilibrium(dist, mass);
    const double x0_a = saturated ? 1.0 + rng.uniform() : mass;
    const double x0_b = saturated ? 1.0 + rng.uniform() : mass;
    FluidInput a = constant_rate_input(0.4 + 1.6 * rng.uniform(), x0_a, nu0);
    FluidInput b = constant_rate_input(0.0, x0_b, nu0);
    b.arrival = FluidArrival(RateCurve::piecewise(
        {{0.0, 0.4 + 1.6 * rng.uniform()}, {1.0, 0.4 + 1.6 * rng.uniform()}}));
    const auto sa = solve(a, dist, solver_options(horizon, dt));
    const auto sb = solve(b, dist, solver_options(horizon, dt));
    double dk = 0.0, dd = 0.0, de = 0.0;
    for (std::size_t k = 0; k < sa.grid_size(); ++k) {
      const double t = sa.time_at(k);
      dk = std::max(dk, std::abs(sa.entered()[k] - sb.entered()[k]));
      dd = std::max(dd, std::abs(sa.departed()[k] - sb.departed()[k]));
      de = std::max(de,
                    std::abs(a.arrival.cumulative(t) - b.arrival.cumulative(t)));
    }
    const double bound = std::abs(a.x0 - b.x0) + de + 10.0 * dt;
    worst_excess = std::max(worst_excess, std::max(dk, dd) - bound);
    pass = pass && std::max(dk, dd) <= bound;
  }
  report(7, "continuity bound over perturbation pairs", pass,
         fmt("worst margin %.3g (<= 0 passes)", worst_excess));
}

// 8. Maximality of the non-idling policy across three capped configurations.
void criterion_8() {
  const auto dist = ServiceDistribution::exponential();
  const double dt = 2e-3;
  bool pass = true;
  std::string detail;
  struct Case {
    double lambda, x0, mass, cap;
    const char* name;
  };
  const Case cases[] = {{0.8, 0.0, 0.0, 0.4, "underloaded"},
                        {2.0, 1.0, 1.0, 0.5, "overloaded"},
                        {1.5, 1.0, 1.0, 1e9, "loose-cap"}};
  for (const Case& c : cases) {
    const InitialMeasure nu0 = c.mass > 0.0
                                   ? InitialMeasure::equilibrium(dist, c.mass)
                                   : InitialMeasure::empty();
    const ErrorReport rep = maximality_experiment(
        constant_rate_input(c.lambda, c.x0, nu0), dist,
        RateCurve::constant(c.cap), 3.0, dt);
    pass = pass && rep.all_pass();
    detail += fmt("%s K margin %.3g; ", c.name,
                  rep.find("margins", "min_K_margin")->mean);
  }
  report(8, "non-idling maximality", pass, detail);
}

// 9. Martingale decay ratio between N = 25 and N = 400 in [2, 8].
void criterion_9() {
  ExperimentSpec spec;
  spec.arrival = ArrivalModel::poisson(RateCurve::constant(0.5));
  spec.service = ServiceDistribution::exponential();
  spec.horizon = 10.0;
  spec.n_ladder = {25, 400};
  spec.replications = 50;
  spec.grid_step = 0.05;
  spec.master_seed = 424242;
  const ErrorReport rep = martingale_experiment(spec, 2.0, 8.0);
  report(9, "martingale decay ratio", rep.all_pass(),
         fmt("ratio %.3g in [2, 8]", rep.find("decay", "ratio")->mean));
}

// 10. Waiting-time limit in overload: |mean wait - 5| shrinking in N and at
//     most 0.25 at N = 400.
void criterion_10() {
  ExperimentSpec spec;
  spec.arrival = ArrivalModel::poisson(RateCurve::constant(2.0));
  spec.service = ServiceDistribution::exponential();
  spec.x0_fraction = 1.0;
  spec.nu0 = InitialMeasure::equilibrium(spec.service, 1.0);
  spec.horizon = 12.0;
  spec.n_ladder = {25, 400};
  spec.replications = 20;
  spec.grid_step = 0.1;
  spec.fluid_step = 1e-3;
  spec.master_seed = 5150;
  spec.max_final_wait_deviation = 0.25;
  const ErrorReport rep = waiting_time_experiment(spec, 5.0);
  report(10, "waiting-time limit (overload)", rep.all_pass(),
         fmt("deviation N=25 %.3g -> N=400 %.3g <= 0.25",
             rep.find("N=25", "abs_deviation")->mean,
             rep.find("N=400", "abs_deviation")->mean));
}

// 11. Renewal-function bound on short-interval departures, exponential and
//     uniform services, 200 replications each.
void criterion_11() {
  bool pass = true;
  std::string detail;
  for (const auto& dist :
       {ServiceDistribution::exponential(), ServiceDistribution::uniform()}) {
    ExperimentSpec spec;
    spec.arrival = ArrivalModel::poisson(RateCurve::constant(0.9));
    spec.service = dist;
    spec.horizon = 2.6;
    spec.n_ladder = {100};
    spec.replications = 200;
    spec.grid_step = 0.1;
    spec.master_seed = 60309;
    const ErrorReport rep = renewal_bound_experiment(spec, 2.0, {0.1, 0.5});
    pass = pass && rep.all_pass();
    detail += fmt("%s mean(0.5) %.3g vs U %.3g; ", dist.spec_string().c_str(),
                  rep.find("delta=0.5", "mean_increment")->mean,
                  rep.find("delta=0.5", "renewal_bound")->mean);
  }
  report(11, "renewal-function departure bound", pass, detail);
}

// 12. Byte-identical CLI outputs for identical configs and seeds, across
//     every subcommand.
void criterion_12() {
  namespace cli = fluidq::cli;
  auto run_to_file = [](std::vector<std::string> args, const std::string& out,
                        bool json) {
    args.push_back(json ? "--json" : "--out");
    args.push_back(out);
    std::vector<const char*> argv;
    argv.push_back("fluidq");
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli::run(static_cast<int>(argv.size()), argv.data());
  };
  auto slurp = [](const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };

  struct Command {
    std::vector<std::string> args;
    bool json;
  };
  const std::vector<Command> commands = {
      {{"dist", "inspect", "--service", "lognormal:sigma=1", "--t", "0.5,1,2"},
       false},
      {{"fluid", "solve", "--arrival", "poisson:lambda=2", "--service", "exp",
        "--x0", "1", "--nu0", "equilibrium", "--T", "4", "--dt", "2e-3"},
       false},
      {{"fluid", "tau1", "--arrival", "poisson:lambda=2", "--service", "exp"},
       false},
      {{"fluid", "functionals", "--arrival", "poisson:lambda=2", "--service",
        "exp", "--x0", "1", "--nu0", "equilibrium", "--T", "6", "--dt", "2e-3",
        "--times", "1,2"},
       false},
      {{"sim", "run", "--arrival", "poisson:lambda=1", "--service", "uniform",
        "--n", "16", "--x0", "8", "--nu0", "equilibrium", "--T", "5", "--seed",
        "11"},
       false},
      {{"harness", "lln", "--arrival", "poisson:lambda=0.5", "--service",
        "exp", "--T", "3", "--ladder", "10,20", "--replications", "3",
        "--grid-step", "0.25", "--fluid-step", "5e-3", "--checkpoints", "2",
        "--seed", "4"},
       true},
      {{"harness", "equilibrium", "--service", "exp", "--lambda", "1",
        "--checkpoints", "4,8", "--fluid-step", "5e-3", "--tolerance", "0.05"},
       true},
      {{"harness", "martingale", "--arrival", "poisson:lambda=0.5",
        "--service", "exp", "--T", "3", "--ladder", "10,40", "--replications",
        "4", "--grid-step", "0.25", "--seed", "6", "--ratio-lo", "1.05",
        "--ratio-hi", "12"},
       true},
      {{"harness", "wait", "--arrival", "poisson:lambda=2", "--service", "exp",
        "--x0", "1", "--nu0", "equilibrium", "--T", "5", "--t", "1.5",
        "--ladder", "10,30", "--replications", "4", "--fluid-step", "5e-3",
        "--seed", "8"},
       true},
      {{"harness", "maximality", "--arrival", "poisson:lambda=0.8",
        "--service", "exp", "--T", "2", "--dt", "5e-3", "--cap", "0.4"},
       true},
  };

  bool pass = true;
  std::string detail;
  int index = 0;
  for (const Command& cmd : commands) {
    const std::string out_a = fmt("acc12_%d_a.tmp", index);
    const std::string out_b = fmt("acc12_%d_b.tmp", index);
    const int rc_a = run_to_file(cmd.args, out_a, cmd.json);
    const int rc_b = run_to_file(cmd.args, out_b, cmd.json);
    const bool ok = rc_a == rc_b && rc_a <= cli::kVerdictFailure &&
                    slurp(out_a) == slurp(out_b) && !slurp(out_a).empty();
    if (!ok) {
      pass = false;
      detail += fmt("cmd %d differs (rc %d/%d); ", index, rc_a, rc_b);
    }
    std::remove(out_a.c_str());
    std::remove(out_b.c_str());
    ++index;
  }
  if (pass) detail = fmt("%d commands byte-identical on rerun", index);
  report(12, "CLI determinism", pass, detail);
}

}  // namespace

int main() {
  std::printf("acceptance suite\n----------------\n");
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7();
  criterion_8();
  criterion_9();
  criterion_10();
  criterion_11();
  criterion_12();
  std::printf("----------------\n%s (%d failure%s)\n",
              failures == 0 ? "ALL CRITERIA PASS" : "FAILURES PRESENT",
              failures, failures == 1 ? "" : "s");
  return failures == 0 ? 0 : 1;
}
