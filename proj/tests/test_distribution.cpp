#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "fluidq/distribution.hpp"
#include "fluidq/rng.hpp"
#include "test_util.hpp"

using fluidq::ConfigError;
using fluidq::EquilibriumMeasure;
using fluidq::RandomStream;
using fluidq::ServiceDistribution;

namespace {

std::vector<ServiceDistribution> all_families() {
  return {ServiceDistribution::exponential(),
          ServiceDistribution::lognormal(1.0),
          ServiceDistribution::weibull(0.7),
          ServiceDistribution::weibull(2.0),
          ServiceDistribution::pareto(2.5),
          ServiceDistribution::uniform(),
          ServiceDistribution::coxian(0.4, 2.0, 0.5)};
}

}  // namespace

TEST_CASE("construction normalizes every family to unit mean") {
  for (const auto& dist : all_families()) {
    auto survival = [&](double x) { return dist.survival(x); };
    const double upper = std::min(dist.support_end(), 50.0);
    double mean = testutil::integrate(survival, 0.0, upper, 1e-12);
    if (upper < dist.support_end()) mean += testutil::integrate_tail(survival, upper);
    INFO(dist.spec_string());
    CHECK(std::abs(mean - 1.0) < 1e-9);
  }
}

TEST_CASE("evaluate: exponential at zero") {
  const auto dist = ServiceDistribution::exponential();
  const auto e = dist.evaluate(0.0);
  CHECK(e.cdf == 0.0);
  CHECK(e.density == Catch::Approx(1.0));
  CHECK(e.hazard == Catch::Approx(1.0));
  CHECK_FALSE(e.at_or_beyond_support);
}

TEST_CASE("evaluate: uniform at the midpoint") {
  const auto dist = ServiceDistribution::uniform();
  const auto e = dist.evaluate(1.0);
  CHECK(e.cdf == Catch::Approx(0.5));
  CHECK(e.density == Catch::Approx(0.5));
  CHECK(e.hazard == Catch::Approx(1.0));
}

TEST_CASE("evaluate: at or beyond the support endpoint") {
  const auto dist = ServiceDistribution::uniform();
  for (double x : {2.0, 2.5, 100.0}) {
    const auto e = dist.evaluate(x);
    CHECK(e.at_or_beyond_support);
    CHECK(e.cdf == 1.0);
    CHECK(e.density == 0.0);
  }
  CHECK_FALSE(ServiceDistribution::exponential().evaluate(100.0).at_or_beyond_support);
}

TEST_CASE("evaluate rejects negative arguments") {
  const auto dist = ServiceDistribution::exponential();
  CHECK_THROWS_AS(dist.evaluate(-0.5), std::domain_error);
  CHECK_THROWS_AS(dist.cdf(-1e-9), std::domain_error);
}

TEST_CASE("hazard integral identity: int_a^b h = ln S(a) - ln S(b)") {
  RandomStream rng(7);
  for (const auto& dist : all_families()) {
    INFO(dist.spec_string());
    const double m = std::min(dist.support_end(), 8.0);
    for (int trial = 0; trial < 6; ++trial) {
      double a = rng.uniform() * 0.9 * m;
      double b = a + rng.uniform() * (0.98 * m - a);
      if (b <= a) continue;
      const double direct = testutil::integrate(
          [&](double x) { return dist.hazard(x); }, a, b, 1e-9);
      const double closed = dist.log_survival(a) - dist.log_survival(b);
      CHECK(std::abs(direct - closed) < 1e-6);
    }
  }
}

TEST_CASE("equilibrium cdf: basic values and quadrature oracle") {
  for (const auto& dist : all_families()) {
    INFO(dist.spec_string());
    CHECK(dist.equilibrium_cdf(0.0) == 0.0);
  }
  // uniform[0,2]: integral of 1 - x/2 over [0,1] = 3/4
  CHECK(ServiceDistribution::uniform().equilibrium_cdf(1.0) == Catch::Approx(0.75));
  CHECK(ServiceDistribution::exponential().equilibrium_cdf(60.0) ==
        Catch::Approx(1.0).margin(1e-12));
  for (const auto& dist : all_families()) {
    INFO(dist.spec_string());
    for (double a : {0.3, 1.0, 1.9, 3.7}) {
      if (a >= dist.support_end()) continue;
      const double oracle = testutil::integrate(
          [&](double x) { return dist.survival(x); }, 0.0, a, 1e-11);
      CHECK(dist.equilibrium_cdf(a) == Catch::Approx(oracle).margin(1e-8));
    }
  }
}

TEST_CASE("equilibrium cdf is nondecreasing and tends to one") {
  for (const auto& dist : all_families()) {
    INFO(dist.spec_string());
    double prev = 0.0;
    const double hi = std::min(dist.support_end(), 300.0);
    for (int i = 1; i <= 64; ++i) {
      const double a = hi * i / 64.0;
      const double v = dist.equilibrium_cdf(a);
      CHECK(v >= prev - 1e-13);
      prev = v;
    }
    CHECK(prev > 0.98);
  }
}

TEST_CASE("mean residual life matches its defining integral") {
  for (const auto& dist : all_families()) {
    INFO(dist.spec_string());
    for (double x : {0.0, 0.5, 1.5}) {
      if (x >= dist.support_end()) continue;
      auto survival = [&](double y) { return dist.survival(y); };
      const double upper = std::min(dist.support_end(), x + 50.0);
      double tail_work = testutil::integrate(survival, x, upper, 1e-12);
      if (upper < dist.support_end())
        tail_work += testutil::integrate_tail(survival, upper);
      const double oracle = tail_work / dist.survival(x);
      CHECK(dist.mean_residual(x) == Catch::Approx(oracle).epsilon(1e-6));
    }
  }
  CHECK(ServiceDistribution::exponential().mean_residual(3.0) == Catch::Approx(1.0));
}

TEST_CASE("renewal function: exponential closed form U(t) = 1 + t") {
  const auto dist = ServiceDistribution::exponential();
  CHECK(dist.renewal_function(0.0) == 1.0);
  CHECK(std::abs(dist.renewal_function(0.5) - 1.5) < 1e-3);
  CHECK(std::abs(dist.renewal_function(2.0) - 3.0) < 1e-3);
}

TEST_CASE("renewal function is nondecreasing and dominates 1 + G(t)") {
  for (const auto& dist : all_families()) {
    INFO(dist.spec_string());
    double prev = 1.0;
    for (double t : {0.1, 0.25, 0.5, 1.0, 1.7, 2.5}) {
      const double u = dist.renewal_function(t, 2e-3);
      CHECK(u >= prev - 1e-9);
      CHECK(u >= 1.0 + dist.cdf(t) - 1e-3);
      prev = u;
    }
  }
}

TEST_CASE("sampling: unit mean and CDF agreement") {
  for (const auto& dist : all_families()) {
    INFO(dist.spec_string());
    RandomStream rng(2024);
    std::vector<double> xs(100000);
    for (double& x : xs) x = dist.sample(rng);
    CHECK(testutil::mean(xs) > 0.98);
    CHECK(testutil::mean(xs) < 1.02);
    CHECK(std::abs(testutil::ecdf_at(xs, 1.0) - dist.cdf(1.0)) < 0.01);
  }
}

TEST_CASE("sampling: uniform support is (0, 2)") {
  const auto dist = ServiceDistribution::uniform();
  RandomStream rng(5);
  for (int i = 0; i < 100000; ++i) {
    const double v = dist.sample(rng);
    REQUIRE(v > 0.0);
    REQUIRE(v < 2.0);
  }
}

TEST_CASE("residual sampling: exponential is memoryless") {
  const auto dist = ServiceDistribution::exponential();
  RandomStream rng(11);
  for (double age : {0.0, 0.7, 4.0}) {
    std::vector<double> xs(100000);
    for (double& x : xs) x = dist.sample_residual(age, rng);
    CHECK(testutil::mean(xs) > 0.98);
    CHECK(testutil::mean(xs) < 1.02);
  }
}

TEST_CASE("residual sampling at age zero equals fresh sampling (KS)") {
  // Two-sample KS critical value at the 1% level for n = m = 1e4.
  const double critical = 1.628 * std::sqrt(2.0 / 1e4);
  for (const auto& dist : all_families()) {
    INFO(dist.spec_string());
    RandomStream rng(31);
    std::vector<double> fresh(10000), residual(10000);
    for (double& x : fresh) x = dist.sample(rng);
    for (double& x : residual) x = dist.sample_residual(0.0, rng);
    CHECK(testutil::ks_two_sample(fresh, residual) < critical);
  }
}

TEST_CASE("residual sampling: uniform aged 1 is uniform on (0,1)") {
  const auto dist = ServiceDistribution::uniform();
  RandomStream rng(13);
  std::vector<double> xs(100000);
  for (double& x : xs) {
    x = dist.sample_residual(1.0, rng);
    REQUIRE(x > 0.0);
    REQUIRE(x < 1.0);
  }
  CHECK(std::abs(testutil::ecdf_at(xs, 0.5) - 0.5) < 0.02);
}

TEST_CASE("residual sampling matches the conditional law for every family") {
  // Empirical CDF of age+residual vs G conditioned on exceeding the age.
  for (const auto& dist : all_families()) {
    INFO(dist.spec_string());
    RandomStream rng(17);
    const double age = dist.support_end() < 10.0 ? 0.8 : 1.3;
    std::vector<double> totals(40000);
    for (double& x : totals) x = age + dist.sample_residual(age, rng);
    const double probe = age + 0.6;
    const double expected =
        (dist.cdf(probe) - dist.cdf(age)) / (1.0 - dist.cdf(age));
    CHECK(std::abs(testutil::ecdf_at(totals, probe) - expected) < 0.012);
  }
}

TEST_CASE("residual sampling rejects ages beyond the support") {
  const auto dist = ServiceDistribution::uniform();
  RandomStream rng(1);
  CHECK_THROWS_AS(dist.sample_residual(2.0, rng), std::domain_error);
  CHECK_THROWS_AS(dist.sample_residual(3.0, rng), std::domain_error);
}

TEST_CASE("grammar: accepted forms") {
  CHECK(ServiceDistribution::parse("exp").family() ==
        ServiceDistribution::Family::Exponential);
  CHECK(ServiceDistribution::parse("uniform").family() ==
        ServiceDistribution::Family::Uniform);
  CHECK(ServiceDistribution::parse("lognormal:sigma=0.8").family() ==
        ServiceDistribution::Family::Lognormal);
  CHECK(ServiceDistribution::parse("weibull:k=1.4").family() ==
        ServiceDistribution::Family::Weibull);
  CHECK(ServiceDistribution::parse("pareto:alpha=1.7").family() ==
        ServiceDistribution::Family::Pareto);
  CHECK(ServiceDistribution::parse("coxian:p=0.3,r1=2,r2=0.7").family() ==
        ServiceDistribution::Family::Coxian);
}

TEST_CASE("grammar: rejections") {
  CHECK_THROWS_AS(ServiceDistribution::parse("pareto:alpha=1"), ConfigError);
  CHECK_THROWS_AS(ServiceDistribution::parse("pareto:alpha=0.8"), ConfigError);
  CHECK_THROWS_AS(ServiceDistribution::parse("deterministic"), ConfigError);
  CHECK_THROWS_AS(ServiceDistribution::parse("lognormal:sigma=-1"), ConfigError);
  CHECK_THROWS_AS(ServiceDistribution::parse("lognormal:mu=1"), ConfigError);
  CHECK_THROWS_AS(ServiceDistribution::parse("gamma:k=2"), ConfigError);
  CHECK_THROWS_AS(ServiceDistribution::parse("exp:rate=2"), ConfigError);
  CHECK_THROWS_AS(ServiceDistribution::parse("coxian:p=0.3,r1=2"), ConfigError);
}

TEST_CASE("equilibrium measure view") {
  const auto dist = ServiceDistribution::exponential();
  const EquilibriumMeasure eq(dist);
  CHECK(eq.density(0.7) == Catch::Approx(std::exp(-0.7)));
  CHECK(eq.cdf(1.0) == Catch::Approx(1.0 - std::exp(-1.0)));
  RandomStream rng(3);
  std::vector<double> xs(50000);
  for (double& x : xs) x = eq.sample(rng);
  // Stationary-age distribution of the unit-mean exponential is Exp(1).
  CHECK(std::abs(testutil::ecdf_at(xs, 1.0) - (1.0 - std::exp(-1.0))) < 0.01);
}

TEST_CASE("hazard continuity flag") {
  CHECK(ServiceDistribution::exponential().hazard_continuous());
  CHECK(ServiceDistribution::uniform().hazard_continuous());
  CHECK(ServiceDistribution::weibull(2.0).hazard_continuous());
  CHECK_FALSE(ServiceDistribution::weibull(0.7).hazard_continuous());
}
