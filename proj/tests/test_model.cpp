#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "drainback/model.hpp"

using namespace drainback;

namespace {

const double log_sqrt_2pi = 0.5 * std::log(2.0 * std::numbers::pi);

ParameterVector reference_beta() {
  ParameterVector b;
  b.geom = {14.0, 8.7, 8.4};
  b.orifice = {0.12, 0.6};
  b.a = DiscrepancyCoefficients({0.1, -0.2, 0.3});
  b.sigma = 0.25;
  b.pollution_ic = {1.5, 11.0};
  b.calib_ic["cal1"] = {0.1, 13.8};
  b.calib_ic["cal2"] = {-0.2, 13.9};
  return b;
}

Dataset reference_data() {
  Rng rng(5);
  ObservationDesign design;
  for (const char* id : {"cal1", "cal2"}) {
    CalibrationDesign cal{id, {}};
    for (int i = 0; i <= 20; ++i) cal.times.push_back(15.0 * i);
    design.calibration.push_back(cal);
  }
  design.level_cutoff = 1.0;
  return simulate_dataset(rng, reference_beta(), design);
}

// Log densities written out from the textbook formulas.
double gauss(double x, double mu, double s) {
  return -0.5 * std::pow((x - mu) / s, 2) - std::log(s) - log_sqrt_2pi;
}
double beta_pdf_log(double x, double a, double b) {
  return std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + (a - 1) * std::log(x) +
         (b - 1) * std::log1p(-x);
}
double laplace_log(double x, double m, double s) { return -std::log(2 * s) - std::abs(x - m) / s; }

double prior_oracle(const ParameterVector& b) {
  double lp = gauss(b.geom.h_max, 14.0, 0.1) + gauss(b.geom.x_t, 8.7, 0.1) +
              gauss(b.geom.x_b, 8.4, 0.1) + gauss(b.orifice.r, 0.12, 0.006) +
              beta_pdf_log(b.orifice.c, 6.0, 4.0) + std::log(4.0) - 4.0 * b.sigma;
  for (double a : b.a.a) lp += laplace_log(a, 0.0, 0.25);
  lp += gauss(b.pollution_ic.t0, 0.0, 5.0) - std::log(b.geom.h_max);
  for (const auto& [id, ic] : b.calib_ic) lp += gauss(ic.t0, 0.0, 0.25) + gauss(ic.h0, 14.0, b.sigma);
  return lp;
}

Dataset single_pollution(double t, double level) {
  Dataset d;
  Experiment e;
  e.id = "pollution";
  e.kind = ExperimentKind::pollution;
  e.observations.push_back({t, level});
  d.experiments.push_back(e);
  return d;
}

}  // namespace

TEST_CASE("default prior hyperparameters") {
  const auto spec = default_prior_spec();
  CHECK(mean(spec.c) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(mean(spec.sigma) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(std::get<Normal>(spec.h_max).mu == 14.0);
  CHECK(std::get<Normal>(spec.x_t).mu == 8.7);
  CHECK(std::get<Normal>(spec.x_b).mu == 8.4);
  CHECK(std::get<Normal>(spec.r).mu == 0.12);
  CHECK(std::get<Normal>(spec.r).sd == doctest::Approx(0.006).epsilon(1e-15));
  CHECK(std::get<Laplace>(spec.a_prior(0)).scale == 0.25);
  CHECK(std::get<Laplace>(spec.a_prior(7)).scale == 0.25);
  CHECK(std::get<Normal>(spec.pollution_t0).sd == 5.0);
  CHECK(std::get<Normal>(spec.calibration_t0).sd == 0.25);
  CHECK(spec.calibration_h0_mean == 14.0);
  CHECK_NOTHROW(spec.validate());
}

TEST_CASE("invalid hyperparameters are rejected") {
  auto spec = default_prior_spec();
  spec.c = BetaDist{0.0, 4.0};
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = default_prior_spec();
  spec.h_max = Normal{14.0, -1.0};
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}

TEST_CASE("log prior matches the written-out density") {
  const auto b = reference_beta();
  CHECK(log_prior(b, default_prior_spec()) == doctest::Approx(prior_oracle(b)).epsilon(1e-12));
}

TEST_CASE("gaussian prior terms at their modes") {
  for (double s : {0.1, 0.006, 5.0, 0.25})
    CHECK(log_density(Normal{3.0, s}, 3.0) == doctest::Approx(-std::log(std::sqrt(2.0 * std::numbers::pi) * s)));
  auto b = reference_beta();
  const auto spec = default_prior_spec();
  const double at_mode = log_prior(b, spec);
  b.geom.h_max = 14.05;
  b.pollution_ic.h0 = 11.0;
  // Only the h_max Gaussian and the 1/h_max uniform density change.
  const double moved = log_prior(b, spec);
  CHECK(at_mode - moved == doctest::Approx(0.5 * 0.25 + std::log(14.05 / 14.0)).epsilon(1e-12));
}

TEST_CASE("prior support") {
  const auto spec = default_prior_spec();
  auto b = reference_beta();
  b.orifice.c = 1.5;
  CHECK(log_prior(b, spec) == -INFINITY);
  b = reference_beta();
  b.pollution_ic.h0 = 14.5;
  CHECK(log_prior(b, spec) == -INFINITY);
  b.pollution_ic.h0 = -0.1;
  CHECK(log_prior(b, spec) == -INFINITY);
  b = reference_beta();
  b.sigma = 0.0;
  CHECK(log_prior(b, spec) == -INFINITY);
  CHECK(log_posterior_unnorm(b, reference_data(), spec) == -INFINITY);
}

TEST_CASE("gaussian likelihood of a single observation") {
  auto b = reference_beta();
  b.sigma = 1.0;
  b.a = DiscrepancyCoefficients::zeros(2);
  b.pollution_ic = {0.0, 10.0};
  const double mean = predicted_observation_mean(b, single_pollution(100.0, 0.0).experiments[0], 100.0);
  CHECK(log_likelihood(b, single_pollution(100.0, mean)) == doctest::Approx(-0.9189385332).epsilon(1e-9));
  CHECK(log_likelihood(b, single_pollution(100.0, mean + 1.0)) ==
        doctest::Approx(-1.4189385332).epsilon(1e-9));
  CHECK(log_likelihood(b, Dataset{}) == 0.0);
}

TEST_CASE("predicted observation mean") {
  auto b = reference_beta();
  b.a = DiscrepancyCoefficients::zeros(2);
  const auto data = reference_data();
  const auto& cal = data.find("cal1");
  const auto& ic = b.calib_ic.at("cal1");
  CHECK(predicted_observation_mean(b, cal, ic.t0) == ic.h0);
  const auto traj = simulate_level(b.geom, b.orifice, {}, ic, 400.0);
  double prev = INFINITY;
  for (int i = 0; i <= 100; ++i) {
    const double t = ic.t0 + 3.5 * i;
    const double m = predicted_observation_mean(b, cal, t);
    CHECK(m == doctest::Approx(traj.level_at(t)).epsilon(1e-12));
    CHECK(m <= prev);
    prev = m;
  }
  // Before the drain opens the tank is at rest.
  CHECK(predicted_observation_mean(b, cal, ic.t0 - 1.0) == ic.h0);

  b.a = DiscrepancyCoefficients({0.0, 0.0, 0.5});
  CHECK(predicted_observation_mean(b, cal, ic.t0) ==
        doctest::Approx(ic.h0 + evaluate_discrepancy(b.a, ic.h0, b.geom.h_max)).epsilon(1e-14));
}

TEST_CASE("likelihood factorizes over experiments and ignores held-out points") {
  const auto b = reference_beta();
  auto data = reference_data();
  double sum = 0.0;
  for (const auto& e : data.experiments) sum += experiment_log_likelihood(b, e);
  CHECK(log_likelihood(b, data) == doctest::Approx(sum).epsilon(1e-14));
  REQUIRE(data.pollution().held_out.has_value());
  const double with_held_out = log_likelihood(b, data);
  data.experiments[0].held_out.reset();
  CHECK(log_likelihood(b, data) == with_held_out);
  data.experiments[0].held_out = Observation{0.0, 0.0};
  CHECK(log_likelihood(b, data) == with_held_out);
}

TEST_CASE("posterior is prior plus likelihood and independent of experiment order") {
  const auto b = reference_beta();
  const auto spec = default_prior_spec();
  auto data = reference_data();
  const double lp = log_posterior_unnorm(b, data, spec);
  CHECK(lp == doctest::Approx(log_prior(b, spec) + log_likelihood(b, data)).epsilon(1e-14));
  std::reverse(data.experiments.begin(), data.experiments.end());
  CHECK(log_posterior_unnorm(b, data, spec) == doctest::Approx(lp).epsilon(1e-13));
  std::rotate(data.experiments.begin(), data.experiments.begin() + 1, data.experiments.end());
  CHECK(log_posterior_unnorm(b, data, spec) == doctest::Approx(lp).epsilon(1e-13));
}

TEST_CASE("initial conditions outside the tank have zero likelihood") {
  auto b = reference_beta();
  b.calib_ic["cal1"].h0 = 14.2;
  CHECK(log_likelihood(b, reference_data()) == -INFINITY);
}

TEST_CASE("parameter layout") {
  const ParameterLayout layout(2, {"zeta", "alpha"});
  const std::vector<std::string> expected{"h_max", "x_t",   "x_b",     "c",        "r",
                                          "a0",    "a1",    "a2",      "sigma",    "t0",
                                          "h0",    "t0_alpha", "h0_alpha", "t0_zeta", "h0_zeta"};
  CHECK(layout.names() == expected);
  CHECK(layout.names()[layout.c_index()] == "c");
  CHECK(layout.names()[layout.sigma_index()] == "sigma");
  CHECK(layout.names()[layout.h0_index()] == "h0");
  CHECK(layout.index_of("h0_zeta") == 14);

  const ParameterLayout l2 = ParameterLayout::for_dataset(reference_data(), 2);
  const auto b = reference_beta();
  const auto back = l2.unflatten(l2.flatten(b));
  CHECK(l2.flatten(back) == l2.flatten(b));
}

TEST_CASE("unconstrained transform") {
  const auto layout = ParameterLayout::for_dataset(reference_data(), 2);
  auto b = reference_beta();
  const auto u = to_unconstrained(b, layout);
  const auto back = layout.flatten(from_unconstrained(u.x, layout));
  const auto orig = layout.flatten(b);
  for (std::size_t i = 0; i < orig.size(); ++i) CHECK(std::abs(back[i] - orig[i]) <= 1e-12 * std::max(1.0, std::abs(orig[i])));

  b.orifice.c = 0.5;
  CHECK(to_unconstrained(b, layout).x[layout.c_index()] == 0.0);

  // Only the sigma coordinate differs, so the Jacobians differ by log(2 / 1).
  b.sigma = 1.0;
  const auto j1 = to_unconstrained(b, layout).log_jacobian;
  b.sigma = 2.0;
  const auto j2 = to_unconstrained(b, layout).log_jacobian;
  CHECK(j2 - j1 == doctest::Approx(std::log(2.0)).epsilon(1e-14));

  auto x = u.x;
  x[0] = NAN;
  CHECK_THROWS_AS(from_unconstrained(x, layout), std::domain_error);
  b.sigma = INFINITY;
  CHECK_THROWS_AS(to_unconstrained(b, layout), std::domain_error);
}

TEST_CASE("transformed beta density integrates to one") {
  const auto layout = ParameterLayout::for_dataset(reference_data(), 2);
  auto x = to_unconstrained(reference_beta(), layout).x;
  const std::size_t ci = layout.c_index();
  x[ci] = 0.0;
  // Jacobian terms other than the c coordinate do not depend on x[ci].
  const double rest = log_jacobian(x, layout) - std::log(0.25);
  const Distribution beta_prior = BetaDist{6.0, 4.0};

  // Trapezoid rule on a wide, fine grid; the integrand decays exponentially.
  const double lo = -30.0, hi = 30.0;
  const int n = 60000;
  const double dx = (hi - lo) / n;
  double integral = 0.0;
  for (int i = 0; i <= n; ++i) {
    x[ci] = lo + i * dx;
    const double c = from_unconstrained(x, layout).orifice.c;
    const double f = std::exp(log_density(beta_prior, c) + log_jacobian(x, layout) - rest);
    integral += (i == 0 || i == n ? 0.5 : 1.0) * f * dx;
  }
  CHECK(integral == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("posterior in unconstrained coordinates") {
  const auto data = reference_data();
  const TankPosterior post(data, default_prior_spec(), 2);
  const auto b = reference_beta();
  const auto u = to_unconstrained(b, post.layout());
  CHECK(post(u.x) == doctest::Approx(log_posterior_unnorm(b, data, default_prior_spec()) + u.log_jacobian)
                         .epsilon(1e-12));
  auto bad = u.x;
  bad[3] = INFINITY;
  CHECK(post(bad) == -INFINITY);
  const auto vals = post.constrain(u.x);
  CHECK(vals[post.layout().c_index()] == doctest::Approx(0.6).epsilon(1e-14));
}

TEST_CASE("prior sampling") {
  const auto spec = default_prior_spec();
  const ParameterLayout layout(2, {"cal1", "cal2"});
  Rng rng(99);
  const int n = 100000;
  double c_sum = 0.0;
  std::vector<double> u(n);
  for (int i = 0; i < n; ++i) {
    const auto b = sample_prior(rng, spec, layout);
    c_sum += b.orifice.c;
    CHECK(b.pollution_ic.h0 >= 0.0);
    CHECK(b.pollution_ic.h0 <= b.geom.h_max);
    u[i] = b.pollution_ic.h0 / b.geom.h_max;
  }
  CHECK(std::abs(c_sum / n - 0.6) <= 0.005);

  // Kolmogorov-Smirnov statistic against U(0, 1); 1.63 / sqrt(n) is the 1% critical value.
  std::sort(u.begin(), u.end());
  double d = 0.0;
  for (int i = 0; i < n; ++i)
    d = std::max({d, (i + 1.0) / n - u[i], u[i] - static_cast<double>(i) / n});
  CHECK(d < 1.63 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("prior sampling is reproducible") {
  const ParameterLayout layout(2, {"cal1"});
  Rng a(123), b(123);
  for (int i = 0; i < 50; ++i)
    CHECK(layout.flatten(sample_prior(a, default_prior_spec(), layout)) ==
          layout.flatten(sample_prior(b, default_prior_spec(), layout)));
}

TEST_CASE("noise-free simulation reproduces predicted means") {
  auto b = reference_beta();
  b.sigma = 0.0;
  ObservationDesign design;
  design.level_cutoff = 1.0;
  design.calibration.push_back({"cal1", {0.0, 30.0, 60.0, 200.0, 300.0, 400.0}});
  Rng rng(1);
  const auto data = simulate_dataset(rng, b, design);
  const auto& p = data.pollution();
  CHECK(p.observations.front().level == predicted_observation_mean(b, p, design.pollution_time));
  REQUIRE(p.held_out.has_value());
  CHECK(p.held_out->level == b.pollution_ic.h0);
  for (const auto& o : data.find("cal1").observations) {
    CHECK(o.level == predicted_observation_mean(b, data.find("cal1"), o.t));
    CHECK(o.level > 1.0);
  }
  CHECK(data.find("cal1").observations.size() < design.calibration[0].times.size());
}

TEST_CASE("dataset validation") {
  auto data = reference_data();
  CHECK_NOTHROW(data.validate());
  auto two = data;
  two.experiments[0].observations.push_back({300.0, 1.0});
  CHECK_THROWS_AS(two.validate(), std::invalid_argument);
  auto empty_cal = data;
  empty_cal.experiments[1].observations.clear();
  CHECK_THROWS_AS(empty_cal.validate(), std::invalid_argument);
  auto none = data;
  none.experiments.erase(none.experiments.begin());
  CHECK_THROWS_AS(none.validate(), std::invalid_argument);
  CHECK(data.calibration_ids() == std::vector<std::string>{"cal1", "cal2"});
}
