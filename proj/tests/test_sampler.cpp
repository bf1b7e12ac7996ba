#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "drainback/model.hpp"
#include "drainback/sampler.hpp"

using namespace drainback;

namespace {

Target gaussian_target(const Eigen::MatrixXd& cov, const Eigen::VectorXd& mean) {
  const Eigen::MatrixXd precision = cov.inverse();
  Target t;
  t.dim = static_cast<std::size_t>(mean.size());
  t.log_density = [precision, mean](std::span<const double> x) {
    const Eigen::VectorXd d =
        Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size())) - mean;
    return -0.5 * d.dot(precision * d);
  };
  return t;
}

std::vector<double> pooled(const std::vector<ChainTrace>& traces, std::size_t p) {
  std::vector<double> out;
  for (const auto& t : traces) {
    const auto k = t.kept(p);
    out.insert(out.end(), k.begin(), k.end());
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Monte Carlo standard error from non-overlapping batch means, per chain.
double batch_means_mcse(const std::vector<ChainTrace>& traces, std::size_t p) {
  std::vector<double> batch;
  for (const auto& t : traces) {
    const auto k = t.kept(p);
    const std::size_t b = static_cast<std::size_t>(std::sqrt(static_cast<double>(k.size())));
    for (std::size_t start = 0; start + b <= k.size(); start += b) {
      double s = 0.0;
      for (std::size_t i = start; i < start + b; ++i) s += k[i];
      batch.push_back(s / static_cast<double>(b));
    }
  }
  const double m = mean_of(batch);
  double var = 0.0;
  for (double x : batch) var += (x - m) * (x - m);
  var /= static_cast<double>(batch.size() - 1);
  return std::sqrt(var / static_cast<double>(batch.size()));
}

std::vector<ChainTrace> run(const Target& target, SamplerConfig cfg, double init = 0.0) {
  std::vector<std::vector<double>> inits(static_cast<std::size_t>(cfg.n_chains),
                                         std::vector<double>(target.dim, init));
  return run_chains(target, cfg, inits);
}

Eigen::MatrixXd condition_10_covariance() {
  // Rotation from a fixed orthonormalized matrix; eigenvalues 1, 3 and 10.
  Eigen::Matrix3d a;
  a << 0.8, -0.3, 0.5, 0.1, 0.9, -0.4, -0.6, 0.2, 0.7;
  const Eigen::Matrix3d q = Eigen::HouseholderQR<Eigen::Matrix3d>(a).householderQ();
  return q * Eigen::Vector3d(1.0, 3.0, 10.0).asDiagonal() * q.transpose();
}

void check_gaussian_recovery(const std::vector<ChainTrace>& traces, const Eigen::MatrixXd& cov,
                             const Eigen::VectorXd& mean) {
  const auto d = static_cast<std::size_t>(mean.size());
  std::vector<std::vector<double>> draws;
  for (std::size_t p = 0; p < d; ++p) draws.push_back(pooled(traces, p));
  const std::size_t n = draws[0].size();
  Eigen::VectorXd m(static_cast<Eigen::Index>(d));
  for (std::size_t p = 0; p < d; ++p) {
    m(static_cast<Eigen::Index>(p)) = mean_of(draws[p]);
    CAPTURE(p);
    CHECK(std::abs(m(static_cast<Eigen::Index>(p)) - mean(static_cast<Eigen::Index>(p))) <=
          3.0 * batch_means_mcse(traces, p));
  }
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::VectorXd x(static_cast<Eigen::Index>(d));
    for (std::size_t p = 0; p < d; ++p) x(static_cast<Eigen::Index>(p)) = draws[p][i];
    s += (x - m) * (x - m).transpose();
  }
  s /= static_cast<double>(n - 1);
  CHECK((s - cov).norm() / cov.norm() <= 0.10);
}

}  // namespace

TEST_CASE("standard normal target") {
  SamplerConfig cfg;
  cfg.n_chains = 1;
  cfg.n_iterations = 75000;
  cfg.seed = 3;
  const auto traces = run(gaussian_target(Eigen::MatrixXd::Identity(1, 1), Eigen::VectorXd::Zero(1)), cfg, 2.0);
  const auto draws = pooled(traces, 0);
  REQUIRE(draws.size() == 50000);
  const double m = mean_of(draws);
  double var = 0.0;
  for (double x : draws) var += (x - m) * (x - m);
  var /= static_cast<double>(draws.size() - 1);
  CHECK(std::abs(m) <= 3.0 * batch_means_mcse(traces, 0));
  CHECK(std::abs(var - 1.0) <= 0.10);
  const double acc = traces[0].mean_accept_rate();
  CHECK(acc >= 0.1);
  CHECK(acc <= 0.6);
}

TEST_CASE("correlated three-dimensional gaussian") {
  const auto cov = condition_10_covariance();
  const Eigen::VectorXd mean = Eigen::Vector3d(1.0, -2.0, 0.5);
  SamplerConfig cfg;
  cfg.n_iterations = 15000;
  cfg.seed = 17;
  check_gaussian_recovery(run(gaussian_target(cov, mean), cfg), cov, mean);
}

TEST_CASE("hmc on the correlated gaussian") {
  const auto cov = condition_10_covariance();
  const Eigen::VectorXd mean = Eigen::Vector3d(1.0, -2.0, 0.5);
  SamplerConfig cfg;
  cfg.algorithm = Algorithm::hmc;
  cfg.target_accept = 0.8;
  cfg.n_iterations = 3000;
  cfg.seed = 23;
  const auto traces = run(gaussian_target(cov, mean), cfg);
  check_gaussian_recovery(traces, cov, mean);
  for (const auto& t : traces) CHECK(t.mean_accept_rate() > 0.5);
}

TEST_CASE("beta target through the logit transform") {
  Target t;
  t.dim = 1;
  t.log_density = [](std::span<const double> x) {
    const double u = 1.0 / (1.0 + std::exp(-x[0]));
    return 5.0 * std::log(u) + 3.0 * std::log1p(-u) + std::log(u * (1.0 - u));
  };
  t.constrain = [](std::span<const double> x) {
    return std::vector<double>{1.0 / (1.0 + std::exp(-x[0]))};
  };
  t.names = {"c"};
  SamplerConfig cfg;
  cfg.n_iterations = 15000;
  cfg.seed = 8;
  const auto traces = run(t, cfg);
  CHECK(std::abs(mean_of(pooled(traces, 0)) - 0.6) <= 3.0 * batch_means_mcse(traces, 0));
  CHECK(traces[0].names == std::vector<std::string>{"c"});
}

TEST_CASE("same seed gives bit-identical traces, serial or threaded") {
  const auto target = gaussian_target(condition_10_covariance(), Eigen::Vector3d::Zero());
  SamplerConfig cfg;
  cfg.n_iterations = 600;
  cfg.seed = 42;
  const auto a = run(target, cfg);
  const auto b = run(target, cfg);
  cfg.parallel = false;
  const auto c = run(target, cfg);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].unconstrained == b[i].unconstrained);
    CHECK(a[i].unconstrained == c[i].unconstrained);
    CHECK(a[i].log_posterior == c[i].log_posterior);
  }
  cfg.seed = 43;
  CHECK(run(target, cfg)[0].unconstrained != a[0].unconstrained);
}

TEST_CASE("identically initialized chains diverge") {
  const auto target = gaussian_target(Eigen::MatrixXd::Identity(2, 2), Eigen::Vector2d::Zero());
  SamplerConfig cfg;
  cfg.n_iterations = 10;
  const auto traces = run(target, cfg, 0.3);
  for (std::size_t c = 1; c < traces.size(); ++c) {
    CHECK(traces[c].unconstrained != traces[0].unconstrained);
    CHECK(traces[c].chain_id == static_cast<int>(c));
  }
  // Proposals differ from the first step on.
  CHECK(chain_rng(1, 0)() != chain_rng(1, 1)());
}

TEST_CASE("burn-in slicing and trace bookkeeping") {
  const auto target = gaussian_target(Eigen::MatrixXd::Identity(1, 1), Eigen::VectorXd::Zero(1));
  SamplerConfig cfg;
  cfg.n_chains = 2;
  cfg.n_iterations = 100;
  cfg.steps_per_iteration = 4;
  const auto traces = run(target, cfg);
  CHECK(cfg.burn_in() == 33);
  for (const auto& t : traces) {
    CHECK(t.size() == 100);
    CHECK(t.burn_in == 33);
    CHECK(t.kept(0).size() == 67);
    for (double a : t.accept_rate) {
      const double quarters = a * 4.0;
      CHECK(quarters == std::round(quarters));
    }
  }
  cfg.burn_in_fraction = 0.0;
  CHECK(cfg.burn_in() == 0);
}

TEST_CASE("configuration and initialization errors") {
  const auto target = gaussian_target(Eigen::MatrixXd::Identity(1, 1), Eigen::VectorXd::Zero(1));
  SamplerConfig cfg;
  cfg.n_chains = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.burn_in_fraction = 1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

  Target hole = target;
  hole.log_density = [](std::span<const double> x) {
    return x[0] > 0.0 ? -0.5 * x[0] * x[0] : -std::numeric_limits<double>::infinity();
  };
  Rng rng(1);
  CHECK_THROWS_AS(run_chain(hole, {-1.0}, SamplerConfig{}, rng), InitializationError);
  CHECK_THROWS_AS(run_chain(hole, {1.0, 2.0}, SamplerConfig{}, rng), InitializationError);
  cfg = {};
  cfg.n_chains = 2;
  CHECK_THROWS_AS(run_chains(hole, cfg, {{1.0}, {-1.0}}), InitializationError);
  CHECK(parse_algorithm(algorithm_name(Algorithm::hmc)) == Algorithm::hmc);
  CHECK_THROWS(parse_algorithm("nuts"));
}

TEST_CASE("constrained support is never left") {
  Target t;
  t.dim = 1;
  t.log_density = [](std::span<const double> x) {
    return x[0] > 0.0 ? -x[0] : -std::numeric_limits<double>::infinity();
  };
  SamplerConfig cfg;
  cfg.n_chains = 2;
  cfg.n_iterations = 3000;
  for (const auto& tr : run(t, cfg, 1.0))
    for (double v : tr.unconstrained) CHECK(v > 0.0);
}

TEST_CASE("prior initialization of the tank posterior") {
  ParameterVector truth;
  truth.pollution_ic = {0.0, 12.0};
  truth.calib_ic["cal1"] = {0.0, 13.8};
  ObservationDesign design;
  design.level_cutoff = 1.0;
  design.calibration.push_back({"cal1", {0.0, 60.0, 120.0, 180.0, 240.0}});
  Rng sim(4);
  const TankPosterior posterior(simulate_dataset(sim, truth, design), default_prior_spec(), 2);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng = chain_rng(seed, 0);
    const auto x = initialize_from_prior(rng, posterior);
    CHECK(x.size() == posterior.layout().size());
    CHECK(std::isfinite(posterior(x)));
  }
  Rng rng(1);
  CHECK_THROWS_AS(initialize_from_prior(rng, posterior, 0), InitializationError);
  const auto scales = prior_proposal_scales(posterior);
  CHECK(scales.size() == posterior.layout().size());
  for (double s : scales) CHECK(s > 0.0);
}
