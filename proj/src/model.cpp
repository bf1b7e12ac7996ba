#include "drainback/model.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iostream>
#include <limits>
#include <set>
#include <stdexcept>

namespace drainback {

namespace {

constexpr double neg_inf = -std::numeric_limits<double>::infinity();

std::atomic<long> g_solver_failures{0};

void note_solver_failure(const std::exception& e) {
  if (g_solver_failures.fetch_add(1) == 0)
    std::cerr << "warning: forward solve failed, treating as zero likelihood: " << e.what()
              << '\n';
}

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p) - std::log1p(-p); }

// log(u (1 - u)) for u = logistic(x), stable for large |x|.
double log_logistic_derivative(double x) {
  return -std::abs(x) - 2.0 * std::log1p(std::exp(-std::abs(x)));
}

}  // namespace

// ---------------------------------------------------------------------------
// Dataset

const Experiment& Dataset::pollution() const {
  for (const auto& e : experiments)
    if (e.kind == ExperimentKind::pollution) return e;
  throw std::invalid_argument("dataset has no pollution experiment");
}

const Experiment& Dataset::find(const std::string& id) const {
  for (const auto& e : experiments)
    if (e.id == id) return e;
  throw std::invalid_argument("unknown experiment id '" + id + "'");
}

std::vector<std::string> Dataset::calibration_ids() const {
  std::vector<std::string> ids;
  for (const auto& e : experiments)
    if (e.kind == ExperimentKind::calibration) ids.push_back(e.id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

void Dataset::validate() const {
  int n_pollution = 0;
  std::set<std::string> ids;
  for (const auto& e : experiments) {
    if (!ids.insert(e.id).second) throw std::invalid_argument("duplicate experiment id '" + e.id + "'");
    if (e.kind == ExperimentKind::pollution) {
      ++n_pollution;
      if (e.observations.size() != 1)
        throw std::invalid_argument("pollution experiment '" + e.id +
                                    "' must carry exactly one observation");
    } else if (e.observations.empty()) {
      throw std::invalid_argument("calibration experiment '" + e.id + "' has no observations");
    }
    for (std::size_t i = 0; i < e.observations.size(); ++i) {
      const auto& o = e.observations[i];
      if (!std::isfinite(o.t) || !std::isfinite(o.level) || o.t < 0.0)
        throw std::invalid_argument("experiment '" + e.id + "' has an invalid observation");
      if (i > 0 && !(o.t > e.observations[i - 1].t))
        throw std::invalid_argument("experiment '" + e.id + "' observation times not increasing");
    }
  }
  if (n_pollution != 1) throw std::invalid_argument("dataset needs exactly one pollution experiment");
}

// ---------------------------------------------------------------------------
// Parameters

const InitialCondition& ParameterVector::initial_condition(const Experiment& experiment) const {
  if (experiment.kind == ExperimentKind::pollution) return pollution_ic;
  auto it = calib_ic.find(experiment.id);
  if (it == calib_ic.end())
    throw std::invalid_argument("no initial condition for experiment '" + experiment.id + "'");
  return it->second;
}

ParameterLayout::ParameterLayout(int degree, std::vector<std::string> calibration_ids)
    : degree_(degree), calibration_ids_(std::move(calibration_ids)) {
  if (degree_ < 0) throw std::invalid_argument("negative Bernstein degree");
  std::sort(calibration_ids_.begin(), calibration_ids_.end());
  names_ = {"h_max", "x_t", "x_b", "c", "r"};
  for (int nu = 0; nu <= degree_; ++nu) names_.push_back("a" + std::to_string(nu));
  names_.insert(names_.end(), {"sigma", "t0", "h0"});
  for (const auto& id : calibration_ids_) {
    names_.push_back("t0_" + id);
    names_.push_back("h0_" + id);
  }
}

ParameterLayout ParameterLayout::for_dataset(const Dataset& data, int degree) {
  return ParameterLayout(degree, data.calibration_ids());
}

std::size_t ParameterLayout::index_of(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw std::invalid_argument("unknown parameter '" + name + "'");
  return static_cast<std::size_t>(it - names_.begin());
}

std::vector<double> ParameterLayout::flatten(const ParameterVector& beta) const {
  if (beta.a.degree() != degree_) throw std::invalid_argument("discrepancy degree mismatch");
  std::vector<double> v{beta.geom.h_max, beta.geom.x_t, beta.geom.x_b, beta.orifice.c,
                        beta.orifice.r};
  v.insert(v.end(), beta.a.a.begin(), beta.a.a.end());
  v.insert(v.end(), {beta.sigma, beta.pollution_ic.t0, beta.pollution_ic.h0});
  for (const auto& id : calibration_ids_) {
    auto it = beta.calib_ic.find(id);
    if (it == beta.calib_ic.end())
      throw std::invalid_argument("missing calibration initial condition '" + id + "'");
    v.push_back(it->second.t0);
    v.push_back(it->second.h0);
  }
  return v;
}

ParameterVector ParameterLayout::unflatten(std::span<const double> values) const {
  if (values.size() != size()) throw std::invalid_argument("parameter vector has wrong length");
  ParameterVector beta;
  beta.geom = {values[0], values[1], values[2]};
  beta.orifice.c = values[3];
  beta.orifice.r = values[4];
  std::size_t i = 5;
  beta.a.a.assign(values.begin() + 5, values.begin() + 5 + degree_ + 1);
  i += static_cast<std::size_t>(degree_) + 1;
  beta.sigma = values[i++];
  beta.pollution_ic.t0 = values[i++];
  beta.pollution_ic.h0 = values[i++];
  for (const auto& id : calibration_ids_) {
    InitialCondition ic;
    ic.t0 = values[i++];
    ic.h0 = values[i++];
    beta.calib_ic.emplace(id, ic);
  }
  return beta;
}

// ---------------------------------------------------------------------------
// Priors

const Distribution& PriorSpec::a_prior(std::size_t nu) const {
  if (a.empty()) throw std::invalid_argument("no discrepancy prior configured");
  return a[std::min(nu, a.size() - 1)];
}

void PriorSpec::validate() const {
  for (const auto* d : {&h_max, &x_t, &x_b, &r, &c, &sigma, &pollution_t0, &calibration_t0})
    drainback::validate(*d);
  if (a.empty()) throw std::invalid_argument("no discrepancy prior configured");
  for (const auto& d : a) drainback::validate(d);
  if (!std::isfinite(calibration_h0_mean))
    throw std::invalid_argument("calibration h0 prior mean must be finite");
}

PriorSpec default_prior_spec() { return PriorSpec{}; }

double log_prior(const ParameterVector& beta, const PriorSpec& spec) {
  const auto& g = beta.geom;
  if (!(g.h_max > 0.0 && g.x_t > 0.0 && g.x_b > 0.0 && beta.orifice.r > 0.0)) return neg_inf;
  if (!(beta.orifice.c > 0.0 && beta.orifice.c < 1.0)) return neg_inf;
  if (!(beta.sigma > 0.0) || !std::isfinite(beta.sigma)) return neg_inf;
  const double h0 = beta.pollution_ic.h0;
  if (!(h0 >= 0.0 && h0 <= g.h_max)) return neg_inf;

  double lp = log_density(spec.h_max, g.h_max) + log_density(spec.x_t, g.x_t) +
              log_density(spec.x_b, g.x_b) + log_density(spec.r, beta.orifice.r) +
              log_density(spec.c, beta.orifice.c) + log_density(spec.sigma, beta.sigma);
  for (std::size_t nu = 0; nu < beta.a.a.size(); ++nu)
    lp += log_density(spec.a_prior(nu), beta.a.a[nu]);
  lp += log_density(spec.pollution_t0, beta.pollution_ic.t0);
  lp += -std::log(g.h_max);
  for (const auto& [id, ic] : beta.calib_ic) {
    lp += log_density(spec.calibration_t0, ic.t0);
    lp += normal_log_density(ic.h0, spec.calibration_h0_mean, beta.sigma);
  }
  return std::isnan(lp) ? neg_inf : lp;
}

// ---------------------------------------------------------------------------
// Likelihood

PredictedSeries predict_series(const ParameterVector& beta, const InitialCondition& ic,
                               std::span<const double> times, const PhysicalConstants& constants,
                               const SolverOptions& options) {
  PredictedSeries out;
  out.physics.reserve(times.size());
  out.corrected.reserve(times.size());
  const double t_last = times.empty() ? ic.t0 : *std::max_element(times.begin(), times.end());
  std::optional<LevelTrajectory> traj;
  if (t_last > ic.t0) traj = simulate_level(beta.geom, beta.orifice, constants, ic, t_last, options);
  for (double t : times) {
    const double h = (t <= ic.t0 || !traj) ? ic.h0 : traj->level_at(t);
    out.physics.push_back(h);
    out.corrected.push_back(corrected_level(h, beta.a, beta.geom.h_max));
  }
  return out;
}

double predicted_observation_mean(const ParameterVector& beta, const Experiment& experiment,
                                  double t, const PhysicalConstants& constants,
                                  const SolverOptions& options) {
  const double times[] = {t};
  return predict_series(beta, beta.initial_condition(experiment), times, constants, options)
      .corrected.front();
}

double experiment_log_likelihood(const ParameterVector& beta, const Experiment& experiment,
                                 const PhysicalConstants& constants,
                                 const SolverOptions& options) {
  if (experiment.observations.empty()) return 0.0;
  if (!(beta.sigma > 0.0)) return neg_inf;
  const auto& ic = beta.initial_condition(experiment);
  // The level model is only defined inside the tank.
  if (!(ic.h0 >= 0.0 && ic.h0 <= beta.geom.h_max) || !std::isfinite(ic.t0)) return neg_inf;

  std::vector<double> times;
  times.reserve(experiment.observations.size());
  for (const auto& o : experiment.observations) times.push_back(o.t);

  PredictedSeries pred;
  try {
    pred = predict_series(beta, ic, times, constants, options);
  } catch (const SolverError& e) {
    note_solver_failure(e);
    return neg_inf;
  } catch (const std::domain_error& e) {
    note_solver_failure(e);
    return neg_inf;
  }

  double ll = 0.0;
  for (std::size_t i = 0; i < times.size(); ++i)
    ll += normal_log_density(experiment.observations[i].level, pred.corrected[i], beta.sigma);
  return ll;
}

double log_likelihood(const ParameterVector& beta, const Dataset& data,
                      const PhysicalConstants& constants, const SolverOptions& options) {
  double ll = 0.0;
  for (const auto& e : data.experiments) {
    ll += experiment_log_likelihood(beta, e, constants, options);
    if (ll == neg_inf) return neg_inf;
  }
  return ll;
}

double log_posterior_unnorm(const ParameterVector& beta, const Dataset& data,
                            const PriorSpec& spec, const PhysicalConstants& constants,
                            const SolverOptions& options) {
  const double lp = log_prior(beta, spec);
  if (lp == neg_inf) return neg_inf;
  return lp + log_likelihood(beta, data, constants, options);
}

long solver_failure_count() { return g_solver_failures.load(); }

// ---------------------------------------------------------------------------
// Unconstrained parameterization

Unconstrained to_unconstrained(const ParameterVector& beta, const ParameterLayout& layout) {
  auto v = layout.flatten(beta);
  for (double x : v)
    if (!std::isfinite(x)) throw std::domain_error("non-finite parameter value");
  const double c = beta.orifice.c;
  const double sigma = beta.sigma;
  const double h_max = beta.geom.h_max;
  const double u = beta.pollution_ic.h0 / h_max;
  if (!(c > 0.0 && c < 1.0) || !(sigma > 0.0) || !(h_max > 0.0) || !(u > 0.0 && u < 1.0))
    throw std::domain_error("parameter vector outside the transformable support");
  v[layout.c_index()] = logit(c);
  v[layout.sigma_index()] = std::log(sigma);
  v[layout.h0_index()] = logit(u);
  Unconstrained out;
  out.log_jacobian = log_jacobian(v, layout);
  out.x = std::move(v);
  return out;
}

ParameterVector from_unconstrained(std::span<const double> x, const ParameterLayout& layout) {
  for (double v : x)
    if (!std::isfinite(v)) throw std::domain_error("non-finite unconstrained coordinate");
  std::vector<double> v(x.begin(), x.end());
  v[layout.c_index()] = logistic(x[layout.c_index()]);
  v[layout.sigma_index()] = std::exp(x[layout.sigma_index()]);
  v[layout.h0_index()] = v[0] * logistic(x[layout.h0_index()]);
  return layout.unflatten(v);
}

double log_jacobian(std::span<const double> x, const ParameterLayout& layout) {
  return log_logistic_derivative(x[layout.c_index()]) + x[layout.sigma_index()] +
         std::log(std::abs(x[0])) + log_logistic_derivative(x[layout.h0_index()]);
}

TankPosterior::TankPosterior(Dataset data, PriorSpec spec, int degree,
                             PhysicalConstants constants, SolverOptions options)
    : data_(std::move(data)),
      spec_(std::move(spec)),
      constants_(constants),
      options_(options),
      layout_(ParameterLayout::for_dataset(data_, degree)) {
  data_.validate();
  spec_.validate();
}

double TankPosterior::operator()(std::span<const double> x) const {
  for (double v : x)
    if (!std::isfinite(v)) return neg_inf;
  const auto beta = from_unconstrained(x, layout_);
  const double lp = log_posterior_unnorm(beta, data_, spec_, constants_, options_);
  if (lp == neg_inf || std::isnan(lp)) return neg_inf;
  return lp + log_jacobian(x, layout_);
}

std::vector<double> TankPosterior::constrain(std::span<const double> x) const {
  return layout_.flatten(from_unconstrained(x, layout_));
}

// ---------------------------------------------------------------------------
// Generative side

ParameterVector sample_prior(Rng& rng, const PriorSpec& spec, const ParameterLayout& layout) {
  ParameterVector beta;
  beta.geom.h_max = sample(spec.h_max, rng);
  beta.geom.x_t = sample(spec.x_t, rng);
  beta.geom.x_b = sample(spec.x_b, rng);
  beta.orifice.r = sample(spec.r, rng);
  beta.orifice.c = sample(spec.c, rng);
  beta.sigma = sample(spec.sigma, rng);
  std::vector<double> a;
  for (int nu = 0; nu <= layout.degree(); ++nu)
    a.push_back(sample(spec.a_prior(static_cast<std::size_t>(nu)), rng));
  beta.a = DiscrepancyCoefficients(std::move(a));
  beta.pollution_ic.t0 = sample(spec.pollution_t0, rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  beta.pollution_ic.h0 = unit(rng) * beta.geom.h_max;
  for (const auto& id : layout.calibration_ids()) {
    InitialCondition ic;
    ic.t0 = sample(spec.calibration_t0, rng);
    std::normal_distribution<double> h0(spec.calibration_h0_mean, beta.sigma);
    ic.h0 = h0(rng);
    beta.calib_ic.emplace(id, ic);
  }
  return beta;
}

Dataset simulate_dataset(Rng& rng, const ParameterVector& beta, const ObservationDesign& design,
                         const PhysicalConstants& constants, const SolverOptions& options) {
  std::normal_distribution<double> unit_noise(0.0, 1.0);
  auto noisy = [&](double mean) {
    // A draw is taken even when sigma is zero so the stream stays aligned.
    const double z = unit_noise(rng);
    return beta.sigma > 0.0 ? mean + beta.sigma * z : mean;
  };

  Dataset data;
  Experiment pollution;
  pollution.id = design.pollution_id;
  pollution.kind = ExperimentKind::pollution;
  pollution.level_cutoff = design.level_cutoff;
  {
    const double times[] = {design.pollution_time};
    const auto pred = predict_series(beta, beta.pollution_ic, times, constants, options);
    pollution.observations.push_back({design.pollution_time, noisy(pred.corrected.front())});
  }
  if (design.hold_out_initial)
    pollution.held_out = Observation{beta.pollution_ic.t0, beta.pollution_ic.h0};
  data.experiments.push_back(std::move(pollution));

  for (const auto& cal : design.calibration) {
    Experiment e;
    e.id = cal.id;
    e.kind = ExperimentKind::calibration;
    e.level_cutoff = design.level_cutoff;
    auto it = beta.calib_ic.find(cal.id);
    if (it == beta.calib_ic.end())
      throw std::invalid_argument("no initial condition for calibration '" + cal.id + "'");
    const auto pred = predict_series(beta, it->second, cal.times, constants, options);
    for (std::size_t i = 0; i < cal.times.size(); ++i) {
      const double level = noisy(pred.corrected[i]);
      if (level > design.level_cutoff) e.observations.push_back({cal.times[i], level});
    }
    data.experiments.push_back(std::move(e));
  }
  return data;
}

}  // namespace drainback
