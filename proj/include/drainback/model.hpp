#ifndef DRAINBACK_MODEL_HPP
#define DRAINBACK_MODEL_HPP

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "drainback/discrepancy.hpp"
#include "drainback/distributions.hpp"
#include "drainback/forward_model.hpp"

namespace drainback {

enum class ExperimentKind { pollution, calibration };

struct Observation {
  double t = 0.0;      // s
  double level = 0.0;  // cm
};

struct Experiment {
  std::string id;
  ExperimentKind kind = ExperimentKind::calibration;
  std::vector<Observation> observations;
  double level_cutoff = 0.0;
  // Known initial state kept for validation only; never scored.
  std::optional<Observation> held_out;
};

struct Dataset {
  std::vector<Experiment> experiments;

  const Experiment& pollution() const;
  const Experiment& find(const std::string& id) const;
  std::vector<std::string> calibration_ids() const;
  // Throws std::invalid_argument unless there is exactly one pollution
  // experiment with one observation and every series is time-ordered.
  void validate() const;
};

/// Full inference state: physics parameters, discrepancy, noise level and
/// the initial condition of every experiment.
struct ParameterVector {
  TankGeometry geom;
  Orifice orifice;
  DiscrepancyCoefficients a = DiscrepancyCoefficients::zeros(2);
  double sigma = 0.25;
  InitialCondition pollution_ic;
  std::map<std::string, InitialCondition> calib_ic;

  const InitialCondition& initial_condition(const Experiment& experiment) const;
};

/// Fixed ordering of the flattened parameter vector.
///
/// Order: h_max, x_t, x_b, c, r, a0..an, sigma, t0, h0, then t0_<id>, h0_<id>
/// for each calibration experiment in lexicographic id order.
class ParameterLayout {
 public:
  ParameterLayout(int degree, std::vector<std::string> calibration_ids);
  static ParameterLayout for_dataset(const Dataset& data, int degree);

  int degree() const { return degree_; }
  const std::vector<std::string>& calibration_ids() const { return calibration_ids_; }
  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t index_of(const std::string& name) const;

  std::vector<double> flatten(const ParameterVector& beta) const;
  ParameterVector unflatten(std::span<const double> values) const;

  std::size_t c_index() const { return 3; }
  std::size_t sigma_index() const { return 5 + static_cast<std::size_t>(degree_) + 1; }
  std::size_t h0_index() const { return sigma_index() + 2; }

 private:
  int degree_;
  std::vector<std::string> calibration_ids_;
  std::vector<std::string> names_;
};

struct PriorSpec {
  Distribution h_max = Normal{14.0, 0.1};
  Distribution x_t = Normal{8.7, 0.1};
  Distribution x_b = Normal{8.4, 0.1};
  Distribution r = Normal{0.12, 0.05 * 0.12};
  Distribution c = BetaDist{6.0, 4.0};
  Distribution sigma = Exponential{4.0};
  // One entry per coefficient; the last entry covers any higher-degree terms.
  std::vector<Distribution> a{Laplace{0.0, 0.25}, Laplace{0.0, 0.25}, Laplace{0.0, 0.25}};
  Distribution pollution_t0 = Normal{0.0, 5.0};
  // Pollution h0 | h_max ~ Uniform(0, h_max); no hyperparameters.
  Distribution calibration_t0 = Normal{0.0, 0.25};
  // Calibration h0 | sigma ~ Normal(calibration_h0_mean, sigma^2).
  double calibration_h0_mean = 14.0;

  const Distribution& a_prior(std::size_t nu) const;
  void validate() const;
};

PriorSpec default_prior_spec();

double log_prior(const ParameterVector& beta, const PriorSpec& spec);

// Noise-free observation model: corrected level of the experiment's
// trajectory at t. The tank is at rest before its drain start time.
double predicted_observation_mean(const ParameterVector& beta, const Experiment& experiment,
                                  double t, const PhysicalConstants& constants = {},
                                  const SolverOptions& options = {});

// Physics-only and corrected levels at several times from a single solve.
struct PredictedSeries {
  std::vector<double> physics;
  std::vector<double> corrected;
};
PredictedSeries predict_series(const ParameterVector& beta, const InitialCondition& ic,
                               std::span<const double> times,
                               const PhysicalConstants& constants = {},
                               const SolverOptions& options = {});

double experiment_log_likelihood(const ParameterVector& beta, const Experiment& experiment,
                                 const PhysicalConstants& constants = {},
                                 const SolverOptions& options = {});
double log_likelihood(const ParameterVector& beta, const Dataset& data,
                      const PhysicalConstants& constants = {},
                      const SolverOptions& options = {});
double log_posterior_unnorm(const ParameterVector& beta, const Dataset& data,
                            const PriorSpec& spec, const PhysicalConstants& constants = {},
                            const SolverOptions& options = {});

// Number of solver failures mapped to -inf since start-up.
long solver_failure_count();

struct Unconstrained {
  std::vector<double> x;
  double log_jacobian = 0.0;  // log |d beta / d x|
};

Unconstrained to_unconstrained(const ParameterVector& beta, const ParameterLayout& layout);
ParameterVector from_unconstrained(std::span<const double> x, const ParameterLayout& layout);
double log_jacobian(std::span<const double> x, const ParameterLayout& layout);

// Log posterior density of the unconstrained coordinates.
class TankPosterior {
 public:
  TankPosterior(Dataset data, PriorSpec spec, int degree, PhysicalConstants constants = {},
                SolverOptions options = {});

  const ParameterLayout& layout() const { return layout_; }
  const Dataset& data() const { return data_; }
  const PriorSpec& prior() const { return spec_; }
  const PhysicalConstants& constants() const { return constants_; }
  const SolverOptions& solver_options() const { return options_; }

  double operator()(std::span<const double> x) const;
  std::vector<double> constrain(std::span<const double> x) const;

 private:
  Dataset data_;
  PriorSpec spec_;
  PhysicalConstants constants_;
  SolverOptions options_;
  ParameterLayout layout_;
};

ParameterVector sample_prior(Rng& rng, const PriorSpec& spec, const ParameterLayout& layout);

struct CalibrationDesign {
  std::string id;
  std::vector<double> times;
};

struct ObservationDesign {
  std::string pollution_id = "pollution";
  double pollution_time = 250.8;
  bool hold_out_initial = true;
  std::vector<CalibrationDesign> calibration;
  double level_cutoff = 0.0;
};

// Calibration observations whose simulated level is at or below the cutoff
// are dropped, mirroring load_dataset.
Dataset simulate_dataset(Rng& rng, const ParameterVector& beta, const ObservationDesign& design,
                         const PhysicalConstants& constants = {},
                         const SolverOptions& options = {});

}  // namespace drainback

#endif
