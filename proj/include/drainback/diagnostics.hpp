#ifndef DRAINBACK_DIAGNOSTICS_HPP
#define DRAINBACK_DIAGNOSTICS_HPP

#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "drainback/model.hpp"
#include "drainback/sampler.hpp"

namespace drainback {

class DiagnosticError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One inner vector per chain.
using ChainDraws = std::vector<std::vector<double>>;

// Post-burn-in draws of one parameter, one vector per chain.
ChainDraws collect_draws(std::span<const ChainTrace> traces, const std::string& parameter);
std::vector<double> pooled_draws(std::span<const ChainTrace> traces, const std::string& parameter);

// Rank-normalized split R-hat: the larger of the bulk and folded-tail values.
// Needs at least two chains with four draws each.
double split_rhat(const ChainDraws& chains);
double split_rhat(std::span<const ChainTrace> traces, const std::string& parameter);

// Classic potential scale reduction factor on unsplit, untransformed chains.
double gelman_rubin(const ChainDraws& chains);

// Bulk effective sample size: rank-normalized split chains, autocorrelations
// combined across chains and truncated with Geyer's initial positive
// sequence. Capped at N log10(N) for antithetic chains.
double effective_sample_size(const ChainDraws& chains);
double effective_sample_size(std::span<const ChainTrace> traces, const std::string& parameter);

// Quantile with linear interpolation between order statistics placed at
// plotting positions (k - 0.5) / n.
double quantile(std::vector<double> samples, double p);
std::pair<double, double> credible_interval(std::span<const double> samples, double mass);

double pearson_correlation(std::span<const double> a, std::span<const double> b);
double posterior_correlation(std::span<const ChainTrace> traces, const std::string& param_a,
                             const std::string& param_b);

// Evenly spaced selection of pooled post-burn-in draws, as parameter vectors.
std::vector<ParameterVector> posterior_draws(std::span<const ChainTrace> traces,
                                             const ParameterLayout& layout, std::size_t count);

double trajectory_mae(std::span<const ChainTrace> traces, const TankPosterior& model,
                      const std::string& experiment_id, std::size_t n_posterior_draws);

struct DiscrepancyGridRow {
  double level = 0.0;
  double mean = 0.0;
  double lower = 0.0;  // 5% quantile
  double upper = 0.0;  // 95% quantile
};

struct ResidualBin {
  double low = 0.0;
  double high = 0.0;
  double mean_residual = 0.0;  // NaN when empty
  std::size_t count = 0;
};

struct DiscrepancyTable {
  std::vector<DiscrepancyGridRow> grid;
  std::vector<ResidualBin> residuals;
};

// Posterior discrepancy on a level grid spanning [0, h_max] together with
// calibration residuals against the posterior-mean physics-only level.
DiscrepancyTable discrepancy_vs_residuals(std::span<const ChainTrace> traces,
                                          const TankPosterior& model, std::size_t grid_points = 29,
                                          std::size_t bins = 14, std::size_t n_draws = 200);

struct ParameterSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  std::pair<double, double> ci90;
  std::pair<double, double> ci95;
  double rhat = 0.0;  // NaN when unavailable
  double ess = 0.0;   // NaN when unavailable
};

struct HealthGates {
  double max_rhat = 1.05;
  double min_ess = 400.0;
  double min_accept = 0.1;
  double max_accept = 0.6;
};

struct PosteriorSummary {
  std::vector<ParameterSummary> parameters;
  std::vector<std::vector<double>> correlation;
  std::vector<std::pair<std::string, double>> mae;  // per calibration experiment
  std::vector<double> accept_rate;                   // per chain
  std::size_t total_draws = 0;

  const ParameterSummary& at(const std::string& name) const;
  // Human-readable list of violated gates; empty when healthy.
  std::vector<std::string> health_failures(const HealthGates& gates = {}) const;
};

PosteriorSummary summarize(std::span<const ChainTrace> traces);
// Also fills the per-experiment trajectory MAE.
PosteriorSummary summarize(std::span<const ChainTrace> traces, const TankPosterior& model,
                           std::size_t n_mae_draws = 100);

}  // namespace drainback

#endif
