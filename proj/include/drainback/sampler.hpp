#ifndef DRAINBACK_SAMPLER_HPP
#define DRAINBACK_SAMPLER_HPP

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "drainback/distributions.hpp"
#include "drainback/model.hpp"

namespace drainback {

enum class Algorithm { adaptive_metropolis, hmc };

Algorithm parse_algorithm(const std::string& name);
std::string algorithm_name(Algorithm algorithm);

struct SamplerConfig {
  int n_chains = 4;
  int n_iterations = 5000;
  double burn_in_fraction = 1.0 / 3.0;
  std::uint64_t seed = 1;
  Algorithm algorithm = Algorithm::adaptive_metropolis;
  // 0.234 for random-walk Metropolis; 0.8 is the usual choice for HMC.
  double target_accept = 0.234;
  // Transitions composed into one stored iteration.
  int steps_per_iteration = 1;
  // HMC only.
  int leapfrog_steps = 12;
  double fd_step = 1e-5;
  // Starting proposal standard deviations, one per coordinate. Empty means 0.1.
  std::vector<double> initial_scale;
  bool parallel = true;

  std::size_t burn_in() const;
  void validate() const;
};

class InitializationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Log density on R^dim plus an optional map to reported parameter values.
struct Target {
  std::size_t dim = 0;
  std::function<double(std::span<const double>)> log_density;
  std::function<std::vector<double>(std::span<const double>)> constrain;
  std::vector<std::string> names;
};

Target make_target(const TankPosterior& posterior);

/// Draws of one Markov chain.
///
/// `unconstrained` and `values` are row-major, one row per iteration.
/// Rows [0, burn_in) were produced while the proposal was still adapting.
struct ChainTrace {
  int chain_id = 0;
  std::uint64_t seed = 0;
  std::size_t dim = 0;
  std::size_t burn_in = 0;
  std::vector<std::string> names;
  std::vector<double> unconstrained;
  std::vector<double> values;
  std::vector<double> log_posterior;
  std::vector<double> accept_rate;

  std::size_t size() const { return log_posterior.size(); }
  std::size_t n_values() const { return names.size(); }
  double value(std::size_t iteration, std::size_t param) const {
    return values[iteration * n_values() + param];
  }
  std::size_t index_of(const std::string& name) const;
  std::vector<double> kept(std::size_t param) const;
  double mean_accept_rate() const;
};

// Seeds the stream for one chain from the run seed and the chain id.
Rng chain_rng(std::uint64_t seed, int chain_id);

ChainTrace run_chain(const Target& target, std::vector<double> init, const SamplerConfig& config,
                     Rng& rng, int chain_id = 0);

std::vector<ChainTrace> run_chains(const Target& target, const SamplerConfig& config,
                                   const std::vector<std::vector<double>>& inits);

// Prior draws until the posterior is finite; returns unconstrained coordinates.
std::vector<double> initialize_from_prior(Rng& rng, const TankPosterior& posterior,
                                          int max_retries = 200);

// Prior standard deviations mapped to the unconstrained coordinates.
std::vector<double> prior_proposal_scales(const TankPosterior& posterior);

}  // namespace drainback

#endif
