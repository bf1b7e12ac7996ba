#ifndef DRAINBACK_COMMANDS_HPP
#define DRAINBACK_COMMANDS_HPP

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "drainback/io.hpp"

namespace drainback {

// Exit status of a subcommand: ok, error, or completed with failed health gates.
enum ExitCode : int { exit_ok = 0, exit_error = 1, exit_unhealthy = 2 };

struct CommandResult {
  int exit_code = exit_ok;
  std::vector<std::filesystem::path> files;
  std::vector<std::string> warnings;
};

// Writes dataset.csv and truth.json into the output directory.
CommandResult cmd_simulate(const RunConfig& config);

// Writes samples.csv, summary.txt, correlation.csv, trajectories.csv,
// discrepancy.csv, residuals.csv and diagnostics.csv.
CommandResult cmd_fit(const RunConfig& config);

// Writes reconstruction.txt for the pollution initial condition.
CommandResult cmd_reconstruct(const RunConfig& config, const std::filesystem::path& samples);

// Writes diagnostics.txt and trace.csv.
CommandResult cmd_diagnose(const std::filesystem::path& samples, const std::filesystem::path& out_dir,
                           const HealthGates& gates = {});

// Fit pipeline pieces, exposed for reuse by tests and tools.
TankPosterior make_posterior(const RunConfig& config, const Dataset& data);
std::vector<ChainTrace> fit_posterior(const TankPosterior& posterior, const SamplerConfig& sampler);
void write_summary(std::ostream& out, const PosteriorSummary& summary,
                   const std::vector<std::string>& failures);

}  // namespace drainback

#endif
