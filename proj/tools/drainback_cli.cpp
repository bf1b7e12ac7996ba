// Command-line front end: simulate | fit | reconstruct | diagnose.

#include <CLI11.hpp>
#include <iostream>

#include "drainback/commands.hpp"

namespace {

int report(const drainback::CommandResult& result) {
  for (const auto& f : result.files) std::cout << "wrote " << f.string() << '\n';
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
  return result.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reconstruct the initial level of a partially drained tank"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string samples_path;
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--seed", seed, "Override the configured seed");
  app.add_option("--out-dir", out_dir, "Override the output directory");

  auto* simulate = app.add_subcommand("simulate", "Write a synthetic dataset and its ground truth");
  auto* fit = app.add_subcommand("fit", "Sample the posterior and write summaries");
  auto* reconstruct = app.add_subcommand("reconstruct", "Report the pollution initial condition");
  reconstruct->add_option("--samples", samples_path, "Samples file from fit")->required();
  auto* diagnose = app.add_subcommand("diagnose", "Convergence diagnostics for a samples file");
  diagnose->add_option("--samples", samples_path, "Samples file from fit")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help and --version exit cleanly; every usage error is a plain error.
    return app.exit(e) == 0 ? drainback::exit_ok : drainback::exit_error;
  }

  try {
    drainback::RunConfig config;
    if (!config_path.empty()) {
      config = drainback::load_config(config_path);
    } else if (!diagnose->parsed()) {
      std::cerr << "error: --config is required for this subcommand\n";
      return drainback::exit_error;
    }
    if (seed) {
      config.seed = *seed;
      config.sampler.seed = *seed;
    }
    if (!out_dir.empty()) config.out_dir = out_dir;

    if (simulate->parsed()) return report(drainback::cmd_simulate(config));
    if (fit->parsed()) return report(drainback::cmd_fit(config));
    if (reconstruct->parsed()) return report(drainback::cmd_reconstruct(config, samples_path));
    if (diagnose->parsed())
      return report(drainback::cmd_diagnose(samples_path, config.out_dir, config.gates));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return drainback::exit_error;
  }
  return drainback::exit_error;
}
