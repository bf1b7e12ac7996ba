#ifndef DRAINBACK_IO_HPP
#define DRAINBACK_IO_HPP

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "drainback/diagnostics.hpp"
#include "drainback/model.hpp"
#include "drainback/sampler.hpp"

namespace drainback {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

enum class TimeUnit { seconds, minutes };

TimeUnit parse_time_unit(const std::string& unit);
double to_seconds(double value, TimeUnit unit);
double from_seconds(double seconds, TimeUnit unit);

// Ground truth and observation plan for `simulate`. Times are in seconds.
struct SimulationSpec {
  ParameterVector truth;
  ObservationDesign design;
};

struct RunConfig {
  std::filesystem::path dataset;
  TimeUnit time_unit = TimeUnit::seconds;
  double level_cutoff = 1.0;  // cm
  std::filesystem::path out_dir = "out";
  std::uint64_t seed = 1;
  double g = 981.0;
  int degree = 2;
  PriorSpec prior = default_prior_spec();
  // Random-walk moves along the curved c-r ridge are short, so each stored
  // draw composes several transitions.
  SamplerConfig sampler = [] {
    SamplerConfig s;
    s.steps_per_iteration = 32;
    return s;
  }();
  HealthGates gates;
  std::optional<SimulationSpec> simulation;
  std::size_t trajectory_draws = 50;
};

RunConfig load_config(const std::filesystem::path& path);
RunConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

nlohmann::json prior_to_json(const PriorSpec& spec);
PriorSpec prior_from_json(const nlohmann::json& j, PriorSpec base = default_prior_spec());
nlohmann::json parameters_to_json(const ParameterVector& beta);
ParameterVector parameters_from_json(const nlohmann::json& j);

// CSV with header experiment_id,kind,t,level,held_out. Times are converted
// to seconds; calibration rows at or below the cutoff are dropped.
Dataset read_dataset(std::istream& in, TimeUnit unit, double level_cutoff,
                     const std::string& source = "<stream>");
Dataset load_dataset(const std::filesystem::path& path, TimeUnit unit = TimeUnit::seconds,
                     double level_cutoff = 0.0);
void write_dataset(std::ostream& out, const Dataset& data, TimeUnit unit);
void save_dataset(const std::filesystem::path& path, const Dataset& data, TimeUnit unit);

// One row per draw: chain,iteration,warmup,log_posterior,accept_rate,<params>.
void write_samples(std::ostream& out, std::span<const ChainTrace> traces);
std::vector<ChainTrace> read_samples(std::istream& in, const std::string& source = "<stream>");
std::vector<ChainTrace> load_samples(const std::filesystem::path& path);

// Round-trip formatting of doubles.
std::string format_double(double v);

}  // namespace drainback

#endif
