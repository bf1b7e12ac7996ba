#include "drainback/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace drainback {

using nlohmann::json;

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_number(const std::string& field, const std::string& source, std::size_t line) {
  double v = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  if (!field.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || field.empty())
    throw ParseError(source, line, "not a number: '" + field + "'");
  return v;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

Distribution distribution_from_json(const json& j) {
  const std::string family = j.at("family").get<std::string>();
  Distribution d;
  if (family == "normal") {
    d = Normal{j.at("mu").get<double>(), j.at("sd").get<double>()};
  } else if (family == "beta") {
    d = BetaDist{j.at("alpha").get<double>(), j.at("beta").get<double>()};
  } else if (family == "exponential") {
    if (j.contains("rate") == j.contains("scale"))
      throw std::invalid_argument("exponential prior needs exactly one of 'rate' or 'scale'");
    d = Exponential{j.contains("rate") ? j.at("rate").get<double>()
                                       : 1.0 / j.at("scale").get<double>()};
  } else if (family == "laplace") {
    d = Laplace{j.value("location", 0.0), j.at("scale").get<double>()};
  } else if (family == "uniform") {
    d = Uniform{j.at("low").get<double>(), j.at("high").get<double>()};
  } else {
    throw std::invalid_argument("unknown prior family '" + family + "'");
  }
  validate(d);
  return d;
}

json distribution_to_json(const Distribution& d) {
  if (auto* n = std::get_if<Normal>(&d)) return {{"family", "normal"}, {"mu", n->mu}, {"sd", n->sd}};
  if (auto* b = std::get_if<BetaDist>(&d))
    return {{"family", "beta"}, {"alpha", b->alpha}, {"beta", b->beta}};
  if (auto* e = std::get_if<Exponential>(&d)) return {{"family", "exponential"}, {"rate", e->rate}};
  if (auto* l = std::get_if<Laplace>(&d))
    return {{"family", "laplace"}, {"location", l->location}, {"scale", l->scale}};
  const auto& u = std::get<Uniform>(d);
  return {{"family", "uniform"}, {"low", u.low}, {"high", u.high}};
}

ObservationDesign design_from_json(const json& j, double level_cutoff) {
  ObservationDesign d;
  d.pollution_id = j.value("pollution_id", d.pollution_id);
  d.pollution_time = j.at("pollution_time").get<double>();
  d.hold_out_initial = j.value("hold_out_initial", true);
  d.level_cutoff = level_cutoff;
  for (const auto& c : j.at("calibration")) {
    CalibrationDesign cal;
    cal.id = c.at("id").get<std::string>();
    if (c.contains("times")) {
      cal.times = c.at("times").get<std::vector<double>>();
    } else {
      const double dt = c.at("dt").get<double>();
      const double t_end = c.at("t_end").get<double>();
      if (!(dt > 0.0)) throw std::invalid_argument("calibration dt must be positive");
      const double t_start = c.value("t_start", 0.0);
      for (long i = 0;; ++i) {
        const double t = t_start + static_cast<double>(i) * dt;
        if (t > t_end + 1e-9) break;
        cal.times.push_back(t);
      }
    }
    d.calibration.push_back(std::move(cal));
  }
  return d;
}

}  // namespace

TimeUnit parse_time_unit(const std::string& unit) {
  if (unit == "s") return TimeUnit::seconds;
  if (unit == "min") return TimeUnit::minutes;
  throw std::invalid_argument("time unit must be 's' or 'min', got '" + unit + "'");
}

double to_seconds(double value, TimeUnit unit) {
  return unit == TimeUnit::minutes ? value * 60.0 : value;
}

double from_seconds(double seconds, TimeUnit unit) {
  return unit == TimeUnit::minutes ? seconds / 60.0 : seconds;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Configuration

json prior_to_json(const PriorSpec& spec) {
  json a = json::array();
  for (const auto& d : spec.a) a.push_back(distribution_to_json(d));
  return {{"h_max", distribution_to_json(spec.h_max)},
          {"x_t", distribution_to_json(spec.x_t)},
          {"x_b", distribution_to_json(spec.x_b)},
          {"r", distribution_to_json(spec.r)},
          {"c", distribution_to_json(spec.c)},
          {"sigma", distribution_to_json(spec.sigma)},
          {"a", a},
          {"pollution_t0", distribution_to_json(spec.pollution_t0)},
          {"calibration_t0", distribution_to_json(spec.calibration_t0)},
          {"calibration_h0_mean", spec.calibration_h0_mean}};
}

PriorSpec prior_from_json(const json& j, PriorSpec base) {
  auto set = [&](const char* key, Distribution& field) {
    if (j.contains(key)) field = distribution_from_json(j.at(key));
  };
  set("h_max", base.h_max);
  set("x_t", base.x_t);
  set("x_b", base.x_b);
  set("r", base.r);
  set("c", base.c);
  set("sigma", base.sigma);
  set("pollution_t0", base.pollution_t0);
  set("calibration_t0", base.calibration_t0);
  if (j.contains("a")) {
    const auto& a = j.at("a");
    base.a.clear();
    if (a.is_array()) {
      for (const auto& d : a) base.a.push_back(distribution_from_json(d));
    } else {
      base.a.push_back(distribution_from_json(a));
    }
  }
  if (j.contains("calibration_h0_mean"))
    base.calibration_h0_mean = j.at("calibration_h0_mean").get<double>();
  base.validate();
  return base;
}

json parameters_to_json(const ParameterVector& beta) {
  json cal = json::object();
  for (const auto& [id, ic] : beta.calib_ic) cal[id] = {{"t0", ic.t0}, {"h0", ic.h0}};
  return {{"h_max", beta.geom.h_max},
          {"x_t", beta.geom.x_t},
          {"x_b", beta.geom.x_b},
          {"r", beta.orifice.r},
          {"c", beta.orifice.c},
          {"a", beta.a.a},
          {"sigma", beta.sigma},
          {"pollution", {{"t0", beta.pollution_ic.t0}, {"h0", beta.pollution_ic.h0}}},
          {"calibration", cal}};
}

ParameterVector parameters_from_json(const json& j) {
  ParameterVector beta;
  beta.geom = {j.at("h_max").get<double>(), j.at("x_t").get<double>(), j.at("x_b").get<double>()};
  beta.orifice.r = j.at("r").get<double>();
  beta.orifice.c = j.at("c").get<double>();
  beta.a = DiscrepancyCoefficients(j.at("a").get<std::vector<double>>());
  beta.sigma = j.at("sigma").get<double>();
  beta.pollution_ic.t0 = j.at("pollution").value("t0", 0.0);
  beta.pollution_ic.h0 = j.at("pollution").at("h0").get<double>();
  if (j.contains("calibration")) {
    const auto& cal = j.at("calibration");
    if (cal.is_array()) {
      for (const auto& c : cal)
        beta.calib_ic[c.at("id").get<std::string>()] = {c.value("t0", 0.0), c.at("h0").get<double>()};
    } else {
      for (const auto& [id, c] : cal.items())
        beta.calib_ic[id] = {c.value("t0", 0.0), c.at("h0").get<double>()};
    }
  }
  return beta;
}

RunConfig config_from_json(const json& j, const std::filesystem::path& base_dir) {
  RunConfig cfg;
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  if (j.contains("dataset")) cfg.dataset = resolve(j.at("dataset").get<std::string>());
  if (j.contains("time_unit")) cfg.time_unit = parse_time_unit(j.at("time_unit").get<std::string>());
  cfg.level_cutoff = j.value("level_cutoff", cfg.level_cutoff);
  if (j.contains("out_dir")) cfg.out_dir = resolve(j.at("out_dir").get<std::string>());
  cfg.seed = j.value("seed", cfg.seed);
  cfg.g = j.value("g", cfg.g);
  if (!(cfg.g > 0.0)) throw std::invalid_argument("g must be positive");
  cfg.degree = j.value("degree", cfg.degree);
  if (cfg.degree < 0) throw std::invalid_argument("degree must be non-negative");
  cfg.trajectory_draws = j.value("trajectory_draws", cfg.trajectory_draws);
  if (j.contains("prior")) cfg.prior = prior_from_json(j.at("prior"));

  if (j.contains("sampler")) {
    const auto& s = j.at("sampler");
    auto& sc = cfg.sampler;
    sc.n_chains = s.value("n_chains", sc.n_chains);
    sc.n_iterations = s.value("n_iterations", sc.n_iterations);
    sc.burn_in_fraction = s.value("burn_in_fraction", sc.burn_in_fraction);
    if (s.contains("algorithm")) {
      sc.algorithm = parse_algorithm(s.at("algorithm").get<std::string>());
      if (sc.algorithm == Algorithm::hmc) sc.target_accept = 0.8;
    }
    sc.target_accept = s.value("target_accept", sc.target_accept);
    sc.steps_per_iteration = s.value("steps_per_iteration", sc.steps_per_iteration);
    sc.leapfrog_steps = s.value("leapfrog_steps", sc.leapfrog_steps);
    sc.fd_step = s.value("fd_step", sc.fd_step);
    sc.parallel = s.value("parallel", sc.parallel);
  }
  cfg.sampler.seed = cfg.seed;
  cfg.sampler.validate();

  if (j.contains("gates")) {
    const auto& g = j.at("gates");
    cfg.gates.max_rhat = g.value("max_rhat", cfg.gates.max_rhat);
    cfg.gates.min_ess = g.value("min_ess", cfg.gates.min_ess);
    cfg.gates.min_accept = g.value("min_accept", cfg.gates.min_accept);
    cfg.gates.max_accept = g.value("max_accept", cfg.gates.max_accept);
  }

  if (j.contains("simulate")) {
    const auto& s = j.at("simulate");
    SimulationSpec sim;
    sim.truth = parameters_from_json(s.at("truth"));
    sim.design = design_from_json(s.at("design"), cfg.level_cutoff);
    cfg.simulation = std::move(sim);
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  auto in = open_input(path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  return config_from_json(j, path.parent_path());
}

// ---------------------------------------------------------------------------
// Dataset files

Dataset read_dataset(std::istream& in, TimeUnit unit, double level_cutoff,
                     const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  std::map<std::string, Experiment> experiments;
  std::vector<std::string> order;
  std::set<std::pair<std::string, double>> seen;

  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto fields = split_csv(t);
    if (!have_header) {
      const std::vector<std::string> expected{"experiment_id", "kind", "t", "level", "held_out"};
      if (fields != expected)
        throw ParseError(source, line_no, "expected header experiment_id,kind,t,level,held_out");
      have_header = true;
      continue;
    }
    if (fields.size() != 5) throw ParseError(source, line_no, "expected 5 fields");
    const std::string& id = fields[0];
    if (id.empty()) throw ParseError(source, line_no, "empty experiment id");
    ExperimentKind kind;
    if (fields[1] == "pollution") {
      kind = ExperimentKind::pollution;
    } else if (fields[1] == "calibration") {
      kind = ExperimentKind::calibration;
    } else {
      throw ParseError(source, line_no, "kind must be 'pollution' or 'calibration'");
    }
    const double time = to_seconds(parse_number(fields[2], source, line_no), unit);
    const double level = parse_number(fields[3], source, line_no);
    if (!std::isfinite(time) || time < 0.0) throw ParseError(source, line_no, "invalid time");
    if (!std::isfinite(level)) throw ParseError(source, line_no, "invalid level");
    bool held_out = false;
    if (fields[4] == "1" || fields[4] == "true") {
      held_out = true;
    } else if (!(fields[4] == "0" || fields[4] == "false" || fields[4].empty())) {
      throw ParseError(source, line_no, "held_out must be 0 or 1");
    }

    auto [it, inserted] = experiments.try_emplace(id);
    Experiment& e = it->second;
    if (inserted) {
      e.id = id;
      e.kind = kind;
      e.level_cutoff = level_cutoff;
      order.push_back(id);
    } else if (e.kind != kind) {
      throw ParseError(source, line_no, "experiment '" + id + "' changes kind");
    }
    if (!seen.emplace(id, time).second)
      throw ParseError(source, line_no, "duplicate observation time for experiment '" + id + "'");

    if (held_out) {
      if (e.held_out) throw ParseError(source, line_no, "second held-out row for '" + id + "'");
      e.held_out = Observation{time, level};
      continue;
    }
    if (kind == ExperimentKind::pollution) {
      if (!e.observations.empty())
        throw ParseError(source, line_no, "pollution experiment '" + id + "' has more than one observation");
    } else if (level <= level_cutoff) {
      continue;
    }
    e.observations.push_back({time, level});
  }
  if (!have_header) throw ParseError(source, line_no, "empty dataset file");

  Dataset data;
  for (const auto& id : order) {
    auto& e = experiments.at(id);
    std::sort(e.observations.begin(), e.observations.end(),
              [](const Observation& a, const Observation& b) { return a.t < b.t; });
    data.experiments.push_back(std::move(e));
  }
  try {
    data.validate();
  } catch (const std::invalid_argument& err) {
    throw ParseError(source, line_no, err.what());
  }
  return data;
}

Dataset load_dataset(const std::filesystem::path& path, TimeUnit unit, double level_cutoff) {
  auto in = open_input(path);
  return read_dataset(in, unit, level_cutoff, path.string());
}

void write_dataset(std::ostream& out, const Dataset& data, TimeUnit unit) {
  out << "experiment_id,kind,t,level,held_out\n";
  for (const auto& e : data.experiments) {
    const char* kind = e.kind == ExperimentKind::pollution ? "pollution" : "calibration";
    if (e.held_out)
      out << e.id << ',' << kind << ',' << format_double(from_seconds(e.held_out->t, unit)) << ','
          << format_double(e.held_out->level) << ",1\n";
    for (const auto& o : e.observations)
      out << e.id << ',' << kind << ',' << format_double(from_seconds(o.t, unit)) << ','
          << format_double(o.level) << ",0\n";
  }
}

void save_dataset(const std::filesystem::path& path, const Dataset& data, TimeUnit unit) {
  auto out = open_output(path);
  write_dataset(out, data, unit);
}

// ---------------------------------------------------------------------------
// Samples files

void write_samples(std::ostream& out, std::span<const ChainTrace> traces) {
  if (traces.empty()) throw std::invalid_argument("no traces to write");
  out << "chain,iteration,warmup,log_posterior,accept_rate";
  for (const auto& n : traces.front().names) out << ',' << n;
  out << '\n';
  for (const auto& t : traces) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      out << t.chain_id << ',' << i << ',' << (i < t.burn_in ? 1 : 0) << ','
          << format_double(t.log_posterior[i]) << ',' << format_double(t.accept_rate[i]);
      for (std::size_t p = 0; p < t.n_values(); ++p) out << ',' << format_double(t.value(i, p));
      out << '\n';
    }
  }
}

std::vector<ChainTrace> read_samples(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  std::map<int, ChainTrace> chains;
  auto number = [&](const std::string& f) {
    if (f == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (f == "inf") return std::numeric_limits<double>::infinity();
    if (f == "-inf") return -std::numeric_limits<double>::infinity();
    return parse_number(f, source, line_no);
  };
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    auto fields = split_csv(t);
    if (header.empty()) {
      if (fields.size() < 6 || fields[0] != "chain" || fields[1] != "iteration" ||
          fields[2] != "warmup" || fields[3] != "log_posterior" || fields[4] != "accept_rate")
        throw ParseError(source, line_no, "not a samples header");
      header = std::move(fields);
      continue;
    }
    if (fields.size() != header.size()) throw ParseError(source, line_no, "wrong number of fields");
    const int chain = static_cast<int>(number(fields[0]));
    auto [it, inserted] = chains.try_emplace(chain);
    ChainTrace& tr = it->second;
    if (inserted) {
      tr.chain_id = chain;
      tr.names.assign(header.begin() + 5, header.end());
      tr.dim = tr.names.size();
    }
    const auto iteration = static_cast<std::size_t>(number(fields[1]));
    if (iteration != tr.size()) throw ParseError(source, line_no, "iterations out of order");
    if (number(fields[2]) != 0.0) {
      if (tr.burn_in != tr.size()) throw ParseError(source, line_no, "warmup rows must come first");
      ++tr.burn_in;
    }
    tr.log_posterior.push_back(number(fields[3]));
    tr.accept_rate.push_back(number(fields[4]));
    for (std::size_t p = 5; p < fields.size(); ++p) tr.values.push_back(number(fields[p]));
  }
  if (header.empty()) throw ParseError(source, line_no, "empty samples file");
  if (chains.empty()) throw ParseError(source, line_no, "samples file has no draws");
  std::vector<ChainTrace> out;
  for (auto& [id, tr] : chains) out.push_back(std::move(tr));
  return out;
}

std::vector<ChainTrace> load_samples(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_samples(in, path.string());
}

}  // namespace drainback
