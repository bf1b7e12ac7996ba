#include "drainback/commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>

namespace drainback {

using nlohmann::json;

namespace {

std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void write_key(std::ostream& out, const std::string& key, double v) {
  out << key << " = " << format_double(v) << '\n';
}

// Posterior predictive curves, including the forward reconstruction of the
// pollution scenario from sampled initial conditions.
void write_trajectories(std::ostream& out, std::span<const ChainTrace> traces,
                        const TankPosterior& model, std::size_t n_draws) {
  const auto draws = posterior_draws(traces, model.layout(), n_draws);
  out << "experiment_id,draw,t,physics,corrected\n";
  constexpr int grid = 61;
  for (const auto& e : model.data().experiments) {
    double t_lo = 0.0;
    for (const auto& b : draws) t_lo = std::min(t_lo, b.initial_condition(e).t0);
    double t_hi = e.observations.back().t;
    std::vector<double> times;
    for (int i = 0; i < grid; ++i) times.push_back(t_lo + (t_hi - t_lo) * i / (grid - 1));
    for (std::size_t d = 0; d < draws.size(); ++d) {
      const auto& b = draws[d];
      const auto& ic = b.initial_condition(e);
      if (!(ic.h0 >= 0.0 && ic.h0 <= b.geom.h_max)) continue;
      const auto pred = predict_series(b, ic, times, model.constants(), model.solver_options());
      for (std::size_t i = 0; i < times.size(); ++i)
        out << e.id << ',' << d << ',' << format_double(times[i]) << ','
            << format_double(pred.physics[i]) << ',' << format_double(pred.corrected[i]) << '\n';
    }
  }
}

std::size_t kept_draws(std::span<const ChainTrace> traces) {
  std::size_t n = 0;
  for (const auto& t : traces) n += t.size() - std::min(t.burn_in, t.size());
  return n;
}

}  // namespace

TankPosterior make_posterior(const RunConfig& config, const Dataset& data) {
  PhysicalConstants constants;
  constants.g = config.g;
  return TankPosterior(data, config.prior, config.degree, constants);
}

std::vector<ChainTrace> fit_posterior(const TankPosterior& posterior, const SamplerConfig& sampler) {
  SamplerConfig cfg = sampler;
  if (cfg.initial_scale.empty()) cfg.initial_scale = prior_proposal_scales(posterior);
  std::vector<std::vector<double>> inits;
  for (int c = 0; c < cfg.n_chains; ++c) {
    // Initial points come from a stream separate from the transition kernel's.
    Rng rng = chain_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL, c);
    inits.push_back(initialize_from_prior(rng, posterior));
  }
  return run_chains(make_target(posterior), cfg, inits);
}

void write_summary(std::ostream& out, const PosteriorSummary& s,
                   const std::vector<std::string>& failures) {
  out << "# posterior summary\n";
  out << "chains = " << s.accept_rate.size() << '\n';
  out << "draws = " << s.total_draws << '\n';
  out << "healthy = " << (failures.empty() ? "true" : "false") << '\n';
  for (const auto& p : s.parameters) {
    const std::string k = "param." + p.name + ".";
    write_key(out, k + "mean", p.mean);
    write_key(out, k + "sd", p.sd);
    write_key(out, k + "ci90_low", p.ci90.first);
    write_key(out, k + "ci90_high", p.ci90.second);
    write_key(out, k + "ci95_low", p.ci95.first);
    write_key(out, k + "ci95_high", p.ci95.second);
    write_key(out, k + "rhat", p.rhat);
    write_key(out, k + "ess", p.ess);
  }
  for (const auto& [id, mae] : s.mae) write_key(out, "mae." + id, mae);
  for (std::size_t c = 0; c < s.accept_rate.size(); ++c)
    write_key(out, "accept_rate.chain" + std::to_string(c), s.accept_rate[c]);
  for (const auto& f : failures) out << "failure = " << f << '\n';
}

CommandResult cmd_simulate(const RunConfig& config) {
  if (!config.simulation) throw std::invalid_argument("config has no 'simulate' section");
  const auto& sim = *config.simulation;
  if (sim.truth.a.degree() != config.degree)
    throw std::invalid_argument("truth discrepancy degree does not match config degree");
  PhysicalConstants constants;
  constants.g = config.g;
  Rng rng = chain_rng(config.seed, -1);
  const Dataset data = simulate_dataset(rng, sim.truth, sim.design, constants);

  CommandResult result;
  const auto dataset_path = config.out_dir / "dataset.csv";
  save_dataset(dataset_path, data, config.time_unit);
  result.files.push_back(dataset_path);

  const auto truth_path = config.out_dir / "truth.json";
  auto out = open_output(truth_path);
  out << parameters_to_json(sim.truth).dump(2) << '\n';
  result.files.push_back(truth_path);
  return result;
}

CommandResult cmd_fit(const RunConfig& config) {
  const Dataset data = load_dataset(config.dataset, config.time_unit, config.level_cutoff);
  const TankPosterior posterior = make_posterior(config, data);
  const auto traces = fit_posterior(posterior, config.sampler);
  const auto summary = summarize(traces, posterior);
  const auto failures = summary.health_failures(config.gates);

  CommandResult result;
  auto emit = [&](const std::string& name, auto&& writer) {
    const auto path = config.out_dir / name;
    auto out = open_output(path);
    writer(out);
    result.files.push_back(path);
  };
  emit("samples.csv", [&](std::ostream& o) { write_samples(o, traces); });
  emit("summary.txt", [&](std::ostream& o) { write_summary(o, summary, failures); });
  emit("correlation.csv", [&](std::ostream& o) {
    o << "parameter";
    for (const auto& p : summary.parameters) o << ',' << p.name;
    o << '\n';
    for (std::size_t i = 0; i < summary.parameters.size(); ++i) {
      o << summary.parameters[i].name;
      for (double v : summary.correlation[i]) o << ',' << format_double(v);
      o << '\n';
    }
  });
  emit("trajectories.csv",
       [&](std::ostream& o) { write_trajectories(o, traces, posterior, config.trajectory_draws); });
  const auto table = discrepancy_vs_residuals(traces, posterior);
  emit("discrepancy.csv", [&](std::ostream& o) {
    o << "level,mean,q05,q95\n";
    for (const auto& r : table.grid)
      o << format_double(r.level) << ',' << format_double(r.mean) << ',' << format_double(r.lower)
        << ',' << format_double(r.upper) << '\n';
  });
  emit("residuals.csv", [&](std::ostream& o) {
    o << "level_low,level_high,mean_residual,count\n";
    for (const auto& r : table.residuals)
      o << format_double(r.low) << ',' << format_double(r.high) << ','
        << format_double(r.mean_residual) << ',' << r.count << '\n';
  });
  emit("diagnostics.csv", [&](std::ostream& o) {
    o << "parameter,rhat,ess,pass\n";
    for (const auto& p : summary.parameters) {
      const bool pass = p.rhat <= config.gates.max_rhat && p.ess >= config.gates.min_ess;
      o << p.name << ',' << format_double(p.rhat) << ',' << format_double(p.ess) << ','
        << (pass ? 1 : 0) << '\n';
    }
  });
  result.warnings = failures;
  result.exit_code = failures.empty() ? exit_ok : exit_unhealthy;
  return result;
}

CommandResult cmd_reconstruct(const RunConfig& config, const std::filesystem::path& samples) {
  const auto traces = load_samples(samples);
  for (const auto& t : traces) {
    if (std::find(t.names.begin(), t.names.end(), "h0") == t.names.end() ||
        std::find(t.names.begin(), t.names.end(), "t0") == t.names.end())
      throw std::invalid_argument("samples file lacks pollution parameters t0 and h0");
  }
  CommandResult result;
  const auto h0 = pooled_draws(traces, "h0");
  const auto t0 = pooled_draws(traces, "t0");
  if (h0.empty()) throw std::invalid_argument("samples file has no post-burn-in draws");
  if (h0.size() == 1) result.warnings.push_back("single posterior draw; intervals are degenerate");

  std::optional<Dataset> data;
  if (!config.dataset.empty() && std::filesystem::exists(config.dataset))
    data = load_dataset(config.dataset, config.time_unit, config.level_cutoff);

  const auto path = config.out_dir / "reconstruction.txt";
  auto out = open_output(path);
  out << "# pollution initial-condition reconstruction\n";
  out << "draws = " << h0.size() << '\n';
  auto describe = [&](const std::string& name, const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    const auto ci90 = credible_interval(v, 0.90);
    const auto ci95 = credible_interval(v, 0.95);
    write_key(out, name + ".mean", m);
    write_key(out, name + ".sd", sd);
    write_key(out, name + ".ci90_low", ci90.first);
    write_key(out, name + ".ci90_high", ci90.second);
    write_key(out, name + ".ci90_width", ci90.second - ci90.first);
    write_key(out, name + ".ci95_low", ci95.first);
    write_key(out, name + ".ci95_high", ci95.second);
    return ci90;
  };
  const auto h0_ci = describe("h0", h0);
  describe("t0", t0);
  double rho = std::numeric_limits<double>::quiet_NaN();
  try {
    rho = pearson_correlation(t0, h0);
  } catch (const DiagnosticError&) {
    result.warnings.push_back("correlation of t0 and h0 undefined");
  }
  write_key(out, "corr.t0.h0", rho);
  if (data) {
    const auto& p = data->pollution();
    write_key(out, "observed.t", p.observations.front().t);
    write_key(out, "observed.level", p.observations.front().level);
    if (p.held_out) {
      const double truth = p.held_out->level;
      write_key(out, "held_out.h0", truth);
      out << "held_out.inside_ci90 = "
          << (truth >= h0_ci.first && truth <= h0_ci.second ? "true" : "false") << '\n';
    }
  }
  for (const auto& w : result.warnings) out << "warning = " << w << '\n';
  result.files.push_back(path);
  return result;
}

CommandResult cmd_diagnose(const std::filesystem::path& samples, const std::filesystem::path& out_dir,
                           const HealthGates& gates) {
  const auto traces = load_samples(samples);
  CommandResult result;
  const bool multi_chain = traces.size() >= 2;
  if (!multi_chain) result.warnings.push_back("single chain: rhat unavailable");

  const auto path = out_dir / "diagnostics.txt";
  auto out = open_output(path);
  out << "# convergence diagnostics\n";
  out << "chains = " << traces.size() << '\n';
  out << "draws = " << kept_draws(traces) << '\n';
  bool healthy = multi_chain;
  for (const auto& name : traces.front().names) {
    const auto chains = collect_draws(traces, name);
    double rhat = std::numeric_limits<double>::quiet_NaN();
    double ess = std::numeric_limits<double>::quiet_NaN();
    try {
      if (multi_chain) rhat = split_rhat(chains);
    } catch (const DiagnosticError& e) {
      result.warnings.push_back(name + ": " + e.what());
    }
    try {
      ess = effective_sample_size(chains);
    } catch (const DiagnosticError& e) {
      result.warnings.push_back(name + ": " + e.what());
    }
    const bool pass = rhat <= gates.max_rhat && ess >= gates.min_ess;
    healthy = healthy && pass;
    if (multi_chain)
      write_key(out, "rhat." + name, rhat);
    else
      out << "rhat." << name << " = unavailable\n";
    write_key(out, "ess." + name, ess);
    out << "pass." << name << " = " << (pass ? "true" : "false") << '\n';
  }
  for (const auto& t : traces) {
    const double rate = t.mean_accept_rate();
    const bool pass = rate >= gates.min_accept && rate <= gates.max_accept;
    healthy = healthy && pass;
    write_key(out, "accept_rate.chain" + std::to_string(t.chain_id), rate);
    out << "pass.accept_rate.chain" << t.chain_id << " = " << (pass ? "true" : "false") << '\n';
  }
  out << "healthy = " << (healthy ? "true" : "false") << '\n';
  for (const auto& w : result.warnings) out << "warning = " << w << '\n';
  result.files.push_back(path);

  const auto trace_path = out_dir / "trace.csv";
  auto trace_out = open_output(trace_path);
  trace_out << "chain,iteration,parameter,value\n";
  for (const auto& t : traces)
    for (std::size_t p = 0; p < t.n_values(); ++p)
      for (std::size_t i = std::min(t.burn_in, t.size()); i < t.size(); ++i)
        trace_out << t.chain_id << ',' << i << ',' << t.names[p] << ','
                  << format_double(t.value(i, p)) << '\n';
  result.files.push_back(trace_path);

  result.exit_code = healthy ? exit_ok : exit_unhealthy;
  return result;
}

}  // namespace drainback
