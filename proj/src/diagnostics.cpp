#include "drainback/diagnostics.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <limits>
#include <numeric>

namespace drainback {

namespace {

constexpr double nan = std::numeric_limits<double>::quiet_NaN();

void require_draws(const ChainDraws& chains, std::size_t min_chains) {
  if (chains.size() < min_chains)
    throw DiagnosticError("diagnostic needs at least " + std::to_string(min_chains) + " chains");
  for (const auto& c : chains)
    if (c.size() < 4) throw DiagnosticError("diagnostic needs at least 4 draws per chain");
}

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double variance_of(std::span<const double> v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

// Equal-length halves of every chain (the middle draw of odd chains is dropped).
ChainDraws split_chains(const ChainDraws& chains) {
  std::size_t n = chains.front().size();
  for (const auto& c : chains) n = std::min(n, c.size());
  const std::size_t half = n / 2;
  ChainDraws out;
  for (const auto& c : chains) {
    out.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
    out.emplace_back(c.begin() + static_cast<std::ptrdiff_t>(n - half),
                     c.begin() + static_cast<std::ptrdiff_t>(n));
  }
  return out;
}

// Replace draws by normal scores of their pooled ranks (average rank for ties).
ChainDraws rank_normalize(const ChainDraws& chains) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t c = 0; c < chains.size(); ++c)
    for (std::size_t i = 0; i < chains[c].size(); ++i) all.emplace_back(chains[c][i], all.size());
  const std::size_t s = all.size();
  std::vector<std::size_t> order(s);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return all[a].first < all[b].first; });
  std::vector<double> rank(s);
  for (std::size_t i = 0; i < s;) {
    std::size_t j = i;
    while (j + 1 < s && all[order[j + 1]].first == all[order[i]].first) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  const boost::math::normal_distribution<double> std_normal;
  ChainDraws out(chains.size());
  std::size_t idx = 0;
  for (std::size_t c = 0; c < chains.size(); ++c) {
    for (std::size_t i = 0; i < chains[c].size(); ++i, ++idx) {
      const double p = (rank[idx] - 0.375) / (static_cast<double>(s) + 0.25);
      out[c].push_back(boost::math::quantile(std_normal, p));
    }
  }
  return out;
}

double psrf(const ChainDraws& chains) {
  std::size_t n = chains.front().size();
  for (const auto& c : chains) n = std::min(n, c.size());
  std::vector<double> means, vars;
  for (const auto& c : chains) {
    std::span<const double> view(c.data(), n);
    means.push_back(mean_of(view));
    vars.push_back(variance_of(view));
  }
  const double w = mean_of(vars);
  const double b = static_cast<double>(n) * variance_of(means);
  const double var_plus = (static_cast<double>(n) - 1.0) / static_cast<double>(n) * w +
                          b / static_cast<double>(n);
  if (w == 0.0) return var_plus == 0.0 ? nan : std::numeric_limits<double>::infinity();
  return std::sqrt(var_plus / w);
}

// Distance from the median, used by the tail variant of R-hat.
ChainDraws fold_about_median(const ChainDraws& chains) {
  std::vector<double> all;
  for (const auto& c : chains) all.insert(all.end(), c.begin(), c.end());
  const double med = quantile(all, 0.5);
  ChainDraws folded = chains;
  for (auto& c : folded)
    for (auto& x : c) x = std::abs(x - med);
  return folded;
}

double ess_raw(const ChainDraws& chains) {
  const std::size_t m = chains.size();
  std::size_t n = chains.front().size();
  for (const auto& c : chains) n = std::min(n, c.size());

  std::vector<double> chain_mean(m), chain_var(m);
  std::vector<std::vector<double>> centered(m);
  for (std::size_t c = 0; c < m; ++c) {
    std::span<const double> view(chains[c].data(), n);
    chain_mean[c] = mean_of(view);
    chain_var[c] = variance_of(view);
    centered[c].resize(n);
    for (std::size_t i = 0; i < n; ++i) centered[c][i] = chains[c][i] - chain_mean[c];
  }
  const double mean_var = mean_of(chain_var);
  double var_plus = mean_var * (static_cast<double>(n) - 1.0) / static_cast<double>(n);
  if (m > 1) var_plus += variance_of(chain_mean);
  if (!(var_plus > 0.0)) return nan;

  // Mean over chains of the biased autocovariance at lag t.
  auto acov = [&](std::size_t t) {
    double total = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      double s = 0.0;
      const auto& x = centered[c];
      for (std::size_t i = 0; i + t < n; ++i) s += x[i] * x[i + t];
      total += s / static_cast<double>(n);
    }
    return total / static_cast<double>(m);
  };
  // Chain variances are unbiased; the lag-0 autocovariance is rescaled to match.
  auto rho = [&](std::size_t t) {
    const double a = t == 0 ? mean_var : acov(t);
    return 1.0 - (mean_var - a) / var_plus;
  };

  std::vector<double> rho_hat(n + 1, 0.0);
  rho_hat[0] = 1.0;
  double rho_even = 1.0;
  double rho_odd = rho(1);
  rho_hat[1] = rho_odd;
  std::size_t t = 1;
  while (t + 5 < n && rho_even + rho_odd > 0.0) {
    rho_even = rho(t + 1);
    rho_odd = rho(t + 2);
    if (rho_even + rho_odd >= 0.0) {
      rho_hat[t + 1] = rho_even;
      rho_hat[t + 2] = rho_odd;
    }
    t += 2;
  }
  const std::size_t max_t = t;
  if (rho_even > 0.0 && max_t + 1 <= n) rho_hat[max_t + 1] = rho_even;

  // Initial monotone sequence.
  for (std::size_t s = 1; s + 3 <= max_t; s += 2) {
    if (rho_hat[s + 1] + rho_hat[s + 2] > rho_hat[s - 1] + rho_hat[s]) {
      rho_hat[s + 1] = 0.5 * (rho_hat[s - 1] + rho_hat[s]);
      rho_hat[s + 2] = rho_hat[s + 1];
    }
  }

  const double total = static_cast<double>(m * n);
  double tau = -1.0;
  for (std::size_t s = 0; s <= max_t; ++s) tau += 2.0 * rho_hat[s];
  if (max_t + 1 <= n) tau += rho_hat[max_t + 1];
  tau = std::max(tau, 1.0 / std::log10(total));
  return total / tau;
}

}  // namespace

ChainDraws collect_draws(std::span<const ChainTrace> traces, const std::string& parameter) {
  ChainDraws out;
  for (const auto& t : traces) out.push_back(t.kept(t.index_of(parameter)));
  return out;
}

std::vector<double> pooled_draws(std::span<const ChainTrace> traces, const std::string& parameter) {
  std::vector<double> out;
  for (const auto& t : traces) {
    const auto k = t.kept(t.index_of(parameter));
    out.insert(out.end(), k.begin(), k.end());
  }
  return out;
}

double split_rhat(const ChainDraws& chains) {
  require_draws(chains, 2);
  const auto split = split_chains(chains);
  const auto z = rank_normalize(split);
  const double bulk = psrf(z);
  // Folding the normal scores rather than the raw draws keeps the tail
  // statistic a function of ranks only.
  const double tail = psrf(rank_normalize(fold_about_median(z)));
  if (std::isnan(bulk)) return nan;
  if (std::isnan(tail)) return bulk;
  return std::max(bulk, tail);
}

double split_rhat(std::span<const ChainTrace> traces, const std::string& parameter) {
  return split_rhat(collect_draws(traces, parameter));
}

double gelman_rubin(const ChainDraws& chains) {
  require_draws(chains, 2);
  return psrf(chains);
}

double effective_sample_size(const ChainDraws& chains) {
  require_draws(chains, 1);
  return ess_raw(rank_normalize(split_chains(chains)));
}

double effective_sample_size(std::span<const ChainTrace> traces, const std::string& parameter) {
  return effective_sample_size(collect_draws(traces, parameter));
}

double quantile(std::vector<double> samples, double p) {
  if (samples.empty()) throw DiagnosticError("quantile of an empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw DiagnosticError("quantile probability outside [0, 1]");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  const double pos = n * p - 0.5;  // zero-based
  if (pos <= 0.0) return samples.front();
  if (pos >= n - 1.0) return samples.back();
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const double frac = pos - static_cast<double>(lo);
  return samples[lo] + frac * (samples[lo + 1] - samples[lo]);
}

std::pair<double, double> credible_interval(std::span<const double> samples, double mass) {
  if (samples.empty()) throw DiagnosticError("credible interval of an empty sample");
  if (!(mass > 0.0 && mass < 1.0)) throw DiagnosticError("credible mass must lie in (0, 1)");
  std::vector<double> v(samples.begin(), samples.end());
  const double tail = 0.5 * (1.0 - mass);
  return {quantile(v, tail), quantile(v, 1.0 - tail)};
}

double pearson_correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2)
    throw DiagnosticError("correlation needs two equally long samples");
  const double ma = mean_of(a), mb = mean_of(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw DiagnosticError("correlation undefined for zero variance");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double posterior_correlation(std::span<const ChainTrace> traces, const std::string& param_a,
                             const std::string& param_b) {
  const auto a = pooled_draws(traces, param_a);
  const auto b = pooled_draws(traces, param_b);
  return pearson_correlation(a, b);
}

std::vector<ParameterVector> posterior_draws(std::span<const ChainTrace> traces,
                                             const ParameterLayout& layout, std::size_t count) {
  std::vector<std::pair<std::size_t, std::size_t>> rows;  // (chain, iteration)
  for (std::size_t c = 0; c < traces.size(); ++c)
    for (std::size_t i = std::min(traces[c].burn_in, traces[c].size()); i < traces[c].size(); ++i)
      rows.emplace_back(c, i);
  if (rows.empty()) throw DiagnosticError("no post-burn-in draws");
  count = std::min(count, rows.size());
  std::vector<ParameterVector> out;
  for (std::size_t j = 0; j < count; ++j) {
    const auto [c, i] = rows[j * rows.size() / count];
    const auto& t = traces[c];
    if (t.n_values() != layout.size()) throw DiagnosticError("trace does not match parameter layout");
    std::span<const double> row(t.values.data() + i * t.n_values(), t.n_values());
    out.push_back(layout.unflatten(row));
  }
  return out;
}

double trajectory_mae(std::span<const ChainTrace> traces, const TankPosterior& model,
                      const std::string& experiment_id, std::size_t n_posterior_draws) {
  const auto& experiment = model.data().find(experiment_id);
  if (experiment.kind == ExperimentKind::pollution)
    throw DiagnosticError("trajectory MAE needs a calibration series; '" + experiment_id +
                          "' is a single pollution observation");
  if (experiment.observations.empty()) throw DiagnosticError("experiment has no observations");
  std::vector<double> times;
  for (const auto& o : experiment.observations) times.push_back(o.t);

  const auto draws = posterior_draws(traces, model.layout(), n_posterior_draws);
  double total = 0.0;
  for (const auto& beta : draws) {
    const auto pred = predict_series(beta, beta.initial_condition(experiment), times,
                                     model.constants(), model.solver_options());
    double err = 0.0;
    for (std::size_t i = 0; i < times.size(); ++i)
      err += std::abs(experiment.observations[i].level - pred.corrected[i]);
    total += err / static_cast<double>(times.size());
  }
  return total / static_cast<double>(draws.size());
}

DiscrepancyTable discrepancy_vs_residuals(std::span<const ChainTrace> traces,
                                          const TankPosterior& model, std::size_t grid_points,
                                          std::size_t bins, std::size_t n_draws) {
  if (grid_points < 2 || bins < 1) throw DiagnosticError("grid needs two points and one bin");
  const auto draws = posterior_draws(traces, model.layout(), n_draws);
  double h_max = 0.0;
  for (const auto& b : draws) h_max += b.geom.h_max;
  h_max /= static_cast<double>(draws.size());

  DiscrepancyTable table;
  for (std::size_t g = 0; g < grid_points; ++g) {
    const double u = static_cast<double>(g) / static_cast<double>(grid_points - 1);
    std::vector<double> values;
    for (const auto& b : draws)
      values.push_back(evaluate_discrepancy(b.a, u == 1.0 ? b.geom.h_max : u * b.geom.h_max,
                                            b.geom.h_max));
    DiscrepancyGridRow row;
    row.level = u * h_max;
    row.mean = mean_of(values);
    row.lower = quantile(values, 0.05);
    row.upper = quantile(values, 0.95);
    table.grid.push_back(row);
  }

  std::vector<double> sum(bins, 0.0);
  std::vector<std::size_t> count(bins, 0);
  for (const auto& id : model.data().calibration_ids()) {
    const auto& e = model.data().find(id);
    std::vector<double> times;
    for (const auto& o : e.observations) times.push_back(o.t);
    std::vector<double> physics(times.size(), 0.0);
    for (const auto& b : draws) {
      const auto pred =
          predict_series(b, b.initial_condition(e), times, model.constants(), model.solver_options());
      for (std::size_t i = 0; i < times.size(); ++i) physics[i] += pred.physics[i];
    }
    for (std::size_t i = 0; i < times.size(); ++i) {
      const double level = physics[i] / static_cast<double>(draws.size());
      const double residual = e.observations[i].level - level;
      auto bin = static_cast<std::size_t>(std::floor(level / h_max * static_cast<double>(bins)));
      bin = std::min(bin, bins - 1);
      sum[bin] += residual;
      ++count[bin];
    }
  }
  for (std::size_t k = 0; k < bins; ++k) {
    ResidualBin rb;
    rb.low = h_max * static_cast<double>(k) / static_cast<double>(bins);
    rb.high = h_max * static_cast<double>(k + 1) / static_cast<double>(bins);
    rb.count = count[k];
    rb.mean_residual = count[k] ? sum[k] / static_cast<double>(count[k]) : nan;
    table.residuals.push_back(rb);
  }
  return table;
}

const ParameterSummary& PosteriorSummary::at(const std::string& name) const {
  for (const auto& p : parameters)
    if (p.name == name) return p;
  throw std::invalid_argument("summary has no parameter '" + name + "'");
}

std::vector<std::string> PosteriorSummary::health_failures(const HealthGates& gates) const {
  std::vector<std::string> out;
  for (const auto& p : parameters) {
    if (std::isnan(p.rhat) || p.rhat > gates.max_rhat)
      out.push_back("rhat(" + p.name + ") = " + std::to_string(p.rhat));
    if (std::isnan(p.ess) || p.ess < gates.min_ess)
      out.push_back("ess(" + p.name + ") = " + std::to_string(p.ess));
  }
  for (std::size_t c = 0; c < accept_rate.size(); ++c)
    if (accept_rate[c] < gates.min_accept || accept_rate[c] > gates.max_accept)
      out.push_back("accept_rate(chain " + std::to_string(c) + ") = " +
                    std::to_string(accept_rate[c]));
  return out;
}

PosteriorSummary summarize(std::span<const ChainTrace> traces) {
  if (traces.empty()) throw DiagnosticError("no chains to summarize");
  PosteriorSummary s;
  const auto& names = traces.front().names;
  std::vector<std::vector<double>> pooled;
  for (const auto& name : names) {
    ParameterSummary p;
    p.name = name;
    auto draws = pooled_draws(traces, name);
    if (draws.empty()) throw DiagnosticError("no post-burn-in draws");
    p.mean = mean_of(draws);
    p.sd = draws.size() > 1 ? std::sqrt(variance_of(draws)) : 0.0;
    p.ci90 = credible_interval(draws, 0.90);
    p.ci95 = credible_interval(draws, 0.95);
    const auto chains = collect_draws(traces, name);
    try {
      p.rhat = split_rhat(chains);
    } catch (const DiagnosticError&) {
      p.rhat = nan;
    }
    try {
      p.ess = effective_sample_size(chains);
    } catch (const DiagnosticError&) {
      p.ess = nan;
    }
    s.total_draws = draws.size();
    pooled.push_back(std::move(draws));
    s.parameters.push_back(std::move(p));
  }
  const std::size_t n = names.size();
  s.correlation.assign(n, std::vector<double>(n, nan));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      double rho = nan;
      try {
        rho = i == j ? 1.0 : pearson_correlation(pooled[i], pooled[j]);
      } catch (const DiagnosticError&) {
      }
      s.correlation[i][j] = s.correlation[j][i] = rho;
    }
  }
  for (const auto& t : traces) s.accept_rate.push_back(t.mean_accept_rate());
  return s;
}

PosteriorSummary summarize(std::span<const ChainTrace> traces, const TankPosterior& model,
                           std::size_t n_mae_draws) {
  auto s = summarize(traces);
  for (const auto& id : model.data().calibration_ids())
    s.mae.emplace_back(id, trajectory_mae(traces, model, id, n_mae_draws));
  return s;
}

}  // namespace drainback
