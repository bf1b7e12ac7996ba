#include "drainback/sampler.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <thread>

namespace drainback {

namespace {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

constexpr double neg_inf = -std::numeric_limits<double>::infinity();

double safe_eval(const Target& target, const Vec& x) {
  const double v = target.log_density(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
  return std::isnan(v) ? neg_inf : v;
}

// Running mean and covariance.
class Welford {
 public:
  explicit Welford(Eigen::Index dim) : mean_(Vec::Zero(dim)), m2_(Mat::Zero(dim, dim)) {}

  void add(const Vec& x) {
    ++n_;
    const Vec delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (x - mean_).transpose();
  }
  long count() const { return n_; }
  Mat covariance() const { return m2_ / static_cast<double>(std::max<long>(n_ - 1, 1)); }
  void reset() {
    n_ = 0;
    mean_.setZero();
    m2_.setZero();
  }

 private:
  long n_ = 0;
  Vec mean_;
  Mat m2_;
};

// Adaptation schedule over the burn-in: an initial buffer where only the
// step scale adapts, doubling windows that re-estimate the covariance, and
// a terminal buffer to settle the scale against the final covariance.
class WindowSchedule {
 public:
  explicit WindowSchedule(std::size_t burn_in) : burn_in_(burn_in) {
    if (burn_in_ < 20) {
      init_buffer_ = burn_in_;
      term_buffer_ = 0;
      first_window_ = 0;
      return;
    }
    init_buffer_ = static_cast<std::size_t>(0.15 * static_cast<double>(burn_in_));
    term_buffer_ = static_cast<std::size_t>(0.1 * static_cast<double>(burn_in_));
    first_window_ = std::max<std::size_t>(burn_in_ - init_buffer_ - term_buffer_, 1);
    first_window_ = std::min<std::size_t>(first_window_, 25);
    window_end_ = init_buffer_ + first_window_;
    window_size_ = first_window_;
  }

  bool in_window(std::size_t it) const {
    return first_window_ > 0 && it >= init_buffer_ && it < burn_in_ - term_buffer_;
  }

  // True when iteration `it` closes a covariance window.
  bool window_closes(std::size_t it) {
    if (!in_window(it) || it + 1 != window_end_) return false;
    window_size_ *= 2;
    window_end_ = it + 1 + window_size_;
    // Absorb a next window that would not reach twice its size.
    const std::size_t adapt_end = burn_in_ - term_buffer_;
    if (window_end_ + 2 * window_size_ > adapt_end) window_end_ = adapt_end;
    return true;
  }

 private:
  std::size_t burn_in_;
  std::size_t init_buffer_ = 0;
  std::size_t term_buffer_ = 0;
  std::size_t first_window_ = 0;
  std::size_t window_end_ = 0;
  std::size_t window_size_ = 0;
};

Mat regularized(const Mat& sample_cov, long n) {
  const double w = static_cast<double>(n) / (static_cast<double>(n) + 5.0);
  Mat cov = w * sample_cov;
  const Vec diag = sample_cov.diagonal();
  for (Eigen::Index i = 0; i < cov.rows(); ++i)
    cov(i, i) += (1.0 - w) * 1e-3 * diag(i) + 1e-14 * std::max(diag.maxCoeff(), 1e-300);
  return cov;
}

Mat cholesky_or_diagonal(const Mat& cov) {
  Eigen::LLT<Mat> llt(cov);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Mat d = Mat::Zero(cov.rows(), cov.cols());
  for (Eigen::Index i = 0; i < cov.rows(); ++i) d(i, i) = std::sqrt(std::max(cov(i, i), 1e-300));
  return d;
}

Vec initial_scales(const SamplerConfig& config, std::size_t dim) {
  Vec s = Vec::Constant(static_cast<Eigen::Index>(dim), 0.1);
  if (!config.initial_scale.empty()) {
    if (config.initial_scale.size() != dim)
      throw std::invalid_argument("initial_scale length does not match target dimension");
    for (std::size_t i = 0; i < dim; ++i) s(static_cast<Eigen::Index>(i)) = config.initial_scale[i];
  }
  return s;
}

class TraceRecorder {
 public:
  TraceRecorder(const Target& target, const SamplerConfig& config, int chain_id) : target_(target) {
    trace_.chain_id = chain_id;
    trace_.seed = config.seed;
    trace_.dim = target.dim;
    trace_.burn_in = config.burn_in();
    trace_.names = target.names;
    if (trace_.names.empty()) {
      for (std::size_t i = 0; i < target.dim; ++i) trace_.names.push_back("x" + std::to_string(i));
    }
    const auto n = static_cast<std::size_t>(config.n_iterations);
    trace_.unconstrained.reserve(n * target.dim);
    trace_.values.reserve(n * trace_.names.size());
    trace_.log_posterior.reserve(n);
    trace_.accept_rate.reserve(n);
  }

  void record(const Vec& x, double logp, double accept) {
    trace_.unconstrained.insert(trace_.unconstrained.end(), x.data(), x.data() + x.size());
    if (target_.constrain) {
      const auto v = target_.constrain(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
      trace_.values.insert(trace_.values.end(), v.begin(), v.end());
    } else {
      trace_.values.insert(trace_.values.end(), x.data(), x.data() + x.size());
    }
    trace_.log_posterior.push_back(logp);
    trace_.accept_rate.push_back(accept);
  }

  ChainTrace take() { return std::move(trace_); }

 private:
  const Target& target_;
  ChainTrace trace_;
};

ChainTrace run_metropolis(const Target& target, Vec x, double logp, const SamplerConfig& config,
                          Rng& rng, int chain_id) {
  const auto dim = static_cast<Eigen::Index>(target.dim);
  const std::size_t burn_in = config.burn_in();
  const int k = config.steps_per_iteration;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  const double base_log_scale = std::log(2.38 / std::sqrt(static_cast<double>(dim)));
  double log_scale = base_log_scale;
  Mat chol = initial_scales(config, target.dim).asDiagonal();
  long adapt_step = 0;
  WindowSchedule schedule(burn_in);
  Welford window(dim);

  TraceRecorder recorder(target, config, chain_id);
  Vec z(dim), proposal(dim);
  for (std::size_t it = 0; it < static_cast<std::size_t>(config.n_iterations); ++it) {
    const bool adapting = it < burn_in;
    int accepted = 0;
    for (int s = 0; s < k; ++s) {
      for (Eigen::Index i = 0; i < dim; ++i) z(i) = normal(rng);
      proposal = x + std::exp(log_scale) * (chol * z);
      const double logp_new = safe_eval(target, proposal);
      const double log_ratio = logp_new - logp;
      const double accept_prob = log_ratio >= 0.0 ? 1.0 : std::exp(log_ratio);
      if (unif(rng) < accept_prob) {
        x = proposal;
        logp = logp_new;
        ++accepted;
      }
      if (adapting) {
        ++adapt_step;
        log_scale += std::pow(static_cast<double>(adapt_step), -0.6) *
                     (accept_prob - config.target_accept);
        if (schedule.in_window(it)) window.add(x);
      }
    }
    if (adapting && schedule.window_closes(it) && window.count() > 2 * dim) {
      chol = cholesky_or_diagonal(regularized(window.covariance(), window.count()));
      window.reset();
      log_scale = base_log_scale;
      adapt_step = 0;
    }
    recorder.record(x, logp, static_cast<double>(accepted) / k);
  }
  return recorder.take();
}

// Central differences with coordinate steps proportional to the current
// scale estimate.
Vec fd_gradient(const Target& target, const Vec& x, const Vec& scale, double rel_step) {
  Vec grad(x.size());
  Vec xp = x, xm = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = rel_step * scale(i);
    xp(i) = x(i) + h;
    xm(i) = x(i) - h;
    const double fp = safe_eval(target, xp);
    const double fm = safe_eval(target, xm);
    grad(i) = (std::isfinite(fp) && std::isfinite(fm)) ? (fp - fm) / (2.0 * h) : 0.0;
    xp(i) = x(i);
    xm(i) = x(i);
  }
  return grad;
}

ChainTrace run_hmc(const Target& target, Vec x, double logp, const SamplerConfig& config,
                   Rng& rng, int chain_id) {
  const auto dim = static_cast<Eigen::Index>(target.dim);
  const std::size_t burn_in = config.burn_in();
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  // Diagonal metric: sd holds posterior standard deviation estimates.
  Vec sd = initial_scales(config, target.dim);
  double step = 0.5 / std::sqrt(static_cast<double>(dim));

  // Dual averaging of the step size.
  double mu = std::log(10.0 * step), h_bar = 0.0, log_step_bar = 0.0;
  long da_count = 0;
  auto restart_dual_averaging = [&] {
    mu = std::log(10.0 * step);
    h_bar = 0.0;
    log_step_bar = 0.0;
    da_count = 0;
  };

  WindowSchedule schedule(burn_in);
  Welford window(dim);
  Vec grad = fd_gradient(target, x, sd, config.fd_step);
  TraceRecorder recorder(target, config, chain_id);

  for (std::size_t it = 0; it < static_cast<std::size_t>(config.n_iterations); ++it) {
    const bool adapting = it < burn_in;
    int accepted = 0;
    for (int s = 0; s < config.steps_per_iteration; ++s) {
      // Work in coordinates scaled by sd so the metric is the identity.
      Vec p(dim);
      for (Eigen::Index i = 0; i < dim; ++i) p(i) = normal(rng);
      const double jitter = 0.9 + 0.2 * unif(rng);
      const double eps = step * jitter;
      Vec q = x;
      Vec g = grad.cwiseProduct(sd);
      const double h0 = -logp + 0.5 * p.squaredNorm();
      double logp_new = logp;
      Vec grad_new = grad;
      bool diverged = false;
      for (int l = 0; l < config.leapfrog_steps; ++l) {
        p += 0.5 * eps * g;
        q += eps * sd.cwiseProduct(p);
        logp_new = safe_eval(target, q);
        if (!std::isfinite(logp_new)) {
          diverged = true;
          break;
        }
        grad_new = fd_gradient(target, q, sd, config.fd_step);
        g = grad_new.cwiseProduct(sd);
        p += 0.5 * eps * g;
      }
      double accept_prob = 0.0;
      if (!diverged) {
        const double h1 = -logp_new + 0.5 * p.squaredNorm();
        accept_prob = std::isfinite(h1) ? std::min(1.0, std::exp(h0 - h1)) : 0.0;
      }
      if (unif(rng) < accept_prob) {
        x = q;
        logp = logp_new;
        grad = grad_new;
        ++accepted;
      }
      if (adapting) {
        ++da_count;
        const double t0 = 10.0, gamma = 0.05, kappa = 0.75;
        const double n = static_cast<double>(da_count);
        h_bar = (1.0 - 1.0 / (n + t0)) * h_bar + (config.target_accept - accept_prob) / (n + t0);
        const double log_step = mu - std::sqrt(n) / gamma * h_bar;
        const double eta = std::pow(n, -kappa);
        log_step_bar = eta * log_step + (1.0 - eta) * log_step_bar;
        step = std::exp(log_step);
        if (schedule.in_window(it)) window.add(x);
      }
    }
    if (adapting && schedule.window_closes(it) && window.count() > 2) {
      const Mat cov = regularized(window.covariance(), window.count());
      for (Eigen::Index i = 0; i < dim; ++i) sd(i) = std::sqrt(std::max(cov(i, i), 1e-300));
      window.reset();
      grad = fd_gradient(target, x, sd, config.fd_step);
      restart_dual_averaging();
    }
    if (adapting && it + 1 == burn_in) step = std::exp(log_step_bar);
    recorder.record(x, logp, static_cast<double>(accepted) / config.steps_per_iteration);
  }
  return recorder.take();
}

}  // namespace

Algorithm parse_algorithm(const std::string& name) {
  if (name == "adaptive-metropolis") return Algorithm::adaptive_metropolis;
  if (name == "hmc") return Algorithm::hmc;
  throw std::invalid_argument("unknown sampler algorithm '" + name + "'");
}

std::string algorithm_name(Algorithm algorithm) {
  return algorithm == Algorithm::hmc ? "hmc" : "adaptive-metropolis";
}

std::size_t SamplerConfig::burn_in() const {
  return static_cast<std::size_t>(std::floor(burn_in_fraction * n_iterations));
}

void SamplerConfig::validate() const {
  if (n_chains < 1) throw std::invalid_argument("n_chains must be at least 1");
  if (n_iterations < 1) throw std::invalid_argument("n_iterations must be at least 1");
  if (!(burn_in_fraction >= 0.0 && burn_in_fraction < 1.0))
    throw std::invalid_argument("burn_in_fraction must lie in [0, 1)");
  if (!(target_accept > 0.0 && target_accept < 1.0))
    throw std::invalid_argument("target_accept must lie in (0, 1)");
  if (steps_per_iteration < 1) throw std::invalid_argument("steps_per_iteration must be >= 1");
  if (leapfrog_steps < 1) throw std::invalid_argument("leapfrog_steps must be >= 1");
  if (!(fd_step > 0.0)) throw std::invalid_argument("fd_step must be positive");
}

std::size_t ChainTrace::index_of(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw std::invalid_argument("trace has no parameter '" + name + "'");
  return static_cast<std::size_t>(it - names.begin());
}

std::vector<double> ChainTrace::kept(std::size_t param) const {
  std::vector<double> out;
  for (std::size_t i = std::min(burn_in, size()); i < size(); ++i) out.push_back(value(i, param));
  return out;
}

double ChainTrace::mean_accept_rate() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = std::min(burn_in, size()); i < size(); ++i, ++n) sum += accept_rate[i];
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

Target make_target(const TankPosterior& posterior) {
  Target t;
  t.dim = posterior.layout().size();
  t.names = posterior.layout().names();
  t.log_density = [&posterior](std::span<const double> x) { return posterior(x); };
  t.constrain = [&posterior](std::span<const double> x) { return posterior.constrain(x); };
  return t;
}

Rng chain_rng(std::uint64_t seed, int chain_id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(chain_id), 0x5eedu};
  return Rng(seq);
}

ChainTrace run_chain(const Target& target, std::vector<double> init, const SamplerConfig& config,
                     Rng& rng, int chain_id) {
  config.validate();
  if (init.size() != target.dim) throw InitializationError("initial point has wrong dimension");
  Vec x = Eigen::Map<const Vec>(init.data(), static_cast<Eigen::Index>(init.size()));
  const double logp = safe_eval(target, x);
  if (!std::isfinite(logp))
    throw InitializationError("target is not finite at the initial point of chain " +
                              std::to_string(chain_id) +
                              "; initialize from a prior draw or the prior mode");
  if (config.algorithm == Algorithm::hmc) return run_hmc(target, x, logp, config, rng, chain_id);
  return run_metropolis(target, x, logp, config, rng, chain_id);
}

std::vector<ChainTrace> run_chains(const Target& target, const SamplerConfig& config,
                                   const std::vector<std::vector<double>>& inits) {
  config.validate();
  if (inits.size() != static_cast<std::size_t>(config.n_chains))
    throw InitializationError("need one initial point per chain");
  std::vector<ChainTrace> traces(inits.size());
  std::vector<std::exception_ptr> errors(inits.size());
  auto work = [&](std::size_t c) {
    try {
      Rng rng = chain_rng(config.seed, static_cast<int>(c));
      traces[c] = run_chain(target, inits[c], config, rng, static_cast<int>(c));
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };
  if (config.parallel && inits.size() > 1) {
    std::vector<std::thread> pool;
    for (std::size_t c = 0; c < inits.size(); ++c) pool.emplace_back(work, c);
    for (auto& t : pool) t.join();
  } else {
    for (std::size_t c = 0; c < inits.size(); ++c) work(c);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return traces;
}

std::vector<double> initialize_from_prior(Rng& rng, const TankPosterior& posterior,
                                          int max_retries) {
  const auto& layout = posterior.layout();
  for (int attempt = 0; attempt < max_retries; ++attempt) {
    const auto beta = sample_prior(rng, posterior.prior(), layout);
    Unconstrained u;
    try {
      u = to_unconstrained(beta, layout);
    } catch (const std::domain_error&) {
      continue;
    }
    if (std::isfinite(posterior(u.x))) return u.x;
  }
  throw InitializationError("no prior draw with finite posterior after " +
                            std::to_string(max_retries) + " attempts");
}

std::vector<double> prior_proposal_scales(const TankPosterior& posterior) {
  const auto& layout = posterior.layout();
  const auto& spec = posterior.prior();
  auto sd_of = [](const Distribution& d, double fallback) {
    if (auto* n = std::get_if<Normal>(&d)) return n->sd;
    if (auto* l = std::get_if<Laplace>(&d)) return std::sqrt(2.0) * l->scale;
    if (auto* u = std::get_if<Uniform>(&d)) return (u->high - u->low) / std::sqrt(12.0);
    return fallback;
  };
  std::vector<double> s(layout.size(), 0.1);
  s[0] = sd_of(spec.h_max, 0.1);
  s[1] = sd_of(spec.x_t, 0.1);
  s[2] = sd_of(spec.x_b, 0.1);
  s[3] = 0.5;
  s[4] = sd_of(spec.r, 0.01);
  for (int nu = 0; nu <= layout.degree(); ++nu)
    s[5 + static_cast<std::size_t>(nu)] = sd_of(spec.a_prior(static_cast<std::size_t>(nu)), 0.25);
  s[layout.sigma_index()] = 0.5;
  s[layout.sigma_index() + 1] = sd_of(spec.pollution_t0, 1.0);
  s[layout.h0_index()] = 0.5;
  for (std::size_t i = layout.h0_index() + 1; i < layout.size(); i += 2) {
    s[i] = sd_of(spec.calibration_t0, 0.25);
    s[i + 1] = 0.25;
  }
  return s;
}

}  // namespace drainback
