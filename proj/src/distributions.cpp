#include "drainback/distributions.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace drainback {

namespace {

constexpr double neg_inf = -std::numeric_limits<double>::infinity();

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

double gamma_draw(double shape, Rng& rng) {
  std::gamma_distribution<double> gamma(shape, 1.0);
  return gamma(rng);
}

}  // namespace

double normal_log_density(double x, double mu, double sd) {
  const double z = (x - mu) / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi);
}

double log_density(const Distribution& dist, double x) {
  if (std::isnan(x)) return neg_inf;
  return std::visit(
      overloaded{
          [x](const Normal& d) { return normal_log_density(x, d.mu, d.sd); },
          [x](const BetaDist& d) {
            if (!(x > 0.0 && x < 1.0)) return neg_inf;
            return std::lgamma(d.alpha + d.beta) - std::lgamma(d.alpha) - std::lgamma(d.beta) +
                   (d.alpha - 1.0) * std::log(x) + (d.beta - 1.0) * std::log1p(-x);
          },
          [x](const Exponential& d) {
            if (!(x >= 0.0)) return neg_inf;
            return std::log(d.rate) - d.rate * x;
          },
          [x](const Laplace& d) {
            return -std::log(2.0 * d.scale) - std::abs(x - d.location) / d.scale;
          },
          [x](const Uniform& d) {
            if (!(x >= d.low && x <= d.high)) return neg_inf;
            return -std::log(d.high - d.low);
          },
      },
      dist);
}

double sample(const Distribution& dist, Rng& rng) {
  return std::visit(
      overloaded{
          [&rng](const Normal& d) {
            std::normal_distribution<double> n(d.mu, d.sd);
            return n(rng);
          },
          [&rng](const BetaDist& d) {
            const double x = gamma_draw(d.alpha, rng);
            const double y = gamma_draw(d.beta, rng);
            return x / (x + y);
          },
          [&rng](const Exponential& d) {
            std::exponential_distribution<double> e(d.rate);
            return e(rng);
          },
          [&rng](const Laplace& d) {
            std::uniform_real_distribution<double> u(-0.5, 0.5);
            double v = u(rng);
            while (std::abs(v) == 0.5) v = u(rng);
            const double sign = v < 0.0 ? -1.0 : 1.0;
            return d.location - d.scale * sign * std::log1p(-2.0 * std::abs(v));
          },
          [&rng](const Uniform& d) {
            std::uniform_real_distribution<double> u(d.low, d.high);
            return u(rng);
          },
      },
      dist);
}

double mean(const Distribution& dist) {
  return std::visit(overloaded{
                        [](const Normal& d) { return d.mu; },
                        [](const BetaDist& d) { return d.alpha / (d.alpha + d.beta); },
                        [](const Exponential& d) { return 1.0 / d.rate; },
                        [](const Laplace& d) { return d.location; },
                        [](const Uniform& d) { return 0.5 * (d.low + d.high); },
                    },
                    dist);
}

void validate(const Distribution& dist) {
  auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  const bool ok = std::visit(
      overloaded{
          [&](const Normal& d) { return std::isfinite(d.mu) && positive(d.sd); },
          [&](const BetaDist& d) { return positive(d.alpha) && positive(d.beta); },
          [&](const Exponential& d) { return positive(d.rate); },
          [&](const Laplace& d) { return std::isfinite(d.location) && positive(d.scale); },
          [&](const Uniform& d) {
            return std::isfinite(d.low) && std::isfinite(d.high) && d.low < d.high;
          },
      },
      dist);
  if (!ok) throw std::invalid_argument(family_name(dist) + " prior has invalid hyperparameters");
}

std::string family_name(const Distribution& dist) {
  return std::visit(overloaded{
                        [](const Normal&) { return std::string("normal"); },
                        [](const BetaDist&) { return std::string("beta"); },
                        [](const Exponential&) { return std::string("exponential"); },
                        [](const Laplace&) { return std::string("laplace"); },
                        [](const Uniform&) { return std::string("uniform"); },
                    },
                    dist);
}

}  // namespace drainback
