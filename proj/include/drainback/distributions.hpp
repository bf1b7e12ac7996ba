#ifndef DRAINBACK_DISTRIBUTIONS_HPP
#define DRAINBACK_DISTRIBUTIONS_HPP

#include <random>
#include <string>
#include <variant>

namespace drainback {

using Rng = std::mt19937_64;

struct Normal {
  double mu = 0.0;
  double sd = 1.0;
};

struct BetaDist {
  double alpha = 1.0;
  double beta = 1.0;
};

// Parameterized by rate; mean is 1 / rate.
struct Exponential {
  double rate = 1.0;
};

struct Laplace {
  double location = 0.0;
  double scale = 1.0;
};

struct Uniform {
  double low = 0.0;
  double high = 1.0;
};

using Distribution = std::variant<Normal, BetaDist, Exponential, Laplace, Uniform>;

// -inf outside the support.
double log_density(const Distribution& dist, double x);
double sample(const Distribution& dist, Rng& rng);
double mean(const Distribution& dist);
// Throws std::invalid_argument when hyperparameters leave the family's domain.
void validate(const Distribution& dist);
std::string family_name(const Distribution& dist);

double normal_log_density(double x, double mu, double sd);

}  // namespace drainback

#endif
