#include "drainback/discrepancy.hpp"

#include <cmath>
#include <stdexcept>

namespace drainback {

DiscrepancyCoefficients::DiscrepancyCoefficients(std::vector<double> coeffs)
    : a(std::move(coeffs)) {
  if (a.empty()) throw std::invalid_argument("discrepancy needs at least one coefficient");
  for (double v : a)
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite discrepancy coefficient");
}

DiscrepancyCoefficients DiscrepancyCoefficients::zeros(int degree) {
  if (degree < 0) throw std::invalid_argument("negative Bernstein degree");
  return DiscrepancyCoefficients(std::vector<double>(static_cast<std::size_t>(degree) + 1, 0.0));
}

double binomial(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  double out = 1.0;
  for (int i = 1; i <= k; ++i) out = out * (n - k + i) / i;
  return out;
}

double bernstein_basis(int n, int nu, double u) {
  if (n < 0 || nu < 0 || nu > n) throw std::domain_error("Bernstein index out of range");
  if (!(u >= 0.0 && u <= 1.0)) throw std::domain_error("Bernstein argument outside [0, 1]");
  return binomial(n, nu) * std::pow(u, nu) * std::pow(1.0 - u, n - nu);
}

double evaluate_discrepancy(const DiscrepancyCoefficients& coeffs, double h, double h_max) {
  if (coeffs.a.empty()) throw std::invalid_argument("empty discrepancy coefficients");
  if (!(h_max > 0.0)) throw std::domain_error("h_max must be positive");
  if (!(h >= 0.0 && h <= h_max)) throw std::domain_error("discrepancy level outside [0, h_max]");
  const int n = coeffs.degree();
  const double u = h / h_max;
  // Endpoints are returned verbatim so that delta(0) = a_0 and delta(h_max) = a_n exactly.
  if (u == 0.0) return coeffs.a.front();
  if (u == 1.0) return coeffs.a.back();
  double sum = 0.0;
  for (int nu = 0; nu <= n; ++nu) sum += coeffs.a[static_cast<std::size_t>(nu)] * bernstein_basis(n, nu, u);
  return sum;
}

double corrected_level(double model_level, const DiscrepancyCoefficients& coeffs, double h_max) {
  return model_level + evaluate_discrepancy(coeffs, model_level, h_max);
}

}  // namespace drainback
