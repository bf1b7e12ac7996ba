#ifndef DRAINBACK_DISCREPANCY_HPP
#define DRAINBACK_DISCREPANCY_HPP

#include <vector>

namespace drainback {

// Coefficients a_0..a_n of a degree-n Bernstein expansion, in cm.
struct DiscrepancyCoefficients {
  std::vector<double> a;

  DiscrepancyCoefficients() = default;
  explicit DiscrepancyCoefficients(std::vector<double> coeffs);

  int degree() const { return static_cast<int>(a.size()) - 1; }
  static DiscrepancyCoefficients zeros(int degree);
};

double binomial(int n, int k);

// C(n, nu) u^nu (1 - u)^(n - nu). Throws std::domain_error off [0, 1] or for
// nu outside 0..n.
double bernstein_basis(int n, int nu, double u);

// Model-minus-truth correction as a function of the predicted level h.
double evaluate_discrepancy(const DiscrepancyCoefficients& coeffs, double h, double h_max);

double corrected_level(double model_level, const DiscrepancyCoefficients& coeffs, double h_max);

}  // namespace drainback

#endif
