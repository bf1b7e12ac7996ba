#include "drainback/forward_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace drainback {

namespace {

// Dormand-Prince 5(4) tableau.
constexpr double a21 = 1.0 / 5.0;
constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0, a53 = 64448.0 / 6561.0,
                 a54 = -212.0 / 729.0;
constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0, a63 = 46732.0 / 5247.0,
                 a64 = 49.0 / 176.0, a65 = -5103.0 / 18656.0;
constexpr double b1 = 35.0 / 384.0, b3 = 500.0 / 1113.0, b4 = 125.0 / 192.0,
                 b5 = -2187.0 / 6784.0, b6 = 11.0 / 84.0;
constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0,
                 e5 = -17253.0 / 339200.0, e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;

// Levels handed to the stepper stay in [0, h_max] even when intermediate
// stages stray slightly outside.
double rhs(const TankGeometry& geom, double outflow_coeff, double h) {
  if (h <= 0.0) return 0.0;
  const double hc = std::min(h, geom.h_max);
  return -outflow_coeff * std::sqrt(h) / cross_section_area(geom, hc);
}

void validate(const TankGeometry& geom, const Orifice& orifice, const PhysicalConstants& k) {
  if (!geom.is_valid()) throw std::domain_error("tank geometry must have positive dimensions");
  if (!orifice.is_valid()) throw std::domain_error("orifice needs r > 0 and c in [0, 1]");
  if (!(k.g > 0.0)) throw std::domain_error("gravity must be positive");
}

// Rate at which sqrt(h) decreases; locally constant near depletion.
double sqrt_level_rate(const TankGeometry& geom, double outflow_coeff, double h) {
  return outflow_coeff / (2.0 * cross_section_area(geom, std::min(h, geom.h_max)));
}

}  // namespace

double cross_section_area(const TankGeometry& geom, double h) {
  if (!(h >= 0.0 && h <= geom.h_max)) {
    std::ostringstream msg;
    msg << "level " << h << " outside [0, " << geom.h_max << "]";
    throw std::domain_error(msg.str());
  }
  const double u = h / geom.h_max;
  const double side = u * geom.x_t + (1.0 - u) * geom.x_b;
  return side * side;
}

double drain_rate(const TankGeometry& geom, const Orifice& orifice,
                  const PhysicalConstants& constants, double h) {
  if (h < 0.0) throw std::domain_error("negative liquid level");
  if (h == 0.0) return 0.0;
  const double area = cross_section_area(geom, h);
  return -orifice.c * std::numbers::pi * orifice.r * orifice.r *
         std::sqrt(2.0 * constants.g * h) / area;
}

double liquid_volume(const TankGeometry& geom, double h) {
  if (!(h >= 0.0 && h <= geom.h_max)) throw std::domain_error("level outside tank");
  const double d = (geom.x_t - geom.x_b) / geom.h_max;
  return geom.x_b * geom.x_b * h + geom.x_b * d * h * h + d * d * h * h * h / 3.0;
}

LevelTrajectory::LevelTrajectory(double t0, std::vector<double> elapsed,
                                 std::vector<double> level, std::vector<double> slope,
                                 bool depleted, double depletion_time)
    : t0_(t0),
      elapsed_(std::move(elapsed)),
      level_(std::move(level)),
      slope_(std::move(slope)),
      depleted_(depleted),
      depletion_time_(depletion_time) {
  if (elapsed_.size() < 2 || level_.size() != elapsed_.size() || slope_.size() != elapsed_.size())
    throw std::invalid_argument("trajectory needs at least two consistent knots");
}

double LevelTrajectory::level_at(double t) const {
  const double tau = t - t0_;
  if (!(tau >= 0.0 && tau <= elapsed_.back())) {
    std::ostringstream msg;
    msg << "time " << t << " outside trajectory span [" << t_begin() << ", " << t_end() << "]";
    throw std::out_of_range(msg.str());
  }
  auto it = std::upper_bound(elapsed_.begin(), elapsed_.end(), tau);
  if (it == elapsed_.end()) return level_.back();
  const std::size_t i = static_cast<std::size_t>(it - elapsed_.begin()) - 1;
  const double dt = elapsed_[i + 1] - elapsed_[i];
  const double y0 = level_[i], y1 = level_[i + 1];
  const double secant = (y1 - y0) / dt;
  if (secant == 0.0) return y0;

  double alpha = slope_[i] / secant;
  double beta = slope_[i + 1] / secant;
  alpha = std::max(alpha, 0.0);
  beta = std::max(beta, 0.0);
  const double norm2 = alpha * alpha + beta * beta;
  if (norm2 > 9.0) {
    const double shrink = 3.0 / std::sqrt(norm2);
    alpha *= shrink;
    beta *= shrink;
  }
  const double m0 = alpha * secant, m1 = beta * secant;

  const double s = (tau - elapsed_[i]) / dt;
  const double s2 = s * s, s3 = s2 * s;
  const double h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
  const double h10 = s3 - 2.0 * s2 + s;
  const double h01 = -2.0 * s3 + 3.0 * s2;
  const double h11 = s3 - s2;
  const double value = h00 * y0 + h10 * dt * m0 + h01 * y1 + h11 * dt * m1;
  return std::clamp(value, std::min(y0, y1), std::max(y0, y1));
}

double level_at(const LevelTrajectory& traj, double t) { return traj.level_at(t); }

LevelTrajectory simulate_level(const TankGeometry& geom, const Orifice& orifice,
                               const PhysicalConstants& constants, const InitialCondition& ic,
                               double t_end, const SolverOptions& options) {
  validate(geom, orifice, constants);
  if (!(ic.h0 >= 0.0 && ic.h0 <= geom.h_max))
    throw std::domain_error("initial level outside [0, h_max]");
  if (!std::isfinite(ic.t0) || !std::isfinite(t_end) || !(t_end > ic.t0))
    throw std::domain_error("t_end must exceed t0");

  const double span = t_end - ic.t0;
  const double k = orifice.c * std::numbers::pi * orifice.r * orifice.r *
                   std::sqrt(2.0 * constants.g);
  const double floor = options.depletion_floor;
  const double max_step =
      options.max_step > 0.0 ? options.max_step : std::numeric_limits<double>::infinity();

  std::vector<double> ts{0.0}, hs{ic.h0}, fs{rhs(geom, k, ic.h0)};

  auto finish_depleted = [&](double tau_dep) {
    ts.push_back(tau_dep);
    hs.push_back(0.0);
    fs.push_back(0.0);
    if (tau_dep < span) {
      ts.push_back(span);
      hs.push_back(0.0);
      fs.push_back(0.0);
    }
    return LevelTrajectory(ic.t0, std::move(ts), std::move(hs), std::move(fs), true,
                           ic.t0 + tau_dep);
  };

  if (ic.h0 <= floor || k == 0.0) {
    if (k == 0.0 && ic.h0 > floor) {
      return LevelTrajectory(ic.t0, {0.0, span}, {ic.h0, ic.h0}, {0.0, 0.0}, false,
                             std::numeric_limits<double>::infinity());
    }
    hs[0] = 0.0;
    fs[0] = 0.0;
    ts.push_back(span);
    hs.push_back(0.0);
    fs.push_back(0.0);
    return LevelTrajectory(ic.t0, std::move(ts), std::move(hs), std::move(fs), true, ic.t0);
  }

  // Close to empty the square root of the level falls linearly in time; the
  // remaining interval is extrapolated from there instead of stepping into
  // the singular region of the right-hand side.
  const double endgame_level = 100.0 * floor;
  auto endgame = [&](double tau, double y) {
    const double rate = sqrt_level_rate(geom, k, y);
    return finish_depleted(tau + (std::sqrt(y) - std::sqrt(floor)) / rate);
  };

  double tau = 0.0;
  double y = ic.h0;
  double f1 = fs[0];
  double dt = std::min(max_step, 1e-3 * y / std::max(std::abs(f1), 1e-300));
  int steps = 0;

  // The last step is not clipped to t_end, so the knots are a prefix of the
  // same sequence for every horizon and levels never depend on how far the
  // caller asked to integrate.
  while (tau < span) {
    if (++steps > options.max_steps) throw SolverError("step budget exhausted", ic.t0 + tau, y);
    if (dt < options.min_step) throw SolverError("step size underflow", ic.t0 + tau, y);
    const double h = dt;

    const double y2 = y + h * a21 * f1;
    const double f2 = rhs(geom, k, y2);
    const double y3 = y + h * (a31 * f1 + a32 * f2);
    const double f3 = rhs(geom, k, y3);
    const double y4 = y + h * (a41 * f1 + a42 * f2 + a43 * f3);
    const double f4 = rhs(geom, k, y4);
    const double y5 = y + h * (a51 * f1 + a52 * f2 + a53 * f3 + a54 * f4);
    const double f5 = rhs(geom, k, y5);
    const double y6 = y + h * (a61 * f1 + a62 * f2 + a63 * f3 + a64 * f4 + a65 * f5);
    const double f6 = rhs(geom, k, y6);
    const double y_new = y + h * (b1 * f1 + b3 * f3 + b4 * f4 + b5 * f5 + b6 * f6);

    const bool overshoot = std::min({y2, y3, y4, y5, y6, y_new}) < floor;
    if (overshoot) {
      const double rate = sqrt_level_rate(geom, k, y);
      const double remaining = (std::sqrt(y) - std::sqrt(floor)) / rate;
      dt = std::min(0.5 * h, 0.5 * remaining);
      continue;
    }

    const double f7 = rhs(geom, k, y_new);
    const double err = h * (e1 * f1 + e3 * f3 + e4 * f4 + e5 * f5 + e6 * f6 + e7 * f7);
    const double scale = options.abs_tol + options.rel_tol * std::max(std::abs(y), std::abs(y_new));
    const double err_norm = std::abs(err) / scale;

    if (err_norm <= 1.0) {
      tau += h;
      y = std::min(y_new, y);
      f1 = f7;
      ts.push_back(tau);
      hs.push_back(y);
      fs.push_back(f1);
      const double grow = err_norm == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(err_norm, -0.2), 0.2, 5.0);
      dt = std::min(h * grow, max_step);
      if (y <= endgame_level) return endgame(tau, y);
    } else {
      dt = h * std::max(0.2, 0.9 * std::pow(err_norm, -0.2));
    }
  }
  return LevelTrajectory(ic.t0, std::move(ts), std::move(hs), std::move(fs), false,
                         std::numeric_limits<double>::infinity());
}

double prism_level_closed_form(double x, const Orifice& orifice,
                               const PhysicalConstants& constants, const InitialCondition& ic,
                               double t) {
  if (!(x > 0.0)) throw std::domain_error("prism side must be positive");
  if (!orifice.is_valid()) throw std::domain_error("orifice needs r > 0 and c in [0, 1]");
  if (!(constants.g > 0.0)) throw std::domain_error("gravity must be positive");
  if (!(ic.h0 >= 0.0)) throw std::domain_error("negative initial level");
  if (!(t >= ic.t0)) throw std::domain_error("closed form requires t >= t0");
  if (std::isinf(t)) return 0.0;
  const double k = orifice.c * std::numbers::pi * orifice.r * orifice.r *
                   std::sqrt(2.0 * constants.g) / (x * x);
  const double s = std::max(0.0, std::sqrt(ic.h0) - 0.5 * k * (t - ic.t0));
  return s * s;
}

}  // namespace drainback
