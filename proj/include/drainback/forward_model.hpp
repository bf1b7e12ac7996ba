#ifndef DRAINBACK_FORWARD_MODEL_HPP
#define DRAINBACK_FORWARD_MODEL_HPP

#include <stdexcept>
#include <string>
#include <vector>

namespace drainback {

// Truncated inverted square pyramid. All lengths in cm.
struct TankGeometry {
  double h_max = 14.0;
  double x_t = 8.7;   // top side length
  double x_b = 8.4;   // bottom side length

  bool is_valid() const { return h_max > 0.0 && x_t > 0.0 && x_b > 0.0; }
};

struct Orifice {
  double r = 0.12;  // radius, cm
  double c = 0.6;   // discharge coefficient

  bool is_valid() const { return r > 0.0 && c >= 0.0 && c <= 1.0; }
};

struct PhysicalConstants {
  double g = 981.0;  // cm/s^2
};

struct InitialCondition {
  double t0 = 0.0;  // s
  double h0 = 0.0;  // cm
};

struct SolverOptions {
  double rel_tol = 1e-8;
  double abs_tol = 1e-10;
  double depletion_floor = 1e-6;  // cm
  double min_step = 1e-12;        // s
  double max_step = 0.0;          // s, 0 = unbounded
  int max_steps = 100000;
};

class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& what, double last_t, double last_h)
      : std::runtime_error(what), last_t_(last_t), last_h_(last_h) {}

  double last_t() const { return last_t_; }
  double last_h() const { return last_h_; }

 private:
  double last_t_;
  double last_h_;
};

/// Dense solution of the drainage IVP.
///
/// Knot times are stored relative to t0 so that shifting the initial time
/// translates the trajectory without changing a single knot. Between knots
/// the level is a cubic Hermite interpolant of (h, dh/dt) with
/// Fritsch-Carlson slope limiting, so it never leaves the range spanned by
/// the two neighbouring knots.
class LevelTrajectory {
 public:
  LevelTrajectory() = default;
  LevelTrajectory(double t0, std::vector<double> elapsed, std::vector<double> level,
                  std::vector<double> slope, bool depleted, double depletion_time);

  double t_begin() const { return t0_; }
  double t_end() const { return t0_ + elapsed_.back(); }
  bool depleted() const { return depleted_; }
  // Absolute time at which the level reached the floor; +inf if it never did.
  double depletion_time() const { return depletion_time_; }

  std::size_t knot_count() const { return elapsed_.size(); }
  double knot_time(std::size_t i) const { return t0_ + elapsed_[i]; }
  double knot_level(std::size_t i) const { return level_[i]; }

  double level_at(double t) const;

 private:
  double t0_ = 0.0;
  std::vector<double> elapsed_;
  std::vector<double> level_;
  std::vector<double> slope_;
  bool depleted_ = false;
  double depletion_time_ = 0.0;
};

// Horizontal cross-section of the tank at height h. Throws std::domain_error
// for h outside [0, h_max].
double cross_section_area(const TankGeometry& geom, double h);

// dh/dt from the volume balance with Torricelli outflow. Exactly 0 at h = 0.
double drain_rate(const TankGeometry& geom, const Orifice& orifice,
                  const PhysicalConstants& constants, double h);

// Adaptive Dormand-Prince 5(4) solution covering [ic.t0, t_end]. The final
// knot may lie past t_end; levels at a given time do not depend on t_end.
LevelTrajectory simulate_level(const TankGeometry& geom, const Orifice& orifice,
                               const PhysicalConstants& constants, const InitialCondition& ic,
                               double t_end, const SolverOptions& options = {});

double level_at(const LevelTrajectory& traj, double t);

// Exact level for a prism of side x (constant cross-section x^2).
double prism_level_closed_form(double x, const Orifice& orifice,
                               const PhysicalConstants& constants, const InitialCondition& ic,
                               double t);

// Liquid volume below height h, cm^3.
double liquid_volume(const TankGeometry& geom, double h);

}  // namespace drainback

#endif
