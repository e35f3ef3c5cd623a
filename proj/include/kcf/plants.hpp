#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "kcf/errors.hpp"
#include "kcf/io.hpp"
#include "kcf/tensor_algebra.hpp"

namespace kcf {

inline constexpr double kDefaultGravity = 9.81;

/// Per-channel box constraint on the input. Inputs are saturated, never rejected.
struct InputBounds {
  Vector lower;
  Vector upper;

  static InputBounds symmetric(Index channels, double limit) {
    return {Vector::Constant(channels, -limit), Vector::Constant(channels, limit)};
  }
  static InputBounds unbounded(Index channels) {
    return symmetric(channels, std::numeric_limits<double>::infinity());
  }

  Vector clip(const Vector& u) const { return u.cwiseMax(lower).cwiseMin(upper); }
  bool contains(const Vector& u) const {
    return (u.array() >= lower.array()).all() && (u.array() <= upper.array()).all();
  }
};

/// Continuous-time plant xdot = f(x) + g(x) u.
class ControlAffinePlant {
 public:
  using Drift = std::function<Vector(const Vector&)>;
  using ControlField = std::function<Matrix(const Vector&)>;

  ControlAffinePlant(std::string name, Index state_dim, Index input_dim, Drift drift,
                     ControlField control_field, InputBounds bounds)
      : name_(std::move(name)),
        state_dim_(state_dim),
        input_dim_(input_dim),
        drift_(std::move(drift)),
        control_field_(std::move(control_field)),
        bounds_(std::move(bounds)) {
    if (state_dim_ <= 0 || input_dim_ <= 0) {
      throw DimensionError("ControlAffinePlant: dimensions must be positive");
    }
    if (bounds_.lower.size() != input_dim_ || bounds_.upper.size() != input_dim_) {
      throw DimensionError("ControlAffinePlant: input bounds must have input_dim entries");
    }
  }

  const std::string& name() const { return name_; }
  Index state_dim() const { return state_dim_; }
  Index input_dim() const { return input_dim_; }
  const InputBounds& input_bounds() const { return bounds_; }

  Vector drift(const Vector& x) const { return drift_(x); }
  Matrix control_field(const Vector& x) const { return control_field_(x); }
  Vector velocity(const Vector& x, const Vector& u) const {
    return drift_(x) + control_field_(x) * u;
  }

 private:
  std::string name_;
  Index state_dim_;
  Index input_dim_;
  Drift drift_;
  ControlField control_field_;
  InputBounds bounds_;
};

struct SinglePendulumParams {
  double mass = 1.0;
  double length = 1.0;
  double damping = 0.3;
  double gravity = kDefaultGravity;
  double input_limit = 5.0;
};

/// State [theta, theta_dot] with theta = 0 upright:
///   theta_ddot = (g / L) sin(theta) - b / (m L^2) theta_dot + u / (m L^2).
inline ControlAffinePlant single_pendulum(const SinglePendulumParams& p) {
  if (!(p.mass > 0.0) || !(p.length > 0.0)) {
    throw ConfigError("single_pendulum: mass and length must be positive");
  }
  if (p.damping < 0.0 || p.gravity < 0.0) {
    throw ConfigError("single_pendulum: damping and gravity must be non-negative");
  }
  const double inertia = p.mass * p.length * p.length;
  auto drift = [p, inertia](const Vector& x) {
    Vector dx(2);
    dx << x(1), (p.gravity / p.length) * std::sin(x(0)) - (p.damping / inertia) * x(1);
    return dx;
  };
  auto field = [inertia](const Vector&) {
    Matrix g(2, 1);
    g << 0.0, 1.0 / inertia;
    return g;
  };
  return ControlAffinePlant("single_pendulum", 2, 1, drift, field,
                            InputBounds::symmetric(1, p.input_limit));
}

// Double pendulum with point masses at the link tips and absolute link angles measured
// from the upright, x = [theta1, theta2, theta1_dot, theta2_dot], theta_r = theta1 - theta2:
//
//   M(q) qdd + C(q, qd) qd + G(q) + D qd = u
//   M = [[(m1 + m2) l1^2,          m2 l1 l2 cos(theta_r)],
//        [m2 l1 l2 cos(theta_r),   m2 l2^2             ]]
//   C qd = m2 l1 l2 sin(theta_r) [theta2_dot^2, -theta1_dot^2]
//   G = -g [(m1 + m2) l1 sin(theta1), m2 l2 sin(theta2)]
//
// u is the generalized force on each absolute angle. D = diag(b1, b2) is optional.
struct DoublePendulumParams {
  double m1 = 1.0;
  double m2 = 1.0;
  double l1 = 1.0;
  double l2 = 1.0;
  double gravity = kDefaultGravity;
  double damping1 = 0.0;
  double damping2 = 0.0;
  double input_limit = 5.0;
};

inline Eigen::Matrix2d double_pendulum_mass_matrix(const DoublePendulumParams& p,
                                                   double theta_r) {
  const double off = p.m2 * p.l1 * p.l2 * std::cos(theta_r);
  Eigen::Matrix2d m;
  m << (p.m1 + p.m2) * p.l1 * p.l1, off, off, p.m2 * p.l2 * p.l2;
  return m;
}

/// Total mechanical energy, potential measured so the upright configuration is highest.
inline double double_pendulum_energy(const DoublePendulumParams& p, const Vector& x) {
  const Eigen::Matrix2d m = double_pendulum_mass_matrix(p, x(0) - x(1));
  const Eigen::Vector2d qd = x.tail<2>();
  const double kinetic = 0.5 * qd.dot(m * qd);
  const double potential =
      p.gravity * ((p.m1 + p.m2) * p.l1 * std::cos(x(0)) + p.m2 * p.l2 * std::cos(x(1)));
  return kinetic + potential;
}

inline ControlAffinePlant double_pendulum(const DoublePendulumParams& p) {
  if (!(p.m1 > 0.0) || !(p.m2 > 0.0) || !(p.l1 > 0.0) || !(p.l2 > 0.0)) {
    throw ConfigError("double_pendulum: masses and lengths must be positive");
  }
  if (p.gravity < 0.0 || p.damping1 < 0.0 || p.damping2 < 0.0) {
    throw ConfigError("double_pendulum: gravity and damping must be non-negative");
  }
  auto inverse_mass = [p](const Vector& x) {
    const Eigen::Matrix2d m = double_pendulum_mass_matrix(p, x(0) - x(1));
    const double det = m.determinant();
    // det = m2 l1^2 l2^2 (m1 + m2 sin^2 theta_r) > 0 for positive parameters.
    if (!(det > 0.0)) throw IntegrationFailure("double_pendulum: singular mass matrix");
    return Eigen::Matrix2d(m.inverse());
  };
  auto drift = [p, inverse_mass](const Vector& x) {
    const double s = std::sin(x(0) - x(1));
    const double h = p.m2 * p.l1 * p.l2 * s;
    Eigen::Vector2d rhs;
    rhs << -h * x(3) * x(3) + p.gravity * (p.m1 + p.m2) * p.l1 * std::sin(x(0)) -
               p.damping1 * x(2),
        h * x(2) * x(2) + p.gravity * p.m2 * p.l2 * std::sin(x(1)) - p.damping2 * x(3);
    Vector dx(4);
    dx.head<2>() = x.segment<2>(2);
    dx.tail<2>() = inverse_mass(x) * rhs;
    return dx;
  };
  auto field = [inverse_mass](const Vector& x) {
    Matrix g = Matrix::Zero(4, 2);
    g.bottomRows<2>() = inverse_mass(x);
    return g;
  };
  return ControlAffinePlant("double_pendulum", 4, 2, drift, field,
                            InputBounds::symmetric(2, p.input_limit));
}

struct IntegratorConfig {
  double dt = 0.01;
  int steps = 100;

  void validate() const {
    if (!(dt > 0.0)) throw ConfigError("integrator: dt must be positive");
    if (steps < 1) throw ConfigError("integrator: steps must be at least 1");
  }
};

/// Classical RK4 with the input held constant over the step.
inline Vector rk4_step(const ControlAffinePlant& plant, const Vector& x, const Vector& u,
                       double dt) {
  if (!(dt > 0.0)) throw ConfigError("rk4_step: dt must be positive");
  const Vector k1 = plant.velocity(x, u);
  const Vector k2 = plant.velocity(x + 0.5 * dt * k1, u);
  const Vector k3 = plant.velocity(x + 0.5 * dt * k2, u);
  const Vector k4 = plant.velocity(x + dt * k3, u);
  Vector next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!next.allFinite()) throw IntegrationFailure("rk4_step: non-finite state");
  return next;
}

/// states has one more entry than inputs: (states[k], inputs[k], states[k+1]) is step k.
struct Trajectory {
  std::vector<Vector> states;
  std::vector<Vector> inputs;
  bool failed = false;
  std::optional<std::size_t> failed_step;

  std::size_t steps() const { return inputs.size(); }
};

using Controller = std::function<Vector(const Vector&)>;

/// Closed-loop rollout. Controller outputs are clipped to the plant bounds before
/// integration; an integration failure stops the trajectory and flags it.
inline Trajectory rollout(const ControlAffinePlant& plant, const Vector& x0,
                          const Controller& controller, int steps, double dt,
                          const InputBounds* bounds_override = nullptr) {
  const InputBounds& bounds = bounds_override ? *bounds_override : plant.input_bounds();
  if (x0.size() != plant.state_dim()) throw DimensionError("rollout: x0 has wrong length");
  Trajectory traj;
  traj.states.reserve(static_cast<std::size_t>(steps) + 1);
  traj.inputs.reserve(static_cast<std::size_t>(steps));
  traj.states.push_back(x0);
  for (int k = 0; k < steps; ++k) {
    const Vector& x = traj.states.back();
    Vector u = controller(x);
    if (u.size() != plant.input_dim()) throw DimensionError("rollout: controller output size");
    u = bounds.clip(u);
    if (!u.allFinite()) {
      traj.failed = true;
      traj.failed_step = static_cast<std::size_t>(k);
      break;
    }
    try {
      Vector next = rk4_step(plant, x, u, dt);
      traj.inputs.push_back(std::move(u));
      traj.states.push_back(std::move(next));
    } catch (const IntegrationFailure&) {
      traj.failed = true;
      traj.failed_step = static_cast<std::size_t>(k);
      break;
    }
  }
  return traj;
}

/// Open-loop rollout of a fixed input sequence.
inline Trajectory rollout(const ControlAffinePlant& plant, const Vector& x0,
                          const std::vector<Vector>& inputs, double dt) {
  std::size_t k = 0;
  Controller seq = [&](const Vector&) { return inputs.at(k++); };
  return rollout(plant, x0, seq, static_cast<int>(inputs.size()), dt);
}

/// CSV with header "k,x1..xn,u1..um". The final row holds x_T with empty input columns.
/// An optional leading '#' comment line carries provenance.
inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj, Index input_dim,
                                 const std::string& comment = {}) {
  if (!comment.empty()) os << "# " << comment << '\n';
  const Index n = traj.states.empty() ? 0 : traj.states.front().size();
  os << 'k';
  for (Index i = 1; i <= n; ++i) os << ",x" << i;
  for (Index i = 1; i <= input_dim; ++i) os << ",u" << i;
  os << '\n';
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    os << k;
    for (Index i = 0; i < n; ++i) os << ',' << format_double(traj.states[k](i));
    for (Index i = 0; i < input_dim; ++i) {
      os << ',';
      if (k < traj.inputs.size()) os << format_double(traj.inputs[k](i));
    }
    os << '\n';
  }
}

inline Trajectory read_trajectory_csv(std::istream& is, Index state_dim, Index input_dim) {
  Trajectory traj;
  std::string line;
  bool header_seen = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    const auto fields = split_csv_line(line);
    if (static_cast<Index>(fields.size()) != 1 + state_dim + input_dim) {
      throw DimensionError("read_trajectory_csv: expected " +
                           std::to_string(1 + state_dim + input_dim) + " columns, got " +
                           std::to_string(fields.size()));
    }
    Vector x(state_dim);
    for (Index i = 0; i < state_dim; ++i) x(i) = parse_double(fields[1 + i]);
    traj.states.push_back(std::move(x));
    if (!fields[1 + state_dim].empty()) {
      Vector u(input_dim);
      for (Index i = 0; i < input_dim; ++i) u(i) = parse_double(fields[1 + state_dim + i]);
      traj.inputs.push_back(std::move(u));
    }
  }
  if (!header_seen) throw std::runtime_error("read_trajectory_csv: missing header row");
  if (!traj.states.empty() && traj.inputs.size() + 1 != traj.states.size()) {
    throw DimensionError("read_trajectory_csv: expected one input per step");
  }
  return traj;
}

}  // namespace kcf
