#pragma once

// Kinematic bicycle model: continuous dynamics, fixed-step RK4 discretization,
// analytic Jacobians, and operational limit handling. The rear-axle center is
// the state reference point.

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace confres {

using Vec2 = Eigen::Vector2d;
using Vec5 = Eigen::Matrix<double, 5, 1>;
using Mat55 = Eigen::Matrix<double, 5, 5>;
using Mat52 = Eigen::Matrix<double, 5, 2>;
using Mat77 = Eigen::Matrix<double, 7, 7>;

/// Vehicle state z = (x, y, psi, v, delta_f): rear-axle position, heading,
/// speed, and front steering angle.
struct VehicleState {
  double x = 0.0;
  double y = 0.0;
  double psi = 0.0;
  double v = 0.0;
  double delta_f = 0.0;

  Vec5 to_vector() const {
    Vec5 z;
    z << x, y, psi, v, delta_f;
    return z;
  }
  static VehicleState from_vector(const Vec5& z) {
    return {z(0), z(1), z(2), z(3), z(4)};
  }
};

/// Input u = (a, omega): acceleration and steering rate.
struct ControlInput {
  double a = 0.0;
  double omega = 0.0;

  Vec2 to_vector() const { return Vec2(a, omega); }
  static ControlInput from_vector(const Vec2& u) { return {u(0), u(1)}; }
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double t) const { return t >= lo && t <= hi; }
  double clamp(double t) const { return std::min(hi, std::max(lo, t)); }
};

/// Box limits on state and input components. Defaults are the operational
/// limits of the target vehicle class.
struct Limits {
  Interval v{-2.5, 2.5};
  Interval delta{-0.85, 0.85};
  Interval a{-1.5, 1.5};
  Interval omega{-1.0, 1.0};

  static Limits operational() { return Limits{}; }
};

/// dz/dt = (v cos psi, v sin psi, v/l_wb tan delta_f, a, omega).
inline Vec5 f_continuous(const VehicleState& z, const ControlInput& u,
                         double l_wb) {
  if (l_wb <= 0.0) throw std::invalid_argument("wheelbase must be positive");
  Vec5 dz;
  dz << z.v * std::cos(z.psi), z.v * std::sin(z.psi),
      z.v / l_wb * std::tan(z.delta_f), u.a, u.omega;
  return dz;
}

struct DynamicsJacobian {
  Mat55 A;  // d f / d z
  Mat52 B;  // d f / d u
};

inline DynamicsJacobian f_jacobian(const VehicleState& z,
                                   const ControlInput& /*u*/, double l_wb) {
  DynamicsJacobian j;
  j.A.setZero();
  j.B.setZero();
  const double c = std::cos(z.psi), s = std::sin(z.psi);
  const double td = std::tan(z.delta_f);
  const double sec2 = 1.0 + td * td;
  j.A(0, 2) = -z.v * s;
  j.A(0, 3) = c;
  j.A(1, 2) = z.v * c;
  j.A(1, 3) = s;
  j.A(2, 3) = td / l_wb;
  j.A(2, 4) = z.v * sec2 / l_wb;
  j.B(3, 0) = 1.0;
  j.B(4, 1) = 1.0;
  return j;
}

/// State-state Hessian of w . f(z, u); f has no input curvature.
inline Mat55 f_weighted_hessian(const VehicleState& z,
                                const ControlInput& /*u*/, double l_wb,
                                const Vec5& w) {
  Mat55 h = Mat55::Zero();
  const double c = std::cos(z.psi), s = std::sin(z.psi);
  const double td = std::tan(z.delta_f);
  const double sec2 = 1.0 + td * td;
  // f0 = v cos psi, f1 = v sin psi
  h(2, 2) = w(0) * (-z.v * c) + w(1) * (-z.v * s);
  h(2, 3) = w(0) * (-s) + w(1) * c;
  h(3, 2) = h(2, 3);
  // f2 = v tan(delta)/l
  h(3, 4) = w(2) * sec2 / l_wb;
  h(4, 3) = h(3, 4);
  h(4, 4) = w(2) * z.v * 2.0 * sec2 * td / l_wb;
  return h;
}

/// Classical RK4 update with zero-order hold on u.
inline VehicleState rk4_step(const VehicleState& z, const ControlInput& u,
                             double tau, double l_wb) {
  if (tau <= 0.0) throw std::invalid_argument("step size must be positive");
  const Vec5 z0 = z.to_vector();
  const auto f = [&](const Vec5& zz) {
    return f_continuous(VehicleState::from_vector(zz), u, l_wb);
  };
  const Vec5 k1 = f(z0);
  const Vec5 k2 = f(z0 + 0.5 * tau * k1);
  const Vec5 k3 = f(z0 + 0.5 * tau * k2);
  const Vec5 k4 = f(z0 + tau * k3);
  return VehicleState::from_vector(z0 +
                                   tau / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
}

/// Jacobian of the RK4 composition by forward accumulation through the four
/// stages.
inline DynamicsJacobian rk4_jacobian(const VehicleState& z,
                                     const ControlInput& u, double tau,
                                     double l_wb) {
  const Vec5 z0 = z.to_vector();
  const auto f = [&](const Vec5& zz) {
    return f_continuous(VehicleState::from_vector(zz), u, l_wb);
  };
  const auto jac = [&](const Vec5& zz) {
    return f_jacobian(VehicleState::from_vector(zz), u, l_wb);
  };

  const Vec5 k1 = f(z0);
  const Vec5 z1 = z0 + 0.5 * tau * k1;
  const Vec5 k2 = f(z1);
  const Vec5 z2 = z0 + 0.5 * tau * k2;
  const Vec5 k3 = f(z2);
  const Vec5 z3 = z0 + tau * k3;

  const DynamicsJacobian j1 = jac(z0);
  const DynamicsJacobian j2 = jac(z1);
  const DynamicsJacobian j3 = jac(z2);
  const DynamicsJacobian j4 = jac(z3);

  const Mat55 I = Mat55::Identity();
  const Mat55 dk1 = j1.A;
  const Mat55 dk2 = j2.A * (I + 0.5 * tau * dk1);
  const Mat55 dk3 = j3.A * (I + 0.5 * tau * dk2);
  const Mat55 dk4 = j4.A * (I + tau * dk3);

  const Mat52 dk1u = j1.B;
  const Mat52 dk2u = j2.B + 0.5 * tau * j2.A * dk1u;
  const Mat52 dk3u = j3.B + 0.5 * tau * j3.A * dk2u;
  const Mat52 dk4u = j4.B + tau * j4.A * dk3u;

  DynamicsJacobian out;
  out.A = I + tau / 6.0 * (dk1 + 2.0 * dk2 + 2.0 * dk3 + dk4);
  out.B = tau / 6.0 * (dk1u + 2.0 * dk2u + 2.0 * dk3u + dk4u);
  return out;
}

/// Hessian of w . rk4(z, u) over the stacked variable (z, u), via central
/// differences of the analytic RK4 Jacobian. Accurate to ~1e-8, which is
/// sufficient for Newton-type solvers.
inline Mat77 rk4_weighted_hessian(const VehicleState& z, const ControlInput& u,
                                  double tau, double l_wb, const Vec5& w) {
  const auto grad = [&](const Vec5& zz, const Vec2& uu) {
    const DynamicsJacobian j = rk4_jacobian(VehicleState::from_vector(zz),
                                            ControlInput::from_vector(uu), tau,
                                            l_wb);
    Eigen::Matrix<double, 7, 1> g;
    g.head<5>() = j.A.transpose() * w;
    g.tail<2>() = j.B.transpose() * w;
    return g;
  };
  const double h = 1e-5;
  Mat77 out;
  Vec5 zv = z.to_vector();
  Vec2 uv = u.to_vector();
  for (int p = 0; p < 7; ++p) {
    Vec5 zp = zv, zm = zv;
    Vec2 up = uv, um = uv;
    if (p < 5) {
      zp(p) += h;
      zm(p) -= h;
    } else {
      up(p - 5) += h;
      um(p - 5) -= h;
    }
    out.col(p) = (grad(zp, up) - grad(zm, um)) / (2.0 * h);
  }
  // Symmetrize away the finite-difference noise.
  out = 0.5 * (out + out.transpose()).eval();
  return out;
}

struct ClampFlags {
  bool v = false;
  bool delta = false;
  bool a = false;
  bool omega = false;

  bool any() const { return v || delta || a || omega; }
};

struct ClampResult {
  VehicleState z;
  ControlInput u;
  ClampFlags flags;
};

/// Project state and input components onto their limit intervals.
inline ClampResult clamp_to_limits(const VehicleState& z,
                                   const ControlInput& u,
                                   const Limits& limits) {
  ClampResult r{z, u, {}};
  r.z.v = limits.v.clamp(z.v);
  r.flags.v = r.z.v != z.v;
  r.z.delta_f = limits.delta.clamp(z.delta_f);
  r.flags.delta = r.z.delta_f != z.delta_f;
  r.u.a = limits.a.clamp(u.a);
  r.flags.a = r.u.a != u.a;
  r.u.omega = limits.omega.clamp(u.omega);
  r.flags.omega = r.u.omega != u.omega;
  return r;
}

}  // namespace confres
