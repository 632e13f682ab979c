#include "confres/dynamics.hpp"

#include <random>

#include "gtest/gtest.h"

namespace confres {
namespace {

TEST(Continuous, StraightMotion) {
  VehicleState z{0, 0, 0, 1, 0};
  const Vec5 dz = f_continuous(z, {0, 0}, 2.5);
  EXPECT_DOUBLE_EQ(dz(0), 1.0);
  EXPECT_DOUBLE_EQ(dz(1), 0.0);
  EXPECT_DOUBLE_EQ(dz(2), 0.0);
  EXPECT_DOUBLE_EQ(dz(3), 0.0);
  EXPECT_DOUBLE_EQ(dz(4), 0.0);
}

TEST(Continuous, HeadingAlignment) {
  VehicleState z{0, 0, M_PI / 2, 2, 0};
  const Vec5 dz = f_continuous(z, {0, 0}, 2.5);
  EXPECT_NEAR(dz(0), 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(dz(1), 2.0);
}

TEST(Continuous, YawRateAtFullSteer) {
  VehicleState z{0, 0, 0, 1, 0.85};
  const Vec5 dz = f_continuous(z, {0, 0}, 2.5);
  EXPECT_NEAR(dz(2), std::tan(0.85) / 2.5, 1e-15);
}

TEST(Rk4, FixedPointAtRest) {
  VehicleState z{1, 2, 0.3, 0, 0.1};
  const VehicleState zn = rk4_step(z, {0, 0}, 0.1, 2.5);
  EXPECT_DOUBLE_EQ(zn.x, z.x);
  EXPECT_DOUBLE_EQ(zn.y, z.y);
  EXPECT_DOUBLE_EQ(zn.psi, z.psi);
}

TEST(Rk4, ConstantVelocityExact) {
  VehicleState z{0, 0, 0, 1, 0};
  const VehicleState zn = rk4_step(z, {0, 0}, 0.1, 2.5);
  EXPECT_NEAR(zn.x, 0.1, 1e-15);
  EXPECT_NEAR(zn.y, 0.0, 1e-15);
}

TEST(Rk4, Reproducible) {
  VehicleState z{0.3, -1.2, 0.8, 1.4, 0.2};
  ControlInput u{0.5, -0.3};
  const VehicleState a = rk4_step(z, u, 0.1, 2.5);
  const VehicleState b = rk4_step(z, u, 0.1, 2.5);
  EXPECT_EQ(a.to_vector(), b.to_vector());
}

// Richardson-style convergence measurement: error vs a tau/100 fine
// integration shrinks ~16x when tau halves; empirical order >= 3.8.
TEST(Rk4, ConvergenceOrder) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u01(-1.0, 1.0);
  double order_sum = 0.0;
  const int trials = 100;
  for (int t = 0; t < trials; ++t) {
    VehicleState z{u01(rng), u01(rng), u01(rng) * M_PI, 2.0 * u01(rng),
                   0.8 * u01(rng)};
    ControlInput u{1.5 * u01(rng), u01(rng)};
    const double tau = 0.4;
    const auto integrate = [&](double step, int n) {
      VehicleState s = z;
      for (int i = 0; i < n; ++i) s = rk4_step(s, u, step, 2.5);
      return s.to_vector();
    };
    const Vec5 truth = integrate(tau / 200.0, 200);
    const double e1 = (integrate(tau, 1) - truth).norm();
    const double e2 = (integrate(tau / 2.0, 2) - truth).norm();
    if (e1 < 1e-14 || e2 < 1e-14) continue;
    order_sum += std::log2(e1 / e2);
  }
  EXPECT_GE(order_sum / trials, 3.8);
}

TEST(Jacobians, MatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u01(-1.0, 1.0);
  for (int t = 0; t < 50; ++t) {
    VehicleState z{u01(rng), u01(rng), u01(rng) * M_PI, 2.0 * u01(rng),
                   0.8 * u01(rng)};
    ControlInput u{u01(rng), u01(rng)};
    const DynamicsJacobian j = f_jacobian(z, u, 2.5);
    const double h = 1e-7;
    for (int p = 0; p < 5; ++p) {
      Vec5 zp = z.to_vector(), zm = z.to_vector();
      zp(p) += h;
      zm(p) -= h;
      const Vec5 fd = (f_continuous(VehicleState::from_vector(zp), u, 2.5) -
                       f_continuous(VehicleState::from_vector(zm), u, 2.5)) /
                      (2 * h);
      EXPECT_LT((fd - j.A.col(p)).norm() / std::max(1.0, fd.norm()), 1e-6);
    }
  }
}

TEST(Jacobians, Rk4MatchesFiniteDifferences) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u01(-1.0, 1.0);
  for (int t = 0; t < 20; ++t) {
    VehicleState z{u01(rng), u01(rng), u01(rng) * M_PI, 2.0 * u01(rng),
                   0.8 * u01(rng)};
    ControlInput u{u01(rng), u01(rng)};
    const double tau = 0.1;
    const DynamicsJacobian j = rk4_jacobian(z, u, tau, 2.5);
    const double h = 1e-6;
    for (int p = 0; p < 7; ++p) {
      Vec5 zp = z.to_vector(), zm = z.to_vector();
      Vec2 up = u.to_vector(), um = u.to_vector();
      if (p < 5) {
        zp(p) += h;
        zm(p) -= h;
      } else {
        up(p - 5) += h;
        um(p - 5) -= h;
      }
      const Vec5 fd = (rk4_step(VehicleState::from_vector(zp),
                                ControlInput::from_vector(up), tau, 2.5)
                           .to_vector() -
                       rk4_step(VehicleState::from_vector(zm),
                                ControlInput::from_vector(um), tau, 2.5)
                           .to_vector()) /
                      (2 * h);
      const Vec5 an = p < 5 ? Vec5(j.A.col(p)) : Vec5(j.B.col(p - 5));
      EXPECT_LT((fd - an).norm(), 1e-7);
    }
  }
}

TEST(Hessians, WeightedHessianMatchesFiniteDifferences) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u01(-1.0, 1.0);
  for (int t = 0; t < 20; ++t) {
    VehicleState z{0, 0, u01(rng) * M_PI, 2.0 * u01(rng), 0.8 * u01(rng)};
    ControlInput u{u01(rng), u01(rng)};
    Vec5 w;
    w << u01(rng), u01(rng), u01(rng), u01(rng), u01(rng);
    const Mat55 hess = f_weighted_hessian(z, u, 2.5, w);
    const double h = 1e-6;
    for (int p = 0; p < 5; ++p) {
      Vec5 zp = z.to_vector(), zm = z.to_vector();
      zp(p) += h;
      zm(p) -= h;
      const auto grad = [&](const Vec5& zz) -> Vec5 {
        return f_jacobian(VehicleState::from_vector(zz), u, 2.5)
                   .A.transpose() *
               w;
      };
      const Vec5 fd = (grad(zp) - grad(zm)) / (2 * h);
      EXPECT_LT((fd - hess.col(p)).norm(), 1e-6);
    }
  }
}

TEST(Clamp, InLimitsUnchanged) {
  const auto r = clamp_to_limits({0, 0, 0, 1.0, 0.2}, {0.5, -0.5},
                                 Limits::operational());
  EXPECT_FALSE(r.flags.any());
  EXPECT_DOUBLE_EQ(r.z.v, 1.0);
}

TEST(Clamp, AccelerationSaturates) {
  const auto r =
      clamp_to_limits({0, 0, 0, 0, 0}, {2.0, 0}, Limits::operational());
  EXPECT_DOUBLE_EQ(r.u.a, 1.5);
  EXPECT_TRUE(r.flags.a);
}

TEST(Clamp, SpeedSaturates) {
  const auto r =
      clamp_to_limits({0, 0, 0, -3.0, 0}, {0, 0}, Limits::operational());
  EXPECT_DOUBLE_EQ(r.z.v, -2.5);
  EXPECT_TRUE(r.flags.v);
}

}  // namespace
}  // namespace confres
