#include "confres/geometry.hpp"

#include <random>

#include "gtest/gtest.h"

namespace confres {
namespace {

Polytope2D unit_square_at(double cx, double cy, double half = 0.5) {
  return Polytope2D::axis_aligned_box(cx - half, cx + half, cy - half,
                                      cy + half);
}

// Random convex polygon with 4-8 faces around a given center.
Polytope2D random_polygon(std::mt19937_64& rng, double cx, double cy) {
  std::uniform_int_distribution<int> nfaces(4, 8);
  std::uniform_real_distribution<double> rad(0.3, 1.2);
  std::uniform_real_distribution<double> jitter(0.0, 0.4);
  const int n = nfaces(rng);
  std::vector<Vec2> pts;
  for (int i = 0; i < n; ++i) {
    const double ang = 2.0 * M_PI * (i + jitter(rng)) / n;
    const double r = rad(rng);
    pts.emplace_back(cx + r * std::cos(ang), cy + r * std::sin(ang));
  }
  return Polytope2D::from_vertices(pts);
}

TEST(Polytope, VehicleBodyAxisAligned) {
  BodySpec body;  // 3.9 x 1.8, overhang 0.7
  const Polytope2D p = vehicle_polytope({0, 0, 0, 0, 0}, body);
  // Expect box x in [-0.7, 3.2], y in [-0.9, 0.9].
  const Polytope2D expect = Polytope2D::axis_aligned_box(-0.7, 3.2, -0.9, 0.9);
  auto pv = p.vertices();
  auto ev = expect.vertices();
  ASSERT_EQ(pv.size(), 4u);
  for (const Vec2& v : ev) {
    double best = 1e9;
    for (const Vec2& w : pv) best = std::min(best, (v - w).norm());
    EXPECT_LT(best, 1e-12);
  }
  for (int i = 0; i < p.num_halfspaces(); ++i)
    EXPECT_NEAR(p.normals.row(i).norm(), 1.0, 1e-14);
}

TEST(Polytope, VehicleBodyRotated90) {
  BodySpec body;
  const Polytope2D p = vehicle_polytope({0, 0, M_PI / 2, 0, 0}, body);
  for (const Vec2& v : p.vertices()) {
    EXPECT_GE(v.x(), -0.9 - 1e-12);
    EXPECT_LE(v.x(), 0.9 + 1e-12);
    EXPECT_GE(v.y(), -0.7 - 1e-12);
    EXPECT_LE(v.y(), 3.2 + 1e-12);
  }
}

TEST(Polytope, TranslationEquivariance) {
  BodySpec body;
  const Polytope2D p0 = vehicle_polytope({0, 0, 0.37, 0, 0}, body);
  const Polytope2D p1 = vehicle_polytope({1.5, -2.25, 0.37, 0, 0}, body);
  const Vec2 t(1.5, -2.25);
  for (int i = 0; i < 4; ++i)
    EXPECT_NEAR(p1.offsets(i), p0.offsets(i) + p0.normals.row(i).dot(t), 1e-12);
}

TEST(Polytope, UnboundedRejected) {
  Eigen::Matrix<double, 3, 2> a;
  a << 1, 0, 0, 1, 1, 1;  // all normals in one halfplane -> unbounded
  EXPECT_THROW(Polytope2D::from_halfspaces(a, Eigen::Vector3d(1, 1, 1)),
               std::invalid_argument);
}

TEST(Distance, SeparatedSquares) {
  EXPECT_NEAR(polytope_distance(unit_square_at(0, 0), unit_square_at(3, 0)),
              2.0, 1e-12);
}

TEST(Distance, OverlappingSquares) {
  EXPECT_DOUBLE_EQ(
      polytope_distance(unit_square_at(0, 0), unit_square_at(0.5, 0.2)), 0.0);
}

TEST(Distance, TouchingSquares) {
  EXPECT_DOUBLE_EQ(
      polytope_distance(unit_square_at(0, 0), unit_square_at(1.0, 0)), 0.0);
}

TEST(Distance, RigidMotionInvariance) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 200; ++t) {
    const Polytope2D p = random_polygon(rng, 0, 0);
    const Polytope2D q = random_polygon(rng, 4, 1);
    const double d0 = polytope_distance(p, q);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    const double ang = u(rng);
    Eigen::Matrix2d rot;
    rot << std::cos(ang), -std::sin(ang), std::sin(ang), std::cos(ang);
    const Vec2 tr(u(rng), u(rng));
    const auto move = [&](const Polytope2D& s) {
      Polytope2D out = s;
      out.normals = s.normals * rot.transpose();
      out.offsets = s.offsets + out.normals * tr;
      return out;
    };
    EXPECT_NEAR(polytope_distance(move(p), move(q)), d0, 1e-9);
  }
}

TEST(Certificate, FromSeparationMatchesDistance) {
  const Polytope2D p = unit_square_at(0, 0);
  const Polytope2D q = unit_square_at(3, 0);
  const DualCertificate cert = separation_certificate(p, q);
  const CertificateReport rep = check_certificate(p, q, cert, 0.0, 1e-6);
  EXPECT_TRUE(rep.pass);
  EXPECT_NEAR(rep.margin, 2.0, 1e-6);
}

TEST(Certificate, AllZeroFailsMargin) {
  const Polytope2D p = unit_square_at(0, 0);
  const Polytope2D q = unit_square_at(3, 0);
  DualCertificate cert;
  cert.lambda = Eigen::VectorXd::Zero(4);
  cert.mu = Eigen::VectorXd::Zero(4);
  const CertificateReport rep = check_certificate(p, q, cert, 0.1, 1e-9);
  EXPECT_FALSE(rep.pass);
  EXPECT_LT(rep.margin, 0.1);
}

TEST(Certificate, ScalingLinearity) {
  const Polytope2D p = unit_square_at(0, 0);
  const Polytope2D q = unit_square_at(3, 1);
  DualCertificate cert = separation_certificate(p, q);
  const CertificateReport r1 = check_certificate(p, q, cert, 0.0, 1e30);
  DualCertificate scaled = cert;
  const double c = 2.5;
  scaled.lambda *= c;
  scaled.mu *= c;
  const CertificateReport r2 = check_certificate(p, q, scaled, 0.0, 1e30);
  EXPECT_NEAR(r2.margin, c * r1.margin, 1e-10);
  // Equality residuals scale by c once the s-cancellation is accounted for:
  // G'(c lambda) + s = c (G'lambda + s) + (1-c) s.
  EXPECT_NEAR(
      (p.normals.transpose() * scaled.lambda + c * cert.s).norm(),
      c * (p.normals.transpose() * cert.lambda + cert.s).norm(), 1e-10);
}

TEST(Certificate, IntersectingPairRejected) {
  EXPECT_THROW(
      separation_certificate(unit_square_at(0, 0), unit_square_at(0.3, 0)),
      IntersectingSets);
}

TEST(Certificate, RandomizedEquivalence) {
  std::mt19937_64 rng(42);
  int done = 0;
  while (done < 1000) {
    std::uniform_real_distribution<double> off(2.5, 6.0);
    std::uniform_real_distribution<double> ang(0.0, 2.0 * M_PI);
    const double a = ang(rng), r = off(rng);
    const Polytope2D p = random_polygon(rng, 0, 0);
    const Polytope2D q = random_polygon(rng, r * std::cos(a), r * std::sin(a));
    const double d = polytope_distance(p, q);
    if (d <= 1e-6) continue;
    const DualCertificate cert = separation_certificate(p, q);
    const CertificateReport rep = check_certificate(p, q, cert, d - 1e-6, 1e-6);
    EXPECT_TRUE(rep.pass) << "pair " << done << " distance " << d;
    EXPECT_NEAR(rep.margin, d, 1e-6);
    ++done;
  }
}

}  // namespace
}  // namespace confres
