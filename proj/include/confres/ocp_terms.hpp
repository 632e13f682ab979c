#pragma once

// Reusable constraint/cost blocks for the trajectory NLPs: dual-certificate
// collision avoidance against a fixed polytope, continuous-time collocation
// dynamics rows, and discrete RK4 shooting rows. All blocks carry exact
// first and second derivatives for the interior-point solver.

#include <array>
#include <cmath>
#include <vector>

#include "confres/dynamics.hpp"
#include "confres/geometry.hpp"
#include "confres/nlp.hpp"

namespace confres {
namespace ocp {

inline Eigen::Matrix2d rot(double psi) {
  Eigen::Matrix2d r;
  r << std::cos(psi), -std::sin(psi), std::sin(psi), std::cos(psi);
  return r;
}
inline Eigen::Matrix2d drot(double psi) {
  Eigen::Matrix2d r;
  r << -std::sin(psi), -std::cos(psi), std::cos(psi), -std::sin(psi);
  return r;
}

/// Number of certificate variables against an m-face obstacle:
/// lambda (4 body faces) + mu (m) + s (2).
inline int cert_size(int obstacle_faces) { return 6 + obstacle_faces; }

/// Adds the dual separation conditions between the body rectangle at pose
/// variables (ix, iy, ipsi) and a fixed polytope {p : A p <= b}:
///   -g(z)'lambda - b'mu >= d_min,   G(z)'lambda + s = 0,
///   A'mu - s = 0,                   ||s||^2 <= 1,   lambda, mu >= 0,
/// where G(z) = N R(psi)', g(z) = n0 + G(z) c. Certificate variables live at
/// [cert_offset, cert_offset + cert_size) ordered lambda, mu, s.
inline void add_obca_block(NlpBuilder& b, int ix, int iy, int ipsi,
                           int cert_offset, const Polytope2D& obstacle,
                           const BodySpec& body, double d_min) {
  const int m = obstacle.num_halfspaces();
  const Eigen::Matrix<double, 4, 2> n = body.local_normals();
  const Eigen::Vector4d n0 = body.local_offsets();
  const Eigen::MatrixXd a = obstacle.normals;
  const Eigen::VectorXd bo = obstacle.offsets;

  const int ilam = cert_offset;
  const int imu = cert_offset + 4;
  const int is = cert_offset + 4 + m;
  for (int i = 0; i < 4 + m; ++i)
    b.set_bounds(cert_offset + i, 0.0,
                 std::numeric_limits<double>::infinity());

  // Margin inequality over [x, y, psi, lambda, mu].
  {
    std::vector<int> idx{ix, iy, ipsi};
    for (int i = 0; i < 4; ++i) idx.push_back(ilam + i);
    for (int i = 0; i < m; ++i) idx.push_back(imu + i);
    const int k = 7 + m;
    b.add_inequality(
        idx, 1,
        [n, n0, bo, m, d_min](const VecX& v) -> VecX {
          const Vec2 c(v(0), v(1));
          const Eigen::Matrix<double, 4, 2> g = n * rot(v(2)).transpose();
          const Eigen::Vector4d gval = n0 + g * c;
          return VecX::Constant(
              1, -gval.dot(v.segment<4>(3)) - bo.dot(v.segment(7, m)) -
                     d_min);
        },
        [n, n0, bo, m, k](const VecX& v) -> Eigen::MatrixXd {
          const Vec2 c(v(0), v(1));
          const Eigen::Vector4d lam = v.segment<4>(3);
          const Eigen::Matrix<double, 4, 2> g = n * rot(v(2)).transpose();
          const Eigen::Matrix<double, 4, 2> dg = n * drot(v(2)).transpose();
          Eigen::MatrixXd j(1, k);
          j.block<1, 2>(0, 0) = -(g.transpose() * lam).transpose();
          j(0, 2) = -lam.dot(dg * c);
          j.block(0, 3, 1, 4) = -(n0 + g * c).transpose();
          j.block(0, 7, 1, m) = -bo.transpose();
          return j;
        },
        [n, m, k](const VecX& v, const VecX& y) -> Eigen::MatrixXd {
          const Vec2 c(v(0), v(1));
          const Eigen::Vector4d lam = v.segment<4>(3);
          const Eigen::Matrix<double, 4, 2> g = n * rot(v(2)).transpose();
          const Eigen::Matrix<double, 4, 2> dg = n * drot(v(2)).transpose();
          Eigen::MatrixXd h = Eigen::MatrixXd::Zero(k, k);
          const Vec2 cross = -(dg.transpose() * lam);
          h(0, 2) = h(2, 0) = cross(0);
          h(1, 2) = h(2, 1) = cross(1);
          h(2, 2) = lam.dot(g * c);  // G'' = -G
          for (int i = 0; i < 4; ++i) {
            h(0, 3 + i) = h(3 + i, 0) = -g(i, 0);
            h(1, 3 + i) = h(3 + i, 1) = -g(i, 1);
            h(2, 3 + i) = h(3 + i, 2) = -dg.row(i).dot(c);
          }
          return y(0) * h;
        });
  }

  // G(z)'lambda + s = 0 over [psi, lambda, s].
  {
    std::vector<int> idx{ipsi, ilam, ilam + 1, ilam + 2, ilam + 3, is,
                         is + 1};
    b.add_equality(
        idx, 2,
        [n](const VecX& v) -> VecX {
          return rot(v(0)) * (n.transpose() * v.segment<4>(1)) +
                 v.segment<2>(5);
        },
        [n](const VecX& v) -> Eigen::MatrixXd {
          Eigen::MatrixXd j(2, 7);
          j.col(0) = drot(v(0)) * (n.transpose() * v.segment<4>(1));
          j.block<2, 4>(0, 1) = rot(v(0)) * n.transpose();
          j.block<2, 2>(0, 5) = Eigen::Matrix2d::Identity();
          return j;
        },
        [n](const VecX& v, const VecX& y) -> Eigen::MatrixXd {
          Eigen::MatrixXd h = Eigen::MatrixXd::Zero(7, 7);
          // R'' = -R.
          h(0, 0) = y.dot(-rot(v(0)) * (n.transpose() * v.segment<4>(1)));
          const Eigen::Matrix<double, 2, 4> dgt = drot(v(0)) * n.transpose();
          for (int i = 0; i < 4; ++i) {
            h(0, 1 + i) = y.dot(dgt.col(i));
            h(1 + i, 0) = h(0, 1 + i);
          }
          return h;
        });
  }

  // A'mu - s = 0 over [mu, s] (affine).
  {
    std::vector<int> idx;
    for (int i = 0; i < m; ++i) idx.push_back(imu + i);
    idx.push_back(is);
    idx.push_back(is + 1);
    Eigen::MatrixXd j(2, m + 2);
    j.leftCols(m) = a.transpose();
    j.rightCols(2) = -Eigen::Matrix2d::Identity();
    b.add_equality(
        idx, 2,
        [j](const VecX& v) -> VecX { return j * v; },
        [j](const VecX&) -> Eigen::MatrixXd { return j; });
  }

  // ||s||^2 <= 1.
  b.add_inequality(
      {is, is + 1}, 1,
      [](const VecX& v) -> VecX {
        return VecX::Constant(1, 1.0 - v.squaredNorm());
      },
      [](const VecX& v) -> Eigen::MatrixXd { return -2.0 * v.transpose(); },
      [](const VecX&, const VecX& y) -> Eigen::MatrixXd {
        return -2.0 * y(0) * Eigen::Matrix2d::Identity();
      });
}

/// Warm-start values for one certificate block: the constructive certificate
/// when the pose is separated from the obstacle, else a uniform fallback.
inline VecX cert_guess(const VehicleState& z, const Polytope2D& obstacle,
                       const BodySpec& body) {
  const int m = obstacle.num_halfspaces();
  VecX out = VecX::Zero(cert_size(m));
  try {
    const DualCertificate c =
        separation_certificate(vehicle_polytope(z, body), obstacle);
    out.head<4>() = c.lambda;
    out.segment(4, m) = c.mu;
    out.segment<2>(4 + m) = c.s;
  } catch (const std::runtime_error&) {
    out.head(4 + m).setConstant(0.1);
  }
  return out;
}

/// Certificate size between two moving body rectangles: lambda (4) + mu (4)
/// + s (2).
inline int pair_cert_size() { return 10; }

/// Dual separation conditions between two body rectangles at pose variables
/// (ixa, iya, ipsia) and (ixb, iyb, ipsib):
///   -g(za)'lambda - g(zb)'mu >= d_min,  G(za)'lambda + s = 0,
///   G(zb)'mu - s = 0,  ||s||^2 <= 1,  lambda, mu >= 0.
/// Certificate variables at [cert_offset, cert_offset + 10), ordered
/// lambda, mu, s.
inline void add_pair_obca_block(NlpBuilder& b, int ixa, int iya, int ipsia,
                                int ixb, int iyb, int ipsib, int cert_offset,
                                const BodySpec& body, double d_min) {
  const Eigen::Matrix<double, 4, 2> n = body.local_normals();
  const Eigen::Vector4d n0 = body.local_offsets();
  const int ilam = cert_offset;
  const int imu = cert_offset + 4;
  const int is = cert_offset + 8;
  for (int i = 0; i < 8; ++i)
    b.set_bounds(cert_offset + i, 0.0,
                 std::numeric_limits<double>::infinity());

  // Margin inequality over [xa, ya, psia, xb, yb, psib, lambda, mu]; the two
  // pose blocks enter through the same g(z)'(dual) form, so the derivative
  // pattern of the fixed-obstacle margin applies once per side.
  {
    std::vector<int> idx{ixa, iya, ipsia, ixb, iyb, ipsib};
    for (int i = 0; i < 8; ++i) idx.push_back(ilam + i);
    const auto side = [n, n0](const VecX& v, int pose,
                              const Eigen::Vector4d& w) {
      const Vec2 c(v(pose), v(pose + 1));
      const Eigen::Matrix<double, 4, 2> g = n * rot(v(pose + 2)).transpose();
      return (n0 + g * c).dot(w);
    };
    b.add_inequality(
        idx, 1,
        [d_min, side](const VecX& v) -> VecX {
          return VecX::Constant(1, -side(v, 0, v.segment<4>(6)) -
                                       side(v, 3, v.segment<4>(10)) - d_min);
        },
        [n, n0](const VecX& v) -> Eigen::MatrixXd {
          Eigen::MatrixXd j = Eigen::MatrixXd::Zero(1, 14);
          for (int sidei = 0; sidei < 2; ++sidei) {
            const int p = 3 * sidei, dv = 6 + 4 * sidei;
            const Vec2 c(v(p), v(p + 1));
            const Eigen::Vector4d w = v.segment<4>(dv);
            const Eigen::Matrix<double, 4, 2> g =
                n * rot(v(p + 2)).transpose();
            const Eigen::Matrix<double, 4, 2> dg =
                n * drot(v(p + 2)).transpose();
            j.block<1, 2>(0, p) = -(g.transpose() * w).transpose();
            j(0, p + 2) = -w.dot(dg * c);
            j.block<1, 4>(0, dv) = -(n0 + g * c).transpose();
          }
          return j;
        },
        [n](const VecX& v, const VecX& y) -> Eigen::MatrixXd {
          Eigen::MatrixXd h = Eigen::MatrixXd::Zero(14, 14);
          for (int sidei = 0; sidei < 2; ++sidei) {
            const int p = 3 * sidei, dv = 6 + 4 * sidei;
            const Vec2 c(v(p), v(p + 1));
            const Eigen::Vector4d w = v.segment<4>(dv);
            const Eigen::Matrix<double, 4, 2> g =
                n * rot(v(p + 2)).transpose();
            const Eigen::Matrix<double, 4, 2> dg =
                n * drot(v(p + 2)).transpose();
            const Vec2 cross = -(dg.transpose() * w);
            h(p, p + 2) = h(p + 2, p) = cross(0);
            h(p + 1, p + 2) = h(p + 2, p + 1) = cross(1);
            h(p + 2, p + 2) = w.dot(g * c);  // G'' = -G
            for (int i = 0; i < 4; ++i) {
              h(p, dv + i) = h(dv + i, p) = -g(i, 0);
              h(p + 1, dv + i) = h(dv + i, p + 1) = -g(i, 1);
              h(p + 2, dv + i) = h(dv + i, p + 2) = -dg.row(i).dot(c);
            }
          }
          return y(0) * h;
        });
  }

  // G(za)'lambda + s = 0 and G(zb)'mu - s = 0, each over [psi, dual, s].
  for (int sidei = 0; sidei < 2; ++sidei) {
    const int ipsi = sidei == 0 ? ipsia : ipsib;
    const int dv = sidei == 0 ? ilam : imu;
    const double ssign = sidei == 0 ? 1.0 : -1.0;
    std::vector<int> idx{ipsi, dv, dv + 1, dv + 2, dv + 3, is, is + 1};
    b.add_equality(
        idx, 2,
        [n, ssign](const VecX& v) -> VecX {
          return rot(v(0)) * (n.transpose() * v.segment<4>(1)) +
                 ssign * v.segment<2>(5);
        },
        [n, ssign](const VecX& v) -> Eigen::MatrixXd {
          Eigen::MatrixXd j(2, 7);
          j.col(0) = drot(v(0)) * (n.transpose() * v.segment<4>(1));
          j.block<2, 4>(0, 1) = rot(v(0)) * n.transpose();
          j.block<2, 2>(0, 5) = ssign * Eigen::Matrix2d::Identity();
          return j;
        },
        [n](const VecX& v, const VecX& y) -> Eigen::MatrixXd {
          Eigen::MatrixXd h = Eigen::MatrixXd::Zero(7, 7);
          h(0, 0) = y.dot(-rot(v(0)) * (n.transpose() * v.segment<4>(1)));
          const Eigen::Matrix<double, 2, 4> dgt = drot(v(0)) * n.transpose();
          for (int i = 0; i < 4; ++i) {
            h(0, 1 + i) = y.dot(dgt.col(i));
            h(1 + i, 0) = h(0, 1 + i);
          }
          return h;
        });
  }

  // ||s||^2 <= 1.
  b.add_inequality(
      {is, is + 1}, 1,
      [](const VecX& v) -> VecX {
        return VecX::Constant(1, 1.0 - v.squaredNorm());
      },
      [](const VecX& v) -> Eigen::MatrixXd { return -2.0 * v.transpose(); },
      [](const VecX&, const VecX& y) -> Eigen::MatrixXd {
        return -2.0 * y(0) * Eigen::Matrix2d::Identity();
      });
}

/// Warm-start values for one pair certificate block.
inline VecX pair_cert_guess(const VehicleState& za, const VehicleState& zb,
                            const BodySpec& body) {
  VecX out = VecX::Zero(pair_cert_size());
  try {
    const DualCertificate c = separation_certificate(
        vehicle_polytope(za, body), vehicle_polytope(zb, body));
    out.head<4>() = c.lambda;
    out.segment<4>(4) = c.mu;
    out.tail<2>() = c.s;
  } catch (const std::runtime_error&) {
    out.head<8>().setConstant(0.1);
  }
  return out;
}

/// Collocation dynamics rows for one node j of one interval:
///   sum_r d_row(r) * Z_r - T_s * f(Z_j, U_j) = 0
/// over variables [Z_0 .. Z_d (5 each), U_j (2)]; d_row has d+1 entries and
/// node_j in {1..d} selects which state block enters f.
inline void add_collocation_block(NlpBuilder& b,
                                  const std::vector<int>& state_offsets,
                                  int input_offset, const VecX& d_row,
                                  int node_j, double t_s, double l_wb) {
  const int np = static_cast<int>(state_offsets.size());  // d + 1
  std::vector<int> idx;
  for (int r = 0; r < np; ++r)
    for (int k = 0; k < 5; ++k) idx.push_back(state_offsets[r] + k);
  idx.push_back(input_offset);
  idx.push_back(input_offset + 1);
  const int zj = 5 * node_j;
  const int iu = 5 * np;

  b.add_equality(
      idx, 5,
      [d_row, np, zj, iu, t_s, l_wb](const VecX& v) -> VecX {
        Vec5 acc = Vec5::Zero();
        for (int r = 0; r < np; ++r) acc += d_row(r) * v.segment<5>(5 * r);
        const VehicleState z = VehicleState::from_vector(v.segment<5>(zj));
        const ControlInput u = ControlInput::from_vector(v.segment<2>(iu));
        return acc - t_s * f_continuous(z, u, l_wb);
      },
      [d_row, np, zj, iu, t_s, l_wb](const VecX& v) -> Eigen::MatrixXd {
        Eigen::MatrixXd j = Eigen::MatrixXd::Zero(5, 5 * np + 2);
        for (int r = 0; r < np; ++r)
          j.block<5, 5>(0, 5 * r) = d_row(r) * Mat55::Identity();
        const VehicleState z = VehicleState::from_vector(v.segment<5>(zj));
        const ControlInput u = ControlInput::from_vector(v.segment<2>(iu));
        const DynamicsJacobian dj = f_jacobian(z, u, l_wb);
        j.block<5, 5>(0, zj) -= t_s * dj.A;
        j.block<5, 2>(0, iu) = -t_s * dj.B;
        return j;
      },
      [np, zj, t_s, l_wb](const VecX& v, const VecX& y) -> Eigen::MatrixXd {
        Eigen::MatrixXd h = Eigen::MatrixXd::Zero(5 * np + 2, 5 * np + 2);
        const VehicleState z = VehicleState::from_vector(v.segment<5>(zj));
        const ControlInput u = ControlInput::from_vector(
            v.segment<2>(5 * np));
        h.block<5, 5>(zj, zj) = -t_s * f_weighted_hessian(z, u, l_wb, y);
        return h;
      });
}

/// Discrete shooting row z_next - rk4(z, u, tau) = 0 over
/// [z (5), u (2), z_next (5)].
inline void add_rk4_block(NlpBuilder& b, int iz, int iu, int iz_next,
                          double tau, double l_wb) {
  std::vector<int> idx;
  for (int k = 0; k < 5; ++k) idx.push_back(iz + k);
  idx.push_back(iu);
  idx.push_back(iu + 1);
  for (int k = 0; k < 5; ++k) idx.push_back(iz_next + k);

  b.add_equality(
      idx, 5,
      [tau, l_wb](const VecX& v) -> VecX {
        const VehicleState z = VehicleState::from_vector(v.head<5>());
        const ControlInput u = ControlInput::from_vector(v.segment<2>(5));
        return v.tail<5>() - rk4_step(z, u, tau, l_wb).to_vector();
      },
      [tau, l_wb](const VecX& v) -> Eigen::MatrixXd {
        const VehicleState z = VehicleState::from_vector(v.head<5>());
        const ControlInput u = ControlInput::from_vector(v.segment<2>(5));
        const DynamicsJacobian j = rk4_jacobian(z, u, tau, l_wb);
        Eigen::MatrixXd out(5, 12);
        out.block<5, 5>(0, 0) = -j.A;
        out.block<5, 2>(0, 5) = -j.B;
        out.block<5, 5>(0, 7) = Mat55::Identity();
        return out;
      },
      [tau, l_wb](const VecX& v, const VecX& y) -> Eigen::MatrixXd {
        const VehicleState z = VehicleState::from_vector(v.head<5>());
        const ControlInput u = ControlInput::from_vector(v.segment<2>(5));
        Eigen::MatrixXd h = Eigen::MatrixXd::Zero(12, 12);
        h.block<7, 7>(0, 0) = -rk4_weighted_hessian(z, u, tau, l_wb, y);
        return h;
      });
}

/// Front-axle box membership as four inequalities over [x, y, psi]:
/// (x + l_wb cos psi, y + l_wb sin psi) inside `box`.
inline void add_front_box_block(NlpBuilder& b, int ix, int iy, int ipsi,
                                double xmin, double xmax, double ymin,
                                double ymax, double l_wb) {
  b.add_inequality(
      {ix, iy, ipsi}, 4,
      [=](const VecX& v) -> VecX {
        const double fx = v(0) + l_wb * std::cos(v(2));
        const double fy = v(1) + l_wb * std::sin(v(2));
        VecX g(4);
        g << fx - xmin, xmax - fx, fy - ymin, ymax - fy;
        return g;
      },
      [=](const VecX& v) -> Eigen::MatrixXd {
        const double dxp = -l_wb * std::sin(v(2));
        const double dyp = l_wb * std::cos(v(2));
        Eigen::MatrixXd j(4, 3);
        j << 1, 0, dxp, -1, 0, -dxp, 0, 1, dyp, 0, -1, -dyp;
        return j;
      },
      [=](const VecX& v, const VecX& y) -> Eigen::MatrixXd {
        Eigen::MatrixXd h = Eigen::MatrixXd::Zero(3, 3);
        const double d2x = -l_wb * std::cos(v(2));
        const double d2y = -l_wb * std::sin(v(2));
        h(2, 2) = (y(0) - y(1)) * d2x + (y(2) - y(3)) * d2y;
        return h;
      });
}

}  // namespace ocp
}  // namespace confres
