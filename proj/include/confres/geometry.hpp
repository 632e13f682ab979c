#pragma once

// 2-D polytopes in halfspace form, the vehicle body polytope, an exact
// polygon-distance oracle, and dual separation certificates for the
// distance-based collision-avoidance reformulation.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "confres/dynamics.hpp"

namespace confres {

class IntersectingSets : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bounded, nonempty intersection of halfspaces {p : normals * p <= offsets}.
/// Normal rows are unit-norm so offsets and margins are in meters.
struct Polytope2D {
  Eigen::Matrix<double, Eigen::Dynamic, 2> normals;
  Eigen::VectorXd offsets;

  int num_halfspaces() const { return static_cast<int>(offsets.size()); }

  bool contains(const Vec2& p, double tol = 1e-9) const {
    return ((normals * p - offsets).array() <= tol).all();
  }

  /// Vertices in counterclockwise order (enumerated from the halfspaces).
  std::vector<Vec2> vertices() const;

  /// Builds a validated polytope; rows are normalized to unit norm.
  static Polytope2D from_halfspaces(
      const Eigen::Matrix<double, Eigen::Dynamic, 2>& a,
      const Eigen::VectorXd& b);

  /// Convex hull of the given points, converted to halfspace form.
  static Polytope2D from_vertices(const std::vector<Vec2>& pts);

  static Polytope2D axis_aligned_box(double xmin, double xmax, double ymin,
                                     double ymax);
};

/// Rigid body dimensions referenced to the rear-axle center.
struct BodySpec {
  double length = 3.9;
  double width = 1.8;
  double wheelbase = 2.5;
  double rear_overhang = 0.7;  // rear-axle center to rear bumper

  void validate() const {
    if (!(length > wheelbase && wheelbase > 0.0))
      throw std::invalid_argument("body: need length > wheelbase > 0");
    if (!(width > 0.0)) throw std::invalid_argument("body: width must be > 0");
    if (rear_overhang < 0.0 || rear_overhang > length - wheelbase)
      throw std::invalid_argument("body: rear_overhang out of range");
  }

  /// Body-frame halfspace normals (unit rows) for the rectangle
  /// x in [-rear_overhang, length - rear_overhang], y in [-width/2, width/2].
  Eigen::Matrix<double, 4, 2> local_normals() const {
    Eigen::Matrix<double, 4, 2> n;
    n << 1, 0, -1, 0, 0, 1, 0, -1;
    return n;
  }
  Eigen::Vector4d local_offsets() const {
    return Eigen::Vector4d(length - rear_overhang, rear_overhang, width / 2.0,
                           width / 2.0);
  }
};

/// Feasibility witness (lambda, mu, s) for the dual separation conditions.
struct DualCertificate {
  Eigen::VectorXd lambda;  // one entry per ego-body halfspace, >= 0
  Eigen::VectorXd mu;      // one entry per other-set halfspace, >= 0
  Vec2 s = Vec2::Zero();   // ||s|| <= 1
};

struct CertificateReport {
  double s_norm = 0.0;
  double margin = 0.0;       // -g'lambda - b'mu
  double ego_residual = 0.0;   // ||G' lambda + s||
  double other_residual = 0.0; // ||A' mu - s||
  bool pass = false;
};

namespace detail {

inline double cross2(const Vec2& a, const Vec2& b) {
  return a.x() * b.y() - a.y() * b.x();
}

/// Closest point on segment [a, b] to p.
inline Vec2 closest_on_segment(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 d = b - a;
  const double len2 = d.squaredNorm();
  if (len2 == 0.0) return a;
  const double t = std::clamp((p - a).dot(d) / len2, 0.0, 1.0);
  return a + t * d;
}

/// Separating-axis intersection test for convex polygons given as halfspaces.
inline bool polytopes_intersect(const Polytope2D& p, const Polytope2D& q,
                                const std::vector<Vec2>& pv,
                                const std::vector<Vec2>& qv) {
  const auto separated_by = [](const Polytope2D& h, const std::vector<Vec2>& v) {
    for (int i = 0; i < h.num_halfspaces(); ++i) {
      double lo = std::numeric_limits<double>::infinity();
      for (const Vec2& x : v) lo = std::min(lo, h.normals.row(i).dot(x));
      if (lo > h.offsets(i)) return true;
    }
    return false;
  };
  return !separated_by(p, qv) && !separated_by(q, pv);
}

}  // namespace detail

inline std::vector<Vec2> Polytope2D::vertices() const {
  const int m = num_halfspaces();
  std::vector<Vec2> pts;
  for (int i = 0; i < m; ++i) {
    for (int j = i + 1; j < m; ++j) {
      Eigen::Matrix2d a;
      a.row(0) = normals.row(i);
      a.row(1) = normals.row(j);
      if (std::abs(a.determinant()) < 1e-12) continue;
      const Vec2 p = a.inverse() * Vec2(offsets(i), offsets(j));
      if (contains(p, 1e-7)) pts.push_back(p);
    }
  }
  if (pts.empty()) return pts;
  // Deduplicate and order counterclockwise around the centroid.
  Vec2 c = Vec2::Zero();
  for (const Vec2& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  std::sort(pts.begin(), pts.end(), [&](const Vec2& a, const Vec2& b) {
    return std::atan2(a.y() - c.y(), a.x() - c.x()) <
           std::atan2(b.y() - c.y(), b.x() - c.x());
  });
  std::vector<Vec2> out;
  for (const Vec2& p : pts) {
    if (out.empty() || (p - out.back()).norm() > 1e-9) out.push_back(p);
  }
  if (out.size() > 1 && (out.front() - out.back()).norm() <= 1e-9)
    out.pop_back();
  return out;
}

inline Polytope2D Polytope2D::from_halfspaces(
    const Eigen::Matrix<double, Eigen::Dynamic, 2>& a,
    const Eigen::VectorXd& b) {
  if (a.rows() != b.size() || a.rows() < 3)
    throw std::invalid_argument("polytope: need >= 3 matching halfspaces");
  Polytope2D p;
  p.normals.resize(a.rows(), 2);
  p.offsets.resize(b.size());
  for (int i = 0; i < a.rows(); ++i) {
    const double n = a.row(i).norm();
    if (n < 1e-12)
      throw std::invalid_argument("polytope: zero normal row");
    p.normals.row(i) = a.row(i) / n;
    p.offsets(i) = b(i) / n;
  }
  // Bounded iff the normals positively span the plane: no angular gap >= pi.
  std::vector<double> ang;
  for (int i = 0; i < p.normals.rows(); ++i)
    ang.push_back(std::atan2(p.normals(i, 1), p.normals(i, 0)));
  std::sort(ang.begin(), ang.end());
  double max_gap = 2.0 * M_PI - (ang.back() - ang.front());
  for (size_t i = 1; i < ang.size(); ++i)
    max_gap = std::max(max_gap, ang[i] - ang[i - 1]);
  if (max_gap >= M_PI - 1e-12)
    throw std::invalid_argument("polytope: unbounded halfspace intersection");
  if (p.vertices().empty())
    throw std::invalid_argument("polytope: empty halfspace intersection");
  return p;
}

inline Polytope2D Polytope2D::from_vertices(const std::vector<Vec2>& pts) {
  if (pts.size() < 3)
    throw std::invalid_argument("polytope: need >= 3 vertices");
  // Monotone-chain convex hull.
  std::vector<Vec2> v = pts;
  std::sort(v.begin(), v.end(), [](const Vec2& a, const Vec2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  std::vector<Vec2> hull(2 * v.size());
  size_t k = 0;
  for (const Vec2& p : v) {
    while (k >= 2 &&
           detail::cross2(hull[k - 1] - hull[k - 2], p - hull[k - 2]) <= 1e-12)
      --k;
    hull[k++] = p;
  }
  const size_t lower = k + 1;
  for (auto it = v.rbegin(); it != v.rend(); ++it) {
    while (k >= lower && detail::cross2(hull[k - 1] - hull[k - 2],
                                        *it - hull[k - 2]) <= 1e-12)
      --k;
    hull[k++] = *it;
  }
  hull.resize(k - 1);
  if (hull.size() < 3)
    throw std::invalid_argument("polytope: degenerate vertex set");
  Eigen::Matrix<double, Eigen::Dynamic, 2> a(hull.size(), 2);
  Eigen::VectorXd b(hull.size());
  for (size_t i = 0; i < hull.size(); ++i) {
    const Vec2 e = hull[(i + 1) % hull.size()] - hull[i];
    const Vec2 n(e.y(), -e.x());  // outward for CCW hull
    a.row(i) = n.transpose();
    b(i) = n.dot(hull[i]);
  }
  return from_halfspaces(a, b);
}

inline Polytope2D Polytope2D::axis_aligned_box(double xmin, double xmax,
                                               double ymin, double ymax) {
  Eigen::Matrix<double, 4, 2> a;
  a << 1, 0, -1, 0, 0, 1, 0, -1;
  Eigen::Vector4d b(xmax, -xmin, ymax, -ymin);
  return from_halfspaces(a, b);
}

/// Body rectangle at pose (x, y, psi): local halfspaces N p_local <= n0 mapped
/// through p = R(psi) p_local + c, giving G = N R', g = n0 + G c.
inline Polytope2D vehicle_polytope(const VehicleState& state,
                                   const BodySpec& body) {
  body.validate();
  const double cp = std::cos(state.psi), sp = std::sin(state.psi);
  Eigen::Matrix2d rot;
  rot << cp, -sp, sp, cp;
  const Eigen::Matrix<double, 4, 2> n = body.local_normals();
  const Eigen::Matrix<double, 4, 2> g_rows = n * rot.transpose();
  const Vec2 c(state.x, state.y);
  Polytope2D p;
  p.normals = g_rows;
  p.offsets = body.local_offsets() + g_rows * c;
  return p;
}

struct ClosestPair {
  Vec2 p = Vec2::Zero();
  Vec2 q = Vec2::Zero();
  double distance = 0.0;
};

/// Exact closest pair between two convex polytopes via vertex/edge
/// enumeration; distance 0 iff the sets intersect. Independent of the NLP
/// machinery so it can serve as its oracle.
inline ClosestPair polytope_closest_pair(const Polytope2D& p,
                                         const Polytope2D& q) {
  const std::vector<Vec2> pv = p.vertices();
  const std::vector<Vec2> qv = q.vertices();
  if (detail::polytopes_intersect(p, q, pv, qv)) return {};
  ClosestPair best;
  best.distance = std::numeric_limits<double>::infinity();
  const auto scan = [&](const std::vector<Vec2>& verts,
                        const std::vector<Vec2>& poly, bool vert_is_p) {
    const size_t n = poly.size();
    for (const Vec2& v : verts) {
      for (size_t i = 0; i < n; ++i) {
        const Vec2 c =
            detail::closest_on_segment(v, poly[i], poly[(i + 1) % n]);
        const double d = (v - c).norm();
        if (d < best.distance) {
          best.distance = d;
          best.p = vert_is_p ? v : c;
          best.q = vert_is_p ? c : v;
        }
      }
    }
  };
  scan(pv, qv, true);
  scan(qv, pv, false);
  return best;
}

/// min ||p - q|| over p in P, q in Q; 0 iff the sets intersect.
inline double polytope_distance(const Polytope2D& p, const Polytope2D& q) {
  return polytope_closest_pair(p, q).distance;
}

/// Translation that moves `p` at least `clearance` away from `q`; zero when
/// already clear. Overlapping sets are resolved along the minimum-overlap
/// separating axis (SAT over both polytopes' face normals).
inline Vec2 separation_push(const Polytope2D& p, const Polytope2D& q,
                            double clearance) {
  const ClosestPair pair = polytope_closest_pair(p, q);
  if (pair.distance >= clearance) return Vec2::Zero();
  if (pair.distance > 0.0)
    return (clearance - pair.distance) * (pair.p - pair.q).normalized();

  const std::vector<Vec2> pv = p.vertices();
  const std::vector<Vec2> qv = q.vertices();
  double best = std::numeric_limits<double>::infinity();
  Vec2 axis = Vec2::UnitX();
  const auto consider = [&](Vec2 n) {
    const double len = n.norm();
    if (len <= 0.0) return;
    n /= len;
    double pmin = std::numeric_limits<double>::infinity(), pmax = -pmin;
    double qmin = pmin, qmax = -pmin;
    for (const Vec2& v : pv) {
      const double t = n.dot(v);
      pmin = std::min(pmin, t);
      pmax = std::max(pmax, t);
    }
    for (const Vec2& v : qv) {
      const double t = n.dot(v);
      qmin = std::min(qmin, t);
      qmax = std::max(qmax, t);
    }
    const double overlap = std::min(pmax, qmax) - std::max(pmin, qmin);
    if (overlap < best) {
      best = overlap;
      // Push p toward the side of q its projection already leans to.
      axis = (pmin + pmax >= qmin + qmax) ? n : Vec2(-n);
    }
  };
  for (int i = 0; i < p.normals.rows(); ++i)
    consider(p.normals.row(i).transpose());
  for (int i = 0; i < q.normals.rows(); ++i)
    consider(q.normals.row(i).transpose());
  return (best + clearance) * axis;
}

/// Evaluates the four dual separation conditions against tolerance `tol`:
/// ||s|| <= 1, -g'lambda - b'mu >= d_min, G'lambda + s = 0, A'mu - s = 0.
inline CertificateReport check_certificate(const Polytope2D& ego,
                                           const Polytope2D& other,
                                           const DualCertificate& cert,
                                           double d_min, double tol) {
  if (cert.lambda.size() != ego.num_halfspaces() ||
      cert.mu.size() != other.num_halfspaces())
    throw std::invalid_argument("certificate dimensions mismatch");
  CertificateReport r;
  r.s_norm = cert.s.norm();
  r.margin = -ego.offsets.dot(cert.lambda) - other.offsets.dot(cert.mu);
  r.ego_residual = (ego.normals.transpose() * cert.lambda + cert.s).norm();
  r.other_residual = (other.normals.transpose() * cert.mu - cert.s).norm();
  const bool nonneg = (cert.lambda.array() >= -tol).all() &&
                      (cert.mu.array() >= -tol).all();
  r.pass = nonneg && r.s_norm <= 1.0 + tol && r.margin >= d_min - tol &&
           r.ego_residual <= tol && r.other_residual <= tol;
  return r;
}

namespace detail {

/// Expresses the unit direction `n` in the cone of the polytope's active
/// normals at vertex/edge point `x`: n = sum_i alpha_i * normals_i, alpha >= 0.
inline Eigen::VectorXd cone_coefficients(const Polytope2D& poly, const Vec2& x,
                                         const Vec2& n) {
  const int m = poly.num_halfspaces();
  std::vector<int> active;
  const Eigen::VectorXd slack = poly.offsets - poly.normals * x;
  for (int i = 0; i < m; ++i)
    if (slack(i) <= 1e-7) active.push_back(i);
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(m);
  // Try single active faces, then pairs.
  for (int i : active) {
    const double a = poly.normals.row(i).dot(n);
    if (a >= -1e-10 && (a * poly.normals.row(i).transpose() - n).norm() < 1e-8) {
      alpha(i) = std::max(a, 0.0);
      return alpha;
    }
  }
  for (size_t ii = 0; ii < active.size(); ++ii) {
    for (size_t jj = ii + 1; jj < active.size(); ++jj) {
      Eigen::Matrix2d a;
      a.col(0) = poly.normals.row(active[ii]).transpose();
      a.col(1) = poly.normals.row(active[jj]).transpose();
      if (std::abs(a.determinant()) < 1e-10) continue;
      const Vec2 ab = a.inverse() * n;
      if (ab(0) >= -1e-10 && ab(1) >= -1e-10) {
        alpha(active[ii]) = std::max(ab(0), 0.0);
        alpha(active[jj]) = std::max(ab(1), 0.0);
        return alpha;
      }
    }
  }
  throw std::runtime_error("separation: direction not in active normal cone");
}

}  // namespace detail

/// Constructs a certificate whose margin equals the true distance, from the
/// closest pair and the active supporting faces at each endpoint.
inline DualCertificate separation_certificate(const Polytope2D& ego,
                                              const Polytope2D& other) {
  const ClosestPair cp = polytope_closest_pair(ego, other);
  if (cp.distance <= 0.0)
    throw IntersectingSets("separation_certificate: sets intersect");
  const Vec2 n = (cp.q - cp.p) / cp.distance;  // unit, ego -> other
  DualCertificate cert;
  cert.lambda = detail::cone_coefficients(ego, cp.p, n);
  cert.mu = detail::cone_coefficients(other, cp.q, -n);
  cert.s = -n;
  return cert;
}

}  // namespace confres
