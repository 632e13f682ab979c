#pragma once

// Reference-trajectory optimal control: orthogonal collocation on finite
// elements with right-Radau nodes, one element per strategy step, exact
// dual-certificate obstacle avoidance at every node, and polynomial sampling
// of the optimized trajectory.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "confres/dynamics.hpp"
#include "confres/geometry.hpp"
#include "confres/nlp.hpp"
#include "confres/ocp_terms.hpp"
#include "confres/strategy.hpp"

namespace confres {

class PlanningFailed : public std::runtime_error {
 public:
  PlanningFailed(const std::string& what, SolveStatus status)
      : std::runtime_error(what + " (solver status " + to_string(status) +
                           ")"),
        status_(status) {}
  SolveStatus status() const { return status_; }

 private:
  SolveStatus status_;
};

namespace detail {

/// Legendre polynomial values P_k(y) on [-1, 1] by the three-term recurrence.
inline double legendre(int k, double y) {
  double pm = 1.0, p = y;
  if (k == 0) return pm;
  for (int i = 1; i < k; ++i) {
    const double pn = ((2 * i + 1) * y * p - i * pm) / (i + 1);
    pm = p;
    p = pn;
  }
  return p;
}

}  // namespace detail

/// Right-Radau collocation nodes on (0, 1]: the roots of
/// P_d(2x - 1) - P_{d-1}(2x - 1), which include x = 1. Located by bisection
/// on sign changes of the defining polynomial.
inline VecX radau_nodes(int degree) {
  if (degree < 1 || degree > 10)
    throw std::invalid_argument("radau_nodes: degree must be in [1, 10]");
  const auto q = [degree](double x) {
    const double y = 2.0 * x - 1.0;
    return detail::legendre(degree, y) - detail::legendre(degree - 1, y);
  };
  VecX nodes(degree);
  int found = 0;
  const int samples = 2000;
  double prev_x = 1e-12, prev_q = q(prev_x);
  for (int i = 1; i <= samples && found < degree - 1; ++i) {
    const double x = static_cast<double>(i) / samples * (1.0 - 1e-9);
    const double qi = q(x);
    if (prev_q == 0.0) {
      nodes(found++) = prev_x;
    } else if (prev_q * qi < 0.0) {
      double lo = prev_x, hi = x;
      for (int it = 0; it < 100; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (q(lo) * q(mid) <= 0.0)
          hi = mid;
        else
          lo = mid;
      }
      nodes(found++) = 0.5 * (lo + hi);
    }
    prev_x = x;
    prev_q = qi;
  }
  if (found != degree - 1)
    throw std::logic_error("radau_nodes: root search failed");
  nodes(degree - 1) = 1.0;
  return nodes;
}

/// Quadrature weights for the Radau nodes via the moment equations
/// sum_j w_j tau_j^k = 1/(k+1), k = 0..d-1.
inline VecX radau_weights(const VecX& nodes) {
  const int d = static_cast<int>(nodes.size());
  Eigen::MatrixXd v(d, d);
  VecX rhs(d);
  for (int k = 0; k < d; ++k) {
    for (int j = 0; j < d; ++j) v(k, j) = std::pow(nodes(j), k);
    rhs(k) = 1.0 / (k + 1);
  }
  return v.fullPivLu().solve(rhs);
}

namespace detail {

inline VecX barycentric_weights(const VecX& pts) {
  const int n = static_cast<int>(pts.size());
  VecX w = VecX::Ones(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (j != i) w(i) /= (pts(i) - pts(j));
  return w;
}

/// Derivative matrix of the Lagrange basis over `pts`: D(i, j) = l_j'(pts_i).
inline Eigen::MatrixXd lagrange_diff_matrix(const VecX& pts) {
  const int n = static_cast<int>(pts.size());
  const VecX w = barycentric_weights(pts);
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      d(i, j) = (w(j) / w(i)) / (pts(i) - pts(j));
      d(i, i) -= d(i, j);
    }
  }
  return d;
}

/// Evaluates the Lagrange interpolant through (pts_i, vals.col(i)) at x.
inline VecX barycentric_eval(const VecX& pts, const Eigen::MatrixXd& vals,
                             const VecX& w, double x) {
  for (int i = 0; i < pts.size(); ++i)
    if (x == pts(i)) return vals.col(i);
  VecX num = VecX::Zero(vals.rows());
  double den = 0.0;
  for (int i = 0; i < pts.size(); ++i) {
    const double c = w(i) / (x - pts(i));
    num += c * vals.col(i);
    den += c;
  }
  return num / den;
}

}  // namespace detail

struct CollocationGrid {
  int num_intervals = 0;  // L, one per strategy step
  double t_s = 3.0;       // interval length in seconds
  int degree = 5;         // d
  VecX nodes;             // d Radau points in (0, 1]

  static CollocationGrid make(int num_intervals, double t_s, int degree = 5) {
    CollocationGrid g{num_intervals, t_s, degree, radau_nodes(degree)};
    g.validate();
    return g;
  }
  void validate() const {
    if (num_intervals < 1 || t_s <= 0.0)
      throw std::invalid_argument("collocation grid: bad dimensions");
    if (degree < 2 || nodes.size() != degree)
      throw std::invalid_argument("collocation grid: need degree >= 2 nodes");
    for (int i = 0; i < degree; ++i)
      if (nodes(i) <= (i ? nodes(i - 1) : 0.0))
        throw std::invalid_argument("collocation grid: nodes not increasing");
    if (nodes(degree - 1) != 1.0)
      throw std::invalid_argument("collocation grid: last node must be 1");
  }
};

/// Integrand coefficients of the running cost
/// c(z, u) = psi_sq * psi^2 + v_omega_sq * (v w)^2 + a_sq * a^2 + constant.
struct StageCostSpec {
  double psi_sq = 1.0;
  double v_omega_sq = 1.0;
  double a_sq = 1.0;
  double constant = 1.0;
};

/// Terminal set: rear-axle position box, heading band, and stationarity
/// (v = 0, delta_f = 0).
struct TargetSet {
  Box2 box;
  double psi = 0.0;
  double psi_tol = 0.02;
};

struct ReferenceOcp {
  NlpProblem problem;
  VecX initial_guess;

  // Layout bookkeeping (5-vector blocks unless noted).
  int num_intervals = 0;
  int degree = 0;
  double t_s = 0.0;
  double terminal_psi = 0.0;  // unwrapped target heading used in bounds

  int boundary_offset(int l) const { return 5 * l; }
  int node_offset(int l, int j) const {  // j in 1..d
    return 5 * (num_intervals + 1) + 5 * (l * degree + j - 1);
  }
  int input_offset(int l, int j) const {
    return 5 * (num_intervals + 1) + 5 * num_intervals * degree +
           2 * (l * degree + j - 1);
  }
  int cert_base() const {
    return 5 * (num_intervals + 1) + 7 * num_intervals * degree;
  }
};

namespace detail {

inline double wrap_to_near(double angle, double anchor) {
  constexpr double two_pi = 2.0 * M_PI;
  double a = angle;
  while (a - anchor > M_PI) a -= two_pi;
  while (a - anchor < -M_PI) a += two_pi;
  return a;
}

inline double cell_heading_angle(const Cell& h) {
  return std::atan2(static_cast<double>(h.row), static_cast<double>(h.col));
}

}  // namespace detail

/// Assembles the reference OCP: collocation dynamics at every node, limits,
/// initial state, terminal set, strategy box memberships at interval
/// boundaries, and certificate-based obstacle margins >= d_min at every node.
/// Objective is the Radau quadrature of the stage cost.
inline ReferenceOcp build_reference_ocp(
    const VehicleState& z0, const TargetSet& target, const Strategy& strategy,
    const std::vector<Polytope2D>& obstacles, const BodySpec& body,
    const Limits& limits, const StageCostSpec& cost,
    const CollocationGrid& grid, double d_min = 0.05) {
  if (strategy.length() != grid.num_intervals)
    throw std::invalid_argument("reference ocp: strategy/grid length mismatch");
  grid.validate();
  body.validate();
  const int big_l = grid.num_intervals;
  const int d = grid.degree;
  const double t_s = grid.t_s;
  const double wb = body.wheelbase;

  ReferenceOcp ocp;
  ocp.num_intervals = big_l;
  ocp.degree = d;
  ocp.t_s = t_s;

  int cert_total = 0;
  for (const auto& o : obstacles) cert_total += ocp::cert_size(o.num_halfspaces());
  const int n_vars = ocp.cert_base() + big_l * d * cert_total;
  NlpBuilder b(n_vars);

  // --- Variable bounds: limits on every state/input block.
  const auto bound_state = [&](int off) {
    b.set_bounds(off + 3, limits.v.lo, limits.v.hi);
    b.set_bounds(off + 4, limits.delta.lo, limits.delta.hi);
  };
  for (int l = 0; l <= big_l; ++l) bound_state(ocp.boundary_offset(l));
  for (int l = 0; l < big_l; ++l)
    for (int j = 1; j <= d; ++j) {
      bound_state(ocp.node_offset(l, j));
      const int iu = ocp.input_offset(l, j);
      b.set_bounds(iu, limits.a.lo, limits.a.hi);
      b.set_bounds(iu + 1, limits.omega.lo, limits.omega.hi);
    }

  // --- Strategy memberships at boundary times T_s*l. The initial equality
  // fixes boundary 0, so its boxes are implied by the precondition.
  for (int l = 1; l < big_l; ++l) {
    const Box2& back = strategy.steps[l].back_box;
    const Box2& front = strategy.steps[l].front_box;
    const int off = ocp.boundary_offset(l);
    b.set_bounds(off, back.xmin, back.xmax);
    b.set_bounds(off + 1, back.ymin, back.ymax);
    ocp::add_front_box_block(b, off, off + 1, off + 2, front.xmin, front.xmax,
                             front.ymin, front.ymax, wb);
  }

  // --- Initial state.
  {
    const Vec5 zv = z0.to_vector();
    std::vector<int> idx;
    for (int k = 0; k < 5; ++k) idx.push_back(ocp.boundary_offset(0) + k);
    b.add_equality(
        idx, 5, [zv](const VecX& v) -> VecX { return v - zv; },
        [](const VecX&) -> Eigen::MatrixXd {
          return Eigen::MatrixXd::Identity(5, 5);
        });
  }

  // --- Collocation dynamics: points {0, tau_1..tau_d} per interval.
  VecX pts(d + 1);
  pts(0) = 0.0;
  pts.tail(d) = grid.nodes;
  const Eigen::MatrixXd diff = detail::lagrange_diff_matrix(pts);
  for (int l = 0; l < big_l; ++l) {
    std::vector<int> states{ocp.boundary_offset(l)};
    for (int j = 1; j <= d; ++j) states.push_back(ocp.node_offset(l, j));
    for (int j = 1; j <= d; ++j)
      ocp::add_collocation_block(b, states, ocp.input_offset(l, j),
                                 diff.row(j).transpose(), j, t_s, wb);
    // Continuity: last node state equals the next boundary state.
    std::vector<int> idx;
    for (int k = 0; k < 5; ++k) idx.push_back(ocp.node_offset(l, d) + k);
    for (int k = 0; k < 5; ++k) idx.push_back(ocp.boundary_offset(l + 1) + k);
    b.add_equality(
        idx, 5,
        [](const VecX& v) -> VecX { return v.head<5>() - v.tail<5>(); },
        [](const VecX&) -> Eigen::MatrixXd {
          Eigen::MatrixXd j(5, 10);
          j << Mat55::Identity(), -Mat55::Identity();
          return j;
        });
  }

  // --- Terminal set on the last boundary state.
  {
    // Heading headed into bounds must live on the branch the trajectory
    // reaches; unwrap the target heading along the strategy headings.
    double psi = z0.psi;
    for (int l = 1; l < big_l; ++l)
      psi = detail::wrap_to_near(
          detail::cell_heading_angle(strategy.steps[l].cells.heading()), psi);
    ocp.terminal_psi = detail::wrap_to_near(target.psi, psi);

    const int off = ocp.boundary_offset(big_l);
    b.set_bounds(off, target.box.xmin, target.box.xmax);
    b.set_bounds(off + 1, target.box.ymin, target.box.ymax);
    b.set_bounds(off + 2, ocp.terminal_psi - target.psi_tol,
                 ocp.terminal_psi + target.psi_tol);
    b.add_equality(
        {off + 3, off + 4}, 2, [](const VecX& v) -> VecX { return v; },
        [](const VecX&) -> Eigen::MatrixXd {
          return Eigen::MatrixXd::Identity(2, 2);
        });
  }

  // --- Obstacle certificates at every collocation node.
  int cert_off = ocp.cert_base();
  for (int l = 0; l < big_l; ++l) {
    for (int j = 1; j <= d; ++j) {
      const int zoff = ocp.node_offset(l, j);
      for (const auto& obs : obstacles) {
        ocp::add_obca_block(b, zoff, zoff + 1, zoff + 2, cert_off, obs, body,
                            d_min);
        cert_off += ocp::cert_size(obs.num_halfspaces());
      }
    }
  }

  // --- Objective: Radau quadrature of the stage cost.
  const VecX w = radau_weights(grid.nodes);
  for (int l = 0; l < big_l; ++l) {
    for (int j = 1; j <= d; ++j) {
      const double scale = t_s * w(j - 1);
      std::vector<int> idx;
      for (int k = 0; k < 5; ++k) idx.push_back(ocp.node_offset(l, j) + k);
      idx.push_back(ocp.input_offset(l, j));
      idx.push_back(ocp.input_offset(l, j) + 1);
      b.add_cost(
          idx,
          [cost, scale](const VecX& v) {
            const double vw = v(3) * v(6);
            return scale * (cost.psi_sq * v(2) * v(2) +
                            cost.v_omega_sq * vw * vw +
                            cost.a_sq * v(5) * v(5) + cost.constant);
          },
          [cost, scale](const VecX& v) -> VecX {
            VecX g = VecX::Zero(7);
            g(2) = scale * 2.0 * cost.psi_sq * v(2);
            g(3) = scale * 2.0 * cost.v_omega_sq * v(3) * v(6) * v(6);
            g(6) = scale * 2.0 * cost.v_omega_sq * v(3) * v(3) * v(6);
            g(5) = scale * 2.0 * cost.a_sq * v(5);
            return g;
          },
          [cost, scale](const VecX& v) -> Eigen::MatrixXd {
            Eigen::MatrixXd h = Eigen::MatrixXd::Zero(7, 7);
            h(2, 2) = 2.0 * cost.psi_sq;
            h(3, 3) = 2.0 * cost.v_omega_sq * v(6) * v(6);
            h(6, 6) = 2.0 * cost.v_omega_sq * v(3) * v(3);
            h(3, 6) = h(6, 3) = 4.0 * cost.v_omega_sq * v(3) * v(6);
            h(5, 5) = 2.0 * cost.a_sq;
            return scale * h;
          });
    }
  }

  ocp.problem = b.build();

  // --- Initial guess: boundary states through back-box centers with cell
  // headings, nodes linearly interpolated, inputs zero, certificates
  // constructed at the guess poses.
  VecX guess = VecX::Zero(n_vars);
  std::vector<Vec5> bnd(big_l + 1);
  bnd[0] = z0.to_vector();
  double psi_prev = z0.psi;
  for (int l = 1; l <= big_l; ++l) {
    Vec2 c;
    double psi_raw;
    if (l < big_l) {
      c = strategy.steps[l].back_box.center();
      psi_raw =
          detail::cell_heading_angle(strategy.steps[l].cells.heading());
    } else {
      c = target.box.center();
      psi_raw = target.psi;
    }
    const double psi = detail::wrap_to_near(psi_raw, psi_prev);
    psi_prev = psi;
    bnd[l] << c.x(), c.y(), psi, 0.0, 0.0;
  }
  // Seed speeds with the average velocity of each segment projected on the
  // segment heading (negative when reversing); interior boundary speeds blend
  // the adjacent segments while the end points stay at rest.
  std::vector<double> seg_v(big_l, 0.0);
  for (int l = 0; l < big_l; ++l) {
    const Vec2 disp = bnd[l + 1].head<2>() - bnd[l].head<2>();
    const double psi_mid = 0.5 * (bnd[l](2) + bnd[l + 1](2));
    seg_v[l] = disp.dot(Vec2(std::cos(psi_mid), std::sin(psi_mid))) / t_s;
  }
  for (int l = 1; l < big_l; ++l) bnd[l](3) = 0.5 * (seg_v[l - 1] + seg_v[l]);
  for (int l = 0; l <= big_l; ++l)
    guess.segment<5>(ocp.boundary_offset(l)) = bnd[l];
  for (int l = 0; l < big_l; ++l)
    for (int j = 1; j <= d; ++j) {
      Vec5 node = bnd[l] + grid.nodes(j - 1) * (bnd[l + 1] - bnd[l]);
      node(3) = seg_v[l];
      guess.segment<5>(ocp.node_offset(l, j)) = node;
    }
  // Interpolated turn poses can cut obstacle corners; a guess that starts in
  // (or touching) an obstacle makes its certificate locally unsatisfiable and
  // wedges the solver. Nudge such poses clear before building the certificate
  // guesses: translate away from nearby obstacles for a few passes, and when
  // opposing pushes wedge the pose (narrow passages), retreat toward an
  // adjacent boundary pose, which sits at collision-free cell centers.
  const double guess_clear = d_min + 0.02;
  const auto min_obstacle_distance = [&](const Vec5& pose) {
    const Polytope2D veh =
        vehicle_polytope(VehicleState::from_vector(pose), body);
    double dist = std::numeric_limits<double>::infinity();
    for (const auto& obs : obstacles)
      dist = std::min(dist, polytope_distance(veh, obs));
    return dist;
  };
  for (int l = 0; l < big_l; ++l)
    for (int j = 1; j <= d; ++j) {
      Vec5 pose = guess.segment<5>(ocp.node_offset(l, j));
      for (int pass = 0; pass < 3; ++pass) {
        Vec2 shift = Vec2::Zero();
        const Polytope2D veh =
            vehicle_polytope(VehicleState::from_vector(pose), body);
        for (const auto& obs : obstacles)
          shift += separation_push(veh, obs, guess_clear);
        if (shift.squaredNorm() == 0.0) break;
        pose.head<2>() += shift;
      }
      if (min_obstacle_distance(pose) < d_min) {
        const Vec5 original = guess.segment<5>(ocp.node_offset(l, j));
        for (const Vec5& anchor : {bnd[l], bnd[l + 1]}) {
          if (min_obstacle_distance(anchor) < guess_clear) continue;
          double lo = 0.0, hi = 1.0;  // blend factor toward the anchor
          for (int it = 0; it < 20; ++it) {
            const double mid = 0.5 * (lo + hi);
            const Vec5 probe = original + mid * (anchor - original);
            (min_obstacle_distance(probe) >= guess_clear ? hi : lo) = mid;
          }
          pose = original + hi * (anchor - original);
          break;
        }
      }
      guess.segment<5>(ocp.node_offset(l, j)) = pose;
    }
  cert_off = ocp.cert_base();
  for (int l = 0; l < big_l; ++l) {
    for (int j = 1; j <= d; ++j) {
      const VehicleState z =
          VehicleState::from_vector(guess.segment<5>(ocp.node_offset(l, j)));
      for (const auto& obs : obstacles) {
        guess.segment(cert_off, ocp::cert_size(obs.num_halfspaces())) =
            ocp::cert_guess(z, obs, body);
        cert_off += ocp::cert_size(obs.num_halfspaces());
      }
    }
  }
  ocp.initial_guess = guess;
  return ocp;
}

/// Piecewise-polynomial trajectory: per interval, states at {0, tau_1..tau_d}
/// (Lagrange nodal coefficients) and inputs at the collocation nodes.
struct ReferenceTrajectory {
  double t_s = 0.0;
  VecX nodes;                             // collocation nodes
  std::vector<Eigen::MatrixXd> states;    // per interval: 5 x (d+1)
  std::vector<Eigen::MatrixXd> inputs;    // per interval: 2 x d
  double objective = 0.0;

  int num_intervals() const { return static_cast<int>(states.size()); }
  double duration() const { return t_s * num_intervals(); }
};

/// Evaluates the interval polynomial containing t; clamps beyond the ends.
inline VehicleState sample_reference(const ReferenceTrajectory& traj,
                                     double t) {
  const int big_l = traj.num_intervals();
  const double tc = std::clamp(t, 0.0, traj.duration());
  int l = std::min(static_cast<int>(std::floor(tc / traj.t_s)), big_l - 1);
  const double tau = tc / traj.t_s - l;
  const int d = static_cast<int>(traj.nodes.size());
  VecX pts(d + 1);
  pts(0) = 0.0;
  pts.tail(d) = traj.nodes;
  const VecX w = detail::barycentric_weights(pts);
  return VehicleState::from_vector(
      detail::barycentric_eval(pts, traj.states[l], w, tau));
}

/// Input interpolation over the d collocation nodes (degree d-1); clamped.
inline ControlInput sample_input(const ReferenceTrajectory& traj, double t) {
  const int big_l = traj.num_intervals();
  const double tc = std::clamp(t, 0.0, traj.duration());
  int l = std::min(static_cast<int>(std::floor(tc / traj.t_s)), big_l - 1);
  const double tau = tc / traj.t_s - l;
  const VecX w = detail::barycentric_weights(traj.nodes);
  return ControlInput::from_vector(
      detail::barycentric_eval(traj.nodes, traj.inputs[l], w, tau));
}

/// Max dynamics residual ||dz/dt - f(z, u)|| over all collocation nodes.
inline double collocation_residual(const ReferenceTrajectory& traj,
                                   double l_wb) {
  const int d = static_cast<int>(traj.nodes.size());
  VecX pts(d + 1);
  pts(0) = 0.0;
  pts.tail(d) = traj.nodes;
  const Eigen::MatrixXd diff = detail::lagrange_diff_matrix(pts);
  double worst = 0.0;
  for (int l = 0; l < traj.num_intervals(); ++l) {
    for (int j = 1; j <= d; ++j) {
      Vec5 dz = Vec5::Zero();
      for (int r = 0; r <= d; ++r)
        dz += diff(j, r) * traj.states[l].col(r);
      dz /= traj.t_s;
      const Vec5 fz = f_continuous(
          VehicleState::from_vector(traj.states[l].col(j)),
          ControlInput::from_vector(traj.inputs[l].col(j - 1)), l_wb);
      worst = std::max(worst, (dz - fz).norm());
    }
  }
  return worst;
}

/// Builds, solves, and packages the reference problem.
inline ReferenceTrajectory plan_reference(
    const VehicleState& z0, const TargetSet& target, const Strategy& strategy,
    const std::vector<Polytope2D>& obstacles, const BodySpec& body,
    const Limits& limits, const StageCostSpec& cost,
    const CollocationGrid& grid, double d_min = 0.05,
    const SolverConfig& config = SolverConfig{},
    NlpSolution* solution_out = nullptr) {
  const ReferenceOcp ocp = build_reference_ocp(
      z0, target, strategy, obstacles, body, limits, cost, grid, d_min);
  const NlpSolution sol =
      solve(ocp.problem, ocp.initial_guess, std::nullopt, config);
  if (solution_out) *solution_out = sol;
  if (sol.status != SolveStatus::Optimal)
    throw PlanningFailed("reference planning failed", sol.status);

  ReferenceTrajectory traj;
  traj.t_s = grid.t_s;
  traj.nodes = grid.nodes;
  traj.objective = sol.objective;
  const int d = grid.degree;
  for (int l = 0; l < grid.num_intervals; ++l) {
    Eigen::MatrixXd s(5, d + 1);
    s.col(0) = sol.x.segment<5>(ocp.boundary_offset(l));
    for (int j = 1; j <= d; ++j)
      s.col(j) = sol.x.segment<5>(ocp.node_offset(l, j));
    Eigen::MatrixXd u(2, d);
    for (int j = 1; j <= d; ++j)
      u.col(j - 1) = sol.x.segment<2>(ocp.input_offset(l, j));
    traj.states.push_back(std::move(s));
    traj.inputs.push_back(std::move(u));
  }
  // Continuity sanity between adjacent intervals.
  for (int l = 0; l + 1 < grid.num_intervals; ++l) {
    if ((traj.states[l].col(d) - traj.states[l + 1].col(0)).norm() > 1e-8)
      throw PlanningFailed("reference trajectory discontinuous",
                           SolveStatus::Diverged);
  }
  return traj;
}

}  // namespace confres
