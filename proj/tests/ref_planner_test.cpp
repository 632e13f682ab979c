#include "confres/ref_planner.hpp"

#include <cmath>
#include <random>

#include "gtest/gtest.h"

namespace confres {
namespace {

constexpr double kPi = 3.14159265358979323846;

TEST(RadauNodes, DegreeOneAndTwo) {
  const VecX n1 = radau_nodes(1);
  ASSERT_EQ(n1.size(), 1);
  EXPECT_DOUBLE_EQ(n1(0), 1.0);
  const VecX n2 = radau_nodes(2);
  ASSERT_EQ(n2.size(), 2);
  EXPECT_NEAR(n2(0), 1.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(n2(1), 1.0);
}

TEST(RadauNodes, RangeChecked) {
  EXPECT_THROW(radau_nodes(0), std::invalid_argument);
  EXPECT_THROW(radau_nodes(11), std::invalid_argument);
}

TEST(RadauNodes, QuadratureExactToTwoDMinusTwo) {
  for (int d = 1; d <= 8; ++d) {
    const VecX nodes = radau_nodes(d);
    const VecX w = radau_weights(nodes);
    for (int k = 0; k <= 2 * d - 2; ++k) {
      double sum = 0.0;
      for (int j = 0; j < d; ++j) sum += w(j) * std::pow(nodes(j), k);
      EXPECT_NEAR(sum, 1.0 / (k + 1), 1e-10) << "d=" << d << " k=" << k;
    }
  }
}

TEST(Collocation, DifferentiationMatrixExactOnPolynomials) {
  const VecX nodes = radau_nodes(5);
  VecX pts(6);
  pts(0) = 0.0;
  pts.tail(5) = nodes;
  const Eigen::MatrixXd diff = detail::lagrange_diff_matrix(pts);
  // p(x) = 2x^4 - x^2 + 3, p'(x) = 8x^3 - 2x.
  VecX vals(6), want(6);
  for (int i = 0; i < 6; ++i) {
    const double x = pts(i);
    vals(i) = 2 * std::pow(x, 4) - x * x + 3;
    want(i) = 8 * std::pow(x, 3) - 2 * x;
  }
  EXPECT_LT((diff * vals - want).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(CollocationGrid, Validation) {
  EXPECT_NO_THROW(CollocationGrid::make(3, 3.0, 5));
  EXPECT_THROW(CollocationGrid::make(0, 3.0, 5), std::invalid_argument);
  CollocationGrid g = CollocationGrid::make(3, 3.0, 5);
  g.nodes(4) = 0.5;  // breaks ordering and the last-node rule
  EXPECT_THROW(g.validate(), std::invalid_argument);
}

// --- Analytic derivative checks of the assembly blocks against FD.

TEST(OcpTerms, ObcaBlockDerivativesMatchFd) {
  const Polytope2D obs = Polytope2D::from_vertices(
      {{8, 1}, {11, 2}, {10, 5}, {7.5, 4}});
  const int m = obs.num_halfspaces();
  BodySpec body;
  NlpBuilder b(3 + ocp::cert_size(m));
  ocp::add_obca_block(b, 0, 1, 2, 3, obs, body, 0.05);
  const NlpProblem p = b.build();
  EXPECT_EQ(p.m_e, 4);
  EXPECT_EQ(p.m_i, 2);

  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u01(0.05, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    VecX x(p.n);
    x << 2.0 + trial, 1.5, 0.3 + 0.4 * trial, u01(rng), u01(rng), u01(rng),
        u01(rng), u01(rng), u01(rng), u01(rng), u01(rng), 0.2, -0.3;
    const Eigen::MatrixXd fd_je = detail::fd_jacobian(p.eq_value, x);
    EXPECT_LT(
        (Eigen::MatrixXd(p.eq_jacobian(x)) - fd_je).cwiseAbs().maxCoeff(),
        1e-6);
    const Eigen::MatrixXd fd_ji = detail::fd_jacobian(p.ineq_value, x);
    EXPECT_LT(
        (Eigen::MatrixXd(p.ineq_jacobian(x)) - fd_ji).cwiseAbs().maxCoeff(),
        1e-6);
    VecX ye(p.m_e), yi(p.m_i);
    for (int i = 0; i < p.m_e; ++i) ye(i) = u01(rng) - 0.5;
    for (int i = 0; i < p.m_i; ++i) yi(i) = u01(rng) - 0.5;
    const auto lag_grad = [&](const VecX& v) -> VecX {
      return p.gradient(v) - p.eq_jacobian(v).transpose() * ye -
             p.ineq_jacobian(v).transpose() * yi;
    };
    const Eigen::MatrixXd fd_h = detail::fd_jacobian(lag_grad, x);
    EXPECT_LT((Eigen::MatrixXd(p.lag_hessian(x, 1.0, ye, yi)) - fd_h)
                  .cwiseAbs()
                  .maxCoeff(),
              1e-5);
  }
}

TEST(OcpTerms, CollocationBlockDerivativesMatchFd) {
  const VecX nodes = radau_nodes(3);
  VecX pts(4);
  pts(0) = 0.0;
  pts.tail(3) = nodes;
  const Eigen::MatrixXd diff = detail::lagrange_diff_matrix(pts);
  NlpBuilder b(4 * 5 + 2);
  ocp::add_collocation_block(b, {0, 5, 10, 15}, 20, diff.row(2).transpose(),
                             2, 3.0, 2.5);
  const NlpProblem p = b.build();

  std::mt19937_64 rng(8);
  std::normal_distribution<double> g(0.0, 0.7);
  VecX x(p.n);
  for (int i = 0; i < p.n; ++i) x(i) = g(rng);
  const Eigen::MatrixXd fd_je = detail::fd_jacobian(p.eq_value, x);
  EXPECT_LT((Eigen::MatrixXd(p.eq_jacobian(x)) - fd_je).cwiseAbs().maxCoeff(),
            1e-6);
  VecX ye(5);
  for (int i = 0; i < 5; ++i) ye(i) = g(rng);
  const auto lag_grad = [&](const VecX& v) -> VecX {
    return p.gradient(v) - p.eq_jacobian(v).transpose() * ye;
  };
  const Eigen::MatrixXd fd_h = detail::fd_jacobian(lag_grad, x);
  EXPECT_LT((Eigen::MatrixXd(p.lag_hessian(x, 1.0, ye, VecX(0))) - fd_h)
                .cwiseAbs()
                .maxCoeff(),
            1e-5);
}

TEST(OcpTerms, Rk4BlockDerivativesMatchFd) {
  NlpBuilder b(12);
  ocp::add_rk4_block(b, 0, 5, 7, 0.1, 2.5);
  const NlpProblem p = b.build();
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g(0.0, 0.5);
  VecX x(12);
  for (int i = 0; i < 12; ++i) x(i) = g(rng);
  const Eigen::MatrixXd fd_je = detail::fd_jacobian(p.eq_value, x);
  EXPECT_LT((Eigen::MatrixXd(p.eq_jacobian(x)) - fd_je).cwiseAbs().maxCoeff(),
            1e-6);
  VecX ye(5);
  for (int i = 0; i < 5; ++i) ye(i) = g(rng);
  const auto lag_grad = [&](const VecX& v) -> VecX {
    return p.gradient(v) - p.eq_jacobian(v).transpose() * ye;
  };
  const Eigen::MatrixXd fd_h = detail::fd_jacobian(lag_grad, x);
  EXPECT_LT((Eigen::MatrixXd(p.lag_hessian(x, 1.0, ye, VecX(0))) - fd_h)
                .cwiseAbs()
                .maxCoeff(),
            1e-4);
}

TEST(OcpTerms, FrontBoxBlockDerivativesMatchFd) {
  NlpBuilder b(3);
  ocp::add_front_box_block(b, 0, 1, 2, 0.0, 2.5, 0.0, 2.5, 2.5);
  const NlpProblem p = b.build();
  VecX x(3);
  x << 1.0, 0.5, 0.7;
  const Eigen::MatrixXd fd_ji = detail::fd_jacobian(p.ineq_value, x);
  EXPECT_LT(
      (Eigen::MatrixXd(p.ineq_jacobian(x)) - fd_ji).cwiseAbs().maxCoeff(),
      1e-6);
  VecX yi(4);
  yi << 0.3, -0.2, 0.8, 0.1;
  const auto lag_grad = [&](const VecX& v) -> VecX {
    return p.gradient(v) - p.ineq_jacobian(v).transpose() * yi;
  };
  const Eigen::MatrixXd fd_h = detail::fd_jacobian(lag_grad, x);
  EXPECT_LT((Eigen::MatrixXd(p.lag_hessian(x, 1.0, VecX(0), yi)) - fd_h)
                .cwiseAbs()
                .maxCoeff(),
            1e-5);
}

// --- Problem assembly and end-to-end planning.

/// East-facing strategy of `steps` forward moves from back cell (1, 1).
Strategy straight_strategy(int steps) {
  Rollout r;
  GridVehicle pose{{2, 1}, {1, 1}};
  r.poses = {{pose}};
  for (int i = 0; i < steps; ++i) {
    pose = apply_action_free(pose, GridAction::F);
    r.poses[0].push_back(pose);
  }
  r.actions = {std::vector<GridAction>(steps, GridAction::F)};
  r.arrival_step = {steps};
  return extract_strategy(r, 0, GridConfig{}, 3.0);
}

VehicleState straight_start() { return {3.75, 3.75, 0.0, 0.0, 0.0}; }

TargetSet straight_target(int steps) {
  TargetSet t;
  const double x0 = 2.5 * (1 + steps);
  t.box = {x0, x0 + 2.5, 2.5, 5.0};
  t.psi = 0.0;
  return t;
}

TEST(BuildReferenceOcp, ClosedFormVariableCount) {
  // L=5, d=5, two 4-face obstacles: 5*(L*d + L + 1) states, 2*L*d inputs,
  // (4 + 4 + 2) certificate entries per node-obstacle pair.
  const Strategy s = straight_strategy(5);
  const std::vector<Polytope2D> obs = {
      Polytope2D::axis_aligned_box(0, 20, 0, 2.5),
      Polytope2D::axis_aligned_box(0, 20, 5, 7.5)};
  const ReferenceOcp ocp = build_reference_ocp(
      straight_start(), straight_target(5), s, obs, BodySpec{},
      Limits::operational(), StageCostSpec{}, CollocationGrid::make(5, 3.0));
  EXPECT_EQ(ocp.problem.n, 5 * (5 * 5 + 5 + 1) + 2 * 25 + 25 * 2 * 10);
  EXPECT_EQ(ocp.problem.n, 705);
}

TEST(BuildReferenceOcp, HoldObjectiveEqualsDurationTimesCost) {
  // Hold strategy heading north: the quadrature of psi0^2 + 1 over the
  // duration is exact for the constant integrand.
  Rollout r;
  r.poses = {{GridVehicle{{1, 2}, {1, 1}}}};
  r.actions = {{}};
  r.arrival_step = {0};
  const Strategy s = extract_strategy(r, 0, GridConfig{}, 3.0);
  const VehicleState z0{3.75, 3.75, kPi / 2, 0.0, 0.0};
  TargetSet target;
  target.box = {2.5, 5.0, 2.5, 5.0};
  target.psi = kPi / 2;
  const ReferenceOcp ocp = build_reference_ocp(
      z0, target, s, {}, BodySpec{}, Limits::operational(), StageCostSpec{},
      CollocationGrid::make(1, 3.0));
  VecX hold = VecX::Zero(ocp.problem.n);
  for (int l = 0; l <= 1; ++l)
    hold.segment<5>(ocp.boundary_offset(l)) = z0.to_vector();
  for (int j = 1; j <= 5; ++j)
    hold.segment<5>(ocp.node_offset(0, j)) = z0.to_vector();
  const double expect = 3.0 * (kPi * kPi / 4 + 1.0);
  EXPECT_NEAR(ocp.problem.objective(hold), expect, 1e-9);
}

TEST(PlanReference, HoldStrategySolvesNearDuration) {
  Rollout r;
  r.poses = {{GridVehicle{{2, 1}, {1, 1}}}};
  r.actions = {{}};
  r.arrival_step = {0};
  const Strategy s = extract_strategy(r, 0, GridConfig{}, 3.0);
  TargetSet target;
  target.box = {2.5, 5.0, 2.5, 5.0};
  target.psi = 0.0;
  const ReferenceTrajectory traj = plan_reference(
      straight_start(), target, s, {}, BodySpec{}, Limits::operational(),
      StageCostSpec{}, CollocationGrid::make(1, 3.0));
  EXPECT_NEAR(traj.objective, 3.0, 1e-2);
  const VehicleState mid = sample_reference(traj, 1.5);
  EXPECT_NEAR(mid.x, 3.75, 0.2);
  EXPECT_NEAR(mid.v, 0.0, 0.1);
}

TEST(PlanReference, StraightRunPropertiesHold) {
  const int steps = 4;
  const Strategy s = straight_strategy(steps);
  const TargetSet target = straight_target(steps);
  const ReferenceTrajectory traj = plan_reference(
      straight_start(), target, s, {}, BodySpec{}, Limits::operational(),
      StageCostSpec{}, CollocationGrid::make(steps, 3.0));

  // Exact initial state; clamped terminal sampling.
  // t = 0 returns the stored initial boundary state, which meets the
  // initial-state equality to solver tolerance.
  const VehicleState at0 = sample_reference(traj, 0.0);
  EXPECT_NEAR(at0.x, 3.75, 1e-6);
  EXPECT_NEAR(at0.y, 3.75, 1e-6);
  const VehicleState end = sample_reference(traj, traj.duration());
  const VehicleState past = sample_reference(traj, traj.duration() + 10.0);
  EXPECT_DOUBLE_EQ(end.x, past.x);
  EXPECT_DOUBLE_EQ(end.v, past.v);

  // Terminal membership and stationarity.
  EXPECT_TRUE(target.box.contains(Vec2(end.x, end.y), 1e-6));
  EXPECT_NEAR(end.psi, 0.0, 0.02 + 1e-9);
  EXPECT_NEAR(end.v, 0.0, 1e-6);
  EXPECT_NEAR(end.delta_f, 0.0, 1e-6);

  // Heading stays near zero on a straight corridor.
  for (double t = 0.0; t <= traj.duration(); t += 0.25)
    EXPECT_NEAR(sample_reference(traj, t).psi, 0.0, 0.05);

  // Collocation residual and boundary memberships.
  EXPECT_LE(collocation_residual(traj, 2.5), 1e-6);
  const auto cons = config_constraints(s, 2.5);
  for (const auto& c : cons) {
    EXPECT_TRUE(satisfies_config(c, sample_reference(traj, c.time), 2.5,
                                 1e-6))
        << "t=" << c.time;
  }

  // Interval-boundary continuity of the sampled polynomial.
  for (int l = 1; l < steps; ++l) {
    const double t = 3.0 * l;
    const VehicleState a = sample_reference(traj, t - 1e-12);
    const VehicleState b = sample_reference(traj, t);
    EXPECT_NEAR(a.x, b.x, 1e-8);
    EXPECT_NEAR(a.psi, b.psi, 1e-8);
  }
}

TEST(PlanReference, ObstacleMarginsCertified) {
  // Straight corridor with walls 2.5 m apart; margins must reach d_min at
  // every node, verified both by certificates and the geometric oracle.
  const int steps = 3;
  const Strategy s = straight_strategy(steps);
  const std::vector<Polytope2D> obs = {
      Polytope2D::axis_aligned_box(0, 20, 0, 2.5),
      Polytope2D::axis_aligned_box(0, 20, 5, 7.5)};
  const BodySpec body;
  const double d_min = 0.05;
  const ReferenceOcp ocp = build_reference_ocp(
      straight_start(), straight_target(steps), s, obs, body,
      Limits::operational(), StageCostSpec{}, CollocationGrid::make(steps, 3.0),
      d_min);
  const NlpSolution sol = solve(ocp.problem, ocp.initial_guess);
  ASSERT_EQ(sol.status, SolveStatus::Optimal);

  int cert_off = ocp.cert_base();
  for (int l = 0; l < steps; ++l) {
    for (int j = 1; j <= 5; ++j) {
      const VehicleState z = VehicleState::from_vector(
          sol.x.segment<5>(ocp.node_offset(l, j)));
      const Polytope2D bodyp = vehicle_polytope(z, body);
      for (const auto& o : obs) {
        const int m = o.num_halfspaces();
        DualCertificate cert;
        cert.lambda = sol.x.segment(cert_off, 4);
        cert.mu = sol.x.segment(cert_off + 4, m);
        cert.s = sol.x.segment<2>(cert_off + 4 + m);
        const CertificateReport rep =
            check_certificate(bodyp, o, cert, d_min, 1e-5);
        EXPECT_TRUE(rep.pass) << "l=" << l << " j=" << j;
        EXPECT_GE(polytope_distance(bodyp, o), d_min - 1e-6);
        cert_off += ocp::cert_size(m);
      }
    }
  }
}

TEST(PlanReference, OverlappingInitialPoseFlagged) {
  const int steps = 2;
  const Strategy s = straight_strategy(steps);
  const std::vector<Polytope2D> obs = {
      Polytope2D::axis_aligned_box(3.0, 5.0, 3.0, 4.5)};  // on the start pose
  SolverConfig cfg;
  cfg.max_iter = 60;
  EXPECT_THROW(plan_reference(straight_start(), straight_target(steps), s,
                              obs, BodySpec{}, Limits::operational(),
                              StageCostSpec{},
                              CollocationGrid::make(steps, 3.0), 0.05, cfg),
               PlanningFailed);
}

TEST(PlanReference, DegreeRefinementChangesObjectiveLittle) {
  const int steps = 3;
  const Strategy s = straight_strategy(steps);
  const ReferenceTrajectory coarse = plan_reference(
      straight_start(), straight_target(steps), s, {}, BodySpec{},
      Limits::operational(), StageCostSpec{}, CollocationGrid::make(steps, 3.0, 3));
  const ReferenceTrajectory fine = plan_reference(
      straight_start(), straight_target(steps), s, {}, BodySpec{},
      Limits::operational(), StageCostSpec{}, CollocationGrid::make(steps, 3.0, 6));
  EXPECT_LT(std::abs(coarse.objective - fine.objective),
            0.01 * std::abs(fine.objective));
}

}  // namespace
}  // namespace confres
