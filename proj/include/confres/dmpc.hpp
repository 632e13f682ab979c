#pragma once

// Per-vehicle receding-horizon controllers coupled through a round-synchronous
// prediction exchange: every round each agent receives its peers' previous
// plans, shifts them one step, solves its own tracking problem with dual
// collision-avoidance certificates against obstacles and peer predictions,
// broadcasts the new plan, and applies the first input. A centralized joint
// problem over all vehicles is provided as a baseline.

#include <chrono>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <thread>
#include <tuple>
#include <vector>

#include "confres/ocp_terms.hpp"
#include "confres/ref_planner.hpp"

namespace confres {

/// One vehicle's broadcast plan: predicted states z_{0..N} as of round t.
struct PredictionMessage {
  int vehicle = 0;
  int round = 0;
  std::vector<VehicleState> states;  // N + 1 entries

  void validate(int horizon) const {
    if (static_cast<int>(states.size()) != horizon + 1)
      throw std::invalid_argument("prediction message: wrong state count");
    for (const VehicleState& z : states)
      if (!z.to_vector().allFinite())
        throw std::invalid_argument("prediction message: non-finite state");
  }
};

/// Drops the first state and duplicates the last, so slot k of the result
/// predicts the sender's pose at slot k of the *next* round.
inline std::vector<VehicleState> shift_prediction(
    const PredictionMessage& msg) {
  if (msg.states.empty())
    throw std::invalid_argument("prediction message: empty");
  std::vector<VehicleState> out(msg.states.begin() + 1, msg.states.end());
  out.push_back(msg.states.back());
  return out;
}

struct MpcConfig {
  int horizon = 30;
  double tau = 0.1;
  Vec5 q = (Vec5() << 100.0, 100.0, 100.0, 0.0, 0.0).finished();
  double d_min = 0.05;
  int max_rounds = 600;
  double arrival_psi_tol = 0.05;
  double arrival_v_tol = 0.05;
  SolverConfig solver;
  bool parallel = false;  // solve agents on worker threads within a round

  void validate() const {
    if (horizon < 1) throw std::invalid_argument("mpc: horizon must be >= 1");
    if (!(tau > 0.0)) throw std::invalid_argument("mpc: tau must be > 0");
    if ((q.array() < 0.0).any())
      throw std::invalid_argument("mpc: Q entries must be >= 0");
    if (!(d_min >= 0.0)) throw std::invalid_argument("mpc: d_min must be >= 0");
  }
};

struct SolveRecord {
  SolveStatus status = SolveStatus::Optimal;
  int iterations = 0;
  bool fallback = false;
  double solve_ms = 0.0;
};

namespace detail {

/// (horizon slot, kind, index) with kind 0 = static obstacle, 1 = peer.
using CertKey = std::tuple<int, int, int>;

inline double point_polytope_distance(const Vec2& p, const Polytope2D& poly) {
  if (((poly.normals * p - poly.offsets).array() <= 1e-12).all()) return 0.0;
  const std::vector<Vec2> verts = poly.vertices();
  const size_t n = verts.size();
  double best = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < n; ++i)
    best = std::min(
        best,
        (p - closest_on_segment(p, verts[i], verts[(i + 1) % n])).norm());
  return best;
}

/// Radius of the ball around the rear-axle point containing the body.
inline double body_radius(const BodySpec& body) {
  const double fore = body.length - body.rear_overhang;
  const double aft = body.rear_overhang;
  return std::hypot(std::max(fore, aft), body.width / 2.0);
}

/// Upper bound on rear-axle travel over k steps given the operating limits;
/// the small additive slack covers intra-step RK4 stage overshoot.
inline double reach_radius(int k, double tau, const Limits& limits) {
  const double vmax = std::max(std::abs(limits.v.lo), std::abs(limits.v.hi)) +
                      std::max(std::abs(limits.a.lo), std::abs(limits.a.hi)) *
                          tau;
  return vmax * tau * k + 0.2;
}

/// Variable layout of one vehicle's horizon block inside an NLP: boundary
/// states z_0..z_N, inputs u_0..u_{N-1}, then one certificate block per key.
/// Keys are pre-screened: a (slot, polytope) pair whose constraint provably
/// cannot activate within the reachable ball is dropped, which leaves the
/// feasible set unchanged.
struct VehicleLayout {
  int base = 0;
  int horizon = 0;
  std::vector<CertKey> keys;
  std::vector<int> cert_offsets;
  std::vector<int> cert_sizes;

  int state_offset(int k) const { return base + 5 * k; }
  int input_offset(int k) const { return base + 5 * (horizon + 1) + 2 * k; }
  int cert_base() const { return base + 5 * (horizon + 1) + 2 * horizon; }
  int size() const {
    int s = 5 * (horizon + 1) + 2 * horizon;
    for (int cs : cert_sizes) s += cs;
    return s;
  }
};

inline VehicleLayout make_vehicle_layout(
    int base, const VehicleState& plant,
    const std::vector<Polytope2D>& obstacles,
    const std::map<int, std::vector<VehicleState>>& peer_predictions,
    const BodySpec& body, const Limits& limits, const MpcConfig& cfg) {
  VehicleLayout layout;
  layout.base = base;
  layout.horizon = cfg.horizon;
  const Vec2 p0(plant.x, plant.y);
  const double rb = body_radius(body);
  int off = layout.cert_base();
  const auto push = [&](const CertKey& key, int size) {
    layout.keys.push_back(key);
    layout.cert_offsets.push_back(off);
    layout.cert_sizes.push_back(size);
    off += size;
  };
  for (int k = 1; k <= cfg.horizon; ++k) {
    const double reach = rb + reach_radius(k, cfg.tau, limits) + cfg.d_min;
    for (int i = 0; i < static_cast<int>(obstacles.size()); ++i)
      if (point_polytope_distance(p0, obstacles[i]) <= reach)
        push({k, 0, i}, ocp::cert_size(obstacles[i].num_halfspaces()));
    for (const auto& [peer, states] : peer_predictions)
      if (point_polytope_distance(
              p0, vehicle_polytope(states[k], body)) <= reach)
        push({k, 1, peer}, ocp::cert_size(4));
  }
  return layout;
}

/// Adds one vehicle's tracking objective, dynamics, bounds, and certificate
/// constraints to `b`. `ref` holds the N+1 reference samples for this round.
inline void append_vehicle_block(
    NlpBuilder& b, const VehicleLayout& layout, const VehicleState& plant,
    const std::vector<VehicleState>& ref,
    const std::vector<Polytope2D>& obstacles,
    const std::map<int, std::vector<VehicleState>>& peer_predictions,
    const BodySpec& body, const Limits& limits, const MpcConfig& cfg) {
  const int n_h = cfg.horizon;
  const double tau = cfg.tau;

  // Initial state pinned to the measurement (no box bounds on z_0, so the
  // equality never fights the barrier).
  {
    const int off = layout.state_offset(0);
    const Vec5 z0 = plant.to_vector();
    b.add_equality(
        {off, off + 1, off + 2, off + 3, off + 4}, 5,
        [z0](const VecX& v) -> VecX { return v - z0; },
        [](const VecX&) -> Eigen::MatrixXd {
          return Eigen::MatrixXd::Identity(5, 5);
        });
  }

  for (int k = 0; k < n_h; ++k) {
    ocp::add_rk4_block(b, layout.state_offset(k), layout.input_offset(k),
                       layout.state_offset(k + 1), tau, body.wheelbase);
    b.set_bounds(layout.input_offset(k), limits.a.lo, limits.a.hi);
    b.set_bounds(layout.input_offset(k) + 1, limits.omega.lo, limits.omega.hi);
    b.set_bounds(layout.state_offset(k + 1) + 3, limits.v.lo, limits.v.hi);
    b.set_bounds(layout.state_offset(k + 1) + 4, limits.delta.lo,
                 limits.delta.hi);
  }

  // Tracking + absolute-heading cost per future slot.
  const Vec5 qv = cfg.q;
  for (int k = 1; k <= n_h; ++k) {
    const int off = layout.state_offset(k);
    const Vec5 r = ref[k].to_vector();
    b.add_cost(
        {off, off + 1, off + 2, off + 3, off + 4},
        [qv, r](const VecX& v) -> double {
          const Vec5 e = v - r;
          return e.dot(qv.asDiagonal() * e) + v(2) * v(2);
        },
        [qv, r](const VecX& v) -> VecX {
          VecX g = 2.0 * (qv.asDiagonal() * (v - r));
          g(2) += 2.0 * v(2);
          return g;
        },
        [qv](const VecX&) -> Eigen::MatrixXd {
          Eigen::MatrixXd h = 2.0 * Eigen::MatrixXd(qv.asDiagonal());
          h(2, 2) += 2.0;
          return h;
        });
  }

  // Comfort cost (v_k omega_k)^2 + a_k^2 per input slot.
  for (int k = 0; k < n_h; ++k) {
    const int iv = layout.state_offset(k) + 3;
    const int iu = layout.input_offset(k);
    b.add_cost(
        {iv, iu + 1, iu},
        [](const VecX& v) -> double {
          const double vw = v(0) * v(1);
          return vw * vw + v(2) * v(2);
        },
        [](const VecX& v) -> VecX {
          VecX g(3);
          g << 2.0 * v(0) * v(1) * v(1), 2.0 * v(0) * v(0) * v(1),
              2.0 * v(2);
          return g;
        },
        [](const VecX& v) -> Eigen::MatrixXd {
          Eigen::MatrixXd h(3, 3);
          h << 2.0 * v(1) * v(1), 4.0 * v(0) * v(1), 0.0, 4.0 * v(0) * v(1),
              2.0 * v(0) * v(0), 0.0, 0.0, 0.0, 2.0;
          return h;
        });
  }

  for (size_t c = 0; c < layout.keys.size(); ++c) {
    const auto [k, kind, idx] = layout.keys[c];
    const int off = layout.state_offset(k);
    const Polytope2D poly =
        kind == 0 ? obstacles[idx]
                  : vehicle_polytope(peer_predictions.at(idx)[k], body);
    ocp::add_obca_block(b, off, off + 1, off + 2, layout.cert_offsets[c],
                        poly, body, cfg.d_min);
  }
}

/// Writes one vehicle's horizon guess into x. Certificates come from the
/// (already shifted) map where available, else from the constructive guess at
/// the guessed pose.
inline void fill_vehicle_guess(
    VecX& x, const VehicleLayout& layout, const VehicleState& plant,
    const std::vector<VehicleState>& states,
    const std::vector<ControlInput>& inputs,
    const std::map<CertKey, VecX>& certs,
    const std::vector<Polytope2D>& obstacles,
    const std::map<int, std::vector<VehicleState>>& peer_predictions,
    const BodySpec& body) {
  x.segment<5>(layout.state_offset(0)) = plant.to_vector();
  for (int k = 1; k <= layout.horizon; ++k)
    x.segment<5>(layout.state_offset(k)) = states[k].to_vector();
  for (int k = 0; k < layout.horizon; ++k)
    x.segment<2>(layout.input_offset(k)) = inputs[k].to_vector();
  for (size_t c = 0; c < layout.keys.size(); ++c) {
    const auto it = certs.find(layout.keys[c]);
    if (it != certs.end() &&
        static_cast<int>(it->second.size()) == layout.cert_sizes[c]) {
      x.segment(layout.cert_offsets[c], layout.cert_sizes[c]) = it->second;
      continue;
    }
    const auto [k, kind, idx] = layout.keys[c];
    const Polytope2D poly =
        kind == 0 ? obstacles[idx]
                  : vehicle_polytope(peer_predictions.at(idx)[k], body);
    x.segment(layout.cert_offsets[c], layout.cert_sizes[c]) =
        ocp::cert_guess(states[k], poly, body);
  }
}

inline std::map<CertKey, VecX> extract_certs(const VecX& x,
                                             const VehicleLayout& layout) {
  std::map<CertKey, VecX> out;
  for (size_t c = 0; c < layout.keys.size(); ++c)
    out[layout.keys[c]] =
        x.segment(layout.cert_offsets[c], layout.cert_sizes[c]);
  return out;
}

/// Shifts a stored plan one step: slot k takes the old slot k+1, the last
/// slot is duplicated, and certificate keys move down with their slot.
struct ShiftedPlan {
  std::vector<VehicleState> states;
  std::vector<ControlInput> inputs;
  std::map<CertKey, VecX> certs;
};

inline ShiftedPlan shift_plan(const std::vector<VehicleState>& states,
                              const std::vector<ControlInput>& inputs,
                              const std::map<CertKey, VecX>& certs, double tau,
                              const Limits& limits) {
  ShiftedPlan out;
  const int n_h = static_cast<int>(inputs.size());
  out.states.reserve(states.size());
  for (int k = 0; k <= n_h; ++k) out.states.push_back(states[std::min(k + 1, n_h)]);
  // Pad the tail with an input that brakes the final state to rest. Replaying
  // the last input would keep a plan exhausted by repeated shifts moving
  // blindly while the solver recovers.
  const VehicleState& tail = states[n_h];
  ControlInput brake;
  brake.a = limits.a.clamp(-tail.v / tau);
  brake.omega = limits.omega.clamp(-tail.delta_f / tau);
  out.inputs.reserve(inputs.size());
  for (int k = 0; k < n_h; ++k)
    out.inputs.push_back(k + 1 < n_h ? inputs[k + 1] : brake);
  for (const auto& [key, value] : certs) {
    const auto [k, kind, idx] = key;
    if (k >= 2) out.certs[{k - 1, kind, idx}] = value;
    if (k == n_h) out.certs[key] = value;
  }
  return out;
}

// Conflict-aware guess repair: when the shifted previous plan would run the
// body within d_min of an obstacle or a peer's predicted body, hold the last
// safe pose (v = 0, zero inputs) for the rest of the horizon. Starting from
// separated poses keeps the certificate guesses constructive and avoids the
// deep-overlap basin where the duals wedge against the barrier.
inline void truncate_unsafe_guess(
    ShiftedPlan& shifted,
    const std::map<int, std::vector<VehicleState>>& peer_predictions,
    const std::vector<Polytope2D>& obstacles, const BodySpec& body,
    const MpcConfig& cfg) {
  const int n_h = static_cast<int>(shifted.inputs.size());
  int safe = n_h;
  for (int k = 1; k <= n_h && safe == n_h; ++k) {
    const Polytope2D veh = vehicle_polytope(shifted.states[k], body);
    for (const auto& obs : obstacles)
      if (polytope_distance(veh, obs) <= cfg.d_min) {
        safe = k - 1;
        break;
      }
    for (const auto& [peer, states] : peer_predictions) {
      if (safe < n_h) break;
      if (polytope_distance(veh, vehicle_polytope(states[k], body)) <=
          cfg.d_min)
        safe = k - 1;
    }
  }
  if (safe < n_h) {
    VehicleState hold = shifted.states[safe];
    hold.v = 0.0;
    for (int k = safe + 1; k <= n_h; ++k) shifted.states[k] = hold;
    for (int k = std::max(safe - 1, 0); k < n_h; ++k)
      shifted.inputs[k] = ControlInput{};
  }
}

}  // namespace detail

/// One agent's persistent controller state across rounds.
struct AgentState {
  int id = 0;
  ReferenceTrajectory reference;
  TargetSet target;
  VehicleState plant;
  std::vector<VehicleState> plan_states;  // N+1, the latest broadcast plan
  std::vector<ControlInput> plan_inputs;  // N
  std::map<detail::CertKey, VecX> certs;
  std::optional<NlpSolution> last_solution;
  std::vector<detail::CertKey> last_keys;
  std::map<int, PredictionMessage> inbox;  // peer id -> round t-1 message
};

/// Initializes the round "-1" plan from the reference so the first shifted
/// warm start and broadcast line up with round-0 sample times.
inline AgentState make_agent(int id, const ReferenceTrajectory& reference,
                             const TargetSet& target, const VehicleState& z0,
                             const MpcConfig& cfg) {
  cfg.validate();
  AgentState agent;
  agent.id = id;
  agent.reference = reference;
  agent.target = target;
  agent.plant = z0;
  agent.plan_states.reserve(cfg.horizon + 1);
  for (int k = 0; k <= cfg.horizon; ++k)
    agent.plan_states.push_back(
        sample_reference(reference, (k - 1) * cfg.tau));
  agent.plan_inputs.reserve(cfg.horizon);
  for (int k = 0; k < cfg.horizon; ++k)
    agent.plan_inputs.push_back(sample_input(reference, (k - 1) * cfg.tau));
  return agent;
}

/// One agent's round-t problem with its layout and primal guess.
struct AgentProblem {
  NlpProblem problem;
  VecX guess;
  detail::VehicleLayout layout;
};

/// Assembles the round-t problem for one agent given the peers' *shifted*
/// predictions: RK4 dynamics, measured initial state, operating-limit boxes,
/// dual certificates against obstacles and against each peer's predicted body
/// polytope (fixed parameters), and the reference-tracking objective with
/// samples at (t + k) tau.
inline AgentProblem build_mpc_problem(
    const AgentState& agent, int round,
    const std::map<int, std::vector<VehicleState>>& peer_predictions,
    const std::vector<Polytope2D>& obstacles, const BodySpec& body,
    const Limits& limits, const MpcConfig& cfg) {
  cfg.validate();
  for (const auto& [peer, states] : peer_predictions)
    if (static_cast<int>(states.size()) != cfg.horizon + 1)
      throw std::invalid_argument("peer prediction: wrong state count");

  AgentProblem out;
  out.layout = detail::make_vehicle_layout(0, agent.plant, obstacles,
                                           peer_predictions, body, limits,
                                           cfg);
  NlpBuilder b(out.layout.size());
  std::vector<VehicleState> ref;
  ref.reserve(cfg.horizon + 1);
  for (int k = 0; k <= cfg.horizon; ++k)
    ref.push_back(
        sample_reference(agent.reference, (round + k) * cfg.tau));
  detail::append_vehicle_block(b, out.layout, agent.plant, ref, obstacles,
                               peer_predictions, body, limits, cfg);
  out.problem = b.build();

  detail::ShiftedPlan shifted =
      detail::shift_plan(agent.plan_states, agent.plan_inputs, agent.certs,
                         cfg.tau, limits);
  detail::truncate_unsafe_guess(shifted, peer_predictions, obstacles, body,
                                cfg);
  out.guess = VecX::Zero(out.problem.n);
  detail::fill_vehicle_guess(out.guess, out.layout, agent.plant,
                             shifted.states, shifted.inputs, shifted.certs,
                             obstacles, peer_predictions, body);
  return out;
}

struct AgentStepResult {
  ControlInput input;
  PredictionMessage message;
  SolveRecord record;
};

/// Executes Algorithm round t for one agent: shift-based warm start, solve,
/// fallback to the shifted previous plan on solver failure, then broadcast.
inline AgentStepResult agent_step(
    AgentState& agent, int round,
    const std::map<int, std::vector<VehicleState>>& peer_predictions,
    const std::vector<Polytope2D>& obstacles, const BodySpec& body,
    const Limits& limits, const MpcConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  AgentProblem ap =
      build_mpc_problem(agent, round, peer_predictions, obstacles, body,
                        limits, cfg);

  std::optional<WarmStart> warm;
  if (agent.last_solution && agent.last_keys == ap.layout.keys &&
      agent.last_solution->x.size() == ap.problem.n)
    warm = WarmStart::from(*agent.last_solution);

  NlpSolution sol = solve(ap.problem, ap.guess, warm, cfg.solver);

  AgentStepResult out;
  out.record.status = sol.status;
  out.record.iterations = sol.iterations;
  if (sol.status == SolveStatus::Optimal ||
      sol.status == SolveStatus::Acceptable) {
    for (int k = 0; k <= cfg.horizon; ++k)
      agent.plan_states[k] = VehicleState::from_vector(
          sol.x.segment<5>(ap.layout.state_offset(k)));
    for (int k = 0; k < cfg.horizon; ++k)
      agent.plan_inputs[k] = ControlInput::from_vector(
          sol.x.segment<2>(ap.layout.input_offset(k)));
    agent.certs = detail::extract_certs(sol.x, ap.layout);
    agent.last_solution = sol;
    agent.last_keys = ap.layout.keys;
  } else {
    // Fall back to the shifted previous plan. Re-integrate the broadcast
    // states from the actual plant under those inputs so peers react to where
    // the vehicle is really headed instead of a stale prediction.
    const detail::ShiftedPlan shifted = detail::shift_plan(
        agent.plan_states, agent.plan_inputs, agent.certs, cfg.tau, limits);
    agent.plan_inputs = shifted.inputs;
    agent.plan_states[0] = agent.plant;
    for (int k = 0; k < cfg.horizon; ++k)
      agent.plan_states[k + 1] = rk4_step(agent.plan_states[k],
                                          agent.plan_inputs[k], cfg.tau,
                                          body.wheelbase);
    agent.certs = shifted.certs;
    agent.last_solution.reset();
    agent.last_keys.clear();
    out.record.fallback = true;
  }
  out.input = agent.plan_inputs[0];
  out.message = {agent.id, round, agent.plan_states};
  out.record.solve_ms =
      std::chrono::duration<double, std::milli>(
          std::chrono::steady_clock::now() - t0)
          .count();
  return out;
}

inline bool is_arrived(const VehicleState& z, const TargetSet& target,
                       const MpcConfig& cfg) {
  const double dpsi =
      std::remainder(z.psi - target.psi, 2.0 * M_PI);
  return target.box.contains(Vec2(z.x, z.y)) &&
         std::abs(dpsi) <= cfg.arrival_psi_tol &&
         std::abs(z.v) <= cfg.arrival_v_tol;
}

struct ClosedLoopTrace {
  double tau = 0.0;
  unsigned seed = 0;
  int num_vehicles = 0;
  int rounds = 0;
  bool all_arrived = false;
  std::vector<int> arrival_round;                   // -1 when never arrived
  std::vector<std::vector<VehicleState>> states;    // rounds+1 x vehicles
  std::vector<std::vector<ControlInput>> inputs;    // rounds x vehicles
  std::vector<std::vector<SolveRecord>> solves;     // rounds x vehicles
  std::vector<Eigen::MatrixXd> pairwise_distance;   // rounds+1, V x V
  std::vector<std::vector<double>> obstacle_clearance;  // rounds+1 x vehicles
};

namespace detail {

inline void record_geometry(ClosedLoopTrace& trace,
                            const std::vector<VehicleState>& states,
                            const std::vector<Polytope2D>& obstacles,
                            const BodySpec& body) {
  const int v = static_cast<int>(states.size());
  std::vector<Polytope2D> bodies;
  bodies.reserve(v);
  for (const VehicleState& z : states)
    bodies.push_back(vehicle_polytope(z, body));
  Eigen::MatrixXd dist = Eigen::MatrixXd::Zero(v, v);
  for (int i = 0; i < v; ++i)
    for (int j = i + 1; j < v; ++j)
      dist(i, j) = dist(j, i) = polytope_distance(bodies[i], bodies[j]);
  trace.pairwise_distance.push_back(dist);
  std::vector<double> clearance(v,
                                std::numeric_limits<double>::infinity());
  for (int i = 0; i < v; ++i)
    for (const Polytope2D& obs : obstacles)
      clearance[i] = std::min(clearance[i],
                              polytope_distance(bodies[i], obs));
  trace.obstacle_clearance.push_back(clearance);
}

}  // namespace detail

/// Round-synchronous closed loop: every agent receives the complete previous
/// message set, solves (concurrently when configured), broadcasts, and the
/// plant advances all vehicles by one RK4 step. The trace is a function of
/// the inputs only; wall-clock solve times are the single non-deterministic
/// field.
inline ClosedLoopTrace run_closed_loop(
    const std::vector<VehicleState>& initial_states,
    const std::vector<ReferenceTrajectory>& references,
    const std::vector<TargetSet>& targets,
    const std::vector<Polytope2D>& obstacles, const BodySpec& body,
    const Limits& limits, const MpcConfig& cfg, unsigned seed = 0) {
  cfg.validate();
  const int v = static_cast<int>(initial_states.size());
  if (static_cast<int>(references.size()) != v ||
      static_cast<int>(targets.size()) != v)
    throw std::invalid_argument("closed loop: per-vehicle inputs disagree");

  std::vector<AgentState> agents;
  agents.reserve(v);
  for (int i = 0; i < v; ++i)
    agents.push_back(
        make_agent(i, references[i], targets[i], initial_states[i], cfg));
  // Seed every inbox with the round "-1" reference predictions.
  for (int i = 0; i < v; ++i)
    for (int j = 0; j < v; ++j)
      if (i != j)
        agents[i].inbox[j] = {j, -1, agents[j].plan_states};

  ClosedLoopTrace trace;
  trace.tau = cfg.tau;
  trace.seed = seed;
  trace.num_vehicles = v;
  trace.arrival_round.assign(v, -1);

  for (int t = 0; t < cfg.max_rounds; ++t) {
    std::vector<VehicleState> current;
    current.reserve(v);
    for (const AgentState& a : agents) current.push_back(a.plant);
    trace.states.push_back(current);
    detail::record_geometry(trace, current, obstacles, body);

    // The barrier property: every agent holds all round t-1 messages.
    std::vector<std::map<int, std::vector<VehicleState>>> shifted(v);
    for (int i = 0; i < v; ++i) {
      if (static_cast<int>(agents[i].inbox.size()) != v - 1)
        throw std::logic_error("closed loop: incomplete inbox");
      for (const auto& [peer, msg] : agents[i].inbox) {
        if (msg.round != t - 1)
          throw std::logic_error("closed loop: stale message");
        msg.validate(cfg.horizon);
        shifted[i][peer] = shift_prediction(msg);
      }
    }

    std::vector<AgentStepResult> results(v);
    const auto work = [&](int i) {
      results[i] = agent_step(agents[i], t, shifted[i], obstacles, body,
                              limits, cfg);
    };
    if (cfg.parallel && v > 1) {
      std::vector<std::thread> pool;
      pool.reserve(v);
      for (int i = 0; i < v; ++i) pool.emplace_back(work, i);
      for (std::thread& th : pool) th.join();
    } else {
      for (int i = 0; i < v; ++i) work(i);
    }

    std::vector<ControlInput> applied;
    std::vector<SolveRecord> records;
    applied.reserve(v);
    records.reserve(v);
    for (int i = 0; i < v; ++i) {
      applied.push_back(results[i].input);
      records.push_back(results[i].record);
    }
    trace.inputs.push_back(applied);
    trace.solves.push_back(records);

    for (int i = 0; i < v; ++i)
      for (int j = 0; j < v; ++j)
        if (i != j) agents[i].inbox[j] = results[j].message;
    for (int i = 0; i < v; ++i)
      agents[i].plant =
          rk4_step(agents[i].plant, applied[i], cfg.tau, body.wheelbase);

    trace.rounds = t + 1;
    bool all = true;
    for (int i = 0; i < v; ++i) {
      if (is_arrived(agents[i].plant, targets[i], cfg)) {
        if (trace.arrival_round[i] < 0) trace.arrival_round[i] = t + 1;
      } else {
        trace.arrival_round[i] = -1;
        all = false;
      }
    }
    if (all) {
      trace.all_arrived = true;
      break;
    }
  }

  std::vector<VehicleState> final_states;
  final_states.reserve(v);
  for (const AgentState& a : agents) final_states.push_back(a.plant);
  trace.states.push_back(final_states);
  detail::record_geometry(trace, final_states, obstacles, body);
  return trace;
}

/// Joint problem layout for the centralized baseline: the vehicles' blocks
/// back to back, then one pair certificate block per surviving
/// (slot, vehicle pair).
struct CentralizedLayout {
  std::vector<detail::VehicleLayout> vehicles;
  std::vector<std::tuple<int, int, int>> pair_keys;  // (slot, i, j), i < j
  std::vector<int> pair_offsets;
  int n = 0;
};

inline CentralizedLayout make_centralized_layout(
    const std::vector<VehicleState>& plants,
    const std::vector<Polytope2D>& obstacles, const BodySpec& body,
    const Limits& limits, const MpcConfig& cfg) {
  CentralizedLayout layout;
  const std::map<int, std::vector<VehicleState>> no_peers;
  int base = 0;
  for (const VehicleState& z : plants) {
    layout.vehicles.push_back(detail::make_vehicle_layout(
        base, z, obstacles, no_peers, body, limits, cfg));
    base += layout.vehicles.back().size();
  }
  const double rb = detail::body_radius(body);
  const int v = static_cast<int>(plants.size());
  for (int k = 1; k <= cfg.horizon; ++k) {
    const double reach =
        2.0 * (rb + detail::reach_radius(k, cfg.tau, limits)) + cfg.d_min;
    for (int i = 0; i < v; ++i)
      for (int j = i + 1; j < v; ++j) {
        const Vec2 pi(plants[i].x, plants[i].y);
        const Vec2 pj(plants[j].x, plants[j].y);
        if ((pi - pj).norm() <= reach) {
          layout.pair_keys.push_back({k, i, j});
          layout.pair_offsets.push_back(base);
          base += ocp::pair_cert_size();
        }
      }
  }
  layout.n = base;
  return layout;
}

/// Closed loop driven by one joint solve per round (all vehicles' blocks plus
/// moving-pair certificates). The per-vehicle block code is shared with the
/// distributed path, so the one-vehicle case degenerates to the same problem.
inline ClosedLoopTrace run_centralized_baseline(
    const std::vector<VehicleState>& initial_states,
    const std::vector<ReferenceTrajectory>& references,
    const std::vector<TargetSet>& targets,
    const std::vector<Polytope2D>& obstacles, const BodySpec& body,
    const Limits& limits, const MpcConfig& cfg, unsigned seed = 0) {
  cfg.validate();
  const int v = static_cast<int>(initial_states.size());
  if (static_cast<int>(references.size()) != v ||
      static_cast<int>(targets.size()) != v)
    throw std::invalid_argument("closed loop: per-vehicle inputs disagree");
  const std::map<int, std::vector<VehicleState>> no_peers;

  std::vector<AgentState> agents;
  agents.reserve(v);
  for (int i = 0; i < v; ++i)
    agents.push_back(
        make_agent(i, references[i], targets[i], initial_states[i], cfg));
  std::map<std::tuple<int, int, int>, VecX> pair_certs;
  std::optional<NlpSolution> last_solution;
  std::vector<std::tuple<int, int, int>> last_pair_keys;
  std::vector<std::vector<detail::CertKey>> last_vehicle_keys(v);
  bool have_last_layout = false;

  ClosedLoopTrace trace;
  trace.tau = cfg.tau;
  trace.seed = seed;
  trace.num_vehicles = v;
  trace.arrival_round.assign(v, -1);

  for (int t = 0; t < cfg.max_rounds; ++t) {
    std::vector<VehicleState> current;
    current.reserve(v);
    for (const AgentState& a : agents) current.push_back(a.plant);
    trace.states.push_back(current);
    detail::record_geometry(trace, current, obstacles, body);

    const auto t0 = std::chrono::steady_clock::now();
    const CentralizedLayout layout =
        make_centralized_layout(current, obstacles, body, limits, cfg);
    NlpBuilder b(layout.n);
    std::vector<detail::ShiftedPlan> shifted;
    shifted.reserve(v);
    for (int i = 0; i < v; ++i) {
      std::vector<VehicleState> ref;
      ref.reserve(cfg.horizon + 1);
      for (int k = 0; k <= cfg.horizon; ++k)
        ref.push_back(
            sample_reference(agents[i].reference, (t + k) * cfg.tau));
      detail::append_vehicle_block(b, layout.vehicles[i], agents[i].plant,
                                   ref, obstacles, no_peers, body, limits,
                                   cfg);
      shifted.push_back(detail::shift_plan(agents[i].plan_states,
                                           agents[i].plan_inputs,
                                           agents[i].certs, cfg.tau, limits));
    }
    // Guess repair mirrors the distributed controller: truncate each
    // vehicle's shifted plan against the obstacles and the other vehicles'
    // (untruncated) shifted plans.
    {
      std::vector<std::vector<VehicleState>> raw;
      raw.reserve(v);
      for (const auto& s : shifted) raw.push_back(s.states);
      for (int i = 0; i < v; ++i) {
        std::map<int, std::vector<VehicleState>> peers;
        for (int j = 0; j < v; ++j)
          if (j != i) peers[j] = raw[j];
        detail::truncate_unsafe_guess(shifted[i], peers, obstacles, body, cfg);
      }
    }
    for (size_t c = 0; c < layout.pair_keys.size(); ++c) {
      const auto [k, i, j] = layout.pair_keys[c];
      const auto& li = layout.vehicles[i];
      const auto& lj = layout.vehicles[j];
      ocp::add_pair_obca_block(
          b, li.state_offset(k), li.state_offset(k) + 1,
          li.state_offset(k) + 2, lj.state_offset(k),
          lj.state_offset(k) + 1, lj.state_offset(k) + 2,
          layout.pair_offsets[c], body, cfg.d_min);
    }
    const NlpProblem problem = b.build();

    VecX guess = VecX::Zero(problem.n);
    for (int i = 0; i < v; ++i)
      detail::fill_vehicle_guess(guess, layout.vehicles[i], agents[i].plant,
                                 shifted[i].states, shifted[i].inputs,
                                 shifted[i].certs, obstacles, no_peers, body);
    std::map<std::tuple<int, int, int>, VecX> shifted_pairs;
    const int n_h = cfg.horizon;
    for (const auto& [key, value] : pair_certs) {
      const auto [k, i, j] = key;
      if (k >= 2) shifted_pairs[{k - 1, i, j}] = value;
      if (k == n_h) shifted_pairs[key] = value;
    }
    for (size_t c = 0; c < layout.pair_keys.size(); ++c) {
      const auto [k, i, j] = layout.pair_keys[c];
      const auto it = shifted_pairs.find(layout.pair_keys[c]);
      guess.segment(layout.pair_offsets[c], ocp::pair_cert_size()) =
          it != shifted_pairs.end()
              ? it->second
              : ocp::pair_cert_guess(shifted[i].states[k],
                                     shifted[j].states[k], body);
    }

    std::optional<WarmStart> warm;
    bool layout_match = have_last_layout && last_solution &&
                        last_solution->x.size() == problem.n &&
                        last_pair_keys == layout.pair_keys;
    for (int i = 0; layout_match && i < v; ++i)
      layout_match = last_vehicle_keys[i] == layout.vehicles[i].keys;
    if (layout_match) warm = WarmStart::from(*last_solution);

    NlpSolution sol = solve(problem, guess, warm, cfg.solver);
    SolveRecord record;
    record.status = sol.status;
    record.iterations = sol.iterations;
    if (sol.status == SolveStatus::Optimal ||
      sol.status == SolveStatus::Acceptable) {
      for (int i = 0; i < v; ++i) {
        const auto& li = layout.vehicles[i];
        for (int k = 0; k <= cfg.horizon; ++k)
          agents[i].plan_states[k] =
              VehicleState::from_vector(sol.x.segment<5>(li.state_offset(k)));
        for (int k = 0; k < cfg.horizon; ++k)
          agents[i].plan_inputs[k] =
              ControlInput::from_vector(sol.x.segment<2>(li.input_offset(k)));
        agents[i].certs = detail::extract_certs(sol.x, li);
        last_vehicle_keys[i] = li.keys;
      }
      pair_certs.clear();
      for (size_t c = 0; c < layout.pair_keys.size(); ++c)
        pair_certs[layout.pair_keys[c]] =
            sol.x.segment(layout.pair_offsets[c], ocp::pair_cert_size());
      last_solution = sol;
      last_pair_keys = layout.pair_keys;
      have_last_layout = true;
    } else {
      for (int i = 0; i < v; ++i) {
        agents[i].plan_states = shifted[i].states;
        agents[i].plan_states[0] = agents[i].plant;
        agents[i].plan_inputs = shifted[i].inputs;
        agents[i].certs = shifted[i].certs;
      }
      pair_certs = shifted_pairs;
      last_solution.reset();
      have_last_layout = false;
      record.fallback = true;
    }
    record.solve_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - t0)
                          .count();

    std::vector<ControlInput> applied;
    applied.reserve(v);
    for (int i = 0; i < v; ++i) applied.push_back(agents[i].plan_inputs[0]);
    trace.inputs.push_back(applied);
    trace.solves.push_back(std::vector<SolveRecord>(v, record));

    for (int i = 0; i < v; ++i)
      agents[i].plant =
          rk4_step(agents[i].plant, applied[i], cfg.tau, body.wheelbase);

    trace.rounds = t + 1;
    bool all = true;
    for (int i = 0; i < v; ++i) {
      if (is_arrived(agents[i].plant, targets[i], cfg)) {
        if (trace.arrival_round[i] < 0) trace.arrival_round[i] = t + 1;
      } else {
        trace.arrival_round[i] = -1;
        all = false;
      }
    }
    if (all) {
      trace.all_arrived = true;
      break;
    }
  }

  std::vector<VehicleState> final_states;
  final_states.reserve(v);
  for (const AgentState& a : agents) final_states.push_back(a.plant);
  trace.states.push_back(final_states);
  detail::record_geometry(trace, final_states, obstacles, body);
  return trace;
}

}  // namespace confres
