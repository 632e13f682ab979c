#pragma once

// Conversion of greedy policy rollouts into per-vehicle sequences of
// world-coordinate guidance boxes, and the timed rear/front-axle membership
// constraints they induce on the continuous trajectory.

#include <stdexcept>
#include <vector>

#include "confres/policy.hpp"
#include "confres/scenario.hpp"

namespace confres {

class IllegalTransition : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// World-coordinate cell boxes guiding one grid step: the rear axle must be
/// inside back_box and the front axle inside front_box at the step time.
struct StrategyStep {
  Box2 front_box;
  Box2 back_box;
  GridVehicle cells;  // the originating grid cells
};

struct Strategy {
  std::vector<StrategyStep> steps;  // length L >= 1
  double t_s = 3.0;

  int length() const { return static_cast<int>(steps.size()); }
  double duration() const { return t_s * length(); }
};

namespace detail {

inline Box2 cell_box(const Cell& c, const GridConfig& g) {
  return {g.origin.x() + g.cell_size * c.col,
          g.origin.x() + g.cell_size * (c.col + 1),
          g.origin.y() + g.cell_size * c.row,
          g.origin.y() + g.cell_size * (c.row + 1)};
}

inline bool legal_transition(const GridVehicle& a, const GridVehicle& b) {
  for (int act = 0; act < kNumGridActions; ++act)
    if (apply_action_free(a, static_cast<GridAction>(act)) == b) return true;
  return false;
}

}  // namespace detail

/// Strategy of a resolved vehicle: its grid poses p_0 .. p_{n-1} (the pose
/// before each of its n steps; a single hold step if it starts arrived),
/// mapped to cell boxes. The destination itself is covered by the terminal
/// set of the reference problem at time T_s * L.
inline Strategy extract_strategy(const Rollout& rollout, int vehicle,
                                 const GridConfig& grid, double t_s) {
  const auto& poses = rollout.poses.at(vehicle);
  for (size_t l = 0; l + 1 < poses.size(); ++l)
    if (!detail::legal_transition(poses[l], poses[l + 1]))
      throw IllegalTransition("rollout violates grid kinematics");
  Strategy s;
  s.t_s = t_s;
  const size_t count = std::max<size_t>(1, poses.size() - 1);
  for (size_t l = 0; l < count; ++l) {
    StrategyStep step;
    step.cells = poses[l];
    step.front_box = detail::cell_box(poses[l].front, grid);
    step.back_box = detail::cell_box(poses[l].back, grid);
    s.steps.push_back(step);
  }
  return s;
}

/// One timed membership constraint pair of the guidance sequence.
struct ConfigConstraint {
  double time = 0.0;   // T_s * l
  Box2 back_box;       // on the rear-axle point (x, y)
  Box2 front_box;      // on the front-axle point (x + l_wb cos psi, ...)
};

/// Timed box constraints at the step boundaries; pure and independent of
/// other vehicles.
inline std::vector<ConfigConstraint> config_constraints(const Strategy& s,
                                                        double l_wb) {
  std::vector<ConfigConstraint> out;
  for (int l = 0; l < s.length(); ++l)
    out.push_back({s.t_s * l, s.steps[l].back_box, s.steps[l].front_box});
  (void)l_wb;  // the front-axle map is evaluated by the consumer
  return out;
}

/// Evaluates whether a state satisfies one constraint pair.
inline bool satisfies_config(const ConfigConstraint& c, const VehicleState& z,
                             double l_wb, double tol = 0.0) {
  const Vec2 rear(z.x, z.y);
  const Vec2 front = rear + l_wb * Vec2(std::cos(z.psi), std::sin(z.psi));
  return c.back_box.contains(rear, tol) && c.front_box.contains(front, tol);
}

}  // namespace confres
