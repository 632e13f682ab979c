#pragma once

// Discrete multi-agent grid environment: two-cell (front/back) vehicles,
// 7-action transition model, simultaneous stepping with bounce-back collision
// semantics, reward computation, and channelized binary observations.

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <vector>

namespace confres {

struct Cell {
  int col = 0;
  int row = 0;

  friend bool operator==(const Cell&, const Cell&) = default;
  friend auto operator<=>(const Cell&, const Cell&) = default;
  Cell operator+(const Cell& o) const { return {col + o.col, row + o.row}; }
  Cell operator-(const Cell& o) const { return {col - o.col, row - o.row}; }
};

/// +90 degree (counterclockwise) rotation of a grid direction.
inline Cell rot_ccw(const Cell& h) { return {-h.row, h.col}; }
/// -90 degree (clockwise) rotation of a grid direction.
inline Cell rot_cw(const Cell& h) { return {h.row, -h.col}; }

/// Two-cell rigid vehicle; heading = front - back, one of the 4 axis
/// directions.
struct GridVehicle {
  Cell front;
  Cell back;

  Cell heading() const { return front - back; }
  friend bool operator==(const GridVehicle&, const GridVehicle&) = default;

  void validate() const {
    const Cell h = heading();
    if (std::abs(h.col) + std::abs(h.row) != 1)
      throw std::invalid_argument("grid vehicle: front/back not 4-adjacent");
  }
};

enum class GridAction : std::uint8_t { S = 0, F, FL, FR, B, BL, BR };
inline constexpr int kNumGridActions = 7;

/// Free-space transition table. Forward turns pivot the back onto the old
/// front; backward turns pivot the front onto the old back. The result may be
/// out of bounds; callers check.
inline GridVehicle apply_action_free(const GridVehicle& veh, GridAction act) {
  const Cell h = veh.heading();
  switch (act) {
    case GridAction::S:
      return veh;
    case GridAction::F:
      return {veh.front + h, veh.back + h};
    case GridAction::FL:
      return {veh.front + rot_ccw(h), veh.front};
    case GridAction::FR:
      return {veh.front + rot_cw(h), veh.front};
    case GridAction::B:
      return {veh.back, veh.back - h};
    case GridAction::BL:
      return {veh.back, veh.back - rot_ccw(h)};
    case GridAction::BR:
      return {veh.back, veh.back - rot_cw(h)};
  }
  throw std::logic_error("unknown grid action");
}

struct RewardConfig {
  double collision_penalty = -5.0;
  double stop_penalty = -0.5;
  double distance_weight = -0.1;
  double time_penalty = -0.1;
  double arrival_reward = 100.0;
};

/// Channel layout of the binary observation tensor.
enum ObservationChannel : int {
  kObstacles = 0,
  kEgoFront,
  kEgoBack,
  kEgoDestFront,
  kEgoDestBack,
  kOthersFront,
  kOthersBack,
};
inline constexpr int kNumObservationChannels = 7;

/// Binary indicator tensor of shape (channels, height, width).
struct Observation {
  int height = 0;
  int width = 0;
  Eigen::VectorXd data;  // flattened, channel-major

  double& at(int ch, int row, int col) {
    return data(ch * height * width + row * width + col);
  }
  double at(int ch, int row, int col) const {
    return data(ch * height * width + row * width + col);
  }
  int size() const { return kNumObservationChannels * height * width; }
};

struct StepResult {
  std::vector<double> rewards;
  std::vector<bool> arrived;   // arrival happened this step
  std::vector<bool> bounced;
};

class GridWorld {
 public:
  GridWorld() = default;
  GridWorld(int width, int height, std::set<Cell> obstacle_cells,
            std::vector<GridVehicle> vehicles,
            std::vector<GridVehicle> destinations,
            RewardConfig reward = RewardConfig{})
      : width_(width),
        height_(height),
        obstacles_(std::move(obstacle_cells)),
        vehicles_(std::move(vehicles)),
        destinations_(std::move(destinations)),
        reward_(reward),
        active_(vehicles_.size(), true) {
    if (vehicles_.size() != destinations_.size())
      throw std::invalid_argument("grid world: vehicle/destination mismatch");
    for (const Cell& c : obstacles_)
      if (!in_bounds(c)) throw std::invalid_argument("obstacle out of bounds");
    for (const auto& v : vehicles_) {
      v.validate();
      if (!in_bounds(v.front) || !in_bounds(v.back))
        throw std::invalid_argument("vehicle out of bounds");
    }
    for (const auto& d : destinations_) {
      d.validate();
      if (obstacles_.contains(d.front) || obstacles_.contains(d.back))
        throw std::invalid_argument("destination on obstacle");
    }
    // Vehicles placed on their destination count as arrived immediately.
    for (size_t i = 0; i < vehicles_.size(); ++i)
      if (vehicles_[i] == destinations_[i]) active_[i] = false;
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int num_vehicles() const { return static_cast<int>(vehicles_.size()); }
  bool active(int i) const { return active_[i]; }
  bool all_arrived() const {
    for (bool a : active_)
      if (a) return false;
    return true;
  }
  const GridVehicle& vehicle(int i) const { return vehicles_[i]; }
  const GridVehicle& destination(int i) const { return destinations_[i]; }
  const std::set<Cell>& obstacles() const { return obstacles_; }
  const RewardConfig& reward_config() const { return reward_; }

  int observe_dim() const {
    return kNumObservationChannels * width_ * height_;
  }

  bool in_bounds(const Cell& c) const {
    return c.col >= 0 && c.col < width_ && c.row >= 0 && c.row < height_;
  }

  bool cell_free(const Cell& c) const {
    return in_bounds(c) && !obstacles_.contains(c);
  }

  /// Simultaneous step: tentative poses, then iterated bounce-back reversion
  /// to a fixed point. Rewards and arrival bookkeeping per vehicle.
  StepResult step(const std::vector<GridAction>& actions);

  Observation observe(int ego) const {
    if (ego < 0 || ego >= num_vehicles() || !active_[ego])
      throw std::invalid_argument("observe: unknown or inactive vehicle id");
    Observation o;
    o.height = height_;
    o.width = width_;
    o.data = Eigen::VectorXd::Zero(o.size());
    for (const Cell& c : obstacles_) o.at(kObstacles, c.row, c.col) = 1.0;
    o.at(kEgoFront, vehicles_[ego].front.row, vehicles_[ego].front.col) = 1.0;
    o.at(kEgoBack, vehicles_[ego].back.row, vehicles_[ego].back.col) = 1.0;
    o.at(kEgoDestFront, destinations_[ego].front.row,
         destinations_[ego].front.col) = 1.0;
    o.at(kEgoDestBack, destinations_[ego].back.row,
         destinations_[ego].back.col) = 1.0;
    for (int j = 0; j < num_vehicles(); ++j) {
      if (j == ego || !active_[j]) continue;
      o.at(kOthersFront, vehicles_[j].front.row, vehicles_[j].front.col) = 1.0;
      o.at(kOthersBack, vehicles_[j].back.row, vehicles_[j].back.col) = 1.0;
    }
    return o;
  }

  /// All cells occupied by active vehicles; used by invariants tests.
  std::vector<Cell> occupied_cells() const {
    std::vector<Cell> out;
    for (int i = 0; i < num_vehicles(); ++i) {
      if (!active_[i]) continue;
      out.push_back(vehicles_[i].front);
      out.push_back(vehicles_[i].back);
    }
    return out;
  }

  static int manhattan(const Cell& a, const Cell& b) {
    return std::abs(a.col - b.col) + std::abs(a.row - b.row);
  }
  static bool overlaps(const GridVehicle& a, const GridVehicle& b) {
    return a.front == b.front || a.front == b.back || a.back == b.front ||
           a.back == b.back;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  std::set<Cell> obstacles_;
  std::vector<GridVehicle> vehicles_;
  std::vector<GridVehicle> destinations_;
  RewardConfig reward_;
  std::vector<bool> active_;
};

struct JointTransition {
  std::vector<GridVehicle> poses;
  std::vector<bool> active;
  std::vector<bool> bounced;
  std::vector<bool> arrived;
};

/// Pure transition function over an explicit joint pose assignment, using the
/// world only for its static geometry and destinations. Inactive vehicles do
/// not move and do not block.
inline JointTransition grid_transition(const GridWorld& world,
                                       const std::vector<GridVehicle>& poses,
                                       const std::vector<bool>& active,
                                       const std::vector<GridAction>& actions) {
  const int n = static_cast<int>(poses.size());
  if (static_cast<int>(actions.size()) != n)
    throw std::invalid_argument("step: one action per vehicle required");

  JointTransition out;
  out.poses = poses;
  out.active = active;
  out.bounced.assign(n, false);
  out.arrived.assign(n, false);

  auto& tentative = out.poses;
  auto& reverted = out.bounced;
  for (int i = 0; i < n; ++i) {
    if (!active[i]) continue;
    tentative[i] = apply_action_free(poses[i], actions[i]);
  }
  // Environment conflicts (bounds / obstacles) first.
  for (int i = 0; i < n; ++i) {
    if (!active[i]) continue;
    if (!world.cell_free(tentative[i].front) ||
        !world.cell_free(tentative[i].back)) {
      tentative[i] = poses[i];
      reverted[i] = true;
    }
  }
  // Vehicle-vehicle conflicts, iterated to a fixed point. A sweep computes
  // all conflicts against the current assignment, then reverts them at once
  // so that coinciding tentative poses bounce both vehicles.
  bool changed = true;
  while (changed) {
    changed = false;
    std::vector<bool> conflict(n, false);
    for (int i = 0; i < n; ++i) {
      if (!active[i] || reverted[i]) continue;
      for (int j = 0; j < n; ++j) {
        if (j == i || !active[j]) continue;
        if (GridWorld::overlaps(tentative[i], tentative[j])) conflict[i] = true;
        // Direct swap through each other.
        if (!reverted[j] && GridWorld::overlaps(tentative[i], poses[j]) &&
            GridWorld::overlaps(tentative[j], poses[i]))
          conflict[i] = true;
      }
    }
    for (int i = 0; i < n; ++i) {
      if (conflict[i]) {
        tentative[i] = poses[i];
        reverted[i] = true;
        changed = true;
      }
    }
  }
  for (int i = 0; i < n; ++i) {
    if (!active[i]) continue;
    if (tentative[i] == world.destination(i)) {
      out.arrived[i] = true;
      out.active[i] = false;  // arrived vehicles are removed from the map
    }
  }
  return out;
}

inline StepResult GridWorld::step(const std::vector<GridAction>& actions) {
  const int n = num_vehicles();
  JointTransition tr = grid_transition(*this, vehicles_, active_, actions);
  StepResult out;
  out.rewards.assign(n, 0.0);
  out.arrived = tr.arrived;
  out.bounced = tr.bounced;
  for (int i = 0; i < n; ++i) {
    if (!active_[i]) continue;
    vehicles_[i] = tr.poses[i];
    double r = reward_.time_penalty;
    if (tr.bounced[i]) r += reward_.collision_penalty;
    if (actions[i] == GridAction::S) r += reward_.stop_penalty;
    r += reward_.distance_weight *
         (manhattan(vehicles_[i].front, destinations_[i].front) +
          manhattan(vehicles_[i].back, destinations_[i].back));
    if (tr.arrived[i]) r += reward_.arrival_reward;
    out.rewards[i] = r;
  }
  active_ = tr.active;
  return out;
}

}  // namespace confres
