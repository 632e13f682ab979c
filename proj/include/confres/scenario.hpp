#pragma once

// Continuous scenario description (lot, obstacles, vehicles, targets) and the
// world-to-grid quantization that constructs the discrete environment.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "confres/dynamics.hpp"
#include "confres/geometry.hpp"
#include "confres/grid_env.hpp"

namespace confres {

class QuantizationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Box2 {
  double xmin = 0, xmax = 0, ymin = 0, ymax = 0;

  bool contains(const Vec2& p, double tol = 0.0) const {
    return p.x() >= xmin - tol && p.x() <= xmax + tol && p.y() >= ymin - tol &&
           p.y() <= ymax + tol;
  }
  Vec2 center() const { return Vec2((xmin + xmax) / 2, (ymin + ymax) / 2); }
  Polytope2D polytope() const {
    return Polytope2D::axis_aligned_box(xmin, xmax, ymin, ymax);
  }
  friend bool operator==(const Box2&, const Box2&) = default;
};

struct GridConfig {
  double cell_size = 2.5;
  Vec2 origin = Vec2::Zero();  // lot corner
};

struct VehicleSpec {
  VehicleState initial;    // v = delta_f = 0 at start
  Box2 target_box;         // rear-axle position box
  double target_psi = 0.0;
  BodySpec body;
};

struct Scenario {
  Box2 lot;
  std::vector<Polytope2D> obstacles;
  std::vector<VehicleSpec> vehicles;
  GridConfig grid;
  double t_s = 3.0;  // seconds between strategy steps
  std::uint64_t seed = 0;

  void validate() const {
    for (const auto& v : vehicles) {
      v.body.validate();
      if (!lot.contains(v.target_box.center()))
        throw std::invalid_argument("scenario: target outside lot");
      if (v.target_box.xmin > v.target_box.xmax ||
          v.target_box.ymin > v.target_box.ymax)
        throw std::invalid_argument("scenario: malformed target box");
      const Polytope2D bodyp = vehicle_polytope(v.initial, v.body);
      for (const auto& obs : obstacles) {
        if (polytope_distance(bodyp, obs) <= 0.0)
          throw std::invalid_argument(
              "scenario: initial pose intersects an obstacle");
      }
    }
    for (size_t i = 0; i < vehicles.size(); ++i) {
      for (size_t j = i + 1; j < vehicles.size(); ++j) {
        if (polytope_distance(
                vehicle_polytope(vehicles[i].initial, vehicles[i].body),
                vehicle_polytope(vehicles[j].initial, vehicles[j].body)) <= 0.0)
          throw std::invalid_argument(
              "scenario: initial vehicle poses intersect");
      }
    }
  }
};

namespace detail {

inline Cell quantize_point(const Vec2& p, const GridConfig& g) {
  const Cell cell{
      static_cast<int>(std::floor((p.x() - g.origin.x()) / g.cell_size)),
      static_cast<int>(std::floor((p.y() - g.origin.y()) / g.cell_size))};
  const Vec2 center = g.origin + g.cell_size * Vec2(cell.col + 0.5,
                                                    cell.row + 0.5);
  if ((p - center).norm() > g.cell_size / 2.0 + 1e-9)
    throw QuantizationError("axle center too far from any cell center");
  return cell;
}

/// Quantizes a heading to the nearest axis direction; throws if not aligned
/// within `tol` radians.
inline Cell quantize_heading(double psi, double tol) {
  const double c = std::cos(psi), s = std::sin(psi);
  if (std::abs(s) <= tol && c > 0) return {1, 0};
  if (std::abs(s) <= tol && c < 0) return {-1, 0};
  if (std::abs(c) <= tol && s > 0) return {0, 1};
  if (std::abs(c) <= tol && s < 0) return {0, -1};
  throw QuantizationError("pose heading not axis-aligned");
}

}  // namespace detail

/// Maps a continuous scenario to the discrete grid world: rear/front axle
/// centers to back/front cells, obstacles to covered cells, targets from box
/// centers and target headings.
inline GridWorld from_scenario(const Scenario& sc,
                               const GridConfig& grid,
                               const RewardConfig& reward = RewardConfig{},
                               double heading_tol = 1e-6) {
  const double c = grid.cell_size;
  const int width = static_cast<int>(
      std::lround((sc.lot.xmax - grid.origin.x()) / c));
  const int height = static_cast<int>(
      std::lround((sc.lot.ymax - grid.origin.y()) / c));

  std::set<Cell> obstacle_cells;
  const double shrink = 1e-6;
  for (const auto& obs : sc.obstacles) {
    for (int col = 0; col < width; ++col) {
      for (int row = 0; row < height; ++row) {
        const double x0 = grid.origin.x() + c * col;
        const double y0 = grid.origin.y() + c * row;
        const Polytope2D cell_box = Polytope2D::axis_aligned_box(
            x0 + shrink, x0 + c - shrink, y0 + shrink, y0 + c - shrink);
        if (polytope_distance(obs, cell_box) <= 0.0)
          obstacle_cells.insert({col, row});
      }
    }
  }

  std::vector<GridVehicle> vehicles;
  std::vector<GridVehicle> destinations;
  for (const auto& v : sc.vehicles) {
    const Cell h = detail::quantize_heading(v.initial.psi, heading_tol);
    const Vec2 rear(v.initial.x, v.initial.y);
    const Vec2 front = rear + v.body.wheelbase *
                                  Vec2(std::cos(v.initial.psi),
                                       std::sin(v.initial.psi));
    const Cell back_cell = detail::quantize_point(rear, grid);
    const Cell front_cell = detail::quantize_point(front, grid);
    if (front_cell - back_cell != h)
      throw QuantizationError("front/back cells not adjacent along heading");
    GridVehicle gv{front_cell, back_cell};
    gv.validate();
    vehicles.push_back(gv);

    const Cell th = detail::quantize_heading(v.target_psi, heading_tol);
    const Cell dest_back = detail::quantize_point(v.target_box.center(), grid);
    GridVehicle dest{dest_back + th, dest_back};
    dest.validate();
    destinations.push_back(dest);
  }
  return GridWorld(width, height, std::move(obstacle_cells),
                   std::move(vehicles), std::move(destinations), reward);
}

}  // namespace confres
