#include "confres/strategy.hpp"

#include <cmath>
#include <random>

#include "gtest/gtest.h"

namespace confres {
namespace {

constexpr double kPi = 3.14159265358979323846;

TEST(Quantize, AxleCenterToCell) {
  GridConfig g;  // 2.5 m cells, origin at (0, 0)
  EXPECT_EQ(detail::quantize_point(Vec2(16.25, 18.75), g), (Cell{6, 7}));
  EXPECT_EQ(detail::quantize_point(Vec2(1.0, 1.5), g), (Cell{0, 0}));
  // Near a cell corner the axle is more than half a cell from every center.
  EXPECT_THROW(detail::quantize_point(Vec2(0.1, 0.1), g), QuantizationError);
}

TEST(Quantize, HeadingToDirection) {
  EXPECT_EQ(detail::quantize_heading(0.0, 1e-6), (Cell{1, 0}));
  EXPECT_EQ(detail::quantize_heading(kPi / 2, 1e-6), (Cell{0, 1}));
  EXPECT_EQ(detail::quantize_heading(kPi, 1e-6), (Cell{-1, 0}));
  EXPECT_EQ(detail::quantize_heading(-kPi / 2, 1e-6), (Cell{0, -1}));
  EXPECT_THROW(detail::quantize_heading(0.3, 1e-6), QuantizationError);
}

Scenario tiny_scenario() {
  Scenario sc;
  sc.lot = {0, 20, 0, 10};
  sc.grid = GridConfig{};
  VehicleSpec v;
  v.initial = {16.25, 18.75, kPi / 2, 0, 0};
  v.initial = {3.75, 3.75, 0.0, 0, 0};
  v.target_box = {15.0, 17.5, 2.5, 5.0};
  v.target_psi = 0.0;
  sc.vehicles = {v};
  return sc;
}

TEST(FromScenario, VehicleAndDestinationCells) {
  Scenario sc = tiny_scenario();
  // Rear axle (3.75, 3.75) -> cell (1, 1); wheelbase 2.5 puts the front axle
  // at (6.25, 3.75) -> cell (2, 1). Target box center (16.25, 3.75) -> (6, 1).
  GridWorld w = from_scenario(sc, sc.grid);
  EXPECT_EQ(w.width(), 8);
  EXPECT_EQ(w.height(), 4);
  EXPECT_EQ(w.vehicle(0).back, (Cell{1, 1}));
  EXPECT_EQ(w.vehicle(0).front, (Cell{2, 1}));
  EXPECT_EQ(w.destination(0).back, (Cell{6, 1}));
  EXPECT_EQ(w.destination(0).front, (Cell{7, 1}));
}

TEST(FromScenario, ObstacleCellCoverage) {
  Scenario sc = tiny_scenario();
  sc.obstacles = {Polytope2D::axis_aligned_box(0.0, 5.0, 7.5, 10.0)};
  GridWorld w = from_scenario(sc, sc.grid);
  EXPECT_EQ(w.obstacles(), (std::set<Cell>{{0, 3}, {1, 3}}));
}

TEST(FromScenario, MisalignedAxleRejected) {
  Scenario sc = tiny_scenario();
  // A rear axle near a cell corner is more than half a cell from any center.
  sc.vehicles[0].initial.x = 2.4;
  sc.vehicles[0].initial.y = 2.6;
  EXPECT_THROW(from_scenario(sc, sc.grid), QuantizationError);
}

TEST(FromScenario, TiltedHeadingRejected) {
  Scenario sc = tiny_scenario();
  sc.vehicles[0].initial.psi = 0.2;
  EXPECT_THROW(from_scenario(sc, sc.grid), QuantizationError);
}

Rollout two_step_rollout() {
  Rollout r;
  // East-facing vehicle: forward once, then a forward-left turn.
  GridVehicle p0{{2, 1}, {1, 1}};
  GridVehicle p1 = apply_action_free(p0, GridAction::F);
  GridVehicle p2 = apply_action_free(p1, GridAction::FL);
  r.poses = {{p0, p1, p2}};
  r.actions = {{GridAction::F, GridAction::FL}};
  r.arrival_step = {2};
  return r;
}

TEST(ExtractStrategy, BoxesMatchCells) {
  const Rollout r = two_step_rollout();
  const Strategy s = extract_strategy(r, 0, GridConfig{}, 3.0);
  ASSERT_EQ(s.length(), 2);
  EXPECT_DOUBLE_EQ(s.duration(), 6.0);
  // Step 0 comes from pose p0: back cell (1,1) -> [2.5,5]x[2.5,5].
  EXPECT_EQ(s.steps[0].back_box, (Box2{2.5, 5.0, 2.5, 5.0}));
  EXPECT_EQ(s.steps[0].front_box, (Box2{5.0, 7.5, 2.5, 5.0}));
  // Step 1 from p1: back (2,1), front (3,1).
  EXPECT_EQ(s.steps[1].back_box, (Box2{5.0, 7.5, 2.5, 5.0}));
  EXPECT_EQ(s.steps[1].front_box, (Box2{7.5, 10.0, 2.5, 5.0}));
}

TEST(ExtractStrategy, AlreadyArrivedYieldsSingleHold) {
  Rollout r;
  r.poses = {{GridVehicle{{2, 1}, {1, 1}}}};
  r.actions = {{}};
  r.arrival_step = {0};
  const Strategy s = extract_strategy(r, 0, GridConfig{}, 3.0);
  ASSERT_EQ(s.length(), 1);
  EXPECT_EQ(s.steps[0].back_box, (Box2{2.5, 5.0, 2.5, 5.0}));
}

TEST(ExtractStrategy, IllegalJumpRejected) {
  Rollout r = two_step_rollout();
  r.poses[0][1] = GridVehicle{{5, 1}, {4, 1}};  // teleport
  EXPECT_THROW(extract_strategy(r, 0, GridConfig{}, 3.0), IllegalTransition);
}

TEST(ExtractStrategy, EveryReachablePoseIsLegal) {
  // Property: strategies extracted from environment rollouts never throw.
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> act(0, kNumGridActions - 1);
  for (int trial = 0; trial < 200; ++trial) {
    GridWorld w(6, 6, {{3, 3}}, {{{1, 0}, {0, 0}}, {{4, 5}, {5, 5}}},
                {{{5, 0}, {4, 0}}, {{1, 5}, {0, 5}}});
    Rollout r;
    r.poses = {{w.vehicle(0)}, {w.vehicle(1)}};
    for (int t = 0; t < 15; ++t) {
      w.step({static_cast<GridAction>(act(rng)),
              static_cast<GridAction>(act(rng))});
      r.poses[0].push_back(w.vehicle(0));
      r.poses[1].push_back(w.vehicle(1));
    }
    EXPECT_NO_THROW(extract_strategy(r, 0, GridConfig{}, 3.0));
    EXPECT_NO_THROW(extract_strategy(r, 1, GridConfig{}, 3.0));
  }
}

TEST(ConfigConstraints, TimesAndMembership) {
  const Rollout r = two_step_rollout();
  const Strategy s = extract_strategy(r, 0, GridConfig{}, 3.0);
  const auto cons = config_constraints(s, 2.5);
  ASSERT_EQ(cons.size(), 2u);
  EXPECT_DOUBLE_EQ(cons[0].time, 0.0);
  EXPECT_DOUBLE_EQ(cons[1].time, 3.0);

  // Rear axle at (3.75, 3.75) heading east: front axle (6.25, 3.75).
  VehicleState z{3.75, 3.75, 0.0, 0.0, 0.0};
  EXPECT_TRUE(satisfies_config(cons[0], z, 2.5));
  EXPECT_FALSE(satisfies_config(cons[1], z, 2.5));
  z.x = 6.25;
  EXPECT_TRUE(satisfies_config(cons[1], z, 2.5));
  // A slightly rotated pose can leave the front box while the rear stays in.
  z.psi = 0.9;
  EXPECT_FALSE(satisfies_config(cons[1], z, 2.5));
}

}  // namespace
}  // namespace confres
