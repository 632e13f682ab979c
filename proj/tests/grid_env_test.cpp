#include "confres/grid_env.hpp"

#include <random>

#include "gtest/gtest.h"

namespace confres {
namespace {

GridWorld empty_world(int w, int h, std::vector<GridVehicle> vehicles,
                      std::vector<GridVehicle> dests) {
  return GridWorld(w, h, {}, std::move(vehicles), std::move(dests));
}

TEST(Actions, StraightAdvance) {
  const GridVehicle v{{2, 1}, {1, 1}};
  const GridVehicle r = apply_action_free(v, GridAction::F);
  EXPECT_EQ(r.front, (Cell{3, 1}));
  EXPECT_EQ(r.back, (Cell{2, 1}));
}

TEST(Actions, ForwardLeftPivot) {
  const GridVehicle v{{2, 1}, {1, 1}};
  const GridVehicle r = apply_action_free(v, GridAction::FL);
  EXPECT_EQ(r.front, (Cell{2, 2}));
  EXPECT_EQ(r.back, (Cell{2, 1}));
  EXPECT_EQ(r.heading(), (Cell{0, 1}));
}

TEST(Actions, StopIsIdentity) {
  const GridVehicle v{{4, 2}, {4, 3}};
  EXPECT_EQ(apply_action_free(v, GridAction::S), v);
}

TEST(Actions, InversePairsAllHeadingsAllPoses) {
  const std::pair<GridAction, GridAction> pairs[] = {
      {GridAction::F, GridAction::B},
      {GridAction::FL, GridAction::BR},
      {GridAction::FR, GridAction::BL},
      {GridAction::B, GridAction::F},
      {GridAction::BL, GridAction::FR},
      {GridAction::BR, GridAction::FL},
  };
  const Cell headings[] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
  for (int col = 0; col < 12; ++col) {
    for (int row = 0; row < 8; ++row) {
      for (const Cell& h : headings) {
        const GridVehicle v{Cell{col, row} + h, {col, row}};
        for (const auto& [fwd, bwd] : pairs) {
          const GridVehicle mid = apply_action_free(v, fwd);
          EXPECT_EQ(apply_action_free(mid, bwd), v);
        }
      }
    }
  }
}

TEST(Step, BounceOffObstacle) {
  GridWorld w(6, 6, {{3, 1}}, {{{2, 1}, {1, 1}}}, {{{5, 5}, {4, 5}}});
  const auto r = w.step({GridAction::F});
  EXPECT_TRUE(r.bounced[0]);
  EXPECT_EQ(w.vehicle(0), (GridVehicle{{2, 1}, {1, 1}}));
  EXPECT_LT(r.rewards[0], w.reward_config().collision_penalty + 0.1);
}

TEST(Step, HeadOnTentativeConflictBouncesBoth) {
  // Both want front cell (3, 1).
  GridWorld w = empty_world(
      7, 3, {{{2, 1}, {1, 1}}, {{4, 1}, {5, 1}}},
      {{{6, 2}, {5, 2}}, {{0, 2}, {1, 2}}});
  const auto r = w.step({GridAction::F, GridAction::F});
  EXPECT_TRUE(r.bounced[0]);
  EXPECT_TRUE(r.bounced[1]);
  const auto cells = w.occupied_cells();
  std::set<Cell> uniq(cells.begin(), cells.end());
  EXPECT_EQ(uniq.size(), cells.size());
}

TEST(Step, SwapBouncesBoth) {
  // Nose-to-nose adjacent; F/F would swap front cells through each other.
  GridWorld w = empty_world(
      6, 3, {{{2, 1}, {1, 1}}, {{3, 1}, {4, 1}}},
      {{{5, 2}, {4, 2}}, {{0, 2}, {1, 2}}});
  const auto r = w.step({GridAction::F, GridAction::F});
  EXPECT_TRUE(r.bounced[0]);
  EXPECT_TRUE(r.bounced[1]);
}

TEST(Step, ChainedReversion) {
  // v0 blocked by an obstacle; v1 moving into v0's (reverted) cells must
  // revert too.
  GridWorld w(8, 3, {{4, 1}},
              {{{3, 1}, {2, 1}}, {{1, 1}, {0, 1}}},
              {{{7, 2}, {6, 2}}, {{7, 0}, {6, 0}}});
  const auto r = w.step({GridAction::F, GridAction::F});
  EXPECT_TRUE(r.bounced[0]);
  EXPECT_TRUE(r.bounced[1]);
  EXPECT_EQ(w.vehicle(1), (GridVehicle{{1, 1}, {0, 1}}));
}

TEST(Step, ArrivalGrantsRewardOnceAndRemoves) {
  GridWorld w = empty_world(6, 3, {{{2, 1}, {1, 1}}}, {{{3, 1}, {2, 1}}});
  const auto r = w.step({GridAction::F});
  EXPECT_TRUE(r.arrived[0]);
  EXPECT_GT(r.rewards[0], 50.0);
  EXPECT_FALSE(w.active(0));
  EXPECT_TRUE(w.all_arrived());
}

TEST(Observe, SingleVehicleCounts) {
  GridWorld w = empty_world(4, 4, {{{1, 1}, {0, 1}}}, {{{3, 3}, {2, 3}}});
  const Observation o = w.observe(0);
  EXPECT_EQ(o.data.sum(), 4.0);
  EXPECT_EQ(o.at(kEgoFront, 1, 1), 1.0);
  EXPECT_EQ(o.at(kEgoBack, 1, 0), 1.0);
  EXPECT_EQ(o.at(kEgoDestFront, 3, 3), 1.0);
  EXPECT_EQ(o.at(kEgoDestBack, 3, 2), 1.0);
}

TEST(Observe, ObstacleChannel) {
  GridWorld w(4, 4, {{0, 0}}, {{{1, 1}, {0, 1}}}, {{{3, 3}, {2, 3}}});
  EXPECT_EQ(w.observe(0).at(kObstacles, 0, 0), 1.0);
}

TEST(Observe, OthersChannels) {
  GridWorld w = empty_world(5, 5, {{{1, 1}, {0, 1}}, {{3, 3}, {3, 4}}},
                            {{{4, 0}, {3, 0}}, {{0, 4}, {1, 4}}});
  const Observation o = w.observe(0);
  EXPECT_EQ(o.at(kOthersFront, 3, 3), 1.0);
  EXPECT_EQ(o.at(kOthersBack, 4, 3), 1.0);
  double others = 0;
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 5; ++c)
      others += o.at(kOthersFront, r, c) + o.at(kOthersBack, r, c);
  EXPECT_EQ(others, 2.0);
}

TEST(Observe, Deterministic) {
  GridWorld w = empty_world(5, 5, {{{1, 1}, {0, 1}}, {{3, 3}, {3, 4}}},
                            {{{4, 0}, {3, 0}}, {{0, 4}, {1, 4}}});
  EXPECT_EQ(w.observe(0).data, w.observe(0).data);
}

TEST(Step, NoOverlapRandomized) {
  std::mt19937_64 rng(123);
  std::uniform_int_distribution<int> action(0, 6);
  // 10^5 random joint steps across re-seeded worlds.
  int steps_done = 0;
  while (steps_done < 100000) {
    GridWorld w(12, 8, {{5, 3}, {5, 4}, {6, 3}},
                {{{1, 1}, {0, 1}}, {{10, 6}, {11, 6}}, {{3, 6}, {3, 5}}},
                {{{11, 1}, {10, 1}}, {{0, 6}, {1, 6}}, {{8, 0}, {8, 1}}});
    for (int k = 0; k < 40 && !w.all_arrived(); ++k) {
      w.step({static_cast<GridAction>(action(rng)),
              static_cast<GridAction>(action(rng)),
              static_cast<GridAction>(action(rng))});
      ++steps_done;
      const auto cells = w.occupied_cells();
      std::set<Cell> uniq(cells.begin(), cells.end());
      ASSERT_EQ(uniq.size(), cells.size());
      for (const Cell& c : cells) {
        ASSERT_TRUE(w.in_bounds(c));
        ASSERT_FALSE(w.obstacles().contains(c));
      }
    }
  }
}

TEST(Step, FullyBlockedIdempotent) {
  // Vehicle boxed in on all sides; every motion action bounces.
  GridWorld w(5, 5, {{0, 2}, {1, 1}, {2, 1}, {1, 3}, {2, 3}, {3, 2}},
              {{{2, 2}, {1, 2}}}, {{{4, 4}, {3, 4}}});
  for (GridAction a :
       {GridAction::F, GridAction::FL, GridAction::FR, GridAction::B,
        GridAction::BL, GridAction::BR}) {
    const auto r = w.step({a});
    EXPECT_TRUE(r.bounced[0]);
    EXPECT_EQ(w.vehicle(0), (GridVehicle{{2, 2}, {1, 2}}));
    EXPECT_LT(r.rewards[0], 0.0);
  }
}

}  // namespace
}  // namespace confres
