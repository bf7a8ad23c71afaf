#include <gtest/gtest.h>

#include <cstdio>
#include <map>
#include <set>

#include "agl/env.hpp"
#include "agl/error.hpp"

using namespace agl;

namespace {

const GridSpec k5{5, 5};

std::set<Action> as_set(const ActionMask& m) {
  const auto v = m.actions();
  return {v.begin(), v.end()};
}

AglTask make_task(Cell start, Cell goal, int budget = 10) {
  AglTask t;
  t.world.grid = k5;
  t.start = start;
  t.goal = goal;
  t.budget = budget;
  t.distance = manhattan(start, goal);
  return t;
}

}  // namespace

TEST(ValidActions, CornerEdgeInterior) {
  EXPECT_EQ(as_set(valid_actions(k5, {0, 0})), (std::set{Action::Down, Action::Right}));
  EXPECT_EQ(valid_actions(k5, {2, 2}).count(), 4);
  EXPECT_EQ(as_set(valid_actions(k5, {0, 3})), (std::set{Action::Down, Action::Left, Action::Right}));
  EXPECT_THROW(valid_actions(k5, {5, 0}), ContractViolation);
}

TEST(ValidActions, NeverLeavesGrid) {
  for (GridSpec g : {GridSpec{2, 2}, GridSpec{5, 5}, GridSpec{3, 7}})
    for (int r = 0; r < g.rows; ++r)
      for (int c = 0; c < g.cols; ++c) {
        const ActionMask m = valid_actions(g, {r, c});
        EXPECT_GE(m.count(), 2);
        for (Action a : kAllActions) EXPECT_EQ(m[a], in_grid(g, displace({r, c}, a)));
      }
}

TEST(ApplyAction, UnitDisplacementAndRejection) {
  EXPECT_EQ(apply_action({2, 2}, Action::Up, k5), (Cell{1, 2}));
  EXPECT_EQ(apply_action({0, 0}, Action::Right, k5), (Cell{0, 1}));
  EXPECT_THROW(apply_action({0, 0}, Action::Up, k5), ContractViolation);
}

TEST(Distances, Examples) {
  EXPECT_EQ(l2sq({0, 0}, {2, 2}), 8);
  EXPECT_EQ(l2sq({1, 3}, {1, 3}), 0);
  EXPECT_EQ(l2sq({0, 4}, {4, 0}), 32);
  EXPECT_EQ(manhattan({0, 0}, {4, 4}), 8);
  EXPECT_EQ(manhattan({0, 0}, {0, 0}), 0);
  EXPECT_EQ(manhattan({1, 0}, {3, 3}), 5);
}

TEST(DenseReward, Examples) {
  const std::vector<Cell> v1{{0, 0}};
  EXPECT_EQ(dense_reward({0, 0}, {0, 1}, {2, 2}, v1), 1);
  EXPECT_EQ(dense_reward({2, 1}, {2, 2}, {2, 2}, v1), 2);
  const std::vector<Cell> v2{{0, 0}, {0, 1}};
  EXPECT_EQ(dense_reward({0, 1}, {0, 0}, {2, 2}, v2), -1);
}

TEST(DenseReward, RevisitBeatsCloser) {
  const std::vector<Cell> visited{{1, 1}, {1, 2}};
  EXPECT_EQ(dense_reward({1, 2}, {1, 1}, {1, 0}, visited), -1);
}

TEST(SparseReward, Examples) {
  EXPECT_EQ(sparse_reward({1, 1}, {1, 1}), 1);
  EXPECT_EQ(sparse_reward({1, 2}, {1, 1}), 0);
}

TEST(RewardParity, NoEqualDistanceMoveExhaustive) {
  for (GridSpec g : {GridSpec{5, 5}, GridSpec{7, 7}})
    for (int r = 0; r < g.rows; ++r)
      for (int c = 0; c < g.cols; ++c)
        for (Action a : valid_actions(g, {r, c}).actions())
          for (int gr = 0; gr < g.rows; ++gr)
            for (int gc = 0; gc < g.cols; ++gc) {
              const Cell prev{r, c}, next = displace(prev, a), goal{gr, gc};
              const int dl2 = l2sq(next, goal) - l2sq(prev, goal);
              const int dm = manhattan(next, goal) - manhattan(prev, goal);
              ASSERT_NE(dl2, 0);
              ASSERT_EQ(std::abs(dm), 1);
              ASSERT_EQ(dl2 > 0, dm > 0);
              if (prev == goal) continue;
              const int rew = dense_reward(prev, next, goal, std::vector<Cell>{prev});
              ASSERT_TRUE(rew == -1 || rew == 1 || rew == 2);
              ASSERT_EQ(rew == 2, next == goal);
            }
}

TEST(Step, BudgetExhaustion) {
  auto s = start_episode(make_task({0, 0}, {4, 4}));
  for (int i = 0; i < 10; ++i) {
    const Action a = (i % 2 == 0) ? Action::Right : Action::Left;
    const auto out = step_inplace(s, a);
    EXPECT_EQ(out.done, i == 9);
  }
  EXPECT_TRUE(s.done);
  EXPECT_FALSE(s.success);
  EXPECT_THROW(step_inplace(s, Action::Right), ContractViolation);
}

TEST(Step, ReachGoalAtStepThree) {
  auto s = start_episode(make_task({0, 0}, {1, 2}));
  auto [s1, o1] = step(s, Action::Right);
  EXPECT_EQ(o1.reward, 1);
  EXPECT_FALSE(o1.done);
  auto [s2, o2] = step(s1, Action::Right);
  auto [s3, o3] = step(s2, Action::Down);
  EXPECT_EQ(o3.reward, 2);
  EXPECT_TRUE(o3.done && o3.success);
  EXPECT_EQ(s3.steps_taken, 3);
  EXPECT_EQ(s3.visited.size(), 4u);
}

TEST(Step, InvalidActionThrows) {
  auto s = start_episode(make_task({0, 0}, {2, 2}));
  EXPECT_THROW(step(s, Action::Up), ContractViolation);
}

TEST(Step, StartCountsAsVisited) {
  auto s = start_episode(make_task({2, 2}, {2, 0}));
  step_inplace(s, Action::Right);
  EXPECT_EQ(step_inplace(s, Action::Left).reward, -1);
}

TEST(Step, SuccessParityExhaustive) {
  // Breadth-first over all action sequences: reachability of the goal at step t.
  for (const auto& [start, goal] : std::vector<std::pair<Cell, Cell>>{{{0, 0}, {2, 2}}, {{1, 1}, {1, 4}}}) {
    std::set<Cell> frontier{start};
    const int C = manhattan(start, goal);
    for (int t = 1; t <= 10; ++t) {
      std::set<Cell> next;
      for (Cell c : frontier)
        for (Action a : valid_actions(k5, c).actions()) next.insert(displace(c, a));
      const bool reachable = next.count(goal) > 0;
      EXPECT_EQ(reachable, t >= C && (t - C) % 2 == 0) << "t=" << t;
      next.erase(goal);
      frontier = next;
    }
  }
}

TEST(SampleTask, CornerPairsAtDistanceEight) {
  WorldSpec w;
  Rng rng(7);
  std::set<std::pair<Cell, Cell>> seen;
  for (int i = 0; i < 200; ++i) {
    const auto t = sample_task(w, 8, 10, rng);
    seen.insert({t.start, t.goal});
  }
  const std::set<std::pair<Cell, Cell>> expect{
      {{0, 0}, {4, 4}}, {{4, 4}, {0, 0}}, {{0, 4}, {4, 0}}, {{4, 0}, {0, 4}}};
  EXPECT_EQ(seen, expect);
  EXPECT_THROW(sample_task(w, 9, 10, rng), ContractViolation);
}

TEST(SampleTask, DeterministicGivenSeed) {
  WorldSpec w;
  Rng a(11), b(11);
  EXPECT_EQ(sample_task(w, 5, 10, a), sample_task(w, 5, 10, b));
}

TEST(SampleTask, PairFrequenciesUniform) {
  WorldSpec w;
  Rng rng(3);
  const int n = 100000;
  const auto pairs = pairs_at_distance(w.grid, 6);
  std::map<std::pair<Cell, Cell>, int> counts;
  for (int i = 0; i < n; ++i) {
    const auto t = sample_task(w, 6, 10, rng);
    ++counts[{t.start, t.goal}];
  }
  ASSERT_EQ(counts.size(), pairs.size());
  const double p = 1.0 / static_cast<double>(pairs.size());
  const double sigma = std::sqrt(n * p * (1 - p));
  for (const auto& [k, c] : counts) EXPECT_NEAR(c, n * p, 3 * sigma + 1);
}

TEST(SampleTrainingTask, UniformDistanceFrequencies) {
  WorldSpec w;
  Rng rng(5);
  const std::vector<int> range{4, 5, 6, 7, 8};
  std::map<int, int> counts;
  for (int i = 0; i < 100000; ++i) ++counts[sample_training_task(w, range, 10, rng).distance];
  for (int c : range) EXPECT_NEAR(counts[c] / 1e5, 0.2, 0.01);
  const std::vector<int> four{4};
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_training_task(w, four, 10, rng).distance, 4);
}

TEST(SampleTrainingTask, UniformPairFollowsPairCounts) {
  WorldSpec w;
  Rng rng(9);
  const std::vector<int> range{4, 5, 6, 7, 8};
  std::map<int, double> expect;
  double total = 0;
  for (int c : range) total += expect[c] = static_cast<double>(pairs_at_distance(w.grid, c).size());
  std::map<int, int> counts;
  const int n = 100000;
  for (int i = 0; i < n; ++i)
    ++counts[sample_training_task(w, range, 10, rng, TrainingSampling::UniformPair).distance];
  for (int c : range) EXPECT_NEAR(counts[c] / double(n), expect[c] / total, 0.01);
}

TEST(TaskJson, RoundTripThroughFile) {
  WorldSpec w;
  w.seed = 42;
  w.style = WorldStyle::Uninformative;
  Rng rng(1);
  std::vector<AglTask> tasks;
  for (int c = 1; c <= 8; ++c) tasks.push_back(sample_task(w, c, 10, rng));
  const std::string path = ::testing::TempDir() + "tasks.jsonl";
  write_tasks_jsonl(path, tasks);
  EXPECT_EQ(read_tasks_jsonl(path), tasks);
  std::remove(path.c_str());
  EXPECT_THROW(read_tasks_jsonl(path), MissingArtifact);
}

TEST(TaskValidate, RejectsBadTasks) {
  EXPECT_THROW(validate(make_task({0, 0}, {0, 0})), ContractViolation);
  EXPECT_THROW(validate(make_task({0, 0}, {4, 4}, 5)), ContractViolation);
  AglTask t = make_task({0, 0}, {1, 1});
  t.distance = 3;
  EXPECT_THROW(validate(t), ContractViolation);
}
