#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <map>

#include "agl/agents.hpp"
#include "agl/error.hpp"

using namespace agl;

namespace {

WorldSet small_set(int count) {
  WorldSet s;
  s.grid = {5, 5};
  s.count = count;
  s.seed = 31;
  return s;
}

GaspArch tiny_arch() {
  GaspArch a;
  a.model_dim = 8;
  a.heads = 2;
  a.mlp_hidden = 12;
  return a;
}

std::shared_ptr<GaspModel> tiny_gasp(std::uint64_t seed, GaspArch arch = tiny_arch()) {
  auto m = std::make_shared<GaspModel>(arch);
  Rng rng(seed);
  m->net.init(m->params, rng);
  return m;
}

std::shared_ptr<PlannerModel> tiny_planner(int input_dim, const std::string& encoder, std::uint64_t seed) {
  PlannerArch arch;
  arch.input_dim = input_dim;
  arch.hidden = 8;
  arch.encoder = encoder;
  auto p = std::make_shared<PlannerModel>(arch);
  Rng rng(seed);
  p->net.init(p->params, rng);
  return p;
}

std::vector<std::unique_ptr<Agent>> sample_agents() {
  std::vector<std::unique_ptr<Agent>> out;
  out.push_back(random_agent());
  out.push_back(oracle_agent());
  const auto gasp = tiny_gasp(1);
  out.push_back(planner_agent("gomaa", std::make_shared<GaspEncoder>(gasp), tiny_planner(8, "gasp", 2)));
  out.push_back(planner_agent("ppo-memoryless", std::make_shared<MemorylessEncoder>(16),
                              tiny_planner(32, "memoryless", 3)));
  out.push_back(head_agent("llm-geo", gasp, HeadKind::Sigmoid));
  out.push_back(head_agent("bc", tiny_gasp(4), HeadKind::Softmax));
  return out;
}

// Plays one episode and checks every chosen action against the valid mask.
int play_checked(const Agent& agent, const WorldBank& bank, int w, const AglTask& task, PolicyMode mode, Rng& rng) {
  const Embedding& goal = bank.goal(w, task.goal, GoalModality::Aerial);
  auto policy = agent.begin(EpisodeContext{task, bank.table(w), goal, mode});
  EpisodeState state = start_episode(task);
  int steps = 0;
  while (!state.done) {
    const ActionMask valid = valid_actions(task.world.grid, state.current);
    const Action a = policy->act(state.current, valid, rng);
    EXPECT_TRUE(valid[a]) << agent.name() << " chose " << to_string(a);
    if (!valid[a]) return steps;
    step_inplace(state, a);
    ++steps;
  }
  return steps;
}

}  // namespace

TEST(Agents, EveryAgentOnlyChoosesValidActions) {
  const WorldBank bank(small_set(5));
  Rng rng(7);
  for (const auto& agent : sample_agents()) {
    int steps = 0;
    for (int e = 0; steps < 10000; ++e) {
      const int w = e % bank.size();
      const int distance = 1 + static_cast<int>(uniform_index(rng, 8));
      const AglTask task = sample_task(bank.spec(w), distance, 10, rng);
      steps += play_checked(*agent, bank, w, task, e % 2 ? PolicyMode::Argmax : PolicyMode::Stochastic, rng);
    }
  }
}

TEST(Agents, RandomAgentIsUniformOverValidActions) {
  const WorldBank bank(small_set(1));
  const auto agent = random_agent();
  Rng rng(3);
  const AglTask task = sample_task(bank.spec(0), 4, 10, rng);
  auto policy = agent->begin(EpisodeContext{task, bank.table(0), bank.goal(0, task.goal, GoalModality::Text),
                                            PolicyMode::Argmax});
  const int n = 40000;
  for (Cell c : {Cell{0, 0}, Cell{0, 2}, Cell{2, 2}}) {
    const ActionMask valid = valid_actions(task.world.grid, c);
    std::map<Action, int> counts;
    for (int i = 0; i < n; ++i) ++counts[policy->act(c, valid, rng)];
    EXPECT_EQ(static_cast<int>(counts.size()), valid.count());
    for (const auto& [a, k] : counts) {
      EXPECT_TRUE(valid[a]);
      EXPECT_NEAR(k / double(n), 1.0 / valid.count(), 0.01);
    }
  }
}

TEST(Agents, OracleAgentFollowsAShortestPath) {
  const WorldBank bank(small_set(3));
  const auto agent = oracle_agent();
  Rng rng(5);
  for (int e = 0; e < 200; ++e) {
    const int w = e % bank.size();
    const int distance = 1 + static_cast<int>(uniform_index(rng, 8));
    const AglTask task = sample_task(bank.spec(w), distance, distance, rng);
    EXPECT_EQ(play_checked(*agent, bank, w, task, PolicyMode::Stochastic, rng), distance);
  }
}

TEST(Agents, ArgmaxPlannerIsDeterministic) {
  const WorldBank bank(small_set(2));
  const auto agent = planner_agent("gomaa", std::make_shared<GaspEncoder>(tiny_gasp(1)), tiny_planner(8, "gasp", 2));
  Rng task_rng(9);
  const AglTask task = sample_task(bank.spec(1), 5, 10, task_rng);
  std::vector<Action> first;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Rng rng(seed);
    auto policy = agent->begin(EpisodeContext{task, bank.table(1), bank.goal(1, task.goal, GoalModality::Ground),
                                              PolicyMode::Argmax});
    EpisodeState state = start_episode(task);
    std::vector<Action> actions;
    while (!state.done) {
      const Action a = policy->act(state.current, valid_actions(task.world.grid, state.current), rng);
      actions.push_back(a);
      step_inplace(state, a);
    }
    if (first.empty()) first = actions;
    EXPECT_EQ(actions, first);
  }
}

TEST(Agents, PlannerRejectsMismatchedEncoder) {
  EXPECT_THROW(planner_agent("gomaa", std::make_shared<GaspEncoder>(tiny_gasp(1)), tiny_planner(9, "gasp", 2)),
               ConfigError);
  EXPECT_THROW(planner_agent("x", nullptr, tiny_planner(8, "gasp", 2)), ContractViolation);
}

TEST(Registry, KnowsEveryAgentName) {
  const std::vector<std::string> names{"random",   "ppo-memoryless", "bc",           "gomaa",
                                       "gomaa-mask", "llm-geo",      "gomaa-sparse", "gomaa-rpg"};
  ASSERT_EQ(agent_recipes().size(), names.size());
  for (const auto& n : names) EXPECT_EQ(agent_recipe(n).name, n);
  EXPECT_THROW(agent_recipe("gomaa-turbo"), ConfigError);
  EXPECT_THROW(make_agent("gomaa-turbo", "."), ConfigError);
}

TEST(Registry, MissingArtifactNamesTheFile) {
  const auto dir = std::filesystem::temp_directory_path() / "agl_test_agents_empty";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  EXPECT_EQ(make_agent("random", dir.string())->name(), "random");
  try {
    make_agent("gomaa", dir.string());
    FAIL() << "expected MissingArtifact";
  } catch (const MissingArtifact& e) {
    EXPECT_NE(std::string(e.what()).find("gasp.aglw"), std::string::npos);
  }
  EXPECT_THROW(make_agent("ppo-memoryless", dir.string()), MissingArtifact);
}

TEST(Registry, LoadsEveryAgentFromARunDirectory) {
  const auto dir = std::filesystem::temp_directory_path() / "agl_test_agents_run";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const auto p = [&](const char* f) { return (dir / f).string(); };
  save_gasp_model(p("gasp.aglw"), *tiny_gasp(1));
  GaspArch masked = tiny_arch();
  masked.mask_goal = true;
  save_gasp_model(p("gasp_mask.aglw"), *tiny_gasp(2, masked));
  GaspArch rpg = tiny_arch();
  rpg.gradient_categories = 49;
  save_gasp_model(p("gasp_rpg.aglw"), *tiny_gasp(3, rpg));
  save_gasp_model(p("bc.aglw"), *tiny_gasp(4));
  for (const char* f : {"planner_gomaa.aglw", "planner_gomaa_mask.aglw", "planner_gomaa_sparse.aglw",
                        "planner_gomaa_rpg.aglw"})
    save_planner_model(p(f), *tiny_planner(8, "gasp", 5));
  save_planner_model(p("planner_memoryless.aglw"), *tiny_planner(32, "memoryless", 6));

  const WorldBank bank(small_set(2));
  Rng rng(1);
  for (const auto& recipe : agent_recipes()) {
    const auto agent = make_agent(recipe.name, dir.string());
    EXPECT_EQ(agent->name(), recipe.name);
    const AglTask task = sample_task(bank.spec(0), 4, 10, rng);
    play_checked(*agent, bank, 0, task, PolicyMode::Stochastic, rng);
  }
}
