#include "agl/env.hpp"

#include <algorithm>
#include <fstream>

#include "agl/error.hpp"

namespace agl {

using nlohmann::json;

std::string_view to_string(Action a) noexcept {
  switch (a) {
    case Action::Up: return "up";
    case Action::Down: return "down";
    case Action::Left: return "left";
    case Action::Right: return "right";
  }
  return "?";
}

Action parse_action(std::string_view name) {
  for (Action a : kAllActions) {
    if (to_string(a) == name) return a;
  }
  throw ConfigError("unknown action '" + std::string(name) + "'");
}

int ActionMask::count() const noexcept {
  return static_cast<int>(std::count(bits.begin(), bits.end(), true));
}

std::vector<Action> ActionMask::actions() const {
  std::vector<Action> out;
  for (Action a : kAllActions) {
    if ((*this)[a]) out.push_back(a);
  }
  return out;
}

std::string_view to_string(WorldStyle s) noexcept {
  return s == WorldStyle::Uninformative ? "uninformative" : "informative-gradient";
}

WorldStyle parse_world_style(std::string_view name) {
  if (name == "uninformative") return WorldStyle::Uninformative;
  if (name == "informative-gradient") return WorldStyle::InformativeGradient;
  throw ConfigError("unknown world style '" + std::string(name) + "'");
}

void validate(const WorldSpec& world) {
  if (world.grid.rows < 2 || world.grid.cols < 2)
    throw ContractViolation("grid must be at least 2x2");
  if (world.embed_dim < 4) throw ContractViolation("embed_dim must be >= 4");
  if (!(world.noise_sigma >= 0.0)) throw ContractViolation("noise_sigma must be >= 0");
}

void validate(const AglTask& task) {
  validate(task.world);
  const auto& g = task.world.grid;
  if (!in_grid(g, task.start) || !in_grid(g, task.goal))
    throw ContractViolation("task cells outside grid");
  if (task.start == task.goal) throw ContractViolation("task start equals goal");
  if (manhattan(task.start, task.goal) != task.distance)
    throw ContractViolation("task distance does not match start/goal");
  if (task.distance > task.budget) throw ContractViolation("task distance exceeds budget");
}

std::string_view to_string(RewardKind k) noexcept { return k == RewardKind::Dense ? "dense" : "sparse"; }

RewardKind parse_reward_kind(std::string_view name) {
  if (name == "dense") return RewardKind::Dense;
  if (name == "sparse") return RewardKind::Sparse;
  throw ConfigError("unknown reward kind '" + std::string(name) + "'");
}

bool EpisodeState::has_visited(Cell c) const noexcept {
  return std::find(visited.begin(), visited.end(), c) != visited.end();
}

ActionMask valid_actions(const GridSpec& grid, Cell cell) {
  if (!in_grid(grid, cell)) throw ContractViolation("valid_actions: cell outside grid");
  ActionMask mask;
  for (Action a : kAllActions) mask.set(a, in_grid(grid, displace(cell, a)));
  return mask;
}

Cell apply_action(Cell cell, Action action, const GridSpec& grid) {
  if (!in_grid(grid, cell)) throw ContractViolation("apply_action: cell outside grid");
  const Cell next = displace(cell, action);
  if (!in_grid(grid, next))
    throw ContractViolation("apply_action: action '" + std::string(to_string(action)) +
                            "' leaves the grid");
  return next;
}

int dense_reward(Cell prev, Cell next, Cell goal, std::span<const Cell> visited) {
  if (next == goal) return 2;
  const bool revisit = std::find(visited.begin(), visited.end(), next) != visited.end();
  if (revisit || l2sq(next, goal) > l2sq(prev, goal)) return -1;
  return 1;
}

int sparse_reward(Cell next, Cell goal) noexcept { return next == goal ? 1 : 0; }

int reward(RewardKind kind, Cell prev, Cell next, Cell goal, std::span<const Cell> visited) {
  return kind == RewardKind::Dense ? dense_reward(prev, next, goal, visited)
                                   : sparse_reward(next, goal);
}

EpisodeState start_episode(const AglTask& task) {
  validate(task);
  EpisodeState s;
  s.task = task;
  s.current = task.start;
  s.visited.push_back(task.start);
  return s;
}

StepOutcome step_inplace(EpisodeState& state, Action action, RewardKind kind) {
  if (state.done) throw ContractViolation("step: episode already done");
  const Cell next = apply_action(state.current, action, state.task.world.grid);
  StepOutcome out;
  out.next = next;
  out.reward = reward(kind, state.current, next, state.task.goal, state.visited);
  state.current = next;
  state.steps_taken += 1;
  if (!state.has_visited(next)) state.visited.push_back(next);
  state.success = next == state.task.goal;
  state.done = state.success || state.steps_taken >= state.task.budget;
  out.done = state.done;
  out.success = state.success;
  return out;
}

std::pair<EpisodeState, StepOutcome> step(const EpisodeState& state, Action action,
                                          RewardKind kind) {
  EpisodeState next = state;
  StepOutcome out = step_inplace(next, action, kind);
  return {std::move(next), out};
}

std::vector<std::pair<Cell, Cell>> pairs_at_distance(const GridSpec& grid, int distance) {
  std::vector<std::pair<Cell, Cell>> out;
  for (int r0 = 0; r0 < grid.rows; ++r0)
    for (int c0 = 0; c0 < grid.cols; ++c0)
      for (int r1 = 0; r1 < grid.rows; ++r1)
        for (int c1 = 0; c1 < grid.cols; ++c1) {
          const Cell a{r0, c0}, b{r1, c1};
          if (manhattan(a, b) == distance) out.emplace_back(a, b);
        }
  return out;
}

AglTask sample_task(const WorldSpec& world, int distance, int budget, Rng& rng) {
  validate(world);
  if (distance < 1 || distance > world.grid.max_distance())
    throw ContractViolation("sample_task: no start/goal pair at distance " +
                            std::to_string(distance));
  if (distance > budget) throw ContractViolation("sample_task: distance exceeds budget");
  const auto pairs = pairs_at_distance(world.grid, distance);
  const auto& [start, goal] = pairs[uniform_index(rng, pairs.size())];
  return AglTask{world, start, goal, budget, distance};
}

AglTask sample_training_task(const WorldSpec& world, std::span<const int> distances, int budget,
                             Rng& rng, TrainingSampling mode) {
  if (distances.empty()) throw ContractViolation("sample_training_task: empty distance range");
  if (mode == TrainingSampling::UniformDistance) {
    const int c = distances[uniform_index(rng, distances.size())];
    return sample_task(world, c, budget, rng);
  }
  std::vector<std::pair<Cell, Cell>> pool;
  for (int c : distances) {
    if (c < 1 || c > world.grid.max_distance() || c > budget)
      throw ContractViolation("sample_training_task: infeasible distance " + std::to_string(c));
    auto p = pairs_at_distance(world.grid, c);
    pool.insert(pool.end(), p.begin(), p.end());
  }
  const auto& [start, goal] = pool[uniform_index(rng, pool.size())];
  return AglTask{world, start, goal, budget, manhattan(start, goal)};
}

json to_json(const AglTask& t) {
  return json{{"rows", t.world.grid.rows},
              {"cols", t.world.grid.cols},
              {"seed", t.world.seed},
              {"style", std::string(to_string(t.world.style))},
              {"embed_dim", t.world.embed_dim},
              {"noise_sigma", t.world.noise_sigma},
              {"start", {t.start.row, t.start.col}},
              {"goal", {t.goal.row, t.goal.col}},
              {"budget", t.budget},
              {"distance", t.distance}};
}

AglTask task_from_json(const json& j) {
  try {
    AglTask t;
    t.world.grid = {j.at("rows").get<int>(), j.at("cols").get<int>()};
    t.world.seed = j.at("seed").get<std::uint64_t>();
    t.world.style = parse_world_style(j.at("style").get<std::string>());
    t.world.embed_dim = j.value("embed_dim", t.world.embed_dim);
    t.world.noise_sigma = j.value("noise_sigma", t.world.noise_sigma);
    t.start = {j.at("start").at(0).get<int>(), j.at("start").at(1).get<int>()};
    t.goal = {j.at("goal").at(0).get<int>(), j.at("goal").at(1).get<int>()};
    t.budget = j.at("budget").get<int>();
    t.distance = j.at("distance").get<int>();
    validate(t);
    return t;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed task record: ") + e.what());
  }
}

void write_tasks_jsonl(const std::string& path, std::span<const AglTask> tasks) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  for (const auto& t : tasks) out << to_json(t).dump() << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<AglTask> read_tasks_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact(path);
  std::vector<AglTask> tasks;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ConfigError(path + ": " + e.what());
    }
    tasks.push_back(task_from_json(j));
  }
  return tasks;
}

}  // namespace agl
