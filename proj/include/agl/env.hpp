#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "agl/rng.hpp"

namespace agl {

struct GridSpec {
  int rows = 5;
  int cols = 5;

  constexpr int cell_count() const noexcept { return rows * cols; }
  constexpr int max_distance() const noexcept { return rows - 1 + cols - 1; }
  bool operator==(const GridSpec&) const = default;
};

struct Cell {
  int row = 0;
  int col = 0;

  auto operator<=>(const Cell&) const = default;
};

constexpr bool in_grid(const GridSpec& grid, Cell c) noexcept {
  return c.row >= 0 && c.row < grid.rows && c.col >= 0 && c.col < grid.cols;
}

// Canonical order; every mask and logit vector indexes actions this way.
enum class Action : std::uint8_t { Up = 0, Down = 1, Left = 2, Right = 3 };

inline constexpr int kNumActions = 4;
inline constexpr std::array<Action, kNumActions> kAllActions{Action::Up, Action::Down, Action::Left,
                                                             Action::Right};

constexpr int index_of(Action a) noexcept { return static_cast<int>(a); }
constexpr Action action_at(int i) noexcept { return static_cast<Action>(i); }
std::string_view to_string(Action a) noexcept;
Action parse_action(std::string_view name);

constexpr Cell displace(Cell c, Action a) noexcept {
  switch (a) {
    case Action::Up: return {c.row - 1, c.col};
    case Action::Down: return {c.row + 1, c.col};
    case Action::Left: return {c.row, c.col - 1};
    case Action::Right: return {c.row, c.col + 1};
  }
  return c;
}

// Bit j set <=> action j allowed.
struct ActionMask {
  std::array<bool, kNumActions> bits{};

  bool operator[](Action a) const noexcept { return bits[index_of(a)]; }
  bool operator[](int i) const noexcept { return bits[static_cast<std::size_t>(i)]; }
  void set(Action a, bool v = true) noexcept { bits[index_of(a)] = v; }
  int count() const noexcept;
  std::vector<Action> actions() const;
  bool operator==(const ActionMask&) const = default;
};

enum class WorldStyle { Uninformative, InformativeGradient };
std::string_view to_string(WorldStyle s) noexcept;
WorldStyle parse_world_style(std::string_view name);

struct WorldSpec {
  GridSpec grid;
  std::uint64_t seed = 0;
  WorldStyle style = WorldStyle::InformativeGradient;
  int embed_dim = 16;
  double noise_sigma = 0.1;

  bool operator==(const WorldSpec&) const = default;
};

void validate(const WorldSpec& world);

struct AglTask {
  WorldSpec world;
  Cell start;
  Cell goal;
  int budget = 10;
  int distance = 0;

  bool operator==(const AglTask&) const = default;
};

void validate(const AglTask& task);

enum class RewardKind { Dense, Sparse };
std::string_view to_string(RewardKind k) noexcept;
RewardKind parse_reward_kind(std::string_view name);

struct EpisodeState {
  AglTask task;
  Cell current;
  int steps_taken = 0;
  std::vector<Cell> visited;  // insertion order, no duplicates, starts with task.start
  bool done = false;
  bool success = false;

  bool has_visited(Cell c) const noexcept;
};

struct StepOutcome {
  Cell next;
  int reward = 0;
  bool done = false;
  bool success = false;
};

ActionMask valid_actions(const GridSpec& grid, Cell cell);

// Throws ContractViolation when the move leaves the grid; never clamps.
Cell apply_action(Cell cell, Action action, const GridSpec& grid);

constexpr int l2sq(Cell a, Cell b) noexcept {
  const int dr = a.row - b.row;
  const int dc = a.col - b.col;
  return dr * dr + dc * dc;
}

constexpr int manhattan(Cell a, Cell b) noexcept {
  return (a.row > b.row ? a.row - b.row : b.row - a.row) +
         (a.col > b.col ? a.col - b.col : b.col - a.col);
}

// Goal (+2) beats revisit (-1) beats closer (+1); moving away is -1.
int dense_reward(Cell prev, Cell next, Cell goal, std::span<const Cell> visited);
int sparse_reward(Cell next, Cell goal) noexcept;
int reward(RewardKind kind, Cell prev, Cell next, Cell goal, std::span<const Cell> visited);

EpisodeState start_episode(const AglTask& task);
std::pair<EpisodeState, StepOutcome> step(const EpisodeState& state, Action action,
                                          RewardKind kind = RewardKind::Dense);
// In-place variant for hot loops.
StepOutcome step_inplace(EpisodeState& state, Action action, RewardKind kind = RewardKind::Dense);

// All ordered (start, goal) pairs at the given Manhattan distance, row-major order.
std::vector<std::pair<Cell, Cell>> pairs_at_distance(const GridSpec& grid, int distance);

AglTask sample_task(const WorldSpec& world, int distance, int budget, Rng& rng);

enum class TrainingSampling {
  UniformDistance,  // C uniform over the range, then a uniform pair at that C
  UniformPair,      // uniform over all pairs whose distance is in the range
};

AglTask sample_training_task(const WorldSpec& world, std::span<const int> distances, int budget,
                             Rng& rng,
                             TrainingSampling mode = TrainingSampling::UniformDistance);

// Line-delimited JSON task files.
nlohmann::json to_json(const AglTask& task);
AglTask task_from_json(const nlohmann::json& j);
void write_tasks_jsonl(const std::string& path, std::span<const AglTask> tasks);
std::vector<AglTask> read_tasks_jsonl(const std::string& path);

}  // namespace agl
