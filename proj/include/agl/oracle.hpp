#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "agl/env.hpp"
#include "agl/rng.hpp"

namespace agl {

// ---------------------------------------------------------------------------
// Optimal actions and labels

// Valid actions that strictly decrease the squared distance to the goal. For
// unit axis moves this is exactly the set that decreases Manhattan distance.
ActionMask optimal_actions(Cell current, Cell goal, const GridSpec& grid);

struct OptimalLabel {
  int step = 0;
  ActionMask mask;
  bool at_goal = false;  // no label exists; excluded from every loss
};

struct Trajectory {
  AglTask task;
  std::vector<Cell> cells;      // length actions.size() + 1
  std::vector<Action> actions;

  int length() const noexcept { return static_cast<int>(actions.size()); }
};

void validate(const Trajectory& traj);

std::vector<OptimalLabel> label_trajectory(const Trajectory& traj);

// Uniform over valid actions at each step; does not stop at the goal.
Trajectory gen_random_trajectory(const AglTask& task, int length, Rng& rng);

// Shortest path with uniform tie-breaking among optimal actions.
Trajectory gen_optimal_trajectory(const AglTask& task, Rng& rng);

// ---------------------------------------------------------------------------
// Random-walk success probability

enum class WalkConvention {
  MaskedUniform,    // uniform over the valid actions of the current cell
  UniformWithNoop,  // uniform over all four; an off-grid draw wastes the step
};

std::string_view to_string(WalkConvention c) noexcept;
WalkConvention parse_walk_convention(std::string_view name);

// Probability of reaching the goal within `budget` steps, for one start/goal pair.
double random_walk_success_exact(const GridSpec& grid, Cell start, Cell goal, int budget,
                                 WalkConvention convention);

// Average of the above over every ordered pair at Manhattan distance `distance`.
double random_policy_sr_exact(const GridSpec& grid, int distance, int budget,
                              WalkConvention convention);

// One Monte Carlo episode of the random walk; true on success.
bool simulate_random_walk(const GridSpec& grid, Cell start, Cell goal, int budget,
                          WalkConvention convention, Rng& rng);

// ---------------------------------------------------------------------------
// Synthetic embeddings

using Embedding = Eigen::VectorXf;

// Angular frequencies (radians per cell) of the sin/cos encodings shared by
// the informative patch generator and the relative-position encoding.
inline constexpr double kPositionFrequencies[2] = {0.35, 0.7};
inline constexpr int kPositionEncodingDim = 8;

// [sin(w1 r), cos(w1 r), sin(w1 c), cos(w1 c), sin(w2 r), ...] for offsets from the top-left.
Eigen::VectorXf position_encoding(Cell cell);

Embedding gen_patch_embedding(const WorldSpec& world, Cell cell);

enum class GoalModality { Aerial, Ground, Text };
std::string_view to_string(GoalModality m) noexcept;
GoalModality parse_goal_modality(std::string_view name);

Embedding gen_goal_embedding(const WorldSpec& world, Cell goal, GoalModality modality);

// All cell embeddings of one world, row index = row * cols + col.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(const WorldSpec& world);
  EmbeddingTable(GridSpec grid, Eigen::MatrixXf rows);

  const GridSpec& grid() const noexcept { return grid_; }
  int dim() const noexcept { return static_cast<int>(rows_.cols()); }
  Eigen::VectorXf patch(Cell c) const { return rows_.row(c.row * grid_.cols + c.col).transpose(); }
  const Eigen::MatrixXf& matrix() const noexcept { return rows_; }

 private:
  GridSpec grid_;
  Eigen::MatrixXf rows_;
};

// ---------------------------------------------------------------------------
// Goal-direction (gradient) categories

struct GradientCategory {
  int dy = 0;
  int dx = 0;
  int id = -1;

  bool at_goal() const noexcept { return dy == 0 && dx == 0; }
  bool operator==(const GradientCategory&) const = default;
};

// (goal - current) divided by gcd(|dy|, |dx|); (0, 0) when current == goal.
GradientCategory reduced_direction(Cell current, Cell goal);

class GradientTable {
 public:
  GradientTable() = default;
  explicit GradientTable(std::vector<GradientCategory> sorted);

  int size() const noexcept { return static_cast<int>(categories_.size()); }
  const std::vector<GradientCategory>& categories() const noexcept { return categories_; }
  // -1 when the direction is not in the table.
  int id_of(int dy, int dx) const noexcept;

 private:
  std::vector<GradientCategory> categories_;
};

// Every reduced direction realised by some (current, goal) pair, sorted by (dy, dx).
GradientTable enumerate_gradient_categories(const GridSpec& grid);

GradientCategory gradient_category(Cell current, Cell goal, const GradientTable& table);

nlohmann::json to_json(const GradientTable& table);
GradientTable gradient_table_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// GASP dataset records: {task, cells, actions, labels}

nlohmann::json to_json(const Trajectory& traj, const std::vector<OptimalLabel>& labels);
std::pair<Trajectory, std::vector<OptimalLabel>> trajectory_from_json(const nlohmann::json& j);

}  // namespace agl
