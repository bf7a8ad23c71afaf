#include "agl/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "agl/error.hpp"

namespace agl {

using nlohmann::json;

ActionMask optimal_actions(Cell current, Cell goal, const GridSpec& grid) {
  if (current == goal) throw ContractViolation("optimal_actions: agent already at goal");
  const ActionMask valid = valid_actions(grid, current);
  const int here = l2sq(current, goal);
  ActionMask out;
  for (Action a : kAllActions) {
    if (valid[a] && l2sq(displace(current, a), goal) < here) out.set(a);
  }
  return out;
}

void validate(const Trajectory& traj) {
  const auto& grid = traj.task.world.grid;
  if (traj.cells.size() != traj.actions.size() + 1)
    throw ContractViolation("trajectory: cells/actions length mismatch");
  for (const Cell& c : traj.cells)
    if (!in_grid(grid, c)) throw ContractViolation("trajectory: cell outside grid");
  for (std::size_t i = 0; i < traj.actions.size(); ++i)
    if (displace(traj.cells[i], traj.actions[i]) != traj.cells[i + 1])
      throw ContractViolation("trajectory: action does not match consecutive cells");
}

std::vector<OptimalLabel> label_trajectory(const Trajectory& traj) {
  const auto& grid = traj.task.world.grid;
  std::vector<OptimalLabel> labels;
  labels.reserve(traj.cells.size());
  for (std::size_t i = 0; i < traj.cells.size(); ++i) {
    OptimalLabel label;
    label.step = static_cast<int>(i);
    if (traj.cells[i] == traj.task.goal) {
      label.at_goal = true;
    } else {
      label.mask = optimal_actions(traj.cells[i], traj.task.goal, grid);
    }
    labels.push_back(label);
  }
  return labels;
}

Trajectory gen_random_trajectory(const AglTask& task, int length, Rng& rng) {
  if (length < 1) throw ContractViolation("gen_random_trajectory: length must be >= 1");
  Trajectory traj{task, {task.start}, {}};
  Cell c = task.start;
  for (int i = 0; i < length; ++i) {
    const auto choices = valid_actions(task.world.grid, c).actions();
    const Action a = choices[uniform_index(rng, choices.size())];
    c = displace(c, a);
    traj.actions.push_back(a);
    traj.cells.push_back(c);
  }
  return traj;
}

Trajectory gen_optimal_trajectory(const AglTask& task, Rng& rng) {
  Trajectory traj{task, {task.start}, {}};
  Cell c = task.start;
  while (c != task.goal) {
    const auto choices = optimal_actions(c, task.goal, task.world.grid).actions();
    const Action a = choices[uniform_index(rng, choices.size())];
    c = displace(c, a);
    traj.actions.push_back(a);
    traj.cells.push_back(c);
  }
  return traj;
}

// ---------------------------------------------------------------------------

std::string_view to_string(WalkConvention c) noexcept {
  return c == WalkConvention::MaskedUniform ? "masked" : "noop";
}

WalkConvention parse_walk_convention(std::string_view name) {
  if (name == "masked") return WalkConvention::MaskedUniform;
  if (name == "noop") return WalkConvention::UniformWithNoop;
  throw ConfigError("unknown walk convention '" + std::string(name) + "'");
}

double random_walk_success_exact(const GridSpec& grid, Cell start, Cell goal, int budget,
                                 WalkConvention convention) {
  const int n = grid.cell_count();
  auto idx = [&](Cell c) { return c.row * grid.cols + c.col; };
  std::vector<double> mass(static_cast<std::size_t>(n), 0.0), next(mass.size());
  mass[static_cast<std::size_t>(idx(start))] = 1.0;
  double absorbed = 0.0;
  for (int t = 0; t < budget; ++t) {
    std::fill(next.begin(), next.end(), 0.0);
    for (int r = 0; r < grid.rows; ++r) {
      for (int c = 0; c < grid.cols; ++c) {
        const Cell cell{r, c};
        const double p = mass[static_cast<std::size_t>(idx(cell))];
        if (p == 0.0) continue;
        const ActionMask valid = valid_actions(grid, cell);
        const double w = convention == WalkConvention::MaskedUniform ? 1.0 / valid.count() : 0.25;
        for (Action a : kAllActions) {
          Cell to;
          if (valid[a]) {
            to = displace(cell, a);
          } else if (convention == WalkConvention::UniformWithNoop) {
            to = cell;
          } else {
            continue;
          }
          if (to == goal) {
            absorbed += p * w;
          } else {
            next[static_cast<std::size_t>(idx(to))] += p * w;
          }
        }
      }
    }
    mass.swap(next);
  }
  return absorbed;
}

double random_policy_sr_exact(const GridSpec& grid, int distance, int budget,
                              WalkConvention convention) {
  const auto pairs = pairs_at_distance(grid, distance);
  if (pairs.empty())
    throw ContractViolation("random_policy_sr_exact: no pair at distance " +
                            std::to_string(distance));
  if (budget < distance) return 0.0;
  double total = 0.0;
  for (const auto& [s, g] : pairs) total += random_walk_success_exact(grid, s, g, budget, convention);
  return total / static_cast<double>(pairs.size());
}

bool simulate_random_walk(const GridSpec& grid, Cell start, Cell goal, int budget,
                          WalkConvention convention, Rng& rng) {
  Cell c = start;
  for (int t = 0; t < budget; ++t) {
    if (convention == WalkConvention::MaskedUniform) {
      const auto choices = valid_actions(grid, c).actions();
      c = displace(c, choices[uniform_index(rng, choices.size())]);
    } else {
      const Cell to = displace(c, action_at(static_cast<int>(uniform_index(rng, kNumActions))));
      if (in_grid(grid, to)) c = to;
    }
    if (c == goal) return true;
  }
  return false;
}

// ---------------------------------------------------------------------------

Eigen::VectorXf position_encoding(Cell cell) {
  Eigen::VectorXf v(kPositionEncodingDim);
  int k = 0;
  for (double w : kPositionFrequencies) {
    v[k++] = static_cast<float>(std::sin(w * cell.row));
    v[k++] = static_cast<float>(std::cos(w * cell.row));
    v[k++] = static_cast<float>(std::sin(w * cell.col));
    v[k++] = static_cast<float>(std::cos(w * cell.col));
  }
  return v;
}

namespace {

Eigen::VectorXd gaussian_vector(std::uint64_t seed, int dim) {
  Rng rng(seed);
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v[i] = standard_normal(rng);
  return v;
}

// Per-world orthogonal matrix applied to the positional block.
Eigen::MatrixXd world_rotation(std::uint64_t world_seed, int dim) {
  Rng rng(mix_seed(world_seed, "rotation"));
  Eigen::MatrixXd g(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) g(i, j) = standard_normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(dim, dim);
  // Fix the sign ambiguity of QR so the result is a deterministic function of g.
  const Eigen::VectorXd d = qr.matrixQR().diagonal();
  for (int j = 0; j < dim; ++j)
    if (d[j] < 0) q.col(j) *= -1.0;
  return q;
}

Eigen::VectorXd informative_patch(const WorldSpec& world, const Eigen::MatrixXd& rotation,
                                  Cell cell) {
  const int block = rotation.rows();
  Eigen::VectorXd pe = position_encoding(cell).head(block).cast<double>();
  Eigen::VectorXd v = Eigen::VectorXd::Zero(world.embed_dim);
  v.head(block) = rotation * pe;
  if (world.noise_sigma > 0.0)
    v += world.noise_sigma *
         gaussian_vector(mix_seed(world.seed, "patch-noise",
                                  {static_cast<std::uint64_t>(cell.row),
                                   static_cast<std::uint64_t>(cell.col)}),
                         world.embed_dim);
  return v;
}

Eigen::VectorXd uninformative_patch(const WorldSpec& world, Cell cell) {
  return gaussian_vector(mix_seed(world.seed, "patch",
                                  {static_cast<std::uint64_t>(cell.row),
                                   static_cast<std::uint64_t>(cell.col)}),
                         world.embed_dim);
}

int positional_block(const WorldSpec& world) {
  return world.embed_dim >= kPositionEncodingDim ? kPositionEncodingDim : 4;
}

Eigen::VectorXd patch_double(const WorldSpec& world, const Eigen::MatrixXd* rotation, Cell cell) {
  Eigen::VectorXd v = world.style == WorldStyle::Uninformative
                          ? uninformative_patch(world, cell)
                          : informative_patch(world, *rotation, cell);
  return v / v.norm();
}

}  // namespace

Embedding gen_patch_embedding(const WorldSpec& world, Cell cell) {
  validate(world);
  if (!in_grid(world.grid, cell)) throw ContractViolation("gen_patch_embedding: cell outside grid");
  if (world.style == WorldStyle::Uninformative) return patch_double(world, nullptr, cell).cast<float>();
  const Eigen::MatrixXd rot = world_rotation(world.seed, positional_block(world));
  return patch_double(world, &rot, cell).cast<float>();
}

std::string_view to_string(GoalModality m) noexcept {
  switch (m) {
    case GoalModality::Aerial: return "aerial";
    case GoalModality::Ground: return "ground";
    case GoalModality::Text: return "text";
  }
  return "?";
}

GoalModality parse_goal_modality(std::string_view name) {
  for (GoalModality m : {GoalModality::Aerial, GoalModality::Ground, GoalModality::Text})
    if (to_string(m) == name) return m;
  throw ConfigError("unknown goal modality '" + std::string(name) + "'");
}

Embedding gen_goal_embedding(const WorldSpec& world, Cell goal, GoalModality modality) {
  const Eigen::VectorXd base = gen_patch_embedding(world, goal).cast<double>();
  if (world.noise_sigma == 0.0) return base.cast<float>();
  Eigen::VectorXd u = gaussian_vector(
      mix_seed(world.seed, "modality", {static_cast<std::uint64_t>(modality)}), world.embed_dim);
  u -= base * base.dot(u);
  const double n = u.norm();
  if (n == 0.0) return base.cast<float>();
  Eigen::VectorXd v = base + (world.noise_sigma / n) * u;
  return (v / v.norm()).cast<float>();
}

EmbeddingTable::EmbeddingTable(const WorldSpec& world) : grid_(world.grid) {
  validate(world);
  rows_.resize(grid_.cell_count(), world.embed_dim);
  Eigen::MatrixXd rot;
  if (world.style == WorldStyle::InformativeGradient)
    rot = world_rotation(world.seed, positional_block(world));
  for (int r = 0; r < grid_.rows; ++r)
    for (int c = 0; c < grid_.cols; ++c)
      rows_.row(r * grid_.cols + c) =
          patch_double(world, rot.size() ? &rot : nullptr, {r, c}).cast<float>().transpose();
}

EmbeddingTable::EmbeddingTable(GridSpec grid, Eigen::MatrixXf rows)
    : grid_(grid), rows_(std::move(rows)) {
  if (rows_.rows() != grid_.cell_count())
    throw ContractViolation("EmbeddingTable: row count does not match grid");
}

// ---------------------------------------------------------------------------

GradientCategory reduced_direction(Cell current, Cell goal) {
  int dy = goal.row - current.row;
  int dx = goal.col - current.col;
  const int g = std::gcd(std::abs(dy), std::abs(dx));
  if (g > 1) {
    dy /= g;
    dx /= g;
  }
  return {dy, dx, -1};
}

GradientTable::GradientTable(std::vector<GradientCategory> sorted) : categories_(std::move(sorted)) {
  for (std::size_t i = 0; i < categories_.size(); ++i) categories_[i].id = static_cast<int>(i);
}

int GradientTable::id_of(int dy, int dx) const noexcept {
  const auto it = std::lower_bound(
      categories_.begin(), categories_.end(), std::pair{dy, dx},
      [](const GradientCategory& c, const std::pair<int, int>& k) {
        return std::pair{c.dy, c.dx} < k;
      });
  if (it == categories_.end() || it->dy != dy || it->dx != dx) return -1;
  return it->id;
}

GradientTable enumerate_gradient_categories(const GridSpec& grid) {
  std::vector<GradientCategory> all;
  for (int r0 = 0; r0 < grid.rows; ++r0)
    for (int c0 = 0; c0 < grid.cols; ++c0)
      for (int r1 = 0; r1 < grid.rows; ++r1)
        for (int c1 = 0; c1 < grid.cols; ++c1) all.push_back(reduced_direction({r0, c0}, {r1, c1}));
  auto key = [](const GradientCategory& c) { return std::pair{c.dy, c.dx}; };
  std::sort(all.begin(), all.end(), [&](const auto& a, const auto& b) { return key(a) < key(b); });
  all.erase(std::unique(all.begin(), all.end(),
                        [&](const auto& a, const auto& b) { return key(a) == key(b); }),
            all.end());
  return GradientTable(std::move(all));
}

GradientCategory gradient_category(Cell current, Cell goal, const GradientTable& table) {
  GradientCategory c = reduced_direction(current, goal);
  c.id = table.id_of(c.dy, c.dx);
  if (c.id < 0) throw ContractViolation("gradient_category: direction not in table");
  return c;
}

json to_json(const GradientTable& table) {
  json arr = json::array();
  for (const auto& c : table.categories()) arr.push_back({{"id", c.id}, {"dy", c.dy}, {"dx", c.dx}});
  return arr;
}

GradientTable gradient_table_from_json(const json& j) {
  std::vector<GradientCategory> cats;
  for (const auto& e : j) cats.push_back({e.at("dy").get<int>(), e.at("dx").get<int>(), -1});
  return GradientTable(std::move(cats));
}

// ---------------------------------------------------------------------------

json to_json(const Trajectory& traj, const std::vector<OptimalLabel>& labels) {
  json cells = json::array(), actions = json::array(), lab = json::array();
  for (const Cell& c : traj.cells) cells.push_back({c.row, c.col});
  for (Action a : traj.actions) actions.push_back(index_of(a));
  for (const auto& l : labels) {
    if (l.at_goal) {
      lab.push_back(nullptr);
    } else {
      lab.push_back({int(l.mask[0]), int(l.mask[1]), int(l.mask[2]), int(l.mask[3])});
    }
  }
  return json{{"task", to_json(traj.task)}, {"cells", cells}, {"actions", actions}, {"labels", lab}};
}

std::pair<Trajectory, std::vector<OptimalLabel>> trajectory_from_json(const json& j) {
  Trajectory traj;
  traj.task = task_from_json(j.at("task"));
  for (const auto& c : j.at("cells")) traj.cells.push_back({c.at(0).get<int>(), c.at(1).get<int>()});
  for (const auto& a : j.at("actions")) {
    const int i = a.get<int>();
    if (i < 0 || i >= kNumActions) throw ConfigError("action index out of range");
    traj.actions.push_back(action_at(i));
  }
  validate(traj);
  std::vector<OptimalLabel> labels;
  int step = 0;
  for (const auto& l : j.at("labels")) {
    OptimalLabel lab;
    lab.step = step++;
    if (l.is_null()) {
      lab.at_goal = true;
    } else {
      for (int k = 0; k < kNumActions; ++k) lab.mask.set(action_at(k), l.at(k).get<int>() != 0);
    }
    labels.push_back(lab);
  }
  return {std::move(traj), std::move(labels)};
}

}  // namespace agl
