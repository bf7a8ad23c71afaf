#include "agl/worlds.hpp"

#include <algorithm>

#include "agl/error.hpp"

namespace agl {

WorldSpec WorldSet::world(int index) const {
  if (index < 0 || index >= count) throw ContractViolation("WorldSet: world index out of range");
  WorldSpec w;
  w.grid = grid;
  w.seed = mix_seed(seed, tag, {static_cast<std::uint64_t>(index)});
  w.style = style;
  w.embed_dim = embed_dim;
  w.noise_sigma = noise_sigma;
  return w;
}

nlohmann::json to_json(const WorldSet& s) {
  return {{"rows", s.grid.rows},           {"cols", s.grid.cols},
          {"style", to_string(s.style)},   {"count", s.count},
          {"seed", s.seed},                {"tag", s.tag},
          {"embed_dim", s.embed_dim},      {"noise_sigma", s.noise_sigma}};
}

WorldSet world_set_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known{"rows", "cols", "style", "count", "seed", "tag", "embed_dim",
                                              "noise_sigma"};
  for (const auto& [key, value] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("unknown key '" + key + "' in world section");
  WorldSet s;
  try {
    s.grid.rows = j.value("rows", s.grid.rows);
    s.grid.cols = j.value("cols", s.grid.cols);
    s.style = parse_world_style(j.value("style", std::string(to_string(s.style))));
    s.count = j.value("count", s.count);
    s.seed = j.value("seed", s.seed);
    s.tag = j.value("tag", s.tag);
    s.embed_dim = j.value("embed_dim", s.embed_dim);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("world section: ") + e.what());
  }
  if (s.count < 1) throw ConfigError("world section: count must be >= 1");
  try {
    validate(s.world(0));
  } catch (const ContractViolation& e) {
    throw ConfigError(std::string("world section: ") + e.what());
  }
  return s;
}

WorldBank::WorldBank(const WorldSet& set) : set_(set) {
  for (int i = 0; i < set.count; ++i) {
    specs_.push_back(set.world(i));
    tables_.emplace_back(specs_.back());
    std::vector<Embedding> goals;
    for (int r = 0; r < set.grid.rows; ++r)
      for (int c = 0; c < set.grid.cols; ++c)
        for (GoalModality m : kAllModalities) goals.push_back(gen_goal_embedding(specs_.back(), {r, c}, m));
    goals_.push_back(std::move(goals));
  }
}

const Embedding& WorldBank::goal(int i, Cell c, GoalModality m) const {
  if (!in_grid(set_.grid, c)) throw ContractViolation("WorldBank::goal: cell outside grid");
  const auto cell = static_cast<std::size_t>(c.row * set_.grid.cols + c.col);
  return goals_.at(static_cast<std::size_t>(i))[cell * 3 + static_cast<std::size_t>(m)];
}

}  // namespace agl
