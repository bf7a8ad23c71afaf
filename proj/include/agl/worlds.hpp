#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "agl/oracle.hpp"

namespace agl {

// A family of synthetic worlds sharing grid, style and embedding settings.
struct WorldSet {
  GridSpec grid;
  WorldStyle style = WorldStyle::InformativeGradient;
  int count = 100;
  std::uint64_t seed = 0;
  std::string tag = "world";  // separates families drawn from one seed, e.g. train vs eval
  int embed_dim = 16;
  double noise_sigma = 0.1;

  WorldSpec world(int index) const;
};

nlohmann::json to_json(const WorldSet& set);
WorldSet world_set_from_json(const nlohmann::json& j);

// Precomputed patch and goal embeddings for every world of a set.
class WorldBank {
 public:
  WorldBank() = default;
  explicit WorldBank(const WorldSet& set);

  int size() const noexcept { return static_cast<int>(specs_.size()); }
  const WorldSet& set() const noexcept { return set_; }
  const WorldSpec& spec(int i) const { return specs_.at(static_cast<std::size_t>(i)); }
  const EmbeddingTable& table(int i) const { return tables_.at(static_cast<std::size_t>(i)); }
  const Embedding& goal(int i, Cell c, GoalModality m) const;

 private:
  WorldSet set_;
  std::vector<WorldSpec> specs_;
  std::vector<EmbeddingTable> tables_;
  std::vector<std::vector<Embedding>> goals_;  // [world][cell * 3 + modality]
};

inline constexpr GoalModality kAllModalities[3] = {GoalModality::Aerial, GoalModality::Ground,
                                                   GoalModality::Text};

}  // namespace agl
