#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "agl/env.hpp"
#include "agl/oracle.hpp"

namespace agl {

// AGLE embedding file: "AGLE", u32 version, u32 count, u32 dim, count x dim f32
// row-major, then u32 byte length and a UTF-8 JSON object mapping keys
// ("cell:r:c", "goal:aerial", "goal:ground", "goal:text") to row indices.
inline constexpr std::uint32_t kAgleVersion = 1;
inline constexpr double kAgleNormTolerance = 1e-4;

struct AgleFile {
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows;
  std::map<std::string, std::uint32_t> index;

  int dim() const noexcept { return static_cast<int>(rows.cols()); }
  Eigen::VectorXf row(const std::string& key) const;
};

std::string cell_key(Cell c);
std::string goal_key(GoalModality m);

std::vector<std::uint8_t> serialize_agle(const AgleFile& file);
// Structural parse only; throws ConfigError with a byte offset on truncation.
AgleFile parse_agle(const std::vector<std::uint8_t>& bytes);

// Every violation found, empty when valid: magic, version, sizes, norms, index.
std::vector<std::string> validate_agle(const std::vector<std::uint8_t>& bytes);

AgleFile read_agle(const std::string& path);
void write_agle(const std::string& path, const AgleFile& file);

// Cell rows arranged as an embedding table for `grid`; every cell key must exist.
EmbeddingTable agle_embedding_table(const AgleFile& file, const GridSpec& grid);

}  // namespace agl
