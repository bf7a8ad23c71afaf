#include "agl/agle.hpp"

#include <bit>

#include <json.hpp>

#include "agl/checkpoint.hpp"
#include "agl/error.hpp"

namespace agl {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& b, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[pos + i]) << (8 * i);
  return v;
}

struct Header {
  std::uint32_t version = 0, count = 0, dim = 0;
  std::size_t payload = 16;  // byte offset of the first float
};

// Returns the parsed pieces and records every problem in `issues`.
AgleFile parse_checked(const std::vector<std::uint8_t>& b, std::vector<std::string>& issues) {
  AgleFile f;
  if (b.size() < 16) {
    issues.push_back("truncated header: " + std::to_string(b.size()) + " bytes, need 16");
    return f;
  }
  if (!(b[0] == 'A' && b[1] == 'G' && b[2] == 'L' && b[3] == 'E')) issues.push_back("bad magic at byte 0");
  Header h{get_u32(b, 4), get_u32(b, 8), get_u32(b, 12)};
  if (h.version != kAgleVersion) issues.push_back("unsupported version " + std::to_string(h.version));
  if (h.dim == 0) issues.push_back("dim is zero");
  const std::size_t payload_bytes = std::size_t{h.count} * h.dim * 4;
  const std::size_t index_at = h.payload + payload_bytes;
  if (b.size() < index_at) {
    issues.push_back("truncated payload: expected " + std::to_string(payload_bytes) +
                     " bytes at offset 16, file ends at byte " + std::to_string(b.size()));
    return f;
  }
  f.rows.resize(h.count, h.dim);
  for (std::size_t k = 0; k < std::size_t{h.count} * h.dim; ++k)
    f.rows.data()[k] = std::bit_cast<float>(get_u32(b, h.payload + 4 * k));
  if (b.size() < index_at + 4) {
    issues.push_back("missing index length at byte " + std::to_string(index_at));
    return f;
  }
  const std::uint32_t len = get_u32(b, index_at);
  if (b.size() != index_at + 4 + len) {
    issues.push_back("index length " + std::to_string(len) + " inconsistent with file size " +
                     std::to_string(b.size()) + " (index starts at byte " + std::to_string(index_at + 4) + ")");
    if (b.size() < index_at + 4 + len) return f;
  }
  try {
    const auto j = nlohmann::json::parse(b.begin() + static_cast<long>(index_at + 4),
                                         b.begin() + static_cast<long>(index_at + 4 + len));
    if (!j.is_object()) throw ConfigError("index is not a JSON object");
    for (const auto& [key, value] : j.items()) {
      const auto row = value.get<std::int64_t>();
      if (row < 0 || row >= static_cast<std::int64_t>(h.count)) {
        issues.push_back("index entry '" + key + "' points to row " + std::to_string(row) +
                         " outside 0.." + std::to_string(h.count));
        continue;
      }
      f.index[key] = static_cast<std::uint32_t>(row);
    }
  } catch (const std::exception& e) {
    issues.push_back(std::string("malformed index JSON: ") + e.what());
    return f;
  }
  if (f.index.size() != h.count)
    issues.push_back("count " + std::to_string(h.count) + " does not match " +
                     std::to_string(f.index.size()) + " index entries");
  for (std::uint32_t r = 0; r < h.count; ++r) {
    const double n = f.rows.row(r).cast<double>().norm();
    if (!std::isfinite(n) || std::abs(n - 1.0) > kAgleNormTolerance)
      issues.push_back("row " + std::to_string(r) + " has norm " + std::to_string(n));
  }
  return f;
}

}  // namespace

Eigen::VectorXf AgleFile::row(const std::string& key) const {
  const auto it = index.find(key);
  if (it == index.end()) throw ConfigError("AGLE file has no entry '" + key + "'");
  return rows.row(it->second).transpose();
}

std::string cell_key(Cell c) { return "cell:" + std::to_string(c.row) + ":" + std::to_string(c.col); }

std::string goal_key(GoalModality m) { return "goal:" + std::string(to_string(m)); }

std::vector<std::uint8_t> serialize_agle(const AgleFile& file) {
  std::vector<std::uint8_t> out{'A', 'G', 'L', 'E'};
  put_u32(out, kAgleVersion);
  put_u32(out, static_cast<std::uint32_t>(file.rows.rows()));
  put_u32(out, static_cast<std::uint32_t>(file.rows.cols()));
  for (Eigen::Index k = 0; k < file.rows.size(); ++k)
    put_u32(out, std::bit_cast<std::uint32_t>(file.rows.data()[k]));
  nlohmann::json index = nlohmann::json::object();
  for (const auto& [key, row] : file.index) index[key] = row;
  const std::string text = index.dump();
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  return out;
}

AgleFile parse_agle(const std::vector<std::uint8_t>& bytes) {
  std::vector<std::string> issues;
  AgleFile f = parse_checked(bytes, issues);
  if (!issues.empty()) throw ConfigError("invalid AGLE file: " + issues.front());
  return f;
}

std::vector<std::string> validate_agle(const std::vector<std::uint8_t>& bytes) {
  std::vector<std::string> issues;
  parse_checked(bytes, issues);
  return issues;
}

AgleFile read_agle(const std::string& path) { return parse_agle(read_file_bytes(path)); }

void write_agle(const std::string& path, const AgleFile& file) {
  write_file_bytes(path, serialize_agle(file));
}

EmbeddingTable agle_embedding_table(const AgleFile& file, const GridSpec& grid) {
  Eigen::MatrixXf rows(grid.cell_count(), file.dim());
  for (int r = 0; r < grid.rows; ++r)
    for (int c = 0; c < grid.cols; ++c) rows.row(r * grid.cols + c) = file.row(cell_key({r, c})).transpose();
  return EmbeddingTable(grid, std::move(rows));
}

}  // namespace agl
