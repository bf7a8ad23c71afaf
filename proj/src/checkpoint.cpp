#include "agl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "agl/error.hpp"

namespace agl {

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size())
      throw ConfigError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const nn::ParamSet<float>& params) {
  std::vector<std::uint8_t> out{'A', 'G', 'L', 'W'};
  put_le<std::uint32_t>(out, kCheckpointVersion);
  for (std::size_t i : params.sorted_order()) {
    const auto& p = params[i];
    if (p.path.size() > 0xFFFF) throw ContractViolation("parameter path too long");
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(p.path.size()));
    out.insert(out.end(), p.path.begin(), p.path.end());
    out.push_back(static_cast<std::uint8_t>(p.rank));
    if (p.rank == 1) {
      put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.cols()));
    } else {
      put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.rows()));
      put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.cols()));
    }
    for (Eigen::Index k = 0; k < p.value.size(); ++k)
      put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(p.value.data()[k]));
  }
  return out;
}

nn::ParamSet<float> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.str(4) != "AGLW") throw ConfigError("not an AGLW checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw ConfigError("unsupported AGLW version " + std::to_string(version));
  nn::ParamSet<float> ps;
  while (!r.done()) {
    const auto len = r.get<std::uint16_t>();
    std::string path = r.str(len);
    const int rank = r.get<std::uint8_t>();
    if (rank != 1 && rank != 2)
      throw ConfigError("unsupported tensor rank " + std::to_string(rank) + " for " + path);
    Eigen::Index rows = 1, cols;
    if (rank == 2) rows = r.get<std::uint32_t>();
    cols = r.get<std::uint32_t>();
    const nn::ParamId id = ps.add(path, rows, cols, rank);
    auto& v = ps.value(id);
    for (Eigen::Index k = 0; k < v.size(); ++k) v.data()[k] = std::bit_cast<float>(r.get<std::uint32_t>());
  }
  return ps;
}

void load_checkpoint_into(nn::ParamSet<float>& params, const std::vector<std::uint8_t>& bytes) {
  const nn::ParamSet<float> loaded = deserialize_checkpoint(bytes);
  if (loaded.size() != params.size())
    throw ConfigError("checkpoint has " + std::to_string(loaded.size()) + " tensors, model expects " +
                      std::to_string(params.size()));
  for (const auto& p : loaded) {
    const auto id = params.find(p.path);
    if (!id) throw ConfigError("checkpoint tensor not in model: " + p.path);
    auto& dst = params.value(*id);
    if (dst.rows() != p.value.rows() || dst.cols() != p.value.cols())
      throw ConfigError("shape mismatch for " + p.path);
    dst = p.value;
  }
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact(path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

void write_checkpoint(const std::string& path, const nn::ParamSet<float>& params) {
  write_file_bytes(path, serialize_checkpoint(params));
}

void read_checkpoint_into(const std::string& path, nn::ParamSet<float>& params) {
  load_checkpoint_into(params, read_file_bytes(path));
}

std::uint64_t checkpoint_hash(const nn::ParamSet<float>& params) {
  const auto bytes = serialize_checkpoint(params);
  return fnv1a64(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

}  // namespace agl
