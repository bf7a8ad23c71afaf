#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "agl/nn/tensor.hpp"

namespace agl {

// AGLW checkpoint: "AGLW", u32 version, then per parameter (sorted by path):
// u16 path length, UTF-8 path, u8 rank, u32 dims, f32 payload. All little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const nn::ParamSet<float>& params);

// Parameters in file order.
nn::ParamSet<float> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

// Copies every parameter of `bytes` into the same path of `params`; the set of
// paths and every shape must match exactly.
void load_checkpoint_into(nn::ParamSet<float>& params, const std::vector<std::uint8_t>& bytes);

void write_checkpoint(const std::string& path, const nn::ParamSet<float>& params);
void read_checkpoint_into(const std::string& path, nn::ParamSet<float>& params);

std::uint64_t checkpoint_hash(const nn::ParamSet<float>& params);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace agl
