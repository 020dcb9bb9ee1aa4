#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "anchorlab/nn/param_store.hpp"

namespace anchorlab::nn {

// AVCK1 checkpoint: magic "AVCK", u32 version=1, u32 param-count; per param
// (lexicographic): u16 name-length, UTF-8 name, u8 rank, u32 extents[rank],
// little-endian f32 payload.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const ParamStore& params);
// Throws FormatError with the failing byte offset.
ParamStore decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const ParamStore& params, const std::filesystem::path& path);
ParamStore load_checkpoint(const std::filesystem::path& path);

}  // namespace anchorlab::nn
