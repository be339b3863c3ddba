#pragma once

// Binary checkpoint, little-endian:
//   "MDFC" | u32 version | u8 variant | u16 D | u16 classes | u16 working resolution
//   | u16 trunk layer count | u16 head layer count
//   | layer table (trunk, then head template): u8 kind, u16 in, out, kh, kw, stride, padding
//   | f32 weights then f32 bias of every weighted layer: trunk, then heads 0..n-1
//   | u32 CRC-32 of all preceding bytes

#include <cstdint>
#include <string>
#include <vector>

#include "mdseg/model.hpp"

namespace mdseg {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const ModelParams& params);
/// Throws FormatError (with byte offset) on bad magic, version, layer table, truncation or CRC.
ModelParams decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

}  // namespace mdseg
