#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fusionbench/model.hpp"

namespace fusion::ckpt {

// Checkpoint byte format, all integers little-endian:
//   magic "FZCP", version u16, count u32, then per parameter:
//   name length u16, name bytes, rank u8, extents u32 each, f32 payload.
std::vector<std::uint8_t> encode(const model::ParamList& params);
model::ParamList decode(std::span<const std::uint8_t> bytes);

void save(const std::string& path, const model::ParamList& params);
model::ParamList load(const std::string& path);

}  // namespace fusion::ckpt
