// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "blora/params.hpp"

namespace blora {

// Binary container of named f64 tensors with shapes. All integers and
// doubles are serialized little-endian regardless of the host.
inline constexpr std::uint32_t kCheckpointMagic = 0x4b434c42u;  // "BLCK"
inline constexpr std::uint32_t kCheckpointVersion = 1u;
inline constexpr const char* kCheckpointSchema = "named-f64-tensors";

std::vector<std::uint8_t> serialize_params(const ParamStore& params);
ParamStore deserialize_params(const std::vector<std::uint8_t>& bytes);

// File writes go through a temporary sibling and a final rename.
void save_checkpoint(const std::string& path, const ParamStore& params);
ParamStore load_checkpoint(const std::string& path);

// Copies tensors into an existing store. Every destination name must be
// present with an identical shape, and no extra tensors may remain.
void restore_into(ParamStore& dst, const ParamStore& src);

}  // namespace blora
