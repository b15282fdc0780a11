#pragma once

#include <filesystem>
#include <optional>

#include "citras/model.hpp"

namespace citras {

// Binary container:
//   "CITRASCK" | u32 version | u64 header length | JSON header
//   u32 record count | per record: u32 name length, name, u32 rank,
//   u64 dims..., little-endian values
// The JSON header holds {"model": <config>, "dtype": "f64" | "f32"}.
enum class CheckpointDtype { f64, f32 };

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const CitrasParams& params, const std::filesystem::path& path,
                     CheckpointDtype dtype = CheckpointDtype::f64);

// With `expected` set, stored tensors must match the shapes it implies and
// the head count must agree; the returned params carry `expected`.
CitrasParams load_checkpoint(const std::filesystem::path& path, const std::optional<CitrasConfig>& expected = std::nullopt);

}  // namespace citras
