#pragma once

#include <cstdint>

#include <json.hpp>

#include "citras/dataset.hpp"

namespace citras {

// Target y_t equals a known covariate z_t drawn as standard white noise.
// Only a model that reads the covariate's future patch can forecast it.
SeriesFrame copy_covariate_frame(std::size_t length, std::uint64_t seed);

// Single target repeating a random pattern of length `period`, plus small
// Gaussian noise; with period == P each patch equals the previous one.
SeriesFrame periodic_frame(std::size_t length, std::size_t period, double noise, std::uint64_t seed);

// Random-walk plus seasonal series with the requested role counts.
SeriesFrame random_frame(std::size_t length, std::size_t targets, std::size_t observed, std::size_t known, std::uint64_t seed);

// Builds a frame from {"kind": "copy_covariate" | "periodic" | "random", ...}.
SeriesFrame synthetic_frame(const nlohmann::json& spec);

}  // namespace citras
