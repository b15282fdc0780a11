#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <json.hpp>

#include "citras/dataset.hpp"
#include "citras/model.hpp"
#include "citras/training.hpp"

namespace citras {

inline constexpr std::uint64_t kDefaultSeed = 2021;

struct DataConfig {
    // Either a CSV file with its role manifest, or a synthetic generator spec.
    std::optional<std::filesystem::path> csv;
    std::optional<std::filesystem::path> manifest;
    nlohmann::json synthetic;  // null when csv is used
    SplitSizes split;
    std::size_t lookback = 168;
    std::size_t horizon = 24;
    std::size_t stride = 1;
    std::vector<std::size_t> horizons;  // evaluation horizons; defaults to {horizon}
    bool standardize = true;            // z-score every column with training-split statistics
};

struct ProbeConfig {
    std::vector<std::size_t> variates{1, 2, 4, 8};
    std::vector<std::size_t> steps{2, 4, 8, 16};
};

struct RunConfig {
    std::uint64_t seed = kDefaultSeed;
    DataConfig data;
    CitrasConfig model;
    TrainConfig train;  // train.seed mirrors the top-level seed
    std::vector<double> alpha_grid;  // when non-empty, `train` keeps the alpha with the best validation loss
    std::filesystem::path output_dir = "citras_out";
    ProbeConfig probe;

    void validate() const;
    nlohmann::json to_json() const;
    // Relative data paths resolve against `base_dir`.
    static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
};

RunConfig parse_config(const std::filesystem::path& path);

}  // namespace citras
