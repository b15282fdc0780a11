#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "citras/inference.hpp"
#include "citras/run_config.hpp"

namespace citras {

// Data prepared for one run: the (optionally standardized) frame, its split
// and the train / val / test windows.
struct Experiment {
    SeriesFrame frame;
    ChronologicalSplit split;
    std::optional<Standardizer> scaler;
    ExperimentData windows;
};

Experiment load_experiment(const RunConfig& config);

// Writes via a sibling temp file and rename; IoError on failure.
void write_atomic(const std::filesystem::path& path, const std::string& content);

// Stable JSON text: two-space indent, trailing newline.
std::string dump_json(const nlohmann::json& j);

struct TrainOutcome {
    CitrasParams params;
    TrainHistory history;
    nlohmann::json report;
};

// Trains one model, or one per alpha_grid entry keeping the best validation loss.
TrainOutcome train_model(const RunConfig& config, const Experiment& experiment, std::size_t threads, bool verbose = false);

// CSV tables written by the CLI.
std::string horizons_csv(const EvalReport& report);
std::string steps_csv(const EvalReport& report);

// Entry point of the `citras` executable. Exit codes: 0 success,
// 1 validation error, 2 runtime error.
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, char** argv);

}  // namespace citras
