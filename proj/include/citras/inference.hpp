#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "citras/model.hpp"
#include "citras/training.hpp"

namespace citras {

struct RollingForecast {
    Columns predictions;  // C_tgt x S, raw units
    std::size_t iterations = 0;
};

// Generates ceil(S/P) patches by feeding each predicted last-step patch back
// into the target lookback, then truncates to S. Known covariates must cover
// T + ceil(S/P) * P rows; observed covariates allow a single iteration only.
RollingForecast rolling_forecast(const CitrasParams& params, const Window& window, std::size_t horizon);

struct HorizonMetrics {
    std::size_t horizon = 0;
    double mse = 0.0;
    double mae = 0.0;
    std::size_t windows = 0;
    std::size_t iterations = 0;
    std::vector<double> mse_by_step;  // per forecast position 1..horizon
    std::vector<double> mae_by_step;
};

struct EvalReport {
    std::vector<HorizonMetrics> horizons;
    nlohmann::json to_json() const;
};

// Forecasts max(horizons) once per window and scores every requested prefix.
// Windows must carry at least max(horizons) rows of ground truth.
EvalReport evaluate(const CitrasParams& params, std::span<const Window> windows, const std::vector<std::size_t>& horizons,
                    std::size_t threads = 1);

AttentionTrace attention_export(const CitrasParams& params, const Window& window);

// Column names: layer, head, step, query_variate, key_variate, raw, smoothed, weight.
std::string attention_csv(const AttentionTrace& trace, const std::vector<std::string>& query_names,
                          const std::vector<std::string>& key_names);

struct ExperimentData {
    std::vector<Window> train;
    std::vector<Window> val;
    std::vector<Window> test;
};

struct AblationResult {
    std::string variant;  // full, no_kv_shift, no_ass
    CitrasConfig config;
    TrainHistory history;
    EvalReport metrics;
};

// Trains the full model and the two single-mechanism ablations from the same
// seed and data, then evaluates each on the test windows.
std::vector<AblationResult> run_ablation(const ExperimentData& data, const CitrasConfig& base, const TrainConfig& train,
                                         const std::vector<std::size_t>& horizons, std::size_t threads = 1);

struct ComplexityRow {
    std::size_t variates = 0;  // one target plus (variates - 1) observed covariates
    std::size_t steps = 0;     // N, target patches per window
    std::uint64_t cross_variate_macs = 0;
    std::uint64_t cross_time_macs = 0;
};

// Multiply-accumulate counts of one forward pass for every (C, N) pair.
std::vector<ComplexityRow> complexity_probe(const CitrasConfig& config, const std::vector<std::size_t>& variates,
                                            const std::vector<std::size_t>& steps);

}  // namespace citras
