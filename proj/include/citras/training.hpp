#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "citras/model.hpp"

namespace citras {

struct TrainConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 10;
    std::size_t patience = 3;
    std::uint64_t seed = 2021;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::uint64_t step = 0;

    static AdamState for_params(const ParamStore& params);
};

// Bias-corrected Adam; every parameter must have received a gradient.
void adam_step(ParamStore& params, AdamState& state, const TrainConfig& cfg);

// Ground truth for step i is target patch i + 1: lookback patches 2..N, then
// the first horizon patch. Shape [N_tgt x C_tgt x P], raw units.
Tensor next_patch_targets(const Window& window, std::size_t patch);

// Mean squared error over every (step, variate, position), computed after
// normalizing both predictions and truth with the window statistics.
double next_patch_loss(const Tensor& predictions, const Window& window, const StationarizationStats& stats);

// Differentiable counterpart on a graph produced by forward_graph().
Var next_patch_loss(const GraphOutput& graph, const Window& window, std::size_t patch);

// Validation-loss bookkeeping for early stopping.
class EarlyStopping {
public:
    explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

    // Records one epoch; returns true when training should stop.
    bool update(double val_loss);
    bool improved() const noexcept { return improved_; }
    std::size_t best_epoch() const noexcept { return best_epoch_; }
    double best_loss() const noexcept { return best_loss_; }
    std::size_t epochs_seen() const noexcept { return epochs_; }

private:
    std::size_t patience_;
    std::size_t epochs_ = 0;
    std::size_t best_epoch_ = 0;  // 1-based, 0 until the first update
    std::size_t bad_epochs_ = 0;
    double best_loss_ = 0.0;
    bool improved_ = false;
};

struct TrainHistory {
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    std::size_t best_epoch = 0;  // 1-based
    std::string stop_reason;     // "early_stopping" or "max_epochs"

    nlohmann::json to_json() const;
};

struct FitOptions {
    std::size_t threads = 1;
    std::function<void(std::size_t epoch, double train_loss, double val_loss)> on_epoch;
};

// Mean next-patch loss over windows, no gradients.
double mean_loss(const CitrasParams& params, std::span<const Window> windows, std::size_t threads = 1);

// Loss of one mini-batch; gradients are added to params.store.
double batch_loss_and_grad(CitrasParams& params, std::span<const Window* const> batch, std::mt19937_64* dropout_rng = nullptr);

// Trains in place and leaves the best-validation parameters in `params`.
TrainHistory fit(CitrasParams& params, std::span<const Window> train, std::span<const Window> val, const TrainConfig& cfg,
                 const FitOptions& options = {});

}  // namespace citras
