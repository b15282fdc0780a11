#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include <json.hpp>

#include "citras/autodiff.hpp"
#include "citras/dataset.hpp"
#include "citras/params.hpp"

namespace citras {

struct CitrasConfig {
    std::size_t layers = 1;
    std::size_t d_model = 128;
    std::size_t heads = 8;
    std::size_t d_ff = 512;
    std::size_t patch = 24;
    double alpha = 0.2;  // smoothing factor, shared by every cross-variate layer and head
    bool use_kv_shift = true;
    bool use_ass = true;
    bool stationarize = true;
    double rope_base = 10000.0;
    double eps_norm = 1e-5;
    double eps_std = 1e-5;
    double dropout = 0.0;
    double init_std = 0.02;

    std::size_t head_dim() const { return d_model / heads; }
    void validate() const;

    nlohmann::json to_json() const;
    // Missing keys keep their defaults; d_ff defaults to 4 * d_model.
    static CitrasConfig from_json(const nlohmann::json& j);
    friend bool operator==(const CitrasConfig&, const CitrasConfig&) = default;
};

// Learnable weights plus the configuration they were built for.
struct CitrasParams {
    CitrasConfig config;
    ParamStore store;

    static CitrasParams init(const CitrasConfig& config, std::uint64_t seed);
    // Registers every parameter with zero values; used by checkpoint loading.
    static CitrasParams zeros(const CitrasConfig& config);
};

// Per-variate mean / std over the T lookback rows, floored at eps_std.
struct StationarizationStats {
    std::vector<double> target_mean, target_std;
    std::vector<double> observed_mean, observed_std;
    std::vector<double> known_mean, known_std;
};

std::pair<Window, StationarizationStats> stationarize(const Window& window, double eps_std);
StationarizationStats identity_stats(const Window& window);

// Token embeddings per role; each entry is one variate's [N_role x D] matrix.
struct TokenGrid {
    std::vector<Var> target;
    std::vector<Var> observed;
    std::vector<Var> known;

    std::size_t variate_count() const { return target.size() + observed.size() + known.size(); }
};

// Cross-variate attention scores for one (layer, head, step).
struct ScoreRecord {
    Tensor raw;       // C_tgt x C_all, before smoothing
    Tensor smoothed;  // after the EMA over steps
    Tensor weights;   // softmax(smoothed / sqrt(d_k))
};

class AttentionTrace {
public:
    AttentionTrace() = default;
    AttentionTrace(std::size_t layers, std::size_t heads, std::size_t steps);

    std::size_t layers() const noexcept { return layers_; }
    std::size_t heads() const noexcept { return heads_; }
    std::size_t steps() const noexcept { return steps_; }
    bool empty() const noexcept { return records_.empty(); }

    ScoreRecord& at(std::size_t layer, std::size_t head, std::size_t step);
    const ScoreRecord& at(std::size_t layer, std::size_t head, std::size_t step) const;

private:
    std::size_t layers_ = 0, heads_ = 0, steps_ = 0;
    std::vector<ScoreRecord> records_;
};

struct AttentionVars {
    Var wq, wk, wv, wo, bo;
};

struct FfnVars {
    Var w1, b1, w2, b2;
};

struct NormVars {
    Var gamma, beta;
};

struct BlockVars {
    AttentionVars attn;
    NormVars norm1;
    FfnVars ffn;
    NormVars norm2;
};

struct LayerVars {
    BlockVars time;     // shared by every variate of every role
    BlockVars variate;  // queries from targets only
};

// Leaf variables for every parameter, bound once per graph.
struct ModelVars {
    Var embed_w, embed_b;
    std::vector<LayerVars> layers;
    Var proj_w, proj_b;

    static ModelVars bind(const ParamStore& store, const CitrasConfig& config);
};

// Multiply-accumulate counters for the two attention paths, per thread.
struct OpCounts {
    std::uint64_t cross_time_macs = 0;
    std::uint64_t cross_variate_macs = 0;
};
OpCounts& op_counts() noexcept;
void reset_op_counts() noexcept;

struct ForwardContext {
    bool record_trace = false;
    std::mt19937_64* dropout_rng = nullptr;  // null disables dropout
};

Var embed(const Var& patches, const Var& weight, const Var& bias);
Var apply_rope(const Var& x, double base);

Var cross_time_block(const Var& tokens, const BlockVars& block, const CitrasConfig& config, const ForwardContext& ctx = {});

// Keys and values for patch step i (0-based). With the shift on, the value
// slots of known covariates come from step i + 1.
std::pair<Var, Var> assemble_kv(std::size_t step, const TokenGrid& grid, bool use_kv_shift);

// Unscaled per-head scores (queries W_q)(keys W_k)^T, one [C_tgt x C_all] per head.
std::vector<Var> raw_scores(const Var& queries, const Var& keys, const Var& w_q, const Var& w_k, std::size_t heads);

// A_1 = raw_1, A_i = alpha * raw_i + (1 - alpha) * A_{i-1}.
std::vector<Tensor> smooth_scores(const std::vector<Tensor>& raw, double alpha);

// Updates grid.target in place; covariate tokens are left untouched.
void cross_variate_block(TokenGrid& grid, const BlockVars& block, const CitrasConfig& config, const ForwardContext& ctx = {},
                         AttentionTrace* trace = nullptr, std::size_t layer = 0);

// Next-patch values for one target variate, de-normalized with (mean, std).
Tensor project(const Tensor& token, const Tensor& weight, const Tensor& bias, double mean, double std);

struct GraphOutput {
    std::vector<Var> normalized;  // per target variate, N_tgt x P, stationarized units
    StationarizationStats stats;
    Window normalized_window;
    AttentionTrace trace;
};

GraphOutput forward_graph(const Window& window, const CitrasConfig& config, const ModelVars& vars, const ForwardContext& ctx = {});

struct ForwardResult {
    Tensor predictions;  // N_tgt x C_tgt x P, raw units; step i predicts patch i + 1
    AttentionTrace trace;
    StationarizationStats stats;
};

ForwardResult forward(const Window& window, const CitrasParams& params, bool record_trace = false);

// Divisibility and alignment checks shared by forward() and the data path.
void check_window(const Window& window, const CitrasConfig& config);

}  // namespace citras
