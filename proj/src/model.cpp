#include "citras/model.hpp"

#include <cmath>
#include <string>

#include "citras/errors.hpp"

namespace citras {

void CitrasConfig::validate() const {
    if (layers < 1 || d_model < 1 || heads < 1 || d_ff < 1 || patch < 1) throw ConfigError("model dimensions must all be >= 1");
    if (d_model % heads != 0) {
        throw ConfigError("d_model=" + std::to_string(d_model) + " must be divisible by heads=" + std::to_string(heads));
    }
    if (head_dim() % 2 != 0) throw ConfigError("head dimension d_model/heads=" + std::to_string(head_dim()) + " must be even for rotary embedding");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in (0,1]");
    if (!(rope_base > 0.0)) throw ConfigError("rope_base must be > 0");
    if (!(eps_norm > 0.0)) throw ConfigError("eps_norm must be > 0");
    if (!(eps_std > 0.0)) throw ConfigError("eps_std must be > 0");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0,1)");
    if (!(init_std >= 0.0)) throw ConfigError("init_std must be >= 0");
}

nlohmann::json CitrasConfig::to_json() const {
    return {{"layers", layers},       {"d_model", d_model},     {"heads", heads},
            {"d_ff", d_ff},           {"patch", patch},         {"alpha", alpha},
            {"use_kv_shift", use_kv_shift}, {"use_ass", use_ass}, {"stationarize", stationarize},
            {"rope_base", rope_base}, {"eps_norm", eps_norm},   {"eps_std", eps_std},
            {"dropout", dropout},     {"init_std", init_std}};
}

CitrasConfig CitrasConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("model section must be a JSON object");
    CitrasConfig c;
    auto get = [&](const char* key, auto& field) {
        if (!j.contains(key)) return;
        try {
            j.at(key).get_to(field);
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(std::string("model key '") + key + "' has the wrong type");
        }
    };
    static const char* known_keys[] = {"layers", "d_model", "heads", "d_ff", "patch", "alpha", "use_kv_shift", "use_ass",
                                       "stationarize", "rope_base", "eps_norm", "eps_std", "dropout", "init_std"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known_keys) ok = ok || it.key() == k;
        if (!ok) throw ConfigError("unknown model key '" + it.key() + "'");
    }
    get("layers", c.layers);
    get("d_model", c.d_model);
    get("heads", c.heads);
    c.d_ff = 4 * c.d_model;
    get("d_ff", c.d_ff);
    get("patch", c.patch);
    get("alpha", c.alpha);
    get("use_kv_shift", c.use_kv_shift);
    get("use_ass", c.use_ass);
    get("stationarize", c.stationarize);
    get("rope_base", c.rope_base);
    get("eps_norm", c.eps_norm);
    get("eps_std", c.eps_std);
    get("dropout", c.dropout);
    get("init_std", c.init_std);
    c.validate();
    return c;
}

namespace {

struct ParamSpec {
    std::string name;
    Shape shape;
    enum class Init { normal, zeros, ones } init;
};

std::vector<ParamSpec> param_specs(const CitrasConfig& c) {
    using I = ParamSpec::Init;
    const std::size_t D = c.d_model, F = c.d_ff, P = c.patch;
    std::vector<ParamSpec> specs;
    specs.push_back({"embed.weight", {P, D}, I::normal});
    specs.push_back({"embed.bias", {D}, I::zeros});
    for (std::size_t l = 0; l < c.layers; ++l) {
        for (const char* block : {"time", "variate"}) {
            const std::string p = "layers." + std::to_string(l) + "." + block + ".";
            specs.push_back({p + "attn.wq", {D, D}, I::normal});
            specs.push_back({p + "attn.wk", {D, D}, I::normal});
            specs.push_back({p + "attn.wv", {D, D}, I::normal});
            specs.push_back({p + "attn.wo", {D, D}, I::normal});
            specs.push_back({p + "attn.bo", {D}, I::zeros});
            specs.push_back({p + "norm1.gamma", {D}, I::ones});
            specs.push_back({p + "norm1.beta", {D}, I::zeros});
            specs.push_back({p + "ffn.w1", {D, F}, I::normal});
            specs.push_back({p + "ffn.b1", {F}, I::zeros});
            specs.push_back({p + "ffn.w2", {F, D}, I::normal});
            specs.push_back({p + "ffn.b2", {D}, I::zeros});
            specs.push_back({p + "norm2.gamma", {D}, I::ones});
            specs.push_back({p + "norm2.beta", {D}, I::zeros});
        }
    }
    specs.push_back({"project.weight", {D, P}, I::normal});
    specs.push_back({"project.bias", {P}, I::zeros});
    return specs;
}

BlockVars bind_block(const ParamStore& store, const std::string& p) {
    BlockVars b;
    b.attn = {store.var(p + "attn.wq"), store.var(p + "attn.wk"), store.var(p + "attn.wv"), store.var(p + "attn.wo"),
              store.var(p + "attn.bo")};
    b.norm1 = {store.var(p + "norm1.gamma"), store.var(p + "norm1.beta")};
    b.ffn = {store.var(p + "ffn.w1"), store.var(p + "ffn.b1"), store.var(p + "ffn.w2"), store.var(p + "ffn.b2")};
    b.norm2 = {store.var(p + "norm2.gamma"), store.var(p + "norm2.beta")};
    return b;
}

thread_local OpCounts g_counts;

Var dropout(const Var& x, const CitrasConfig& config, const ForwardContext& ctx) {
    if (!ctx.dropout_rng || config.dropout <= 0.0) return x;
    std::bernoulli_distribution keep(1.0 - config.dropout);
    Tensor mask(x.shape());
    const double s = 1.0 / (1.0 - config.dropout);
    for (auto& v : mask.values()) v = keep(*ctx.dropout_rng) ? s : 0.0;
    return mul(x, constant(std::move(mask)));
}

// Post-norm residual feed-forward: LN(x + FFN(x)).
Var feed_forward_residual(const Var& x, const BlockVars& block, const CitrasConfig& config, const ForwardContext& ctx) {
    const Var hidden = relu(linear(x, block.ffn.w1, block.ffn.b1));
    const Var ff = dropout(linear(hidden, block.ffn.w2, block.ffn.b2), config, ctx);
    return layer_norm(add(x, ff), block.norm2.gamma, block.norm2.beta, config.eps_norm);
}

std::vector<double> column_stats_mean(const Columns& cols, std::size_t rows) {
    std::vector<double> out;
    for (const auto& c : cols) {
        double mu = 0.0;
        for (std::size_t t = 0; t < rows; ++t) mu += c[t];
        out.push_back(mu / static_cast<double>(rows));
    }
    return out;
}

std::vector<double> column_stats_std(const Columns& cols, const std::vector<double>& mean, std::size_t rows, double eps) {
    std::vector<double> out;
    for (std::size_t k = 0; k < cols.size(); ++k) {
        double var = 0.0;
        for (std::size_t t = 0; t < rows; ++t) var += (cols[k][t] - mean[k]) * (cols[k][t] - mean[k]);
        out.push_back(std::max(std::sqrt(var / static_cast<double>(rows)), eps));
    }
    return out;
}

void normalize_columns(Columns& cols, const std::vector<double>& mean, const std::vector<double>& std) {
    for (std::size_t k = 0; k < cols.size(); ++k) {
        for (double& v : cols[k]) v = (v - mean[k]) / std[k];
    }
}

}  // namespace

CitrasParams CitrasParams::init(const CitrasConfig& config, std::uint64_t seed) {
    config.validate();
    CitrasParams p;
    p.config = config;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (const auto& spec : param_specs(config)) {
        Tensor t(spec.shape, 0.0);
        switch (spec.init) {
            case ParamSpec::Init::normal:
                for (auto& v : t.values()) v = config.init_std * normal(rng);
                break;
            case ParamSpec::Init::ones: t.fill(1.0); break;
            case ParamSpec::Init::zeros: break;
        }
        p.store.add(spec.name, std::move(t));
    }
    return p;
}

CitrasParams CitrasParams::zeros(const CitrasConfig& config) {
    config.validate();
    CitrasParams p;
    p.config = config;
    for (const auto& spec : param_specs(config)) p.store.add(spec.name, Tensor(spec.shape, 0.0));
    return p;
}

ModelVars ModelVars::bind(const ParamStore& store, const CitrasConfig& config) {
    ModelVars v;
    v.embed_w = store.var("embed.weight");
    v.embed_b = store.var("embed.bias");
    for (std::size_t l = 0; l < config.layers; ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        v.layers.push_back({bind_block(store, p + "time."), bind_block(store, p + "variate.")});
    }
    v.proj_w = store.var("project.weight");
    v.proj_b = store.var("project.bias");
    return v;
}

OpCounts& op_counts() noexcept { return g_counts; }
void reset_op_counts() noexcept { g_counts = {}; }

AttentionTrace::AttentionTrace(std::size_t layers, std::size_t heads, std::size_t steps)
    : layers_(layers), heads_(heads), steps_(steps), records_(layers * heads * steps) {}

ScoreRecord& AttentionTrace::at(std::size_t layer, std::size_t head, std::size_t step) {
    if (layer >= layers_ || head >= heads_ || step >= steps_) throw ContractError("attention trace index out of range");
    return records_[(layer * heads_ + head) * steps_ + step];
}

const ScoreRecord& AttentionTrace::at(std::size_t layer, std::size_t head, std::size_t step) const {
    if (layer >= layers_ || head >= heads_ || step >= steps_) throw ContractError("attention trace index out of range");
    return records_[(layer * heads_ + head) * steps_ + step];
}

std::pair<Window, StationarizationStats> stationarize(const Window& window, double eps_std) {
    const std::size_t T = window.lookback();
    if (T < 2) throw ContractError("stationarization needs a lookback of at least 2 steps");
    StationarizationStats s;
    s.target_mean = column_stats_mean(window.lookback_target, T);
    s.target_std = column_stats_std(window.lookback_target, s.target_mean, T, eps_std);
    s.observed_mean = column_stats_mean(window.lookback_observed, T);
    s.observed_std = column_stats_std(window.lookback_observed, s.observed_mean, T, eps_std);
    s.known_mean = column_stats_mean(window.known_extended, T);
    s.known_std = column_stats_std(window.known_extended, s.known_mean, T, eps_std);

    Window out = window;
    normalize_columns(out.lookback_target, s.target_mean, s.target_std);
    normalize_columns(out.lookback_observed, s.observed_mean, s.observed_std);
    normalize_columns(out.known_extended, s.known_mean, s.known_std);
    return {std::move(out), std::move(s)};
}

StationarizationStats identity_stats(const Window& window) {
    StationarizationStats s;
    s.target_mean.assign(window.lookback_target.size(), 0.0);
    s.target_std.assign(window.lookback_target.size(), 1.0);
    s.observed_mean.assign(window.lookback_observed.size(), 0.0);
    s.observed_std.assign(window.lookback_observed.size(), 1.0);
    s.known_mean.assign(window.known_extended.size(), 0.0);
    s.known_std.assign(window.known_extended.size(), 1.0);
    return s;
}

Var embed(const Var& patches, const Var& weight, const Var& bias) { return linear(patches, weight, bias); }

Var apply_rope(const Var& x, double base) { return rope(x, base, 0); }

Var cross_time_block(const Var& tokens, const BlockVars& block, const CitrasConfig& config, const ForwardContext& ctx) {
    const std::size_t n = tokens.rows();
    const std::size_t dk = config.head_dim();
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
    const Mask mask = Mask::causal(n);

    const Var q = matmul(tokens, block.attn.wq);
    const Var k = matmul(tokens, block.attn.wk);
    const Var v = matmul(tokens, block.attn.wv);
    std::vector<Var> heads;
    heads.reserve(config.heads);
    for (std::size_t h = 0; h < config.heads; ++h) {
        const std::size_t b = h * dk, e = b + dk;
        const Var qh = rope(slice_cols(q, b, e), config.rope_base);
        const Var kh = rope(slice_cols(k, b, e), config.rope_base);
        const Var scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
        const Var weights = masked_softmax(scores, &mask);
        heads.push_back(matmul(weights, slice_cols(v, b, e)));
        g_counts.cross_time_macs += 2 * n * n * dk;
    }
    const Var attn = dropout(linear(concat_cols(heads), block.attn.wo, block.attn.bo), config, ctx);
    const Var mixed = layer_norm(add(tokens, attn), block.norm1.gamma, block.norm1.beta, config.eps_norm);
    return feed_forward_residual(mixed, block, config, ctx);
}

std::pair<Var, Var> assemble_kv(std::size_t step, const TokenGrid& grid, bool use_kv_shift) {
    std::vector<Var> keys, values;
    keys.reserve(grid.variate_count());
    values.reserve(grid.variate_count());
    auto row = [](const Var& m, std::size_t i) { return slice_rows(m, i, i + 1); };
    for (const auto& t : grid.target) {
        if (step >= t.rows()) throw AlignmentError("patch step " + std::to_string(step) + " beyond target tokens");
        keys.push_back(row(t, step));
        values.push_back(keys.back());
    }
    for (const auto& o : grid.observed) {
        if (step >= o.rows()) throw AlignmentError("patch step " + std::to_string(step) + " beyond observed tokens");
        keys.push_back(row(o, step));
        values.push_back(keys.back());
    }
    for (const auto& kn : grid.known) {
        const std::size_t value_step = use_kv_shift ? step + 1 : step;
        if (value_step >= kn.rows()) {
            throw AlignmentError("known covariate has " + std::to_string(kn.rows()) + " patches; step " + std::to_string(value_step) +
                                 " is required");
        }
        keys.push_back(row(kn, step));
        values.push_back(use_kv_shift ? row(kn, value_step) : keys.back());
    }
    return {concat_rows(keys), concat_rows(values)};
}

std::vector<Var> raw_scores(const Var& queries, const Var& keys, const Var& w_q, const Var& w_k, std::size_t heads) {
    const Var q = matmul(queries, w_q);
    const Var k = matmul(keys, w_k);
    const std::size_t dk = q.cols() / heads;
    std::vector<Var> out;
    out.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        out.push_back(matmul(slice_cols(q, h * dk, (h + 1) * dk), transpose(slice_cols(k, h * dk, (h + 1) * dk))));
        g_counts.cross_variate_macs += q.rows() * k.rows() * dk;
    }
    return out;
}

std::vector<Tensor> smooth_scores(const std::vector<Tensor>& raw, double alpha) {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in (0,1]");
    std::vector<Tensor> out;
    out.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (i == 0 || alpha == 1.0) {
            out.push_back(raw[i]);
            continue;
        }
        if (!raw[i].same_shape(raw[0])) throw DimensionError("smooth_scores: score matrices differ in shape");
        Tensor a(raw[i].shape());
        for (std::size_t k = 0; k < a.size(); ++k) a[k] = alpha * raw[i][k] + (1.0 - alpha) * out[i - 1][k];
        out.push_back(std::move(a));
    }
    return out;
}

void cross_variate_block(TokenGrid& grid, const BlockVars& block, const CitrasConfig& config, const ForwardContext& ctx,
                         AttentionTrace* trace, std::size_t layer) {
    const std::size_t c_tgt = grid.target.size();
    const std::size_t steps = grid.target.front().rows();
    const std::size_t dk = config.head_dim();
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
    const bool smoothing = config.use_ass && config.alpha < 1.0;

    std::vector<Var> smoothed(config.heads);
    std::vector<Var> query_rows, attended;
    query_rows.reserve(steps);
    attended.reserve(steps);
    for (std::size_t i = 0; i < steps; ++i) {
        std::vector<Var> q_rows;
        for (const auto& t : grid.target) q_rows.push_back(slice_rows(t, i, i + 1));
        const Var queries = concat_rows(q_rows);
        const auto [keys, values] = assemble_kv(i, grid, config.use_kv_shift);
        const std::vector<Var> raw = raw_scores(queries, keys, block.attn.wq, block.attn.wk, config.heads);
        const Var v = matmul(values, block.attn.wv);

        std::vector<Var> heads;
        heads.reserve(config.heads);
        for (std::size_t h = 0; h < config.heads; ++h) {
            const Var a = (smoothing && i > 0) ? add(scale(raw[h], config.alpha), scale(smoothed[h], 1.0 - config.alpha)) : raw[h];
            smoothed[h] = a;
            const Var weights = masked_softmax(scale(a, inv_sqrt));
            heads.push_back(matmul(weights, slice_cols(v, h * dk, (h + 1) * dk)));
            g_counts.cross_variate_macs += weights.rows() * weights.cols() * dk;
            if (trace) {
                ScoreRecord& rec = trace->at(layer, h, i);
                rec.raw = raw[h].value();
                rec.smoothed = a.value();
                rec.weights = weights.value();
            }
        }
        query_rows.push_back(queries);
        attended.push_back(concat_cols(heads));
    }

    // Rows are step-major: row i * C_tgt + c holds target c at step i.
    const Var x = concat_rows(query_rows);
    const Var attn = dropout(linear(concat_rows(attended), block.attn.wo, block.attn.bo), config, ctx);
    const Var mixed = layer_norm(add(x, attn), block.norm1.gamma, block.norm1.beta, config.eps_norm);
    const Var out = feed_forward_residual(mixed, block, config, ctx);

    for (std::size_t c = 0; c < c_tgt; ++c) {
        std::vector<Var> rows;
        rows.reserve(steps);
        for (std::size_t i = 0; i < steps; ++i) rows.push_back(slice_rows(out, i * c_tgt + c, i * c_tgt + c + 1));
        grid.target[c] = concat_rows(rows);
    }
}

Tensor project(const Tensor& token, const Tensor& weight, const Tensor& bias, double mean, double std) {
    Tensor out = linear(token, weight, bias);
    for (auto& v : out.values()) v = v * std + mean;
    return out.reshaped({out.size()});
}

void check_window(const Window& window, const CitrasConfig& config) {
    const std::size_t P = config.patch;
    const std::size_t T = window.lookback();
    if (window.lookback_target.empty()) throw ContractError("window has no target variates");
    if (T == 0 || T % P != 0) {
        throw DivisibilityError("lookback T=" + std::to_string(T) + " is not divisible by patch length P=" + std::to_string(P));
    }
    for (const auto& c : window.lookback_target) {
        if (c.size() != T) throw DimensionError("target lookback columns differ in length");
    }
    for (const auto& c : window.lookback_observed) {
        if (c.size() != T) throw DimensionError("observed lookback length " + std::to_string(c.size()) + " differs from T=" + std::to_string(T));
    }
    for (const auto& c : window.known_extended) {
        if (c.size() < T) throw AlignmentError("known covariate shorter than the lookback");
        if (c.size() % P != 0) {
            throw DivisibilityError("known covariate length " + std::to_string(c.size()) + " is not divisible by patch length P=" +
                                    std::to_string(P));
        }
        if (config.use_kv_shift && c.size() < T + P) {
            throw AlignmentError("KV shift needs known covariates through T+P=" + std::to_string(T + P) + " rows, got " +
                                 std::to_string(c.size()));
        }
    }
}

GraphOutput forward_graph(const Window& window, const CitrasConfig& config, const ModelVars& vars, const ForwardContext& ctx) {
    check_window(window, config);
    GraphOutput out;
    if (config.stationarize) {
        auto [normalized, stats] = stationarize(window, config.eps_std);
        out.normalized_window = std::move(normalized);
        out.stats = std::move(stats);
    } else {
        out.normalized_window = window;
        out.stats = identity_stats(window);
    }
    const Window& w = out.normalized_window;
    const std::size_t P = config.patch;

    auto tokens = [&](const Columns& cols) {
        std::vector<Var> grid_role;
        grid_role.reserve(cols.size());
        for (const auto& c : cols) grid_role.push_back(embed(constant(patchify(c, P)), vars.embed_w, vars.embed_b));
        return grid_role;
    };
    TokenGrid grid{tokens(w.lookback_target), tokens(w.lookback_observed), tokens(w.known_extended)};

    const std::size_t steps = w.lookback() / P;
    if (ctx.record_trace) out.trace = AttentionTrace(config.layers, config.heads, steps);

    for (std::size_t l = 0; l < config.layers; ++l) {
        const LayerVars& layer = vars.layers[l];
        for (auto* role : {&grid.target, &grid.observed, &grid.known}) {
            for (auto& t : *role) t = cross_time_block(t, layer.time, config, ctx);
        }
        cross_variate_block(grid, layer.variate, config, ctx, ctx.record_trace ? &out.trace : nullptr, l);
    }

    out.normalized.reserve(grid.target.size());
    for (const auto& t : grid.target) out.normalized.push_back(linear(t, vars.proj_w, vars.proj_b));
    return out;
}

ForwardResult forward(const Window& window, const CitrasParams& params, bool record_trace) {
    NoGradGuard guard;
    const ModelVars vars = ModelVars::bind(params.store, params.config);
    ForwardContext ctx;
    ctx.record_trace = record_trace;
    GraphOutput g = forward_graph(window, params.config, vars, ctx);

    const std::size_t c_tgt = g.normalized.size();
    const std::size_t steps = g.normalized.front().rows();
    const std::size_t P = params.config.patch;
    Tensor pred({steps, c_tgt, P});
    for (std::size_t c = 0; c < c_tgt; ++c) {
        const Tensor& norm = g.normalized[c].value();
        const double mu = g.stats.target_mean[c], sd = g.stats.target_std[c];
        for (std::size_t i = 0; i < steps; ++i) {
            for (std::size_t p = 0; p < P; ++p) pred[(i * c_tgt + c) * P + p] = norm.at(i, p) * sd + mu;
        }
    }
    return {std::move(pred), std::move(g.trace), std::move(g.stats)};
}

}  // namespace citras
