#include "citras/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "citras/errors.hpp"
#include "citras/parallel.hpp"

namespace citras {

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0,1)");
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (patience > max_epochs) throw ConfigError("patience must not exceed max_epochs");
}

nlohmann::json TrainConfig::to_json() const {
    return {{"lr", lr},
            {"betas", {beta1, beta2}},
            {"adam_eps", adam_eps},
            {"batch_size", batch_size},
            {"max_epochs", max_epochs},
            {"patience", patience},
            {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("train section must be a JSON object");
    TrainConfig c;
    for (auto it = j.begin(); it != j.end(); ++it) {
        static const char* keys[] = {"lr", "betas", "adam_eps", "batch_size", "max_epochs", "patience", "seed"};
        if (std::none_of(std::begin(keys), std::end(keys), [&](const char* k) { return it.key() == k; })) {
            throw ConfigError("unknown train key '" + it.key() + "'");
        }
    }
    try {
        if (j.contains("lr")) j.at("lr").get_to(c.lr);
        if (j.contains("betas")) {
            const auto& b = j.at("betas");
            if (!b.is_array() || b.size() != 2) throw ConfigError("train key 'betas' must be a two-element array");
            b.at(0).get_to(c.beta1);
            b.at(1).get_to(c.beta2);
        }
        if (j.contains("adam_eps")) j.at("adam_eps").get_to(c.adam_eps);
        if (j.contains("batch_size")) j.at("batch_size").get_to(c.batch_size);
        if (j.contains("max_epochs")) j.at("max_epochs").get_to(c.max_epochs);
        if (j.contains("patience")) j.at("patience").get_to(c.patience);
        if (j.contains("seed")) j.at("seed").get_to(c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("train section has a value of the wrong type: ") + e.what());
    }
    c.validate();
    return c;
}

AdamState AdamState::for_params(const ParamStore& params) {
    AdamState s;
    for (const auto& e : params) {
        s.m.emplace_back(e->value.shape(), 0.0);
        s.v.emplace_back(e->value.shape(), 0.0);
    }
    return s;
}

void adam_step(ParamStore& params, AdamState& state, const TrainConfig& cfg) {
    if (state.m.size() != params.size()) state = AdamState::for_params(params);
    for (const auto& e : params) {
        if (!e->has_grad) throw ContractError("parameter '" + e->name + "' has no gradient");
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    std::size_t k = 0;
    for (auto& e : params) {
        Tensor& m = state.m[k];
        Tensor& v = state.v[k];
        ++k;
        for (std::size_t i = 0; i < e->value.size(); ++i) {
            const double g = e->grad[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            e->value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
    }
}

Tensor next_patch_targets(const Window& window, std::size_t patch) {
    const std::size_t T = window.lookback();
    if (patch == 0 || T % patch != 0) throw DivisibilityError("lookback is not divisible by the patch length");
    if (window.horizon() < patch) {
        throw ContractError("next-patch targets need at least one horizon patch (S >= P), got S=" + std::to_string(window.horizon()));
    }
    const std::size_t steps = T / patch, c_tgt = window.lookback_target.size();
    Tensor out({steps, c_tgt, patch});
    for (std::size_t i = 0; i < steps; ++i) {
        for (std::size_t c = 0; c < c_tgt; ++c) {
            for (std::size_t p = 0; p < patch; ++p) {
                const std::size_t row = (i + 1) * patch + p;
                out[(i * c_tgt + c) * patch + p] = row < T ? window.lookback_target[c][row] : window.horizon_target[c][row - T];
            }
        }
    }
    return out;
}

double next_patch_loss(const Tensor& predictions, const Window& window, const StationarizationStats& stats) {
    if (predictions.rank() != 3) throw ContractError("predictions must be [N_tgt x C_tgt x P], got " + shape_string(predictions.shape()));
    const std::size_t patch = predictions.dim(2);
    const Tensor truth = next_patch_targets(window, patch);
    if (!truth.same_shape(predictions)) {
        throw ContractError("prediction shape " + shape_string(predictions.shape()) + " does not match targets " + shape_string(truth.shape()));
    }
    const std::size_t c_tgt = predictions.dim(1);
    if (stats.target_mean.size() != c_tgt) throw ContractError("statistics do not cover every target variate");
    double total = 0.0;
    for (std::size_t k = 0; k < predictions.size(); ++k) {
        const std::size_t c = (k / patch) % c_tgt;
        const double sd = stats.target_std[c], mu = stats.target_mean[c];
        const double r = (predictions[k] - mu) / sd - (truth[k] - mu) / sd;
        total += r * r;
    }
    return total / static_cast<double>(predictions.size());
}

Var next_patch_loss(const GraphOutput& graph, const Window& window, std::size_t patch) {
    const Tensor truth = next_patch_targets(window, patch);
    const std::size_t steps = truth.dim(0), c_tgt = truth.dim(1);
    if (graph.normalized.size() != c_tgt) throw ContractError("graph and window disagree on the target count");
    // Variate-major layout to match concat_rows of the per-variate predictions.
    Tensor target({c_tgt * steps, patch});
    for (std::size_t c = 0; c < c_tgt; ++c) {
        const double mu = graph.stats.target_mean[c], sd = graph.stats.target_std[c];
        for (std::size_t i = 0; i < steps; ++i) {
            for (std::size_t p = 0; p < patch; ++p) target.at(c * steps + i, p) = (truth[(i * c_tgt + c) * patch + p] - mu) / sd;
        }
    }
    return mean_squared_error(concat_rows(graph.normalized), target);
}

bool EarlyStopping::update(double val_loss) {
    ++epochs_;
    if (epochs_ == 1 || val_loss < best_loss_) {
        best_loss_ = val_loss;
        best_epoch_ = epochs_;
        bad_epochs_ = 0;
        improved_ = true;
    } else {
        ++bad_epochs_;
        improved_ = false;
    }
    return bad_epochs_ >= patience_ && patience_ > 0;
}

nlohmann::json TrainHistory::to_json() const {
    return {{"train_loss", train_loss}, {"val_loss", val_loss}, {"best_epoch", best_epoch}, {"stop_reason", stop_reason}};
}

double mean_loss(const CitrasParams& params, std::span<const Window> windows, std::size_t threads) {
    if (windows.empty()) throw ContractError("mean_loss over an empty window set");
    std::vector<double> losses(windows.size());
    parallel_for(windows.size(), threads, [&](std::size_t i) {
        NoGradGuard guard;
        const ModelVars vars = ModelVars::bind(params.store, params.config);
        const GraphOutput g = forward_graph(windows[i], params.config, vars);
        losses[i] = next_patch_loss(g, windows[i], params.config.patch).value()[0];
    });
    double total = 0.0;
    for (double l : losses) total += l;
    return total / static_cast<double>(losses.size());
}

double batch_loss_and_grad(CitrasParams& params, std::span<const Window* const> batch, std::mt19937_64* dropout_rng) {
    if (batch.empty()) throw ContractError("empty mini-batch");
    const ModelVars vars = ModelVars::bind(params.store, params.config);
    ForwardContext ctx;
    ctx.dropout_rng = dropout_rng;
    Var total;
    for (const Window* w : batch) {
        const GraphOutput g = forward_graph(*w, params.config, vars, ctx);
        const Var loss = next_patch_loss(g, *w, params.config.patch);
        total = total ? add(total, loss) : loss;
    }
    total = scale(total, 1.0 / static_cast<double>(batch.size()));
    backward(total, params.store);
    return total.value()[0];
}

TrainHistory fit(CitrasParams& params, std::span<const Window> train, std::span<const Window> val, const TrainConfig& cfg,
                 const FitOptions& options) {
    cfg.validate();
    if (train.empty()) throw ContractError("fit needs at least one training window");
    if (val.empty()) throw ContractError("fit needs at least one validation window");

    std::mt19937_64 shuffle_rng(cfg.seed);
    std::mt19937_64 dropout_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    AdamState adam = AdamState::for_params(params.store);
    EarlyStopping stopper(cfg.patience);
    TrainHistory history;
    std::vector<Tensor> best = params.store.snapshot();

    std::vector<std::size_t> order(train.size());
    std::vector<const Window*> batch;
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double weighted = 0.0;
        for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
            batch.clear();
            for (std::size_t k = b; k < std::min(order.size(), b + cfg.batch_size); ++k) batch.push_back(&train[order[k]]);
            params.store.zero_grad();
            weighted += batch_loss_and_grad(params, batch, &dropout_rng) * static_cast<double>(batch.size());
            adam_step(params.store, adam, cfg);
        }
        const double train_loss = weighted / static_cast<double>(train.size());
        const double val_loss = mean_loss(params, val, options.threads);
        history.train_loss.push_back(train_loss);
        history.val_loss.push_back(val_loss);
        if (options.on_epoch) options.on_epoch(epoch, train_loss, val_loss);

        const bool stop = stopper.update(val_loss);
        if (stopper.improved()) best = params.store.snapshot();
        if (stop) {
            history.stop_reason = "early_stopping";
            break;
        }
    }
    if (history.stop_reason.empty()) history.stop_reason = "max_epochs";
    history.best_epoch = stopper.best_epoch();
    params.store.restore(best);
    params.store.zero_grad();
    return history;
}

}  // namespace citras
