#include "citras/inference.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "citras/errors.hpp"
#include "citras/parallel.hpp"

namespace citras {

RollingForecast rolling_forecast(const CitrasParams& params, const Window& window, std::size_t horizon) {
    const std::size_t P = params.config.patch;
    const std::size_t T = window.lookback();
    if (horizon == 0) throw ContractError("forecast horizon must be >= 1");
    const std::size_t iterations = (horizon + P - 1) / P;
    if (!window.lookback_observed.empty() && iterations > 1) {
        throw UnsupportedError("recursive forecasting beyond one patch is unsupported with observed covariates (S=" +
                               std::to_string(horizon) + ", P=" + std::to_string(P) + ")");
    }
    const std::size_t known_needed = T + iterations * P;
    for (const auto& k : window.known_extended) {
        if (k.size() < known_needed) {
            throw AlignmentError("known covariates cover " + std::to_string(k.size()) + " rows; forecasting S=" + std::to_string(horizon) +
                                 " needs " + std::to_string(known_needed));
        }
    }

    const std::size_t c_tgt = window.lookback_target.size();
    Columns history = window.lookback_target;
    RollingForecast out;
    out.predictions.assign(c_tgt, {});
    for (std::size_t k = 0; k < iterations; ++k) {
        Window step;
        step.origin = window.origin + k * P;
        for (const auto& h : history) step.lookback_target.emplace_back(h.end() - static_cast<std::ptrdiff_t>(T), h.end());
        step.lookback_observed = window.lookback_observed;
        for (const auto& kn : window.known_extended) {
            step.known_extended.emplace_back(kn.begin() + static_cast<std::ptrdiff_t>(k * P),
                                             kn.begin() + static_cast<std::ptrdiff_t>(k * P + T + P));
        }
        const ForwardResult r = forward(step, params);
        const std::size_t last = r.predictions.dim(0) - 1;
        for (std::size_t c = 0; c < c_tgt; ++c) {
            for (std::size_t p = 0; p < P; ++p) {
                const double v = r.predictions[(last * c_tgt + c) * P + p];
                history[c].push_back(v);
                out.predictions[c].push_back(v);
            }
        }
    }
    for (auto& c : out.predictions) c.resize(horizon);
    out.iterations = iterations;
    return out;
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& h : horizons) {
        arr.push_back({{"horizon", h.horizon},
                       {"mse", h.mse},
                       {"mae", h.mae},
                       {"windows", h.windows},
                       {"iterations", h.iterations},
                       {"mse_by_step", h.mse_by_step},
                       {"mae_by_step", h.mae_by_step}});
    }
    return arr;
}

namespace {

// Order-independent sum: sorting first makes the result a function of the
// multiset of terms only.
double stable_sum(std::vector<double> terms) {
    std::sort(terms.begin(), terms.end());
    double total = 0.0;
    for (double t : terms) total += t;
    return total;
}

}  // namespace

EvalReport evaluate(const CitrasParams& params, std::span<const Window> windows, const std::vector<std::size_t>& horizons,
                    std::size_t threads) {
    if (windows.empty()) throw ContractError("evaluate needs at least one test window");
    if (horizons.empty()) throw ContractError("evaluate needs at least one horizon");
    const std::size_t max_h = *std::max_element(horizons.begin(), horizons.end());
    for (const auto& w : windows) {
        if (w.horizon() < max_h) {
            throw ContractError("test window at origin " + std::to_string(w.origin) + " holds " + std::to_string(w.horizon()) +
                                " truth rows, horizon " + std::to_string(max_h) + " requested");
        }
    }

    std::vector<RollingForecast> forecasts(windows.size());
    parallel_for(windows.size(), threads, [&](std::size_t i) { forecasts[i] = rolling_forecast(params, windows[i], max_h); });

    const std::size_t c_tgt = windows.front().horizon_target.size();
    EvalReport report;
    for (std::size_t h : horizons) {
        if (h == 0) throw ContractError("horizons must be >= 1");
        HorizonMetrics m;
        m.horizon = h;
        m.windows = windows.size();
        m.iterations = (h + params.config.patch - 1) / params.config.patch;
        std::vector<std::vector<double>> sq_terms(h), abs_terms(h);
        for (std::size_t w = 0; w < windows.size(); ++w) {
            for (std::size_t c = 0; c < c_tgt; ++c) {
                for (std::size_t t = 0; t < h; ++t) {
                    const double r = forecasts[w].predictions[c][t] - windows[w].horizon_target[c][t];
                    sq_terms[t].push_back(r * r);
                    abs_terms[t].push_back(std::abs(r));
                }
            }
        }
        std::vector<double> sq_all, abs_all;
        const double per_step = static_cast<double>(windows.size() * c_tgt);
        for (std::size_t t = 0; t < h; ++t) {
            m.mse_by_step.push_back(stable_sum(sq_terms[t]) / per_step);
            m.mae_by_step.push_back(stable_sum(abs_terms[t]) / per_step);
            sq_all.insert(sq_all.end(), sq_terms[t].begin(), sq_terms[t].end());
            abs_all.insert(abs_all.end(), abs_terms[t].begin(), abs_terms[t].end());
        }
        const double n = static_cast<double>(sq_all.size());
        m.mse = stable_sum(std::move(sq_all)) / n;
        m.mae = stable_sum(std::move(abs_all)) / n;
        report.horizons.push_back(std::move(m));
    }
    return report;
}

AttentionTrace attention_export(const CitrasParams& params, const Window& window) {
    return forward(window, params, true).trace;
}

std::string attention_csv(const AttentionTrace& trace, const std::vector<std::string>& query_names,
                          const std::vector<std::string>& key_names) {
    std::ostringstream out;
    out.precision(17);
    out << "layer,head,step,query_variate,key_variate,raw,smoothed,weight\n";
    for (std::size_t l = 0; l < trace.layers(); ++l) {
        for (std::size_t h = 0; h < trace.heads(); ++h) {
            for (std::size_t i = 0; i < trace.steps(); ++i) {
                const ScoreRecord& rec = trace.at(l, h, i);
                const std::size_t nq = rec.raw.rows(), nk = rec.raw.cols();
                for (std::size_t q = 0; q < nq; ++q) {
                    for (std::size_t k = 0; k < nk; ++k) {
                        out << l << ',' << h << ',' << i << ',' << (q < query_names.size() ? query_names[q] : std::to_string(q)) << ','
                            << (k < key_names.size() ? key_names[k] : std::to_string(k)) << ',' << rec.raw.at(q, k) << ','
                            << rec.smoothed.at(q, k) << ',' << rec.weights.at(q, k) << '\n';
                    }
                }
            }
        }
    }
    return out.str();
}

std::vector<AblationResult> run_ablation(const ExperimentData& data, const CitrasConfig& base, const TrainConfig& train,
                                         const std::vector<std::size_t>& horizons, std::size_t threads) {
    std::vector<AblationResult> out;
    for (const char* variant : {"full", "no_kv_shift", "no_ass"}) {
        CitrasConfig cfg = base;
        cfg.use_kv_shift = std::string(variant) != "no_kv_shift";
        cfg.use_ass = std::string(variant) != "no_ass";
        CitrasParams params = CitrasParams::init(cfg, train.seed);
        FitOptions options;
        options.threads = threads;
        AblationResult r;
        r.variant = variant;
        r.config = cfg;
        r.history = fit(params, data.train, data.val, train, options);
        r.metrics = evaluate(params, data.test, horizons, threads);
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<ComplexityRow> complexity_probe(const CitrasConfig& config, const std::vector<std::size_t>& variates,
                                            const std::vector<std::size_t>& steps) {
    config.validate();
    const CitrasParams params = CitrasParams::init(config, 0);
    std::mt19937_64 rng(0);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<ComplexityRow> rows;
    for (std::size_t c : variates) {
        if (c == 0) throw ContractError("complexity probe needs at least one variate");
        for (std::size_t n : steps) {
            if (n == 0) throw ContractError("complexity probe needs at least one patch step");
            const std::size_t T = n * config.patch;
            Window w;
            w.lookback_target.assign(1, std::vector<double>(T));
            w.lookback_observed.assign(c - 1, std::vector<double>(T));
            for (auto* cols : {&w.lookback_target, &w.lookback_observed}) {
                for (auto& col : *cols) {
                    for (auto& v : col) v = normal(rng);
                }
            }
            reset_op_counts();
            forward(w, params);
            rows.push_back({c, n, op_counts().cross_variate_macs, op_counts().cross_time_macs});
        }
    }
    return rows;
}

}  // namespace citras
