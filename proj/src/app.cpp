#include "citras/app.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "citras/checkpoint.hpp"
#include "citras/errors.hpp"
#include "citras/parallel.hpp"
#include "citras/synthetic.hpp"

namespace citras {

namespace fs = std::filesystem;
using nlohmann::json;

Experiment load_experiment(const RunConfig& config) {
    Experiment e;
    if (config.data.csv) {
        e.frame = load_series(*config.data.csv, RoleManifest::load(*config.data.manifest));
    } else {
        e.frame = synthetic_frame(config.data.synthetic);
    }
    e.split = chronological_split(e.frame, config.data.split);
    if (config.data.standardize) {
        e.scaler = Standardizer::fit(e.split.train);
        e.frame = e.scaler->apply(e.frame);
        e.split = chronological_split(e.frame, config.data.split);
    }

    WindowOptions opts;
    opts.lookback = config.data.lookback;
    opts.horizon = config.data.horizon;
    opts.stride = config.data.stride;
    opts.patch = config.model.patch;
    e.windows.train = segment_windows(e.frame, e.split, Segment::train, opts);
    e.windows.val = segment_windows(e.frame, e.split, Segment::val, opts);
    opts.horizon = *std::max_element(config.data.horizons.begin(), config.data.horizons.end());
    opts.whole_patches = false;
    e.windows.test = segment_windows(e.frame, e.split, Segment::test, opts);
    if (e.windows.train.empty()) throw SplitError("training split is too short for a single window of T+S rows");
    if (e.windows.val.empty()) throw SplitError("validation split is too short for a single window");
    if (e.windows.test.empty()) throw SplitError("test split is too short for the longest evaluation horizon");
    return e;
}

void write_atomic(const fs::path& path, const std::string& content) {
    std::error_code ec;
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw IoError("cannot move report into place at " + path.string());
    }
}

std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

TrainOutcome train_model(const RunConfig& config, const Experiment& experiment, std::size_t threads, bool verbose) {
    std::vector<double> alphas = config.alpha_grid;
    if (alphas.empty()) alphas.push_back(config.model.alpha);

    FitOptions options;
    options.threads = threads;
    if (verbose) {
        options.on_epoch = [](std::size_t epoch, double train_loss, double val_loss) {
            std::cerr << "epoch " << epoch << " train_loss " << train_loss << " val_loss " << val_loss << '\n';
        };
    }

    std::optional<TrainOutcome> best;
    double best_val = 0.0;
    json candidates = json::array();
    for (double alpha : alphas) {
        CitrasConfig model = config.model;
        model.alpha = alpha;
        if (verbose && alphas.size() > 1) std::cerr << "alpha " << alpha << '\n';
        TrainOutcome cand{CitrasParams::init(model, config.seed), {}, {}};
        cand.history = fit(cand.params, experiment.windows.train, experiment.windows.val, config.train, options);
        const double val = cand.history.val_loss.at(cand.history.best_epoch - 1);
        candidates.push_back({{"alpha", alpha}, {"best_val_loss", val}, {"history", cand.history.to_json()}});
        if (!best || val < best_val) {
            best_val = val;
            best = std::move(cand);
        }
    }
    best->report = {{"config", config.to_json()},
                    {"selected_alpha", best->params.config.alpha},
                    {"model", best->params.config.to_json()},
                    {"windows", {{"train", experiment.windows.train.size()}, {"val", experiment.windows.val.size()}}},
                    {"history", best->history.to_json()},
                    {"candidates", candidates}};
    return std::move(*best);
}

std::string horizons_csv(const EvalReport& report) {
    std::ostringstream out;
    out.precision(17);
    out << "horizon,mse,mae,windows,iterations\n";
    for (const auto& h : report.horizons) out << h.horizon << ',' << h.mse << ',' << h.mae << ',' << h.windows << ',' << h.iterations << '\n';
    return out.str();
}

std::string steps_csv(const EvalReport& report) {
    std::ostringstream out;
    out.precision(17);
    out << "horizon,step,mse,mae\n";
    for (const auto& h : report.horizons) {
        for (std::size_t t = 0; t < h.mse_by_step.size(); ++t) out << h.horizon << ',' << t + 1 << ',' << h.mse_by_step[t] << ',' << h.mae_by_step[t] << '\n';
    }
    return out.str();
}

namespace {

struct Invocation {
    std::string config_path;
    std::string checkpoint;
    std::string out;
    std::size_t threads = 1;
};

// Errors that mean the inputs were rejected before any work began.
class ValidationFailure : public Error {
    using Error::Error;
};

const char* module_of(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const IoError*>(&e) || dynamic_cast<const ValidationFailure*>(&e)) return "cli";
    if (dynamic_cast<const ManifestError*>(&e) || dynamic_cast<const IngestionError*>(&e) || dynamic_cast<const SplitError*>(&e) ||
        dynamic_cast<const DivisibilityError*>(&e)) {
        return "dataset";
    }
    if (dynamic_cast<const AlignmentError*>(&e)) return "model";
    if (dynamic_cast<const CheckpointError*>(&e)) return "training";
    if (dynamic_cast<const UnsupportedError*>(&e)) return "inference";
    if (dynamic_cast<const DimensionError*>(&e) || dynamic_cast<const DegenerateMaskError*>(&e) ||
        dynamic_cast<const DeterminismError*>(&e)) {
        return "numerics";
    }
    return "runtime";
}

bool is_validation(const std::exception& e) {
    return dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ManifestError*>(&e) || dynamic_cast<const ValidationFailure*>(&e);
}

struct Context {
    RunConfig config;
    fs::path out;
    std::size_t threads = 1;
    std::optional<fs::path> checkpoint;
};

Context make_context(const Invocation& inv) {
    Context c;
    c.config = parse_config(inv.config_path);
    if (!inv.out.empty()) c.config.output_dir = inv.out;
    c.out = c.config.output_dir;
    if (inv.threads == 0) throw ValidationFailure("--threads must be >= 1");
    c.threads = inv.threads;
    if (!inv.checkpoint.empty()) c.checkpoint = inv.checkpoint;
    return c;
}

CitrasParams load_trained(const Context& c) {
    if (!c.checkpoint) throw ValidationFailure("missing required flag --checkpoint");
    if (!fs::is_regular_file(*c.checkpoint)) throw ValidationFailure("--checkpoint file not found: " + c.checkpoint->string());
    CitrasParams params = load_checkpoint(*c.checkpoint);
    CitrasConfig expected = c.config.model;
    if (!c.config.alpha_grid.empty()) expected.alpha = params.config.alpha;
    if (!(expected == params.config)) {
        throw CheckpointError("checkpoint " + c.checkpoint->string() + " was written for a different model configuration");
    }
    return params;
}

std::vector<std::string> variate_names(const SeriesFrame& frame) {
    std::vector<std::string> names = frame.roles().targets;
    names.insert(names.end(), frame.roles().observed.begin(), frame.roles().observed.end());
    names.insert(names.end(), frame.roles().known.begin(), frame.roles().known.end());
    return names;
}

void cmd_train(const Context& c) {
    const Experiment e = load_experiment(c.config);
    TrainOutcome r = train_model(c.config, e, c.threads, true);
    const fs::path ckpt = c.checkpoint.value_or(c.out / "model.ckpt");
    std::error_code ec;
    if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + ckpt.parent_path().string() + ": " + ec.message());
    save_checkpoint(r.params, ckpt);
    write_atomic(c.out / "history.json", dump_json(r.report));
    std::cout << "trained " << r.history.val_loss.size() << " epochs, best epoch " << r.history.best_epoch << ", checkpoint "
              << ckpt.string() << '\n';
}

void cmd_evaluate(const Context& c) {
    const CitrasParams params = load_trained(c);
    const Experiment e = load_experiment(c.config);
    const EvalReport report = evaluate(params, e.windows.test, c.config.data.horizons, c.threads);
    write_atomic(c.out / "metrics.json", dump_json({{"config", c.config.to_json()},
                                                    {"model", params.config.to_json()},
                                                    {"test_windows", e.windows.test.size()},
                                                    {"metrics", report.to_json()}}));
    write_atomic(c.out / "horizons.csv", horizons_csv(report));
    write_atomic(c.out / "steps.csv", steps_csv(report));
    for (const auto& h : report.horizons) std::cout << "horizon " << h.horizon << " mse " << h.mse << " mae " << h.mae << '\n';
}

void cmd_forecast(const Context& c) {
    const CitrasParams params = load_trained(c);
    const Experiment e = load_experiment(c.config);
    const std::size_t horizon = *std::max_element(c.config.data.horizons.begin(), c.config.data.horizons.end());
    const auto& targets = e.frame.roles().targets;
    std::vector<RollingForecast> forecasts(e.windows.test.size());
    parallel_for(forecasts.size(), c.threads, [&](std::size_t i) { forecasts[i] = rolling_forecast(params, e.windows.test[i], horizon); });

    std::ostringstream csv;
    csv.precision(17);
    csv << "origin,step,variate,prediction,truth\n";
    for (std::size_t w = 0; w < forecasts.size(); ++w) {
        const Window& win = e.windows.test[w];
        for (std::size_t v = 0; v < targets.size(); ++v) {
            for (std::size_t t = 0; t < horizon; ++t) {
                csv << win.origin << ',' << t + 1 << ',' << targets[v] << ',' << forecasts[w].predictions[v][t] << ','
                    << win.horizon_target[v][t] << '\n';
            }
        }
    }
    write_atomic(c.out / "forecast.csv", csv.str());
    write_atomic(c.out / "forecast.json", dump_json({{"config", c.config.to_json()},
                                                     {"model", params.config.to_json()},
                                                     {"horizon", horizon},
                                                     {"iterations", forecasts.front().iterations},
                                                     {"windows", forecasts.size()}}));
    std::cout << "forecast " << forecasts.size() << " windows, horizon " << horizon << '\n';
}

void cmd_ablate(const Context& c) {
    const Experiment e = load_experiment(c.config);
    const auto results = run_ablation(e.windows, c.config.model, c.config.train, c.config.data.horizons, c.threads);
    json variants = json::array();
    std::ostringstream csv;
    csv.precision(17);
    csv << "variant,horizon,mse,mae\n";
    for (const auto& r : results) {
        variants.push_back({{"variant", r.variant}, {"model", r.config.to_json()}, {"history", r.history.to_json()}, {"metrics", r.metrics.to_json()}});
        for (const auto& h : r.metrics.horizons) csv << r.variant << ',' << h.horizon << ',' << h.mse << ',' << h.mae << '\n';
    }
    write_atomic(c.out / "ablation.json", dump_json({{"config", c.config.to_json()}, {"variants", variants}}));
    write_atomic(c.out / "ablation.csv", csv.str());
    std::cout << csv.str();
}

void cmd_inspect_attention(const Context& c) {
    const Experiment e = load_experiment(c.config);
    const CitrasParams params = c.checkpoint ? load_trained(c) : CitrasParams::init(c.config.model, c.config.seed);
    const Window& w = e.windows.test.front();
    const AttentionTrace trace = attention_export(params, w);
    write_atomic(c.out / "attention.csv", attention_csv(trace, e.frame.roles().targets, variate_names(e.frame)));
    write_atomic(c.out / "attention.json", dump_json({{"config", c.config.to_json()},
                                                      {"model", params.config.to_json()},
                                                      {"trained", c.checkpoint.has_value()},
                                                      {"window_origin", w.origin},
                                                      {"layers", trace.layers()},
                                                      {"heads", trace.heads()},
                                                      {"steps", trace.steps()},
                                                      {"queries", e.frame.roles().targets},
                                                      {"keys", variate_names(e.frame)}}));
    std::cout << "attention trace: " << trace.layers() << " layers, " << trace.heads() << " heads, " << trace.steps() << " steps\n";
}

void cmd_probe(const Context& c) {
    const auto rows = complexity_probe(c.config.model, c.config.probe.variates, c.config.probe.steps);
    json arr = json::array();
    std::ostringstream csv;
    csv << "variates,steps,cross_variate_macs,cross_time_macs\n";
    for (const auto& r : rows) {
        arr.push_back({{"variates", r.variates}, {"steps", r.steps}, {"cross_variate_macs", r.cross_variate_macs}, {"cross_time_macs", r.cross_time_macs}});
        csv << r.variates << ',' << r.steps << ',' << r.cross_variate_macs << ',' << r.cross_time_macs << '\n';
    }
    write_atomic(c.out / "complexity.json", dump_json({{"config", c.config.to_json()}, {"rows", arr}}));
    write_atomic(c.out / "complexity.csv", csv.str());
    std::cout << csv.str();
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"Covariate-aware patch transformer for time series forecasting", "citras"};
    app.require_subcommand(1);
    Invocation inv;
    struct Sub {
        const char* name;
        const char* help;
        void (*run)(const Context&);
    };
    const Sub subs[] = {
        {"train", "Train a model and write a checkpoint plus history", cmd_train},
        {"evaluate", "Score a checkpoint on the test split", cmd_evaluate},
        {"forecast", "Write rolling forecasts for every test window", cmd_forecast},
        {"ablate", "Train and evaluate full, no_kv_shift and no_ass variants", cmd_ablate},
        {"inspect-attention", "Export cross-variate attention scores for one test window", cmd_inspect_attention},
        {"probe-complexity", "Count attention multiply-accumulates across variates and steps", cmd_probe},
    };
    for (const auto& s : subs) {
        CLI::App* sub = app.add_subcommand(s.name, s.help);
        sub->add_option("--config", inv.config_path, "Run configuration (JSON)")->required();
        sub->add_option("--checkpoint", inv.checkpoint, "Checkpoint path");
        sub->add_option("--out", inv.out, "Output directory (overrides output_dir)");
        sub->add_option("--threads", inv.threads, "Worker threads")->capture_default_str();
    }

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        const CLI::App* active = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        std::cerr << "citras: usage error: " << e.what() << '\n' << active->help();
        return 1;
    }

    const CLI::App* chosen = app.get_subcommands().front();
    for (const auto& s : subs) {
        if (chosen->get_name() != s.name) continue;
        try {
            s.run(make_context(inv));
            return 0;
        } catch (const std::exception& e) {
            std::cerr << "citras " << s.name << ": " << module_of(e) << " error: " << e.what() << '\n';
            return is_validation(e) ? 1 : 2;
        }
    }
    return 1;
}

int run_cli(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_cli(args);
}

}  // namespace citras
