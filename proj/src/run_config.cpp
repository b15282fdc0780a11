#include "citras/run_config.hpp"

#include <algorithm>
#include <fstream>

#include "citras/errors.hpp"

namespace citras {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& section) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::none_of(keys.begin(), keys.end(), [&](const char* k) { return it.key() == k; })) {
            throw ConfigError("unknown key '" + section + it.key() + "'");
        }
    }
}

const json& require(const json& j, const char* key, const std::string& section) {
    if (!j.contains(key)) throw ConfigError("missing required key '" + section + key + "'");
    return j.at(key);
}

template <typename T>
T read(const json& j, const char* key, const std::string& section) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("key '" + section + key + "' has the wrong type");
    }
}

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& base) {
    if (p.is_absolute() || base.empty()) return p.lexically_normal();
    return (base / p).lexically_normal();
}

}  // namespace

void RunConfig::validate() const {
    model.validate();
    train.validate();
    if (train.seed != seed) throw ConfigError("train seed must equal the top-level seed");
    const bool has_csv = data.csv.has_value() || data.manifest.has_value();
    if (has_csv && !data.synthetic.is_null()) throw ConfigError("data: give either 'csv'+'manifest' or 'synthetic', not both");
    if (!has_csv && data.synthetic.is_null()) throw ConfigError("missing required key 'data.csv' (or 'data.synthetic')");
    if (has_csv) {
        if (!data.csv) throw ConfigError("missing required key 'data.csv'");
        if (!data.manifest) throw ConfigError("missing required key 'data.manifest'");
        for (const auto* p : {&*data.csv, &*data.manifest}) {
            if (!std::filesystem::is_regular_file(*p)) throw ConfigError("data file not found: " + p->string());
        }
    }
    if (data.split.train == 0 || data.split.val == 0 || data.split.test == 0) throw ConfigError("data.split sizes must be >= 1");
    if (data.lookback == 0 || data.horizon == 0 || data.stride == 0) throw ConfigError("data.lookback, horizon and stride must be >= 1");
    if (data.lookback % model.patch != 0) {
        throw ConfigError("data.lookback T=" + std::to_string(data.lookback) + " is not divisible by model.patch P=" +
                          std::to_string(model.patch));
    }
    if (data.horizon % model.patch != 0) {
        throw ConfigError("data.horizon S=" + std::to_string(data.horizon) + " is not divisible by model.patch P=" +
                          std::to_string(model.patch));
    }
    if (data.horizons.empty()) throw ConfigError("data.horizons must not be empty");
    for (std::size_t h : data.horizons) {
        if (h == 0) throw ConfigError("data.horizons entries must be >= 1");
    }
    for (double a : alpha_grid) {
        if (!(a > 0.0 && a <= 1.0)) throw ConfigError("alpha must lie in (0,1]");
    }
    if (probe.variates.empty() || probe.steps.empty()) throw ConfigError("probe.variates and probe.steps must not be empty");
    for (std::size_t v : probe.variates) {
        if (v == 0) throw ConfigError("probe.variates entries must be >= 1");
    }
    for (std::size_t n : probe.steps) {
        if (n == 0) throw ConfigError("probe.steps entries must be >= 1");
    }
}

json RunConfig::to_json() const {
    json d;
    if (data.csv) d["csv"] = data.csv->string();
    if (data.manifest) d["manifest"] = data.manifest->string();
    if (!data.synthetic.is_null()) d["synthetic"] = data.synthetic;
    d["split"] = {{"train", data.split.train}, {"val", data.split.val}, {"test", data.split.test}};
    d["lookback"] = data.lookback;
    d["horizon"] = data.horizon;
    d["stride"] = data.stride;
    d["horizons"] = data.horizons;
    d["standardize"] = data.standardize;

    json t = train.to_json();
    t.erase("seed");
    return {{"seed", seed},
            {"data", d},
            {"model", model.to_json()},
            {"train", t},
            {"alpha_grid", alpha_grid},
            {"output_dir", output_dir.string()},
            {"probe", {{"variates", probe.variates}, {"steps", probe.steps}}}};
}

RunConfig RunConfig::from_json(const json& j, const std::filesystem::path& base_dir) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    reject_unknown(j, {"seed", "data", "model", "train", "alpha_grid", "output_dir", "probe"}, "");
    RunConfig c;
    if (j.contains("seed")) c.seed = read<std::uint64_t>(j, "seed", "");

    const json& d = require(j, "data", "");
    if (!d.is_object()) throw ConfigError("key 'data' must be an object");
    reject_unknown(d, {"csv", "manifest", "synthetic", "split", "lookback", "horizon", "stride", "horizons", "standardize"}, "data.");
    if (d.contains("csv")) c.data.csv = resolve(read<std::string>(d, "csv", "data."), base_dir);
    if (d.contains("manifest")) c.data.manifest = resolve(read<std::string>(d, "manifest", "data."), base_dir);
    if (d.contains("synthetic")) c.data.synthetic = d.at("synthetic");
    const json& s = require(d, "split", "data.");
    if (!s.is_object()) throw ConfigError("key 'data.split' must be an object");
    reject_unknown(s, {"train", "val", "test"}, "data.split.");
    require(s, "train", "data.split.");
    c.data.split.train = read<std::size_t>(s, "train", "data.split.");
    require(s, "val", "data.split.");
    c.data.split.val = read<std::size_t>(s, "val", "data.split.");
    require(s, "test", "data.split.");
    c.data.split.test = read<std::size_t>(s, "test", "data.split.");
    if (d.contains("lookback")) c.data.lookback = read<std::size_t>(d, "lookback", "data.");
    if (d.contains("horizon")) c.data.horizon = read<std::size_t>(d, "horizon", "data.");
    if (d.contains("stride")) c.data.stride = read<std::size_t>(d, "stride", "data.");
    if (d.contains("standardize")) c.data.standardize = read<bool>(d, "standardize", "data.");
    c.data.horizons = d.contains("horizons") ? read<std::vector<std::size_t>>(d, "horizons", "data.")
                                             : std::vector<std::size_t>{c.data.horizon};

    c.model = CitrasConfig::from_json(j.value("model", json::object()));
    json t = j.value("train", json::object());
    if (!t.is_object()) throw ConfigError("key 'train' must be an object");
    if (t.contains("seed")) throw ConfigError("seed belongs at the top level, not in 'train'");
    t["seed"] = c.seed;
    c.train = TrainConfig::from_json(t);

    if (j.contains("alpha_grid")) c.alpha_grid = read<std::vector<double>>(j, "alpha_grid", "");
    if (j.contains("output_dir")) c.output_dir = read<std::string>(j, "output_dir", "");
    if (j.contains("probe")) {
        const json& p = j.at("probe");
        if (!p.is_object()) throw ConfigError("key 'probe' must be an object");
        reject_unknown(p, {"variates", "steps"}, "probe.");
        if (p.contains("variates")) c.probe.variates = read<std::vector<std::size_t>>(p, "variates", "probe.");
        if (p.contains("steps")) c.probe.steps = read<std::vector<std::size_t>>(p, "steps", "probe.");
    }
    c.validate();
    return c;
}

RunConfig parse_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return RunConfig::from_json(j, path.parent_path());
}

}  // namespace citras
