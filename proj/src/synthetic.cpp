#include "citras/synthetic.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "citras/errors.hpp"

namespace citras {

namespace {

std::vector<std::int64_t> hourly(std::size_t n) {
    std::vector<std::int64_t> ts(n);
    for (std::size_t i = 0; i < n; ++i) ts[i] = static_cast<std::int64_t>(i) * 3600;
    return ts;
}

std::vector<std::string> names(const char* prefix, std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
    return out;
}

}  // namespace

SeriesFrame copy_covariate_frame(std::size_t length, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> z(length);
    for (auto& v : z) v = normal(rng);
    RoleManifest m{"timestamp", {"y"}, {}, {"z"}};
    return SeriesFrame(m, hourly(length), {z}, {}, {z});
}

SeriesFrame periodic_frame(std::size_t length, std::size_t period, double noise, std::uint64_t seed) {
    if (period == 0) throw ContractError("period must be >= 1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> pattern(period);
    for (auto& v : pattern) v = normal(rng);
    std::vector<double> y(length);
    for (std::size_t t = 0; t < length; ++t) y[t] = pattern[t % period] + noise * normal(rng);
    RoleManifest m{"timestamp", {"y"}, {}, {}};
    return SeriesFrame(m, hourly(length), {y}, {}, {});
}

SeriesFrame random_frame(std::size_t length, std::size_t targets, std::size_t observed, std::size_t known, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    auto series = [&](std::size_t count) {
        Columns cols(count, std::vector<double>(length));
        for (auto& c : cols) {
            const double ph = phase(rng);
            double walk = 0.0;
            for (std::size_t t = 0; t < length; ++t) {
                walk += 0.1 * normal(rng);
                c[t] = walk + std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / 24.0 + ph) + 0.3 * normal(rng);
            }
        }
        return cols;
    };
    RoleManifest m{"timestamp", names("target_", targets), names("observed_", observed), names("known_", known)};
    Columns t = series(targets), o = series(observed), k = series(known);
    return SeriesFrame(m, hourly(length), std::move(t), std::move(o), std::move(k));
}

SeriesFrame synthetic_frame(const nlohmann::json& spec) {
    if (!spec.is_object() || !spec.contains("kind")) throw ConfigError("synthetic data needs a 'kind'");
    const std::string kind = spec.at("kind").get<std::string>();
    const std::size_t length = spec.value("length", std::size_t{3000});
    const std::uint64_t seed = spec.value("seed", std::uint64_t{7});
    if (kind == "copy_covariate") return copy_covariate_frame(length, seed);
    if (kind == "periodic") return periodic_frame(length, spec.value("period", std::size_t{24}), spec.value("noise", 0.0), seed);
    if (kind == "random") {
        return random_frame(length, spec.value("targets", std::size_t{1}), spec.value("observed", std::size_t{0}),
                            spec.value("known", std::size_t{0}), seed);
    }
    throw ConfigError("unknown synthetic data kind '" + kind + "'");
}

}  // namespace citras
