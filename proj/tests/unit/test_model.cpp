#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "citras/errors.hpp"
#include "citras/model.hpp"
#include "reference.hpp"

using namespace citras;

namespace {

ModelVars bind(const CitrasParams& p) { return ModelVars::bind(p.store, p.config); }

double max_pred_diff(const Tensor& a, const Tensor& b) { return max_abs_diff(a, b); }

}  // namespace

TEST_SUITE("config") {
    TEST_CASE("defaults") {
        const CitrasConfig c;
        CHECK(c.heads == 8);
        CHECK(c.patch == 24);
        CHECK(c.alpha == 0.2);
        CHECK(c.d_ff == 4 * c.d_model);
        CHECK(c.rope_base == 10000.0);
        CHECK(c.eps_norm == 1e-5);
        CHECK(c.eps_std == 1e-5);
        CHECK(c.dropout == 0.0);
        CHECK(c.init_std == 0.02);
        CHECK_NOTHROW(c.validate());
    }

    TEST_CASE("constraints") {
        CitrasConfig c;
        c.alpha = 1.5;
        try {
            c.validate();
            FAIL("expected a config error");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find("alpha must lie in (0,1]") != std::string::npos);
        }
        c = CitrasConfig{};
        c.alpha = 0.0;
        CHECK_THROWS_AS(c.validate(), ConfigError);
        c = CitrasConfig{};
        c.heads = 3;
        CHECK_THROWS_AS(c.validate(), ConfigError);
        c = CitrasConfig{};
        c.d_model = 24;
        c.heads = 8;  // head width 3 is odd
        CHECK_THROWS_AS(c.validate(), ConfigError);
        c = CitrasConfig{};
        c.layers = 0;
        CHECK_THROWS_AS(c.validate(), ConfigError);
    }

    TEST_CASE("json round trip and unknown keys") {
        CitrasConfig c = gen::tiny_config();
        c.use_kv_shift = false;
        c.alpha = 0.4;
        CHECK(CitrasConfig::from_json(c.to_json()) == c);
        CHECK(CitrasConfig::from_json(nlohmann::json::object()) == CitrasConfig{});
        CHECK(CitrasConfig::from_json({{"d_model", 64}}).d_ff == 256);
        CHECK_THROWS_AS(CitrasConfig::from_json({{"dmodel", 64}}), ConfigError);
    }
}

TEST_SUITE("params") {
    TEST_CASE("initialization is seeded and follows the conventions") {
        const CitrasConfig c = CitrasConfig{};
        const auto a = CitrasParams::init(c, 7), b = CitrasParams::init(c, 7), d = CitrasParams::init(c, 8);
        CHECK(a.store.at("embed.weight").value == b.store.at("embed.weight").value);
        CHECK_FALSE(a.store.at("embed.weight").value == d.store.at("embed.weight").value);
        CHECK(a.store.at("embed.weight").value.shape() == Shape{24, 128});
        for (double v : a.store.at("layers.0.time.norm1.gamma").value.values()) CHECK(v == 1.0);
        for (double v : a.store.at("project.bias").value.values()) CHECK(v == 0.0);
        double sq = 0.0;
        const auto& w = a.store.at("layers.0.variate.attn.wq").value;
        for (double v : w.values()) sq += v * v;
        CHECK(std::sqrt(sq / static_cast<double>(w.size())) == doctest::Approx(0.02).epsilon(0.05));
        CHECK(a.store.size() == 4 + 2 * 13);
    }
}

TEST_SUITE("stationarize") {
    TEST_CASE("constant covariate maps to zero") {
        std::mt19937_64 rng(1);
        Window w = gen::window(rng, 16, 4, 1, 0, 1);
        w.known_extended[0].assign(20, 0.0);
        const auto [n, s] = stationarize(w, 1e-5);
        CHECK(s.known_std[0] == 1e-5);
        for (double v : n.known_extended[0]) CHECK(v == 0.0);
    }

    TEST_CASE("affine inputs normalize identically") {
        std::mt19937_64 rng(2);
        Window w = gen::window(rng, 16, 4, 2, 1, 1);
        Window t = w;
        for (auto& c : t.lookback_target) {
            for (double& v : c) v = 3.0 * v - 7.0;
        }
        const auto a = stationarize(w, 1e-5).first, b = stationarize(t, 1e-5).first;
        for (std::size_t c = 0; c < 2; ++c) {
            for (std::size_t i = 0; i < 16; ++i) CHECK(std::abs(a.lookback_target[c][i] - b.lookback_target[c][i]) < 1e-12);
        }
    }

    TEST_CASE("normalized lookback has zero mean and unit variance; horizon untouched") {
        std::mt19937_64 rng(3);
        for (int trial = 0; trial < 50; ++trial) {
            Window w = gen::window(rng, 24, 8, 1, 1, 1);
            for (double& v : w.lookback_target[0]) v = 5.0 + 4.0 * v;
            const auto [n, s] = stationarize(w, 1e-5);
            double mu = 0.0, var = 0.0;
            for (double v : n.lookback_target[0]) mu += v / 24.0;
            for (double v : n.lookback_target[0]) var += (v - mu) * (v - mu) / 24.0;
            CHECK(std::abs(mu) < 1e-10);
            CHECK(std::abs(var - 1.0) < 1e-6);
            CHECK(n.horizon_target == w.horizon_target);
        }
    }

    TEST_CASE("statistics ignore known rows past the lookback") {
        std::mt19937_64 rng(4);
        Window w = gen::window(rng, 16, 8, 1, 0, 1);
        Window v = w;
        for (std::size_t t = 16; t < 24; ++t) v.known_extended[0][t] += 100.0;
        CHECK(stationarize(w, 1e-5).second.known_mean == stationarize(v, 1e-5).second.known_mean);
    }
}

TEST_SUITE("embed and project") {
    TEST_CASE("identical patches share tokens, zero patch gives the bias") {
        std::mt19937_64 rng(5);
        const Tensor W = gen::normal_tensor(rng, {4, 8}), b = gen::normal_tensor(rng, {8});
        const Tensor x = gen::normal_tensor(rng, {3, 4});
        CHECK(embed(constant(x), constant(W), constant(b)).value() == embed(constant(x), constant(W), constant(b)).value());
        const Tensor z = embed(constant(Tensor({1, 4}, 0.0)), constant(W), constant(b)).value();
        CHECK(z.reshaped({8}) == b);
    }

    TEST_CASE("7x24 patches embed to 7x128") {
        const auto p = CitrasParams::init(CitrasConfig{}, 1);
        const Var out = embed(constant(Tensor({7, 24}, 0.5)), p.store.var("embed.weight"), p.store.var("embed.bias"));
        CHECK(out.shape() == Shape{7, 128});
    }

    TEST_CASE("projection and de-normalization") {
        std::mt19937_64 rng(6);
        const Tensor W = gen::normal_tensor(rng, {8, 4}), b = gen::normal_tensor(rng, {4});
        CHECK(project(Tensor({1, 8}, 0.0), W, b, 0.0, 1.0) == b);
        const Tensor tok = gen::normal_tensor(rng, {1, 8});
        const Tensor y = project(tok, W, b, 0.0, 1.0), z = project(tok, W, b, 10.0, 2.0);
        for (std::size_t k = 0; k < 4; ++k) CHECK(z[k] == 2.0 * y[k] + 10.0);
    }
}

TEST_SUITE("cross_time_block") {
    CitrasConfig cfg = [] {
        CitrasConfig c = gen::tiny_config(8, 1, 4);
        return c;
    }();

    TEST_CASE("single token attends to itself") {
        const auto p = CitrasParams::init(cfg, 3);
        std::mt19937_64 rng(7);
        const Tensor h = gen::normal_tensor(rng, {1, 8});
        const Tensor out = cross_time_block(constant(h), bind(p).layers[0].time, cfg).value();
        const auto expect = ref::time_block(ref::to_mat(h), p, "layers.0.time.");
        for (std::size_t d = 0; d < 8; ++d) CHECK(std::abs(out[d] - expect[0][d]) < 1e-12);
        CHECK(cross_time_block(constant(h), bind(p).layers[0].time, cfg).value() == out);
    }

    TEST_CASE("N=3, one head, against the loop oracle") {
        std::mt19937_64 rng(8);
        for (int trial = 0; trial < 10; ++trial) {
            const auto p = CitrasParams::init(cfg, rng());
            const Tensor h = gen::normal_tensor(rng, {3, 8});
            const Tensor out = cross_time_block(constant(h), bind(p).layers[0].time, cfg).value();
            const auto expect = ref::time_block(ref::to_mat(h), p, "layers.0.time.");
            for (std::size_t i = 0; i < 3; ++i) {
                for (std::size_t d = 0; d < 8; ++d) CHECK(std::abs(out.at(i, d) - expect[i][d]) < 1e-10);
            }
        }
    }

    TEST_CASE("property: later tokens never change earlier outputs") {
        CitrasConfig c2 = gen::tiny_config(8, 2, 4);
        std::mt19937_64 rng(9);
        for (int trial = 0; trial < 50; ++trial) {
            const auto p = CitrasParams::init(c2, rng());
            const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 6)(rng);
            const std::size_t j = std::uniform_int_distribution<std::size_t>(1, n - 1)(rng);
            const Tensor h = gen::normal_tensor(rng, {n, 8});
            Tensor g = h;
            for (std::size_t r = j; r < n; ++r) {
                for (std::size_t d = 0; d < 8; ++d) g.at(r, d) += 3.0;
            }
            const Tensor a = cross_time_block(constant(h), bind(p).layers[0].time, c2).value();
            const Tensor b = cross_time_block(constant(g), bind(p).layers[0].time, c2).value();
            for (std::size_t r = 0; r < j; ++r) {
                for (std::size_t d = 0; d < 8; ++d) CHECK(a.at(r, d) == b.at(r, d));
            }
        }
    }
}

TEST_SUITE("assemble_kv") {
    TokenGrid grid_of(std::size_t c_knw, std::size_t n_tgt, std::size_t n_knw) {
        TokenGrid g;
        auto tokens = [](std::size_t rows, double base) {
            Tensor t({rows, 2});
            for (std::size_t r = 0; r < rows; ++r) t.at(r, 0) = base + static_cast<double>(r);
            return constant(t);
        };
        g.target.push_back(tokens(n_tgt, 100.0));
        g.observed.push_back(tokens(n_tgt, 200.0));
        for (std::size_t c = 0; c < c_knw; ++c) g.known.push_back(tokens(n_knw, 300.0 + 10.0 * static_cast<double>(c)));
        return g;
    }

    TEST_CASE("step 3 of 7 pairs key 3 with value 4") {
        const auto [k, v] = assemble_kv(2, grid_of(1, 7, 8), true);
        CHECK(k.value().at(2, 0) == 302.0);
        CHECK(v.value().at(2, 0) == 303.0);
        CHECK(k.value().at(0, 0) == 102.0);
        CHECK(v.value().at(0, 0) == 102.0);
        CHECK(v.value().at(1, 0) == 202.0);
        const auto [k2, v2] = assemble_kv(2, grid_of(1, 7, 8), false);
        CHECK(v2.value().at(2, 0) == 302.0);
    }

    TEST_CASE("no known covariates: keys equal values") {
        const auto [k, v] = assemble_kv(4, grid_of(0, 7, 0), true);
        CHECK(k.value() == v.value());
    }

    TEST_CASE("last step reads the final known patch") {
        const auto [k, v] = assemble_kv(6, grid_of(2, 7, 8), true);
        CHECK(v.value().at(2, 0) == 307.0);
        CHECK(v.value().at(3, 0) == 317.0);
        CHECK_THROWS_AS(assemble_kv(7, grid_of(1, 8, 8), true), AlignmentError);
    }
}

TEST_SUITE("raw_scores") {
    TEST_CASE("identity projections on orthonormal rows give the Gram matrix") {
        const Tensor q = Tensor::matrix({{1, 0, 0, 0}, {0, 1, 0, 0}});
        const Tensor k = Tensor::matrix({{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}});
        Tensor I({4, 4});
        for (std::size_t i = 0; i < 4; ++i) I.at(i, i) = 1.0;
        const auto s = raw_scores(constant(q), constant(k), constant(I), constant(I), 1);
        CHECK(s[0].value() == Tensor::matrix({{1, 0, 0}, {0, 1, 0}}));
    }

    TEST_CASE("zero keys") {
        std::mt19937_64 rng(10);
        const auto s = raw_scores(constant(gen::normal_tensor(rng, {2, 4})), constant(Tensor({3, 4}, 0.0)),
                                  constant(gen::normal_tensor(rng, {4, 4})), constant(gen::normal_tensor(rng, {4, 4})), 2);
        for (const auto& h : s) {
            for (double v : h.value().values()) CHECK(v == 0.0);
        }
    }

    TEST_CASE("random 2x3 case against the dot-product oracle") {
        std::mt19937_64 rng(11);
        const Tensor q = gen::normal_tensor(rng, {2, 4}), k = gen::normal_tensor(rng, {3, 4});
        const Tensor wq = gen::normal_tensor(rng, {4, 4}), wk = gen::normal_tensor(rng, {4, 4});
        const auto s = raw_scores(constant(q), constant(k), constant(wq), constant(wk), 2);
        const auto Q = ref::matmul(ref::to_mat(q), ref::to_mat(wq)), K = ref::matmul(ref::to_mat(k), ref::to_mat(wk));
        for (std::size_t h = 0; h < 2; ++h) {
            for (std::size_t a = 0; a < 2; ++a) {
                for (std::size_t b = 0; b < 3; ++b) {
                    double dot = 0.0;
                    for (std::size_t d = 0; d < 2; ++d) dot += Q[a][h * 2 + d] * K[b][h * 2 + d];
                    CHECK(std::abs(s[h].value().at(a, b) - dot) < 1e-12);
                }
            }
        }
    }
}

TEST_SUITE("smooth_scores") {
    std::vector<Tensor> scalars(std::initializer_list<double> xs) {
        std::vector<Tensor> out;
        for (double x : xs) out.push_back(Tensor::vector({x}));
        return out;
    }

    TEST_CASE("alpha one is the identity") {
        std::mt19937_64 rng(12);
        std::vector<Tensor> raw;
        for (int i = 0; i < 5; ++i) raw.push_back(gen::normal_tensor(rng, {2, 3}));
        CHECK(smooth_scores(raw, 1.0) == raw);
    }

    TEST_CASE("constant sequence is a fixed point") {
        for (const auto& a : smooth_scores(scalars({1.25, 1.25, 1.25, 1.25}), 0.3)) CHECK(a[0] == doctest::Approx(1.25).epsilon(1e-15));
    }

    TEST_CASE("hand evaluation at alpha 0.5") {
        const auto a = smooth_scores(scalars({2, 4, 0}), 0.5);
        CHECK(a[0][0] == 2.0);
        CHECK(a[1][0] == 3.0);
        CHECK(a[2][0] == 1.5);
    }

    TEST_CASE("alpha outside (0,1]") { CHECK_THROWS_AS(smooth_scores(scalars({1}), 0.0), ConfigError); }

    TEST_CASE("property: smoothed scores stay inside the running envelope") {
        std::mt19937_64 rng(13);
        std::uniform_real_distribution<double> alpha(0.01, 1.0);
        for (int trial = 0; trial < 200; ++trial) {
            std::vector<Tensor> raw;
            const int n = std::uniform_int_distribution<int>(1, 12)(rng);
            for (int i = 0; i < n; ++i) raw.push_back(gen::normal_tensor(rng, {2, 3}, 4.0));
            const auto a = smooth_scores(raw, alpha(rng));
            for (std::size_t k = 0; k < 6; ++k) {
                double lo = INFINITY, hi = -INFINITY;
                for (int i = 0; i < n; ++i) {
                    lo = std::min(lo, raw[i][k]);
                    hi = std::max(hi, raw[i][k]);
                    CHECK(a[i][k] >= lo - 1e-12);
                    CHECK(a[i][k] <= hi + 1e-12);
                }
            }
        }
    }
}

TEST_SUITE("cross_variate_block") {
    TEST_CASE("single target attends only to itself") {
        const CitrasConfig cfg = gen::tiny_config(8, 2, 4);
        const auto p = CitrasParams::init(cfg, 14);
        std::mt19937_64 rng(14);
        TokenGrid g{{constant(gen::normal_tensor(rng, {3, 8}))}, {}, {}};
        AttentionTrace trace(1, 2, 3);
        cross_variate_block(g, bind(p).layers[0].variate, cfg, {}, &trace, 0);
        for (std::size_t h = 0; h < 2; ++h) {
            for (std::size_t i = 0; i < 3; ++i) CHECK(trace.at(0, h, i).weights.at(0, 0) == 1.0);
        }
    }

    TEST_CASE("covariate tokens pass through unchanged") {
        const CitrasConfig cfg = gen::tiny_config(8, 2, 4);
        const auto p = CitrasParams::init(cfg, 15);
        std::mt19937_64 rng(15);
        TokenGrid g{{constant(gen::normal_tensor(rng, {3, 8})), constant(gen::normal_tensor(rng, {3, 8}))},
                    {constant(gen::normal_tensor(rng, {3, 8}))},
                    {constant(gen::normal_tensor(rng, {4, 8}))}};
        const Tensor obs = g.observed[0].value(), knw = g.known[0].value(), tgt = g.target[0].value();
        cross_variate_block(g, bind(p).layers[0].variate, cfg);
        CHECK(g.observed[0].value() == obs);
        CHECK(g.known[0].value() == knw);
        CHECK_FALSE(g.target[0].value() == tgt);
    }
}

TEST_SUITE("forward") {
    TEST_CASE("paper-scale output shape") {
        const auto p = CitrasParams::init(CitrasConfig{}, 1);
        std::mt19937_64 rng(16);
        const auto r = forward(gen::window(rng, 168, 24, 1, 0, 2), p);
        CHECK(r.predictions.shape() == Shape{7, 1, 24});
        CHECK(r.predictions.all_finite());
    }

    TEST_CASE("matches the loop reimplementation") {
        std::mt19937_64 rng(17);
        for (int trial = 0; trial < 10; ++trial) {
            CitrasConfig cfg = gen::tiny_config(8, 2, 4);
            cfg.layers = 1 + trial % 2;
            cfg.alpha = 0.3;
            cfg.use_kv_shift = trial % 3 != 2;
            const auto p = CitrasParams::init(cfg, rng());
            const Window w = gen::window(rng, 12, 4, 2, trial % 2, 1);
            const Tensor got = forward(w, p).predictions;
            const auto expect = ref::forward(w, p);
            for (std::size_t i = 0; i < 3; ++i) {
                for (std::size_t c = 0; c < 2; ++c) {
                    for (std::size_t k = 0; k < 4; ++k) CHECK(std::abs(got[(i * 2 + c) * 4 + k] - expect[i][c][k]) < 1e-8);
                }
            }
        }
    }

    TEST_CASE("zeroing the next known patch moves the current prediction") {
        CitrasConfig cfg = gen::tiny_config(8, 2, 4);
        const auto p = CitrasParams::init(cfg, 18);
        std::mt19937_64 rng(18);
        const Window w = gen::window(rng, 16, 4, 1, 0, 1);
        const auto base = forward(w, p, true);
        for (std::size_t i = 0; i < 4; ++i) {
            Window v = w;
            for (std::size_t t = (i + 1) * 4; t < (i + 2) * 4; ++t) v.known_extended[0][t] = 0.0;
            const Tensor moved = forward(v, p).predictions;
            const double weight = base.trace.at(0, 0, i).weights.at(0, 1);
            if (weight > 1e-6) {
                double diff = 0.0;
                for (std::size_t k = 0; k < 4; ++k) diff = std::max(diff, std::abs(moved[i * 4 + k] - base.predictions[i * 4 + k]));
                CHECK(diff > 0.0);
            }
        }
    }

    TEST_CASE("without the shift, known values past the lookback are ignored") {
        CitrasConfig cfg = gen::tiny_config(8, 2, 4);
        cfg.use_kv_shift = false;
        const auto p = CitrasParams::init(cfg, 19);
        std::mt19937_64 rng(19);
        const Window w = gen::window(rng, 16, 8, 1, 1, 2);
        Window v = w;
        for (auto& c : v.known_extended) {
            for (std::size_t t = 16; t < 24; ++t) c[t] = 50.0;
        }
        CHECK(forward(w, p).predictions == forward(v, p).predictions);
    }

    TEST_CASE("trace raw equals smoothed when smoothing is off") {
        CitrasConfig cfg = gen::tiny_config(8, 2, 4);
        std::mt19937_64 rng(20);
        const Window w = gen::window(rng, 16, 4, 2, 1, 1);
        for (int variant = 0; variant < 2; ++variant) {
            cfg.alpha = variant == 0 ? 1.0 : 0.2;
            cfg.use_ass = variant == 0;
            const auto tr = forward(w, CitrasParams::init(cfg, 20), true).trace;
            for (std::size_t h = 0; h < 2; ++h) {
                for (std::size_t i = 0; i < 4; ++i) CHECK(tr.at(0, h, i).raw == tr.at(0, h, i).smoothed);
            }
        }
    }

    TEST_CASE("window checks") {
        const CitrasConfig cfg = gen::tiny_config(8, 2, 4);
        const auto p = CitrasParams::init(cfg, 21);
        std::mt19937_64 rng(21);
        CHECK_THROWS_AS(forward(gen::window(rng, 10, 4, 1, 0, 0), p), DivisibilityError);
        Window w = gen::window(rng, 16, 4, 1, 0, 1);
        w.known_extended[0].resize(16);
        CHECK_THROWS_AS(forward(w, p), AlignmentError);
    }

    TEST_CASE("operation counts follow the attention shapes") {
        const CitrasConfig cfg = gen::tiny_config(8, 2, 4);
        const auto p = CitrasParams::init(cfg, 22);
        std::mt19937_64 rng(22);
        reset_op_counts();
        forward(gen::window(rng, 16, 4, 2, 1, 1), p);
        // cross-time: 4 variates; targets and observed have 4 patches, known 5
        CHECK(op_counts().cross_time_macs == 2 * (3 * 2 * 16 * 4 + 2 * 25 * 4));
        // cross-variate: 4 steps x 2 heads x (scores + weighted values)
        CHECK(op_counts().cross_variate_macs == 4 * 2 * 2 * (2 * 4 * 4));
    }
}
