#include "gradient_suite.hpp"

#include <random>

#include "citras/model.hpp"
#include "citras/training.hpp"
#include "reference.hpp"

namespace gen {

using namespace citras;

namespace {

// Random linear functional of y, so every output entry carries its own weight.
Var probe(const Var& y, std::mt19937_64& rng) { return sum(mul(y, constant(normal_tensor(rng, y.shape())))); }

// Entries bounded away from zero so relu stays off its kink under FD steps.
Tensor away_from_zero(std::mt19937_64& rng, Shape shape) {
    Tensor t = normal_tensor(rng, std::move(shape));
    for (auto& v : t.values()) v = v < 0 ? v - 0.1 : v + 0.1;
    return t;
}

}  // namespace

std::vector<PrimitiveCheck> primitive_grad_checks(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<PrimitiveCheck> out;
    auto run = [&](const std::string& name, ParamStore store, auto build) {
        const std::uint64_t probe_seed = rng();
        ScalarFn f = [&, probe_seed](ParamStore& p) {
            std::mt19937_64 r(probe_seed);
            return probe(build(p), r);
        };
        out.push_back({name, grad_check(f, store, 1e-5)});
    };

    ParamStore two;
    two.add("a", normal_tensor(rng, {3, 4}));
    two.add("b", normal_tensor(rng, {4, 2}));
    run("matmul", two, [](ParamStore& p) { return matmul(p.var("a"), p.var("b")); });

    ParamStore lin;
    lin.add("x", normal_tensor(rng, {3, 4}));
    lin.add("w", normal_tensor(rng, {4, 5}));
    lin.add("b", normal_tensor(rng, {5}));
    run("linear", lin, [](ParamStore& p) { return linear(p.var("x"), p.var("w"), p.var("b")); });

    ParamStore pair;
    pair.add("a", normal_tensor(rng, {3, 4}));
    pair.add("b", normal_tensor(rng, {3, 4}));
    run("add", pair, [](ParamStore& p) { return add(p.var("a"), p.var("b")); });
    run("sub", pair, [](ParamStore& p) { return sub(p.var("a"), p.var("b")); });
    run("mul", pair, [](ParamStore& p) { return mul(p.var("a"), p.var("b")); });

    ParamStore one;
    one.add("x", away_from_zero(rng, {3, 4}));
    run("scale", one, [](ParamStore& p) { return scale(p.var("x"), -1.7); });
    run("affine", one, [](ParamStore& p) { return affine(p.var("x"), 0.6, 2.0); });
    run("relu", one, [](ParamStore& p) { return relu(p.var("x")); });
    run("transpose", one, [](ParamStore& p) { return transpose(p.var("x")); });
    run("slice_rows", one, [](ParamStore& p) { return slice_rows(p.var("x"), 1, 3); });
    run("slice_cols", one, [](ParamStore& p) { return slice_cols(p.var("x"), 1, 4); });
    run("reshape", one, [](ParamStore& p) { return reshape(p.var("x"), {2, 6}); });
    run("sum", one, [](ParamStore& p) { return sum(p.var("x")); });
    run("mean", one, [](ParamStore& p) { return mean(p.var("x")); });
    run("concat_rows", one, [](ParamStore& p) {
        const Var x = p.var("x");
        const Var parts[] = {x, slice_rows(x, 0, 2)};
        return concat_rows(parts);
    });
    run("concat_cols", one, [](ParamStore& p) {
        const Var x = p.var("x");
        const Var parts[] = {slice_cols(x, 2, 4), x};
        return concat_cols(parts);
    });
    const Tensor target = normal_tensor(rng, {3, 4});
    run("mean_squared_error", one, [target](ParamStore& p) { return mean_squared_error(p.var("x"), target); });
    run("masked_softmax", one, [](ParamStore& p) { return masked_softmax(p.var("x")); });

    ParamStore square;
    square.add("x", normal_tensor(rng, {4, 4}));
    run("masked_softmax_causal", square, [](ParamStore& p) {
        static const Mask mask = Mask::causal(4);
        return masked_softmax(p.var("x"), &mask);
    });
    run("rope", square, [](ParamStore& p) { return rope(p.var("x"), 10000.0, 3); });

    ParamStore ln;
    ln.add("x", normal_tensor(rng, {3, 5}));
    ln.add("gamma", normal_tensor(rng, {5}));
    ln.add("beta", normal_tensor(rng, {5}));
    run("layer_norm", ln, [](ParamStore& p) { return layer_norm(p.var("x"), p.var("gamma"), p.var("beta"), 1e-5); });
    return out;
}

GradCheckResult full_model_grad_check(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    CitrasConfig cfg = tiny_config(16, 2, 4);
    cfg.alpha = 0.4;
    CitrasParams params = CitrasParams::init(cfg, seed);
    // Non-trivial norms and biases so every parameter gets a generic gradient.
    for (auto& e : params.store) {
        if (e->name.find("norm") != std::string::npos || e->name.find("bias") != std::string::npos ||
            e->name.find(".b") != std::string::npos) {
            for (auto& v : e->value.values()) v += 0.2 * std::normal_distribution<double>(0.0, 1.0)(rng);
        }
    }
    const Window w = window(rng, 16, 4, 2, 1, 1);
    ScalarFn f = [&](ParamStore& store) {
        const ModelVars vars = ModelVars::bind(store, cfg);
        return next_patch_loss(forward_graph(w, cfg, vars), w, cfg.patch);
    };
    return grad_check(f, params.store, 1e-5);
}

}  // namespace gen
