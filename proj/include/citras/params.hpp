#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "citras/autodiff.hpp"

namespace citras {

class ParamStore;

struct ParamEntry {
    std::string name;
    Tensor value;
    Tensor grad;
    bool has_grad = false;  // set once backward() reaches this parameter
    const ParamStore* owner = nullptr;
};

// Named learnable tensors with a gradient accumulator each. Iteration order
// is registration order.
class ParamStore {
public:
    ParamStore() = default;
    ParamStore(const ParamStore& other);
    ParamStore& operator=(const ParamStore& other);
    ParamStore(ParamStore&&) noexcept;
    ParamStore& operator=(ParamStore&&) noexcept;
    ~ParamStore() = default;

    ParamEntry& add(const std::string& name, Tensor init);
    bool contains(const std::string& name) const;
    ParamEntry& at(const std::string& name);
    const ParamEntry& at(const std::string& name) const;

    // Leaf variable whose gradient flows into this entry on backward().
    Var var(const std::string& name) const;
    Var var(const ParamEntry& entry) const;

    void zero_grad();
    void accumulate_grad(const std::string& name, const Tensor& grad);

    std::size_t size() const noexcept { return entries_.size(); }
    std::size_t scalar_count() const;

    std::vector<Tensor> snapshot() const;
    void restore(const std::vector<Tensor>& values);

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.cbegin(); }
    auto end() const { return entries_.cend(); }

private:
    void rebind_owner();

    std::vector<std::unique_ptr<ParamEntry>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Reverse sweep from a scalar loss. Gradients of leaves bound to `params`
// are added to their accumulators; call zero_grad() to reset.
void backward(const Var& loss, ParamStore& params);

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

using ScalarFn = std::function<Var(ParamStore&)>;

// Central finite differences against backward() for every parameter entry.
// Relative error is |a - fd| / max(|a|, |fd|, 1e-8).
GradCheckResult grad_check(const ScalarFn& f, ParamStore& params, double eps = 1e-5);

}  // namespace citras
