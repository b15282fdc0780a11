#include "citras/params.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "citras/errors.hpp"

namespace citras {

ParamStore::ParamStore(const ParamStore& other) : index_(other.index_) {
    entries_.reserve(other.entries_.size());
    for (const auto& e : other.entries_) entries_.push_back(std::make_unique<ParamEntry>(*e));
    rebind_owner();
}

ParamStore& ParamStore::operator=(const ParamStore& other) {
    if (this != &other) {
        ParamStore copy(other);
        *this = std::move(copy);
    }
    return *this;
}

ParamStore::ParamStore(ParamStore&& other) noexcept : entries_(std::move(other.entries_)), index_(std::move(other.index_)) {
    rebind_owner();
}

ParamStore& ParamStore::operator=(ParamStore&& other) noexcept {
    entries_ = std::move(other.entries_);
    index_ = std::move(other.index_);
    rebind_owner();
    return *this;
}

void ParamStore::rebind_owner() {
    for (auto& e : entries_) e->owner = this;
}

ParamEntry& ParamStore::add(const std::string& name, Tensor init) {
    if (index_.contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
    auto entry = std::make_unique<ParamEntry>();
    entry->name = name;
    entry->grad = Tensor(init.shape(), 0.0);
    entry->value = std::move(init);
    entry->owner = this;
    index_.emplace(name, entries_.size());
    entries_.push_back(std::move(entry));
    return *entries_.back();
}

bool ParamStore::contains(const std::string& name) const { return index_.contains(name); }

ParamEntry& ParamStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
    return *entries_[it->second];
}

const ParamEntry& ParamStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
    return *entries_[it->second];
}

Var ParamStore::var(const std::string& name) const { return var(at(name)); }

Var ParamStore::var(const ParamEntry& entry) const {
    auto node = std::make_shared<Node>();
    node->value = entry.value;
    // backward() only writes through this pointer for the store it is given.
    node->param = const_cast<ParamEntry*>(&entry);
    return Var(std::move(node));
}

void ParamStore::zero_grad() {
    for (auto& e : entries_) {
        e->grad.fill(0.0);
        e->has_grad = false;
    }
}

void ParamStore::accumulate_grad(const std::string& name, const Tensor& grad) {
    ParamEntry& e = at(name);
    if (!grad.same_shape(e.value)) {
        throw DimensionError("gradient for '" + name + "' has shape " + shape_string(grad.shape()) + ", expected " +
                             shape_string(e.value.shape()));
    }
    for (std::size_t i = 0; i < grad.size(); ++i) e.grad[i] += grad[i];
    e.has_grad = true;
}

std::size_t ParamStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e->value.size();
    return n;
}

std::vector<Tensor> ParamStore::snapshot() const {
    std::vector<Tensor> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e->value);
    return out;
}

void ParamStore::restore(const std::vector<Tensor>& values) {
    if (values.size() != entries_.size()) throw ContractError("restore: parameter count mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!values[i].same_shape(entries_[i]->value)) {
            throw DimensionError("restore: shape mismatch for '" + entries_[i]->name + "'");
        }
        entries_[i]->value = values[i];
    }
}

void backward(const Var& loss, ParamStore& params) {
    if (!loss) throw ContractError("backward on an empty variable");
    if (loss.value().size() != 1) {
        throw ContractError("backward requires a scalar loss, got shape " + shape_string(loss.shape()));
    }

    // Iterative post-order DFS gives a topological order (parents first).
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* n : order) n->grad = Tensor();
    loss.node()->grad_buffer()[0] = 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node& n = **it;
        if (n.grad.empty()) continue;
        if (n.backprop) n.backprop(n);
        if (n.param && n.param->owner == &params) {
            ParamEntry& e = *n.param;
            for (std::size_t i = 0; i < e.grad.size(); ++i) e.grad[i] += n.grad[i];
            e.has_grad = true;
        }
    }
    // Leaves unreachable from any gradient still count as visited by the sweep.
    for (Node* n : order) {
        if (n->param && n->param->owner == &params) n->param->has_grad = true;
    }
}

GradCheckResult grad_check(const ScalarFn& f, ParamStore& params, double eps) {
    if (!(eps >= 1e-6 && eps <= 1e-4)) throw ContractError("grad_check eps must lie in [1e-6, 1e-4]");

    params.zero_grad();
    const Var loss = f(params);
    if (loss.value().size() != 1) throw ContractError("grad_check requires a scalar function");
    const double base = loss.value()[0];
    backward(loss, params);

    auto evaluate = [&]() {
        NoGradGuard guard;
        const Var v = f(params);
        return v.value()[0];
    };
    if (evaluate() != base) throw DeterminismError("grad_check: two evaluations of f at the same point differ");

    GradCheckResult result;
    for (auto& entry : params) {
        for (std::size_t i = 0; i < entry->value.size(); ++i) {
            const double saved = entry->value[i];
            entry->value[i] = saved + eps;
            const double plus = evaluate();
            entry->value[i] = saved - eps;
            const double minus = evaluate();
            entry->value[i] = saved;

            const double fd = (plus - minus) / (2.0 * eps);
            const double a = entry->grad[i];
            const double denom = std::max({std::abs(a), std::abs(fd), 1e-8});
            const double rel = std::abs(a - fd) / denom;
            if (rel > result.max_rel_error) {
                result = {rel, entry->name, i, a, fd};
            }
        }
    }
    return result;
}

}  // namespace citras
