#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "citras/tensor.hpp"

namespace citras {

struct ParamEntry;

// Boolean permission mask aligned with the last axis of a logits tensor.
// allow[i] != 0 keeps logit i; masked entries receive exactly zero weight.
struct Mask {
    Shape shape;
    std::vector<std::uint8_t> allow;

    static Mask causal(std::size_t n);
};

// Node of the reverse-mode tape. Interior nodes own a closure that pushes
// their gradient into their parents; leaves bound to a ParamStore entry
// forward their gradient into that entry during backward().
struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;
    ParamEntry* param = nullptr;

    Tensor& grad_buffer();
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    const Tensor& value() const { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t rows() const { return node_->value.rows(); }
    std::size_t cols() const { return node_->value.cols(); }
    const std::shared_ptr<Node>& node() const noexcept { return node_; }
    explicit operator bool() const noexcept { return static_cast<bool>(node_); }

private:
    std::shared_ptr<Node> node_;
};

// Graph recording is on by default. While a NoGradGuard is alive on the
// current thread, ops produce plain values without parents or closures.
bool grad_enabled() noexcept;

class NoGradGuard {
public:
    NoGradGuard() noexcept;
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

Var constant(Tensor value);

Var matmul(const Var& a, const Var& b);
Var linear(const Var& x, const Var& weight, const Var& bias);
Var linear(const Var& x, const Var& weight);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
// a * factor + shift, elementwise with scalar constants.
Var affine(const Var& a, double factor, double shift);
Var relu(const Var& a);
Var transpose(const Var& a);
Var slice_rows(const Var& a, std::size_t begin, std::size_t end);
Var slice_cols(const Var& a, std::size_t begin, std::size_t end);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var reshape(const Var& a, Shape shape);
Var sum(const Var& a);
Var mean(const Var& a);
Var mean_squared_error(const Var& prediction, const Tensor& target);

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps);
Var masked_softmax(const Var& logits, const Mask* mask = nullptr);

// Rotary position embedding on consecutive coordinate pairs of each row.
// Row r is rotated by angle (first_position + r) * base^(-2j/d) for pair j.
Var rope(const Var& x, double base, std::size_t first_position = 0);

// Value-only counterparts shared by the ops above.
Tensor masked_softmax(const Tensor& logits, const Mask* mask = nullptr);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
Tensor rope(const Tensor& x, double base, std::size_t first_position = 0);
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

}  // namespace citras
