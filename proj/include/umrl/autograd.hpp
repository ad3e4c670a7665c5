#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "umrl/tensor.hpp"

namespace umrl::nn {

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    Tensor& ensure_grad();
};

/// Handle to a value in the autodiff graph. Copies share the node.
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    bool defined() const { return static_cast<bool>(node_); }
    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    Tensor& mutable_grad() { return node_->ensure_grad(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    const std::shared_ptr<Node>& node() const { return node_; }

    double item() const;
    void zero_grad();

private:
    std::shared_ptr<Node> node_;
};

Var parameter(Tensor value);
Var constant(Tensor value);

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

/// Reverse sweep from a scalar root; accumulates into every reachable
/// node that requires grad.
void backward(const Var& root);

// Elementwise
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var affine(const Var& x, double scale, double shift);
Var relu(const Var& x);
Var sigmoid(const Var& x);
Var tanh(const Var& x);
Var clamp(const Var& x, double lo, double hi);

// Feature-map ops on {C, H, W}
Var conv2d(const Var& x, const Var& weight, const Var& bias, int padding);
Var concat_channels(const std::vector<Var>& parts);
Var avg_pool2(const Var& x);
Var upsample_nearest2(const Var& x);
Var resize_half(const Var& x);
Var resize_double(const Var& x);

struct BatchNormState {
    Tensor running_mean;
    Tensor running_var;
    double momentum = 0.1;
    double eps = 1e-5;
};

/// Per-channel normalization over H x W using the sample's own statistics;
/// folds them into the running estimates with the state's momentum.
Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state);

/// Normalization with the running estimates. Never writes to `state`.
Var batch_norm_eval(const Var& x, const Var& gamma, const Var& beta, const BatchNormState& state);

// Reductions to a {1} scalar
Var sum(const Var& x);
Var sum_abs(const Var& x);
Var sum_log(const Var& x);
Var sum_square(const Var& x);
Var scale(const Var& x, double s);

} // namespace umrl::nn
