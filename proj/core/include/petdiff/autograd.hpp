// Copyright (C) 2026 The petdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <memory>
#include <random>
#include <utility>
#include <vector>

#include "petdiff/tensor.hpp"

// Minimal reverse-mode differentiation over (N, C, H, W) tensors. Every op
// records its parents and a closure that pushes the output gradient back; a
// graph lives exactly as long as the Vars that reference it.
namespace petdiff::ag {

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Tensor& grad_buffer();
    void accumulate(const Tensor& g);
};

class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);

    bool defined() const noexcept { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }

    /// Gradient accumulated by backward(); empty tensor if none reached this node.
    const Tensor& grad() const { return node_->grad; }
    void zero_grad();

    /// Runs reverse accumulation from this scalar.
    void backward() const;

    const std::shared_ptr<Node>& node() const noexcept { return node_; }

    static Var from_node(std::shared_ptr<Node> n) {
        Var v;
        v.node_ = std::move(n);
        return v;
    }

private:
    std::shared_ptr<Node> node_;
};

bool grad_enabled() noexcept;

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

using BackwardFn = std::function<void(Node& out)>;

/// Builds a node from an already computed value. `fn` receives the output node
/// and must accumulate into whichever parents require grad.
Var make_result(Tensor value, std::vector<Var> parents, BackwardFn fn);

Var detach(const Var& x);

// Convolution over (N, C, H, W) with square kernels, stride 1, zero padding.
// `bias` may be undefined.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int pad);

// (N, D) x (O, D)^T + b
Var linear(const Var& x, const Var& weight, const Var& bias);

Var add(const Var& a, const Var& b);
Var scale(const Var& a, double s);

// x * (1 + scale) + shift, with scale/shift of shape (N, C) broadcast spatially.
Var film(const Var& x, const Var& scale, const Var& shift);

// Adds a per-sample (N, C) vector to every spatial location.
Var add_channel_vector(const Var& x, const Var& v);

Var group_norm(const Var& x, int groups, const Var& gamma, const Var& beta, double eps = 1e-5);
Var silu(const Var& x);
Var concat_channels(const std::vector<Var>& xs);
Var slice_channels(const Var& x, std::int64_t begin, std::int64_t end);
Var avg_pool2(const Var& x);
Var upsample_nearest2(const Var& x);

// Multi-head self-attention over spatial positions; qkv is (N, 3C, H, W).
Var spatial_attention(const Var& qkv, int heads);

// Inverted dropout; identity when p == 0.
Var dropout(const Var& x, double p, std::mt19937_64& rng);

// Mean squared difference; scalar output.
Var mse(const Var& a, const Var& b);

// sum_i w_i * s_i over scalars.
Var weighted_sum(const std::vector<std::pair<double, Var>>& terms);

}  // namespace petdiff::ag
