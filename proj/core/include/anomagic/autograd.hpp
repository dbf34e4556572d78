// Copyright 2026 The Anomagic Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "anomagic/tensor.hpp"

// Minimal reverse-mode automatic differentiation over Tensor.
//
// A Var is a shared handle to a graph node. Ops build new nodes; a node keeps
// its parents alive only when some input requires a gradient, so inference
// passes over frozen weights allocate no graph.

namespace anomagic::ad {

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var constant(Tensor value);
  static Var leaf(Tensor value, bool requires_grad);

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  /// Gradient accumulated by the last backward(); zeros if none reached this node.
  Tensor grad() const;
  void zero_grad();

  const std::shared_ptr<Node>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Seeds d(out)/d(out) = 1 (out must be a single element) and propagates.
void backward(const Var& out);

// Elementwise (same shape).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var square(const Var& a);
Var silu(const Var& a);
Var tanh(const Var& a);

// Linear algebra on 2-D tensors.
Var matmul(const Var& a, const Var& b, bool transpose_b = false);
Var transpose(const Var& a);
Var add_row_bias(const Var& a, const Var& bias);      // a[m,n] + bias[n]
Var add_channel_bias(const Var& a, const Var& bias);  // a[C,...] + bias[C]
Var softmax_rows(const Var& a);
Var layer_norm_rows(const Var& a, const Var& gamma, const Var& beta, double eps = 1e-5);
Var mean_rows(const Var& a);  // [m,n] -> [1,n]

// Structural.
Var reshape(const Var& a, Shape shape);
Var concat0(std::span<const Var> parts);  // along the leading axis
Var concat_cols(std::span<const Var> parts);
Var slice_cols(const Var& a, std::size_t begin, std::size_t end);

// Feature maps [C, H, W].
Var conv2d(const Var& x, const Var& weight, const Var& bias, std::size_t padding);
Var avg_pool(const Var& x, std::size_t factor);
Var upsample_nearest(const Var& x, std::size_t factor);

// Reductions to a single element.
Var sum(const Var& a);
Var mean(const Var& a);

}  // namespace anomagic::ad
