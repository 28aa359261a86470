// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "core/tensor.hpp"

/// Tape-based automatic differentiation over Tensor values.
///
/// A Graph records every primitive evaluated through the free functions in
/// this namespace. Values are computed eagerly. The recorded tape can then be
/// swept backwards (vector-Jacobian products, gradients) or forwards with
/// tangents (Jacobian-vector products) as many times as needed, which is what
/// the conjugate-gradient solves in the likelihood score rely on.
///
/// A graph is confined to one thread. Build a fresh one per forward call.
namespace appa::ad {

class Graph;

class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  bool valid() const noexcept { return graph_ != nullptr; }
  Graph& graph() const { return *graph_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  const Shape& shape() const;

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

using BackwardFn =
    std::function<void(const Graph&, const Tensor& grad_out, std::span<Tensor* const> grad_in)>;
using TangentFn = std::function<Tensor(const Graph&, std::span<const Tensor* const> tangent_in)>;

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Tensor value);
  /// Differentiable leaf.
  Var input(Tensor value);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool differentiable(std::size_t id) const { return nodes_[id].differentiable; }
  const char* op_name(std::size_t id) const { return nodes_[id].op; }

  /// Reverse sweep from `output` seeded with `seed` (same shape as the
  /// output). Clears gradients left by earlier sweeps.
  void backward(Var output, const Tensor& seed);
  /// Reverse sweep from a scalar output with seed 1.
  void backward(Var scalar_output);
  /// Gradient accumulated at `v` by the last backward sweep (zeros if none).
  Tensor grad(Var v) const;

  /// Forward tangent sweep: J·v for the map inputs -> output.
  Tensor jvp(std::span<const Var> inputs, std::span<const Tensor> tangents, Var output) const;

  /// Used by primitive implementations.
  Var record(const char* op, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward,
             TangentFn tangent);

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    bool differentiable = false;
    const char* op = "leaf";
    BackwardFn backward;
    TangentFn tangent;
  };
  std::vector<Node> nodes_;
  std::vector<std::optional<Tensor>> grads_;
};

enum class Padding { kZero, kPeriodic };

// Elementwise, equal shapes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// a * c for a constant tensor c of the same shape.
Var mul_const(Var a, const Tensor& c);
Var add_const(Var a, const Tensor& c);
Var tanh(Var a);
Var gelu(Var a);

/// [n, k] x [k, m] -> [n, m].
Var matmul(Var a, Var b);
/// a [n, m] + b [m] broadcast over rows.
Var add_row(Var a, Var b);
/// x W + b.
Var affine(Var x, Var weight, Var bias);
/// v [m] -> [n, m].
Var broadcast_rows(Var v, std::size_t n);

Var sum(Var a);
Var mean(Var a);

Var reshape(Var a, Shape shape);
/// Rows [begin, end) along axis 0.
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var concat(std::span<const Var> parts, std::size_t axis);
/// out.flat[i] = a.flat[indices[i]], reshaped to `shape`.
Var gather(Var a, std::shared_ptr<const std::vector<std::size_t>> indices, Shape shape);

/// NHWC convolution. x [N, H, W, C], weight [KH, KW, C, O], optional bias [O].
/// Centered padding of (K-1)/2 with the given mode per axis; H and W must be
/// divisible by the stride.
Var conv2d(Var x, Var weight, std::optional<Var> bias, std::size_t stride, Padding pad_y,
           Padding pad_x);
/// x [N, L, C], weight [K, C, O], optional bias [O].
Var conv1d(Var x, Var weight, std::optional<Var> bias, Padding pad);

/// Index map for space-to-depth on NHWC tensors: [N, H, W, C] ->
/// [N, H/f, W/f, f*f*C]. Use with gather(); the inverse permutation gives
/// depth-to-space.
std::vector<std::size_t> space_to_depth_indices(std::size_t n, std::size_t h, std::size_t w,
                                                std::size_t c, std::size_t factor);
std::vector<std::size_t> depth_to_space_indices(std::size_t n, std::size_t h, std::size_t w,
                                                std::size_t c, std::size_t factor);

// ---------------------------------------------------------------------------
// Function-level transforms.

using Function = std::function<Var(Graph&, Var)>;
using ScalarFunction = std::function<Var(Graph&, std::span<const Var>)>;

/// Gradients of a scalar-valued f with respect to each parameter.
std::vector<Tensor> grad(const ScalarFunction& f, const std::vector<Tensor>& params);
/// J·v where J = df/dx.
Tensor jvp(const Function& f, const Tensor& x, const Tensor& v);
/// Jᵀ·u where J = df/dx.
Tensor vjp(const Function& f, const Tensor& x, const Tensor& u);

/// f recorded once at x; jvp/vjp reuse the tape.
class Linearization {
 public:
  Linearization(const Function& f, const Tensor& x);

  const Tensor& value() const { return output_.value(); }
  Tensor jvp(const Tensor& v) const;
  Tensor vjp(const Tensor& u);

 private:
  std::unique_ptr<Graph> graph_;
  Var input_;
  Var output_;
};

}  // namespace appa::ad
