// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "core/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "core/error.hpp"

namespace appa::ad {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMap(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MutMap as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
  return MutMap(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void same_graph(Var a, Var b) {
  check(a.valid() && b.valid() && &a.graph() == &b.graph(), ErrorCode::kInvalidArgument,
        "variables belong to different graphs");
}

void same_shape(Var a, Var b, const char* op) {
  same_graph(a, b);
  check(a.shape() == b.shape(), ErrorCode::kShapeMismatch, "{}: shape {} vs {}", op,
        shape_string(a.shape()), shape_string(b.shape()));
}

Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

// Tangent of an elementwise unary op: derivative(x) * dx.
template <typename Deriv>
TangentFn unary_tangent(std::size_t in, Deriv deriv) {
  return [in, deriv](const Graph& g, std::span<const Tensor* const> t) {
    const Tensor& x = g.value(in);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = deriv(x[i]) * (*t[0])[i];
    return out;
  };
}

template <typename Deriv>
BackwardFn unary_backward(std::size_t in, Deriv deriv) {
  return [in, deriv](const Graph& g, const Tensor& go, std::span<Tensor* const> gi) {
    const Tensor& x = g.value(in);
    Tensor& dx = *gi[0];
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] += deriv(x[i]) * go[i];
  };
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_deriv(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

double tanh_deriv(double x) {
  const double t = std::tanh(x);
  return 1.0 - t * t;
}

}  // namespace

const Tensor& Var::value() const { return graph_->value(id_); }
const Shape& Var::shape() const { return graph_->value(id_).shape(); }

Var Graph::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  node.op = "constant";
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::input(Tensor value) {
  Node node;
  node.value = std::move(value);
  node.differentiable = true;
  node.op = "input";
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(const char* op, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward,
                  TangentFn tangent) {
  if (!value.all_finite()) fail(ErrorCode::kNumerical, "non-finite value produced by op '{}'", op);
  Node node;
  node.value = std::move(value);
  node.op = op;
  node.differentiable =
      std::any_of(inputs.begin(), inputs.end(), [this](std::size_t i) { return nodes_[i].differentiable; });
  node.inputs = std::move(inputs);
  node.backward = std::move(backward);
  node.tangent = std::move(tangent);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Graph::backward(Var output, const Tensor& seed) {
  check(&output.graph() == this, ErrorCode::kInvalidArgument, "backward on a foreign variable");
  check(seed.shape() == output.shape(), ErrorCode::kShapeMismatch, "backward seed {} vs output {}",
        shape_string(seed.shape()), shape_string(output.shape()));
  grads_.assign(nodes_.size(), std::nullopt);
  grads_[output.id()] = seed;
  std::vector<Tensor*> in_grads;
  for (std::size_t id = output.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!grads_[id] || !node.differentiable || !node.backward) continue;
    in_grads.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const std::size_t in = node.inputs[k];
      if (!nodes_[in].differentiable) continue;
      if (!grads_[in]) grads_[in] = zeros_like(nodes_[in].value);
      in_grads[k] = &*grads_[in];
    }
    node.backward(*this, *grads_[id], in_grads);
  }
}

void Graph::backward(Var scalar_output) {
  check(scalar_output.value().size() == 1, ErrorCode::kShapeMismatch,
        "gradient requires a scalar output, got shape {}", shape_string(scalar_output.shape()));
  backward(scalar_output, Tensor(scalar_output.shape(), 1.0));
}

Tensor Graph::grad(Var v) const {
  if (v.id() < grads_.size() && grads_[v.id()]) return *grads_[v.id()];
  return zeros_like(v.value());
}

Tensor Graph::jvp(std::span<const Var> inputs, std::span<const Tensor> tangents, Var output) const {
  check(inputs.size() == tangents.size(), ErrorCode::kInvalidArgument, "jvp: {} inputs, {} tangents",
        inputs.size(), tangents.size());
  std::vector<std::optional<Tensor>> tan(output.id() + 1);
  std::size_t first = output.id();
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    check(tangents[k].shape() == inputs[k].shape(), ErrorCode::kShapeMismatch,
          "jvp: tangent {} does not match input {}", shape_string(tangents[k].shape()),
          shape_string(inputs[k].shape()));
    if (inputs[k].id() > output.id()) continue;
    tan[inputs[k].id()] = tangents[k];
    first = std::min(first, inputs[k].id());
  }
  std::vector<const Tensor*> in_tan;
  for (std::size_t id = first; id <= output.id(); ++id) {
    const Node& node = nodes_[id];
    if (tan[id] || node.inputs.empty()) continue;
    bool any = false;
    for (std::size_t in : node.inputs) any = any || tan[in].has_value();
    if (!any) continue;
    // Missing input tangents are zero; materialize them so primitives see a
    // uniform interface.
    std::vector<Tensor> zeros;
    zeros.reserve(node.inputs.size());
    in_tan.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const std::size_t in = node.inputs[k];
      if (tan[in]) {
        in_tan[k] = &*tan[in];
      } else {
        zeros.push_back(zeros_like(nodes_[in].value));
        in_tan[k] = &zeros.back();
      }
    }
    tan[id] = node.tangent(*this, in_tan);
  }
  if (tan[output.id()]) return *tan[output.id()];
  return zeros_like(output.value());
}

// ---------------------------------------------------------------------------
// Primitives

Var add(Var a, Var b) {
  same_shape(a, b, "add");
  return a.graph().record(
      "add", a.value() + b.value(), {a.id(), b.id()},
      [](const Graph&, const Tensor& go, std::span<Tensor* const> gi) {
        if (gi[0]) *gi[0] += go;
        if (gi[1]) *gi[1] += go;
      },
      [](const Graph&, std::span<const Tensor* const> t) { return *t[0] + *t[1]; });
}

Var sub(Var a, Var b) {
  same_shape(a, b, "sub");
  return a.graph().record(
      "sub", a.value() - b.value(), {a.id(), b.id()},
      [](const Graph&, const Tensor& go, std::span<Tensor* const> gi) {
        if (gi[0]) *gi[0] += go;
        if (gi[1]) *gi[1] -= go;
      },
      [](const Graph&, std::span<const Tensor* const> t) { return *t[0] - *t[1]; });
}

Var mul(Var a, Var b) {
  same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record(
      "mul", std::move(out), {ia, ib},
      [ia, ib](const Graph& g, const Tensor& go, std::span<Tensor* const> gi) {
        const Tensor& av = g.value(ia);
        const Tensor& bv = g.value(ib);
        if (gi[0])
          for (std::size_t i = 0; i < go.size(); ++i) (*gi[0])[i] += go[i] * bv[i];
        if (gi[1])
          for (std::size_t i = 0; i < go.size(); ++i) (*gi[1])[i] += go[i] * av[i];
      },
      [ia, ib](const Graph& g, std::span<const Tensor* const> t) {
        const Tensor& av = g.value(ia);
        const Tensor& bv = g.value(ib);
        Tensor out(av.shape());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*t[0])[i] * bv[i] + av[i] * (*t[1])[i];
        return out;
      });
}

Var scale(Var a, double s) {
  return a.graph().record(
      "scale", a.value() * s, {a.id()},
      [s](const Graph&, const Tensor& go, std::span<Tensor* const> gi) {
        Tensor& dx = *gi[0];
        for (std::size_t i = 0; i < go.size(); ++i) dx[i] += s * go[i];
      },
      [s](const Graph&, std::span<const Tensor* const> t) { return *t[0] * s; });
}

Var mul_const(Var a, const Tensor& c) {
  check(a.shape() == c.shape(), ErrorCode::kShapeMismatch, "mul_const: shape {} vs {}",
        shape_string(a.shape()), shape_string(c.shape()));
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c[i];
  auto factor = std::make_shared<const Tensor>(c);
  return a.graph().record(
      "mul_const", std::move(out), {a.id()},
      [factor](const Graph&, const Tensor& go, std::span<Tensor* const> gi) {
        Tensor& dx = *gi[0];
        for (std::size_t i = 0; i < go.size(); ++i) dx[i] += (*factor)[i] * go[i];
      },
      [factor](const Graph&, std::span<const Tensor* const> t) {
        Tensor out = *t[0];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*factor)[i];
        return out;
      });
}

Var add_const(Var a, const Tensor& c) {
  check(a.shape() == c.shape(), ErrorCode::kShapeMismatch, "add_const: shape {} vs {}",
        shape_string(a.shape()), shape_string(c.shape()));
  return a.graph().record(
      "add_const", a.value() + c, {a.id()},
      [](const Graph&, const Tensor& go, std::span<Tensor* const> gi) { *gi[0] += go; },
      [](const Graph&, std::span<const Tensor* const> t) { return *t[0]; });
}

Var tanh(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = std::tanh(v);
  return a.graph().record("tanh", std::move(out), {a.id()}, unary_backward(a.id(), tanh_deriv),
                          unary_tangent(a.id(), tanh_deriv));
}

Var gelu(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = gelu_value(v);
  return a.graph().record("gelu", std::move(out), {a.id()}, unary_backward(a.id(), gelu_deriv),
                          unary_tangent(a.id(), gelu_deriv));
}

Var matmul(Var a, Var b) {
  same_graph(a, b);
  check(a.shape().size() == 2 && b.shape().size() == 2 && a.shape()[1] == b.shape()[0],
        ErrorCode::kShapeMismatch, "matmul: {} x {}", shape_string(a.shape()), shape_string(b.shape()));
  const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  Tensor out({n, m});
  as_matrix(out, n, m).noalias() = as_matrix(a.value(), n, k) * as_matrix(b.value(), k, m);
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record(
      "matmul", std::move(out), {ia, ib},
      [ia, ib, n, k, m](const Graph& g, const Tensor& go, std::span<Tensor* const> gi) {
        auto G = as_matrix(go, n, m);
        if (gi[0]) as_matrix(*gi[0], n, k).noalias() += G * as_matrix(g.value(ib), k, m).transpose();
        if (gi[1]) as_matrix(*gi[1], k, m).noalias() += as_matrix(g.value(ia), n, k).transpose() * G;
      },
      [ia, ib, n, k, m](const Graph& g, std::span<const Tensor* const> t) {
        Tensor out({n, m});
        auto O = as_matrix(out, n, m);
        O.noalias() = as_matrix(*t[0], n, k) * as_matrix(g.value(ib), k, m);
        O.noalias() += as_matrix(g.value(ia), n, k) * as_matrix(*t[1], k, m);
        return out;
      });
}

Var add_row(Var a, Var b) {
  same_graph(a, b);
  check(a.shape().size() == 2 && b.shape().size() == 1 && a.shape()[1] == b.shape()[0],
        ErrorCode::kShapeMismatch, "add_row: {} + {}", shape_string(a.shape()), shape_string(b.shape()));
  const std::size_t n = a.shape()[0], m = a.shape()[1];
  Tensor out = a.value();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < m; ++c) out[r * m + c] += b.value()[c];
  return a.graph().record(
      "add_row", std::move(out), {a.id(), b.id()},
      [n, m](const Graph&, const Tensor& go, std::span<Tensor* const> gi) {
        if (gi[0]) *gi[0] += go;
        if (gi[1])
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < m; ++c) (*gi[1])[c] += go[r * m + c];
      },
      [n, m](const Graph&, std::span<const Tensor* const> t) {
        Tensor out = *t[0];
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < m; ++c) out[r * m + c] += (*t[1])[c];
        return out;
      });
}

Var affine(Var x, Var weight, Var bias) { return add_row(matmul(x, weight), bias); }

Var broadcast_rows(Var v, std::size_t n) {
  check(v.shape().size() == 1, ErrorCode::kShapeMismatch, "broadcast_rows expects a vector, got {}",
        shape_string(v.shape()));
  const std::size_t m = v.shape()[0];
  Tensor out({n, m});
  for (std::size_t r = 0; r < n; ++r)
    std::copy(v.value().data().begin(), v.value().data().end(), out.data().begin() + r * m);
  return v.graph().record(
      "broadcast_rows", std::move(out), {v.id()},
      [n, m](const Graph&, const Tensor& go, std::span<Tensor* const> gi) {
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < m; ++c) (*gi[0])[c] += go[r * m + c];
      },
      [n, m](const Graph&, std::span<const Tensor* const> t) {
        Tensor out({n, m});
        for (std::size_t r = 0; r < n; ++r)
          std::copy(t[0]->data().begin(), t[0]->data().end(), out.data().begin() + r * m);
        return out;
      });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.graph().record(
      "sum", Tensor::scalar(s), {a.id()},
      [](const Graph&, const Tensor& go, std::span<Tensor* const> gi) {
        for (double& v : gi[0]->data()) v += go[0];
      },
      [](const Graph&, std::span<const Tensor* const> t) {
        double s = 0.0;
        for (double v : t[0]->data()) s += v;
        return Tensor::scalar(s);
      });
}

Var mean(Var a) {
  check(a.value().size() > 0, ErrorCode::kShapeMismatch, "mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var reshape(Var a, Shape shape) {
  check(numel(shape) == a.value().size(), ErrorCode::kShapeMismatch, "reshape {} to {}",
        shape_string(a.shape()), shape_string(shape));
  const Shape in_shape = a.shape();
  Shape out_shape = shape;
  return a.graph().record(
      "reshape", a.value().reshaped(std::move(shape)), {a.id()},
      [](const Graph&, const Tensor& go, std::span<Tensor* const> gi) {
        auto dst = gi[0]->data();
        for (std::size_t i = 0; i < go.size(); ++i) dst[i] += go[i];
      },
      [out_shape](const Graph&, std::span<const Tensor* const> t) { return t[0]->reshaped(out_shape); });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  Tensor out = a.value().slice_rows(begin, end);
  const std::size_t stride = a.shape()[0] ? a.value().size() / a.shape()[0] : 0;
  const std::size_t offset = begin * stride;
  return a.graph().record(
      "slice_rows", std::move(out), {a.id()},
      [offset](const Graph&, const Tensor& go, std::span<Tensor* const> gi) {
        auto dst = gi[0]->data();
        for (std::size_t i = 0; i < go.size(); ++i) dst[offset + i] += go[i];
      },
      [begin, end](const Graph&, std::span<const Tensor* const> t) { return t[0]->slice_rows(begin, end); });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  check(!parts.empty(), ErrorCode::kInvalidArgument, "concat of zero tensors");
  const Shape& first = parts[0].shape();
  check(axis < first.size(), ErrorCode::kShapeMismatch, "concat axis {} for rank {}", axis, first.size());
  std::size_t outer = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  std::vector<std::size_t> chunk(parts.size());
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> ids;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    same_graph(parts[0], parts[p]);
    const Shape& s = parts[p].shape();
    check(s.size() == first.size(), ErrorCode::kShapeMismatch, "concat rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis)
        check(s[d] == first[d], ErrorCode::kShapeMismatch, "concat: {} vs {}", shape_string(s),
              shape_string(first));
    out_shape[axis] += s[axis];
    chunk[p] = outer ? parts[p].value().size() / outer : 0;
    ids.push_back(parts[p].id());
  }
  std::size_t row = 0;
  for (std::size_t c : chunk) row += c;

  auto join = [outer, chunk, row, out_shape](std::span<const Tensor* const> ts) {
    Tensor out(out_shape);
    for (std::size_t o = 0; o < outer; ++o) {
      std::size_t col = 0;
      for (std::size_t p = 0; p < ts.size(); ++p) {
        auto src = ts[p]->data().subspan(o * chunk[p], chunk[p]);
        std::copy(src.begin(), src.end(), out.data().begin() + o * row + col);
        col += chunk[p];
      }
    }
    return out;
  };
  std::vector<const Tensor*> values;
  for (const Var& v : parts) values.push_back(&v.value());
  Tensor out = join(values);
  return parts[0].graph().record(
      "concat", std::move(out), std::move(ids),
      [outer, chunk, row](const Graph&, const Tensor& go, std::span<Tensor* const> gi) {
        for (std::size_t o = 0; o < outer; ++o) {
          std::size_t col = 0;
          for (std::size_t p = 0; p < gi.size(); ++p) {
            if (gi[p]) {
              auto dst = gi[p]->data();
              for (std::size_t i = 0; i < chunk[p]; ++i) dst[o * chunk[p] + i] += go[o * row + col + i];
            }
            col += chunk[p];
          }
        }
      },
      [join](const Graph&, std::span<const Tensor* const> t) { return join(t); });
}

Var gather(Var a, std::shared_ptr<const std::vector<std::size_t>> indices, Shape shape) {
  check(numel(shape) == indices->size(), ErrorCode::kShapeMismatch, "gather: {} indices for shape {}",
        indices->size(), shape_string(shape));
  const std::size_t n = a.value().size();
  Tensor out(shape);
  for (std::size_t i = 0; i < indices->size(); ++i) {
    check((*indices)[i] < n, ErrorCode::kShapeMismatch, "gather index {} out of range {}", (*indices)[i], n);
    out[i] = a.value()[(*indices)[i]];
  }
  return a.graph().record(
      "gather", std::move(out), {a.id()},
      [indices](const Graph&, const Tensor& go, std::span<Tensor* const> gi) {
        auto dst = gi[0]->data();
        for (std::size_t i = 0; i < indices->size(); ++i) dst[(*indices)[i]] += go[i];
      },
      [indices, shape](const Graph&, std::span<const Tensor* const> t) {
        Tensor out(shape);
        for (std::size_t i = 0; i < indices->size(); ++i) out[i] = (*t[0])[(*indices)[i]];
        return out;
      });
}

namespace {

struct ConvGeometry {
  std::size_t n, h, w, c, kh, kw, o, stride, ho, wo;
  std::size_t rows() const { return n * ho * wo; }
  std::size_t cols() const { return kh * kw * c; }
};

// Source offset into x for every im2col entry, -1 for zero padding.
std::shared_ptr<const std::vector<std::ptrdiff_t>> im2col_index(const ConvGeometry& geo, Padding pad_y,
                                                                 Padding pad_x) {
  auto index = std::make_shared<std::vector<std::ptrdiff_t>>(geo.rows() * geo.cols());
  const auto py = static_cast<std::ptrdiff_t>((geo.kh - 1) / 2);
  const auto px = static_cast<std::ptrdiff_t>((geo.kw - 1) / 2);
  const auto H = static_cast<std::ptrdiff_t>(geo.h);
  const auto W = static_cast<std::ptrdiff_t>(geo.w);
  std::size_t k = 0;
  for (std::size_t b = 0; b < geo.n; ++b)
    for (std::size_t oy = 0; oy < geo.ho; ++oy)
      for (std::size_t ox = 0; ox < geo.wo; ++ox)
        for (std::size_t ky = 0; ky < geo.kh; ++ky)
          for (std::size_t kx = 0; kx < geo.kw; ++kx) {
            std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * geo.stride + ky) - py;
            std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * geo.stride + kx) - px;
            bool inside = true;
            if (iy < 0 || iy >= H) {
              if (pad_y == Padding::kPeriodic) iy = ((iy % H) + H) % H;
              else inside = false;
            }
            if (ix < 0 || ix >= W) {
              if (pad_x == Padding::kPeriodic) ix = ((ix % W) + W) % W;
              else inside = false;
            }
            const std::ptrdiff_t base =
                inside ? ((static_cast<std::ptrdiff_t>(b) * H + iy) * W + ix) * static_cast<std::ptrdiff_t>(geo.c)
                       : -1;
            for (std::size_t ch = 0; ch < geo.c; ++ch)
              (*index)[k++] = inside ? base + static_cast<std::ptrdiff_t>(ch) : -1;
          }
  return index;
}

Tensor im2col(const Tensor& x, const std::vector<std::ptrdiff_t>& index, const ConvGeometry& geo) {
  Tensor cols({geo.rows(), geo.cols()});
  for (std::size_t i = 0; i < index.size(); ++i) cols[i] = index[i] < 0 ? 0.0 : x[static_cast<std::size_t>(index[i])];
  return cols;
}

}  // namespace

Var conv2d(Var x, Var weight, std::optional<Var> bias, std::size_t stride, Padding pad_y, Padding pad_x) {
  same_graph(x, weight);
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  check(xs.size() == 4 && ws.size() == 4 && ws[2] == xs[3], ErrorCode::kShapeMismatch,
        "conv2d: input {} weight {}", shape_string(xs), shape_string(ws));
  check(stride >= 1 && xs[1] % stride == 0 && xs[2] % stride == 0, ErrorCode::kShapeMismatch,
        "conv2d: spatial dims {}x{} not divisible by stride {}", xs[1], xs[2], stride);
  ConvGeometry geo{xs[0], xs[1], xs[2], xs[3], ws[0], ws[1], ws[3], stride, xs[1] / stride, xs[2] / stride};
  auto index = im2col_index(geo, pad_y, pad_x);
  auto cols = std::make_shared<const Tensor>(im2col(x.value(), *index, geo));

  Tensor out({geo.n, geo.ho, geo.wo, geo.o});
  auto O = as_matrix(out, geo.rows(), geo.o);
  O.noalias() = as_matrix(*cols, geo.rows(), geo.cols()) * as_matrix(weight.value(), geo.cols(), geo.o);
  std::vector<std::size_t> inputs{x.id(), weight.id()};
  if (bias) {
    same_graph(x, *bias);
    check(bias->shape() == Shape{geo.o}, ErrorCode::kShapeMismatch, "conv2d bias {}", shape_string(bias->shape()));
    for (std::size_t r = 0; r < geo.rows(); ++r)
      for (std::size_t c = 0; c < geo.o; ++c) out[r * geo.o + c] += bias->value()[c];
    inputs.push_back(bias->id());
  }
  const std::size_t iw = weight.id();
  const bool has_bias = bias.has_value();
  return x.graph().record(
      "conv2d", std::move(out), std::move(inputs),
      [geo, index, cols, iw](const Graph& g, const Tensor& go, std::span<Tensor* const> gi) {
        auto G = as_matrix(go, geo.rows(), geo.o);
        if (gi[1]) as_matrix(*gi[1], geo.cols(), geo.o).noalias() += as_matrix(*cols, geo.rows(), geo.cols()).transpose() * G;
        if (gi[0]) {
          Tensor dcols({geo.rows(), geo.cols()});
          as_matrix(dcols, geo.rows(), geo.cols()).noalias() = G * as_matrix(g.value(iw), geo.cols(), geo.o).transpose();
          auto dx = gi[0]->data();
          for (std::size_t i = 0; i < index->size(); ++i)
            if ((*index)[i] >= 0) dx[static_cast<std::size_t>((*index)[i])] += dcols[i];
        }
        if (gi.size() > 2 && gi[2])
          for (std::size_t r = 0; r < geo.rows(); ++r)
            for (std::size_t c = 0; c < geo.o; ++c) (*gi[2])[c] += go[r * geo.o + c];
      },
      [geo, index, cols, iw, has_bias](const Graph& g, std::span<const Tensor* const> t) {
        Tensor out({geo.n, geo.ho, geo.wo, geo.o});
        auto O = as_matrix(out, geo.rows(), geo.o);
        const Tensor tcols = im2col(*t[0], *index, geo);
        O.noalias() = as_matrix(tcols, geo.rows(), geo.cols()) * as_matrix(g.value(iw), geo.cols(), geo.o);
        O.noalias() += as_matrix(*cols, geo.rows(), geo.cols()) * as_matrix(*t[1], geo.cols(), geo.o);
        if (has_bias)
          for (std::size_t r = 0; r < geo.rows(); ++r)
            for (std::size_t c = 0; c < geo.o; ++c) out[r * geo.o + c] += (*t[2])[c];
        return out;
      });
}

Var conv1d(Var x, Var weight, std::optional<Var> bias, Padding pad) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  check(xs.size() == 3 && ws.size() == 3, ErrorCode::kShapeMismatch, "conv1d: input {} weight {}",
        shape_string(xs), shape_string(ws));
  Var x4 = reshape(x, {xs[0], 1, xs[1], xs[2]});
  Var w4 = reshape(weight, {1, ws[0], ws[1], ws[2]});
  Var y = conv2d(x4, w4, bias, 1, Padding::kZero, pad);
  return reshape(y, {xs[0], xs[1], ws[2]});
}

std::vector<std::size_t> space_to_depth_indices(std::size_t n, std::size_t h, std::size_t w, std::size_t c,
                                                std::size_t factor) {
  check(factor >= 1 && h % factor == 0 && w % factor == 0, ErrorCode::kShapeMismatch,
        "space_to_depth: {}x{} not divisible by {}", h, w, factor);
  const std::size_t ho = h / factor, wo = w / factor;
  std::vector<std::size_t> idx;
  idx.reserve(n * h * w * c);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox)
        for (std::size_t dy = 0; dy < factor; ++dy)
          for (std::size_t dx = 0; dx < factor; ++dx)
            for (std::size_t ch = 0; ch < c; ++ch)
              idx.push_back(((b * h + oy * factor + dy) * w + ox * factor + dx) * c + ch);
  return idx;
}

std::vector<std::size_t> depth_to_space_indices(std::size_t n, std::size_t h, std::size_t w, std::size_t c,
                                                std::size_t factor) {
  // Inverse permutation of space_to_depth for the output geometry [n, h, w, c].
  const auto forward = space_to_depth_indices(n, h, w, c, factor);
  std::vector<std::size_t> inverse(forward.size());
  for (std::size_t i = 0; i < forward.size(); ++i) inverse[forward[i]] = i;
  return inverse;
}

// ---------------------------------------------------------------------------

std::vector<Tensor> grad(const ScalarFunction& f, const std::vector<Tensor>& params) {
  Graph g;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Tensor& p : params) vars.push_back(g.input(p));
  Var out = f(g, vars);
  g.backward(out);
  std::vector<Tensor> grads;
  grads.reserve(vars.size());
  for (Var v : vars) grads.push_back(g.grad(v));
  return grads;
}

Tensor jvp(const Function& f, const Tensor& x, const Tensor& v) { return Linearization(f, x).jvp(v); }

Tensor vjp(const Function& f, const Tensor& x, const Tensor& u) { return Linearization(f, x).vjp(u); }

Linearization::Linearization(const Function& f, const Tensor& x) : graph_(std::make_unique<Graph>()) {
  input_ = graph_->input(x);
  output_ = f(*graph_, input_);
}

Tensor Linearization::jvp(const Tensor& v) const {
  const Var inputs[] = {input_};
  const Tensor tangents[] = {v};
  return graph_->jvp(inputs, tangents, output_);
}

Tensor Linearization::vjp(const Tensor& u) {
  graph_->backward(output_, u);
  return graph_->grad(input_);
}

}  // namespace appa::ad
