// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "core/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "core/error.hpp"

namespace appa {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check(numel(shape_) == data_.size(), ErrorCode::kShapeMismatch,
        "tensor shape {} holds {} values, got {}", shape_string(shape_), numel(shape_), data_.size());
}

std::size_t Tensor::dim(std::size_t axis) const {
  check(axis < shape_.size(), ErrorCode::kShapeMismatch, "axis {} out of range for shape {}", axis,
        shape_string(shape_));
  return shape_[axis];
}

double Tensor::item() const {
  check(data_.size() == 1, ErrorCode::kShapeMismatch, "item() on tensor of shape {}",
        shape_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  check(numel(shape) == data_.size(), ErrorCode::kShapeMismatch, "cannot reshape {} to {}",
        shape_string(shape_), shape_string(shape));
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
  check(rank() >= 1 && begin <= end && end <= shape_[0], ErrorCode::kShapeMismatch,
        "row slice [{}, {}) invalid for shape {}", begin, end, shape_string(shape_));
  const std::size_t stride = shape_[0] ? data_.size() / shape_[0] : 0;
  Shape out_shape = shape_;
  out_shape[0] = end - begin;
  return Tensor(std::move(out_shape),
                std::vector<double>(data_.begin() + begin * stride, data_.begin() + end * stride));
}

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(*this, other, "+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  require_same_shape(*this, other, "-=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, double s) { return a *= s; }
Tensor operator*(double s, Tensor a) { return a *= s; }

Tensor randn(const Shape& shape, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor out(shape);
  for (double& v : out.data()) v = normal(rng);
  return out;
}

double dot(const Tensor& a, const Tensor& b) {
  check(a.size() == b.size(), ErrorCode::kShapeMismatch, "dot of sizes {} and {}", a.size(), b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(const Tensor& a) { return std::sqrt(dot(a, a)); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  check(a.size() == b.size(), ErrorCode::kShapeMismatch, "max_abs_diff of sizes {} and {}", a.size(),
        b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tensor stack(const std::vector<Tensor>& parts) {
  check(!parts.empty(), ErrorCode::kInvalidArgument, "stack of zero tensors");
  Shape shape = parts.front().shape();
  std::vector<double> data;
  data.reserve(parts.size() * parts.front().size());
  for (const Tensor& p : parts) {
    check(p.shape() == shape, ErrorCode::kShapeMismatch, "stack: shape {} vs {}", shape_string(p.shape()),
          shape_string(shape));
    data.insert(data.end(), p.data().begin(), p.data().end());
  }
  shape.insert(shape.begin(), parts.size());
  return Tensor(std::move(shape), std::move(data));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  check(a.shape() == b.shape(), ErrorCode::kShapeMismatch, "{}: shape {} vs {}", what,
        shape_string(a.shape()), shape_string(b.shape()));
}

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kShapeMismatch: return "shape mismatch";
    case ErrorCode::kNumerical: return "numerical failure";
    case ErrorCode::kConfig: return "config error";
    case ErrorCode::kIo: return "io error";
    case ErrorCode::kHeaderParse: return "header parse error";
    case ErrorCode::kVersionMismatch: return "version mismatch";
    case ErrorCode::kTruncated: return "truncated file";
    case ErrorCode::kHeaderMismatch: return "header/payload mismatch";
  }
  return "unknown";
}

}  // namespace appa
