#pragma once

#include <algorithm>
#include <cstring>
#include <initializer_list>
#include <memory>
#include <span>
#include <utility>

#include "pmt/common.hpp"

namespace pmt {

// Dense row-major tensor with an attached gradient slot. The handle is
// cheap to copy: copies share the underlying storage node, which is what
// lets backward() deposit gradients on the same leaves the caller holds.
// Use clone() for an independent deep copy.
template <typename Scalar>
class Tensor {
 public:
  Tensor() : node_(std::make_shared<Node>()) {}

  explicit Tensor(Shape shape) : node_(std::make_shared<Node>()) {
    const Index n = shape_numel(shape);
    node_->shape = std::move(shape);
    node_->value.assign(static_cast<std::size_t>(n), Scalar(0));
  }

  Tensor(Shape shape, std::vector<Scalar> values) : node_(std::make_shared<Node>()) {
    if (shape_numel(shape) != static_cast<Index>(values.size()))
      throw DimensionError("tensor init: shape " + shape_str(shape) + " expects " +
                           std::to_string(shape_numel(shape)) + " values, got " +
                           std::to_string(values.size()));
    node_->shape = std::move(shape);
    node_->value = std::move(values);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, Scalar v) {
    Tensor t(std::move(shape));
    std::fill(t.node_->value.begin(), t.node_->value.end(), v);
    return t;
  }

  static Tensor ones(Shape shape) { return full(std::move(shape), Scalar(1)); }

  static Tensor scalar(Scalar v) { return Tensor({1}, {v}); }

  static Tensor from(Shape shape, std::initializer_list<Scalar> values) {
    return Tensor(std::move(shape), std::vector<Scalar>(values));
  }

  const Shape& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index dim(Index i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  Index numel() const { return static_cast<Index>(node_->value.size()); }

  Scalar* data() { return node_->value.data(); }
  const Scalar* data() const { return node_->value.data(); }
  std::span<Scalar> values() { return node_->value; }
  std::span<const Scalar> values() const { return node_->value; }

  Scalar& at(std::initializer_list<Index> idx) { return node_->value[flat(idx)]; }
  Scalar at(std::initializer_list<Index> idx) const { return node_->value[flat(idx)]; }

  Index flat(std::initializer_list<Index> idx) const {
    if (static_cast<Index>(idx.size()) != rank())
      throw DimensionError("index rank " + std::to_string(idx.size()) +
                           " vs tensor rank " + std::to_string(rank()));
    Index f = 0;
    auto it = idx.begin();
    for (Index d = 0; d < rank(); ++d, ++it) f = f * dim(d) + *it;
    return f;
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    node_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }

  // Lazily materialises a zero-filled gradient buffer; leaves that never
  // appear on a tape therefore read back an all-zero gradient.
  Scalar* grad() {
    if (node_->grad.empty()) node_->grad.assign(node_->value.size(), Scalar(0));
    return node_->grad.data();
  }
  std::span<Scalar> grad_span() { return {grad(), node_->value.size()}; }

  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), Scalar(0));
  }

  Tensor clone() const {
    Tensor t;
    t.node_->shape = node_->shape;
    t.node_->value = node_->value;
    t.node_->requires_grad = node_->requires_grad;
    return t;
  }

  void copy_values_from(const Tensor& other) {
    if (other.shape() != shape())
      throw DimensionError("copy: " + shape_str(other.shape()) + " into " + shape_str(shape()));
    node_->value = other.node_->value;
  }

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  bool bit_equal(const Tensor& other) const {
    return shape() == other.shape() &&
           std::memcmp(data(), other.data(), sizeof(Scalar) * node_->value.size()) == 0;
  }

 private:
  struct Node {
    Shape shape;
    std::vector<Scalar> value;
    std::vector<Scalar> grad;  // empty until first use
    bool requires_grad = false;
  };
  std::shared_ptr<Node> node_;
};

template <typename Scalar>
inline bool same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return a.shape() == b.shape();
}

}  // namespace pmt
