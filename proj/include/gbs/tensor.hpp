#pragma once

#include <functional>
#include <memory>
#include <new>
#include <numeric>
#include <span>
#include <vector>

#include "gbs/error.hpp"

namespace gbs::ad {

// Fixed 64-byte alignment so vectorized reductions take the same path for
// every buffer, which keeps results independent of heap addresses.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

// Dense row-major tensor. Feature grids are [channels, height, width];
// vectors are [n]; matrices are [rows, cols]; scalars are [1].
template <typename T>
struct Tensor {
  std::vector<int> shape;
  Buffer<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> dims, T fill = T(0)) : shape(std::move(dims)) {
    data.assign(count(shape), fill);
  }
  Tensor(std::vector<int> dims, std::vector<T> values)
      : shape(std::move(dims)), data(values.begin(), values.end()) {
    GBS_CHECK(data.size() == count(shape), kShape, "tensor data does not match shape");
  }

  static std::size_t count(const std::vector<int>& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                           [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
  }

  std::size_t numel() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[i]; }
  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }
  T item() const { return data.at(0); }
};

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  // Lazily sized gradient buffer.
  Tensor<T>& grad_buffer() {
    if (grad.data.size() != value.data.size()) grad = Tensor<T>(value.shape);
    return grad;
  }
};

// Handle onto a node of the dynamic computation graph. Copies share the node.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const std::vector<int>& shape() const { return node_->value.shape; }
  int dim(int i) const { return node_->value.shape[i]; }
  std::size_t numel() const { return node_->value.numel(); }
  bool requires_grad() const { return node_->requires_grad; }
  T item() const { return node_->value.item(); }

  Tensor<T>& grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad = Tensor<T>(); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Reverse-mode sweep from a scalar root; gradients accumulate into every
// reachable node that requires them.
template <typename T>
void backward(const Var<T>& root);

}  // namespace gbs::ad
