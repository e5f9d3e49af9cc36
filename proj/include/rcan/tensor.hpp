#pragma once

// Dense tensors and the reverse-mode tape they are recorded on.
//
// A Tensor is an immutable value: a shape plus a shared, read-only buffer in
// row-major order. Tensors produced from inputs that live on a Tape are
// recorded on the same tape together with a backward rule. Tapes are explicit
// objects owned by the caller; there is no ambient global tape.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rcan/error.hpp"

namespace rcan {

using Shape = std::vector<std::int64_t>;
using NodeId = std::size_t;
inline constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();

std::int64_t numel(const Shape& shape) noexcept;
std::string shape_str(const Shape& shape);
// Throws EmptyShape on a zero extent (or an empty extent list).
void validate_shape(const Shape& shape);
// Row-major flat offset of a multi-index. No bounds checks beyond rank.
std::int64_t flat_offset(const Shape& shape, std::span<const std::int64_t> index);

template <typename T>
class Tape;

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  // Throws EmptyShape / ShapeMismatch.
  Tensor(Shape shape, std::vector<T> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::int64_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_ ? data_->size() : 0; }
  bool defined() const noexcept { return static_cast<bool>(data_); }

  std::span<const T> data() const noexcept {
    return data_ ? std::span<const T>(*data_) : std::span<const T>();
  }
  const T* ptr() const noexcept { return data_ ? data_->data() : nullptr; }

  T at(std::initializer_list<std::int64_t> index) const;
  // Value of a single-element tensor.
  T item() const;

  bool requires_grad() const noexcept { return requires_grad_; }
  NodeId node() const noexcept { return node_; }
  bool on_tape() const noexcept { return tape_ != nullptr; }
  Tape<T>* tape() const noexcept { return tape_; }

  // Same values, no tape linkage.
  Tensor detach() const;
  // New tensor with the same shape and different values (off tape).
  Tensor with_data(std::vector<T> data) const;
  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>((*data_)[i]);
    return Tensor<U>(shape_, std::move(out));
  }

 private:
  friend class Tape<T>;

  Shape shape_;
  std::shared_ptr<const std::vector<T>> data_;
  Tape<T>* tape_ = nullptr;
  NodeId node_ = kNoNode;
  bool requires_grad_ = false;
};

// Gradient buffers handed to a backward rule. grad(i) is zero-initialised on
// first access and accumulates across all consumers of input i.
template <typename T>
class GradSink {
 public:
  bool wants(std::size_t input) const;
  std::vector<T>& grad(std::size_t input);

 private:
  friend class Tape<T>;
  GradSink(Tape<T>& tape, NodeId node) : tape_(tape), node_(node) {}
  Tape<T>& tape_;
  NodeId node_;
};

template <typename T>
using BackwardFn = std::function<void(std::span<const T> grad_out, GradSink<T>& sink)>;

template <typename T>
class Gradients {
 public:
  bool has(const Tensor<T>& t) const;
  // Throws DetachedTensor if t has no gradient in this map.
  Tensor<T> of(const Tensor<T>& t) const;
  std::size_t count() const;

 private:
  friend class Tape<T>;
  std::vector<Shape> shapes_;
  std::vector<std::vector<T>> grads_;
  const Tape<T>* tape_ = nullptr;
};

template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape() = default;

  // Registers a copy of t as a leaf that requires a gradient.
  Tensor<T> variable(const Tensor<T>& t);
  // Registers a copy of t as a leaf constant.
  Tensor<T> constant(const Tensor<T>& t);

  // Records an op result. Inputs that are off-tape are treated as constants.
  // All on-tape inputs must belong to this tape.
  Tensor<T> record(const char* kind, Shape shape, std::vector<T> values,
                   std::initializer_list<const Tensor<T>*> inputs, BackwardFn<T> backward);

  Gradients<T> backward(const Tensor<T>& loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  const char* kind(NodeId id) const { return nodes_.at(id).kind; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_.at(id).inputs; }

  // When enabled, every recorded value is scanned and NonFiniteOutput thrown
  // on NaN/Inf.
  void set_check_finite(bool on) noexcept { check_finite_ = on; }
  bool check_finite() const noexcept { return check_finite_; }

 private:
  friend class GradSink<T>;
  struct Node {
    const char* kind;
    std::vector<NodeId> inputs;
    Shape shape;
    BackwardFn<T> backward;
    bool needs_grad;
  };

  Tensor<T> link(Tensor<T> t, NodeId id, bool requires_grad);

  std::vector<Node> nodes_;
  std::vector<std::vector<T>> grads_;
  bool check_finite_ = false;
};

// Finds the tape shared by the on-tape inputs, or nullptr if none is on a
// tape. Throws InvalidArgument if inputs come from different tapes.
template <typename T>
Tape<T>* common_tape(std::initializer_list<const Tensor<T>*> inputs);

// Builds a result: recorded on the inputs' tape if any, plain otherwise.
template <typename T>
Tensor<T> make_result(const char* kind, Shape shape, std::vector<T> values,
                      std::initializer_list<const Tensor<T>*> inputs, BackwardFn<T> backward);

template <typename T>
Tensor<T> build_tensor(Shape shape, std::vector<T> data, bool requires_grad = false,
                       Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> zeros(const Shape& shape) {
  return Tensor<T>(shape, std::vector<T>(static_cast<std::size_t>(numel(shape)), T(0)));
}
template <typename T>
Tensor<T> full(const Shape& shape, T value) {
  return Tensor<T>(shape, std::vector<T>(static_cast<std::size_t>(numel(shape)), value));
}
template <typename T>
Tensor<T> zeros_like(const Tensor<T>& t) {
  return zeros<T>(t.shape());
}

template <typename T>
bool all_finite(std::span<const T> values) noexcept;

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

}  // namespace rcan
