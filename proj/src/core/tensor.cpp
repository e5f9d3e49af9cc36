#include "rcan/tensor.hpp"

#include <cmath>
#include <sstream>

namespace rcan {

std::int64_t numel(const Shape& shape) noexcept {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

void validate_shape(const Shape& shape) {
  require(!shape.empty(), ErrorCode::kEmptyShape, "shape has no extents");
  for (auto e : shape) {
    require(e >= 1, ErrorCode::kEmptyShape, "shape " + shape_str(shape) + " has a non-positive extent");
  }
}

std::int64_t flat_offset(const Shape& shape, std::span<const std::int64_t> index) {
  require(index.size() == shape.size(), ErrorCode::kShapeMismatch, "index rank differs from shape rank");
  std::int64_t off = 0;
  for (std::size_t i = 0; i < shape.size(); ++i) off = off * shape[i] + index[i];
  return off;
}

template <typename T>
bool all_finite(std::span<const T> values) noexcept {
  for (T v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Tensor

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)) {
  validate_shape(shape_);
  require(static_cast<std::int64_t>(data.size()) == numel(shape_), ErrorCode::kShapeMismatch,
          "shape " + shape_str(shape_) + " needs " + std::to_string(numel(shape_)) + " values, got " +
              std::to_string(data.size()));
  data_ = std::make_shared<const std::vector<T>>(std::move(data));
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::int64_t> index) const {
  std::span<const std::int64_t> idx(index.begin(), index.size());
  require(idx.size() == shape_.size(), ErrorCode::kShapeMismatch, "index rank differs from tensor rank");
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] >= 0 && idx[i] < shape_[i], ErrorCode::kInvalidArgument, "index out of range");
  }
  return (*data_)[static_cast<std::size_t>(flat_offset(shape_, idx))];
}

template <typename T>
T Tensor<T>::item() const {
  require(size() == 1, ErrorCode::kNotScalar, "item() on tensor of shape " + shape_str(shape_));
  return (*data_)[0];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  Tensor<T> t;
  t.shape_ = shape_;
  t.data_ = data_;
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::with_data(std::vector<T> data) const {
  return Tensor<T>(shape_, std::move(data));
}

// ---------------------------------------------------------------------------
// GradSink / Gradients

template <typename T>
bool GradSink<T>::wants(std::size_t input) const {
  const auto& node = tape_.nodes_[node_];
  if (input >= node.inputs.size()) return false;
  NodeId id = node.inputs[input];
  return id != kNoNode && tape_.nodes_[id].needs_grad;
}

template <typename T>
std::vector<T>& GradSink<T>::grad(std::size_t input) {
  NodeId id = tape_.nodes_[node_].inputs.at(input);
  if (id == kNoNode) fail(ErrorCode::kInternal, "gradient requested for an off-tape input");
  auto& g = tape_.grads_[id];
  if (g.empty()) g.assign(static_cast<std::size_t>(numel(tape_.nodes_[id].shape)), T(0));
  return g;
}

template <typename T>
bool Gradients<T>::has(const Tensor<T>& t) const {
  return t.tape() == tape_ && t.node() < grads_.size() && !grads_[t.node()].empty();
}

template <typename T>
Tensor<T> Gradients<T>::of(const Tensor<T>& t) const {
  require(has(t), ErrorCode::kDetachedTensor, "tensor has no gradient in this map");
  return Tensor<T>(shapes_[t.node()], grads_[t.node()]);
}

template <typename T>
std::size_t Gradients<T>::count() const {
  std::size_t n = 0;
  for (const auto& g : grads_) n += g.empty() ? 0 : 1;
  return n;
}

// ---------------------------------------------------------------------------
// Tape

template <typename T>
Tensor<T> Tape<T>::link(Tensor<T> t, NodeId id, bool requires_grad) {
  t.tape_ = this;
  t.node_ = id;
  t.requires_grad_ = requires_grad;
  return t;
}

template <typename T>
Tensor<T> Tape<T>::variable(const Tensor<T>& t) {
  require(t.defined(), ErrorCode::kInvalidArgument, "undefined tensor");
  nodes_.push_back(Node{"leaf", {}, t.shape(), nullptr, true});
  return link(t.detach(), nodes_.size() - 1, true);
}

template <typename T>
Tensor<T> Tape<T>::constant(const Tensor<T>& t) {
  require(t.defined(), ErrorCode::kInvalidArgument, "undefined tensor");
  nodes_.push_back(Node{"constant", {}, t.shape(), nullptr, false});
  return link(t.detach(), nodes_.size() - 1, false);
}

template <typename T>
Tensor<T> Tape<T>::record(const char* kind, Shape shape, std::vector<T> values,
                          std::initializer_list<const Tensor<T>*> inputs, BackwardFn<T> backward) {
  if (check_finite_ && !all_finite<T>(values)) {
    fail(ErrorCode::kNonFiniteOutput, std::string("op '") + kind + "' produced a non-finite value");
  }
  Node node{kind, {}, shape, nullptr, false};
  node.inputs.reserve(inputs.size());
  for (const Tensor<T>* in : inputs) {
    if (in != nullptr && in->tape() == this) {
      node.inputs.push_back(in->node());
      node.needs_grad = node.needs_grad || nodes_[in->node()].needs_grad;
    } else {
      node.inputs.push_back(kNoNode);
    }
  }
  if (node.needs_grad) node.backward = std::move(backward);
  Tensor<T> out(std::move(shape), std::move(values));
  nodes_.push_back(std::move(node));
  return link(std::move(out), nodes_.size() - 1, nodes_.back().needs_grad);
}

template <typename T>
Gradients<T> Tape<T>::backward(const Tensor<T>& loss) {
  require(loss.tape() == this, ErrorCode::kDetachedTensor, "loss is not recorded on this tape");
  require(loss.size() == 1, ErrorCode::kNotScalar, "loss has shape " + shape_str(loss.shape()));
  grads_.assign(nodes_.size(), {});
  grads_[loss.node()].assign(1, T(1));
  for (NodeId id = loss.node() + 1; id-- > 0;) {
    auto& node = nodes_[id];
    if (grads_[id].empty() || !node.backward) continue;
    GradSink<T> sink(*this, id);
    // Complete here: every consumer of this node has a larger id. Backward
    // rules only write to input buffers, so the span stays valid.
    node.backward(std::span<const T>(grads_[id]), sink);
  }
  Gradients<T> result;
  result.tape_ = this;
  result.shapes_.reserve(nodes_.size());
  for (const auto& n : nodes_) result.shapes_.push_back(n.shape);
  result.grads_ = std::move(grads_);
  grads_.clear();
  return result;
}

template <typename T>
Tape<T>* common_tape(std::initializer_list<const Tensor<T>*> inputs) {
  Tape<T>* tape = nullptr;
  for (const Tensor<T>* in : inputs) {
    if (in == nullptr || !in->on_tape()) continue;
    if (tape != nullptr && in->tape() != tape) {
      fail(ErrorCode::kInvalidArgument, "op inputs are recorded on different tapes");
    }
    tape = in->tape();
  }
  return tape;
}

template <typename T>
Tensor<T> make_result(const char* kind, Shape shape, std::vector<T> values,
                      std::initializer_list<const Tensor<T>*> inputs, BackwardFn<T> backward) {
  Tape<T>* tape = common_tape<T>(inputs);
  if (tape == nullptr) return Tensor<T>(std::move(shape), std::move(values));
  return tape->record(kind, std::move(shape), std::move(values), inputs, std::move(backward));
}

template <typename T>
Tensor<T> build_tensor(Shape shape, std::vector<T> data, bool requires_grad, Tape<T>* tape) {
  Tensor<T> t(std::move(shape), std::move(data));
  if (tape != nullptr) return requires_grad ? tape->variable(t) : tape->constant(t);
  require(!requires_grad, ErrorCode::kDetachedTensor, "requires_grad set without a tape to record on");
  return t;
}

#define RCAN_INSTANTIATE(T)                                                                         \
  template class Tensor<T>;                                                                         \
  template class GradSink<T>;                                                                       \
  template class Gradients<T>;                                                                      \
  template class Tape<T>;                                                                           \
  template Tape<T>* common_tape<T>(std::initializer_list<const Tensor<T>*>);                        \
  template Tensor<T> make_result<T>(const char*, Shape, std::vector<T>,                             \
                                    std::initializer_list<const Tensor<T>*>, BackwardFn<T>);        \
  template Tensor<T> build_tensor<T>(Shape, std::vector<T>, bool, Tape<T>*);                        \
  template bool all_finite<T>(std::span<const T>) noexcept;

RCAN_INSTANTIATE(float)
RCAN_INSTANTIATE(double)
#undef RCAN_INSTANTIATE

}  // namespace rcan
