#pragma once

// Elementwise and reduction ops on Tensor, plus the finite-difference
// gradient checker used to verify every differentiable op.

#include <functional>
#include <span>
#include <vector>

#include "rcan/tensor.hpp"

namespace rcan {

enum class UnaryKind { kSigmoid, kRelu, kNegate, kScale };

struct UnaryFn {
  UnaryKind kind;
  double alpha = 1.0;  // used by kScale

  static UnaryFn sigmoid() { return {UnaryKind::kSigmoid}; }
  static UnaryFn relu() { return {UnaryKind::kRelu}; }
  static UnaryFn negate() { return {UnaryKind::kNegate}; }
  static UnaryFn scale(double a) { return {UnaryKind::kScale, a}; }
};

enum class BinaryKind { kAdd, kMul };

template <typename T>
Tensor<T> map_unary(const Tensor<T>& t, UnaryFn fn);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& t) { return map_unary(t, UnaryFn::sigmoid()); }
template <typename T>
Tensor<T> relu(const Tensor<T>& t) { return map_unary(t, UnaryFn::relu()); }
template <typename T>
Tensor<T> negate(const Tensor<T>& t) { return map_unary(t, UnaryFn::negate()); }
template <typename T>
Tensor<T> scale(const Tensor<T>& t, double alpha) { return map_unary(t, UnaryFn::scale(alpha)); }

// Shapes must be equal, or b is a per-channel tensor (1xCx1x1x1, or NxCx1x1x1
// with the same N) broadcast over a 5-D NxCxDxHxW. Throws BroadcastError.
template <typename T>
Tensor<T> zip_binary(const Tensor<T>& a, const Tensor<T>& b, BinaryKind kind);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return zip_binary(a, b, BinaryKind::kAdd); }
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return zip_binary(a, b, BinaryKind::kMul); }

// Sum of all elements as a shape-[1] tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& t);

// Concatenation of two 5-D tensors along the channel axis.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

using DifferentiableOp = std::function<Tensor64(std::span<const Tensor64>)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

// Central differences against the tape gradient for every input coordinate.
// Error per coordinate is |a - n| / max(1e-8, |a| + |n|). eps must lie in
// [1e-7, 1e-3] (InvalidArgument otherwise); NonFiniteOutput if a perturbed
// evaluation is not finite.
GradCheckReport grad_check(const DifferentiableOp& op, std::span<const Tensor64> inputs, double eps = 1e-6);

}  // namespace rcan
