#pragma once

// Residual channel attention.
//
// The gate for a feature map x (NxCxDxHxW) is
//
//   M(x) = sigmoid(conv1d(maxpool(x)) + conv1d(avgpool(x)))
//
// where both global descriptors go through the same 1-D channel kernel, and
// the calibrated output is x' = M(x) * x + x with M broadcast over the
// spatial axes. Ablation flags drop either pooling branch (its pre-activation
// becomes zero) or the residual term (x' = M(x) * x).

#include <cstdint>

#include "rcan/nn.hpp"
#include "rcan/tensor.hpp"

namespace rcan {

struct AttentionAblation {
  bool use_max_pool = true;
  bool use_avg_pool = true;
  bool use_residual = true;

  bool operator==(const AttentionAblation&) const = default;
};

template <typename T>
struct AttentionParams {
  Tensor<T> weights;  // shape [k], k odd
  AttentionAblation ablation;

  std::int64_t k() const { return weights.dim(0); }
  // EvenKernel, ShapeMismatch or BothBranchesDisabled.
  void validate() const;
};

// Per-(batch, channel) gate, shape NxCx1x1x1, entries in (0, 1).
template <typename T>
struct AttentionMap {
  Tensor<T> values;
};

template <typename T>
AttentionMap<T> attention_map(const Tensor<T>& x, const AttentionParams<T>& p);

template <typename T>
Tensor<T> calibrate(const Tensor<T>& x, const AttentionMap<T>& m, bool use_residual);

template <typename T>
Tensor<T> rca_forward(const Tensor<T>& x, const AttentionParams<T>& p, AttentionMap<T>* probe = nullptr);

}  // namespace rcan
