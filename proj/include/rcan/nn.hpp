#pragma once

// Neural network building blocks on 5-D NxCxDxHxW tensors: direct-loop 3-D
// convolution and its transpose, pooling, the per-channel global
// descriptors, 1-D convolution across channels, and group normalisation.
// Every op is differentiable through the tape of its inputs.

#include <array>
#include <cstdint>

#include "rcan/tensor.hpp"

namespace rcan {

using Triple = std::array<std::int64_t, 3>;

struct ConvSpec {
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  Triple kernel{3, 3, 3};
  Triple stride{1, 1, 1};
  Triple padding{1, 1, 1};
  bool has_bias = false;

  // Stride-1 convolution that keeps spatial extents (odd kernel k).
  static ConvSpec same(std::int64_t in, std::int64_t out, std::int64_t k = 3, bool bias = false) {
    return ConvSpec{in, out, {k, k, k}, {1, 1, 1}, {(k - 1) / 2, (k - 1) / 2, (k - 1) / 2}, bias};
  }
  // The kernel-2 / stride-2 upsampling used by the decoder.
  static ConvSpec upsample(std::int64_t in, std::int64_t out, bool bias = true) {
    return ConvSpec{in, out, {2, 2, 2}, {2, 2, 2}, {0, 0, 0}, bias};
  }

  Shape weight_shape() const {
    return {out_channels, in_channels, kernel[0], kernel[1], kernel[2]};
  }
  // Transposed convolutions store weights as in x out x k x k x k.
  Shape transpose_weight_shape() const {
    return {in_channels, out_channels, kernel[0], kernel[1], kernel[2]};
  }
  // floor((in + 2 pad - kernel) / stride) + 1 per axis; may be < 1.
  Triple output_extent(const Triple& in) const;
};

// Per-(batch, channel) global statistic, shape NxCx1x1x1.
template <typename T>
struct ChannelDescriptor {
  Tensor<T> values;

  ChannelDescriptor() = default;
  explicit ChannelDescriptor(Tensor<T> v);
  std::int64_t channels() const { return values.dim(1); }
};

// Cross-correlation with zero padding. weights: out x in x kd x kh x kw,
// bias: [out] (required iff spec.has_bias). Throws ShapeMismatch,
// OutputCollapsed.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const ConvSpec& spec, const Tensor<T>& weights,
                 const Tensor<T>* bias = nullptr);

// Adjoint of a strided convolution with no padding: each input voxel spreads
// a k^3 patch at stride s, output extent (in - 1) * s + k. weights:
// in x out x k x k x k.
template <typename T>
Tensor<T> conv_transpose3d(const Tensor<T>& x, const ConvSpec& spec, const Tensor<T>& weights,
                           const Tensor<T>* bias = nullptr);

// Non-overlapping 2x2x2 max. Gradient goes to the first maximum in
// (d, h, w) scan order. Throws OddExtent.
template <typename T>
Tensor<T> max_pool3d(const Tensor<T>& x);

template <typename T>
ChannelDescriptor<T> global_max_pool(const Tensor<T>& x);

template <typename T>
ChannelDescriptor<T> global_avg_pool(const Tensor<T>& x);

// 1-D cross-correlation along the channel axis with zero padding (k-1)/2,
// no bias. weights has shape [k], k odd (EvenKernel otherwise).
template <typename T>
ChannelDescriptor<T> conv1d_channel(const ChannelDescriptor<T>& d, const Tensor<T>& weights);

// Standardise each (batch, group) slab, then apply per-channel gamma/beta
// (both shape [C]). Biased variance. Throws IndivisibleGroups.
template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, std::int64_t groups, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps = 1e-5);

}  // namespace rcan
