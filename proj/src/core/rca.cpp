#include "rcan/rca.hpp"

#include "rcan/ops.hpp"

namespace rcan {

template <typename T>
void AttentionParams<T>::validate() const {
  require(weights.defined() && weights.rank() == 1, ErrorCode::kShapeMismatch, "attention weights must be a [k] vector");
  require(weights.dim(0) % 2 == 1, ErrorCode::kEvenKernel, "attention kernel length must be odd");
  require(ablation.use_max_pool || ablation.use_avg_pool, ErrorCode::kBothBranchesDisabled,
          "at least one pooling branch must stay enabled");
}

template <typename T>
AttentionMap<T> attention_map(const Tensor<T>& x, const AttentionParams<T>& p) {
  p.validate();
  require(x.rank() == 5, ErrorCode::kShapeMismatch, "attention_map expects a 5-D tensor");
  Tensor<T> pre;
  if (p.ablation.use_max_pool) pre = conv1d_channel(global_max_pool(x), p.weights).values;
  if (p.ablation.use_avg_pool) {
    Tensor<T> avg = conv1d_channel(global_avg_pool(x), p.weights).values;
    pre = pre.defined() ? add(pre, avg) : avg;
  }
  return AttentionMap<T>{sigmoid(pre)};
}

template <typename T>
Tensor<T> calibrate(const Tensor<T>& x, const AttentionMap<T>& m, bool use_residual) {
  require(x.rank() == 5 && m.values.rank() == 5 && m.values.dim(1) == x.dim(1), ErrorCode::kShapeMismatch,
          "attention map " + shape_str(m.values.shape()) + " does not match features " + shape_str(x.shape()));
  Tensor<T> gated = mul(x, m.values);
  return use_residual ? add(gated, x) : gated;
}

template <typename T>
Tensor<T> rca_forward(const Tensor<T>& x, const AttentionParams<T>& p, AttentionMap<T>* probe) {
  AttentionMap<T> m = attention_map(x, p);
  if (probe != nullptr) *probe = m;
  return calibrate(x, m, p.ablation.use_residual);
}

#define RCAN_INSTANTIATE(T)                                                                \
  template struct AttentionParams<T>;                                                      \
  template AttentionMap<T> attention_map<T>(const Tensor<T>&, const AttentionParams<T>&); \
  template Tensor<T> calibrate<T>(const Tensor<T>&, const AttentionMap<T>&, bool);         \
  template Tensor<T> rca_forward<T>(const Tensor<T>&, const AttentionParams<T>&, AttentionMap<T>*);

RCAN_INSTANTIATE(float)
RCAN_INSTANTIATE(double)
#undef RCAN_INSTANTIATE

}  // namespace rcan
