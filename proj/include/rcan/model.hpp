#pragma once

// The encoder-decoder segmentation network. Each level runs a DoubleConv
// ([conv3 -> group norm -> relu] x 2) followed by a residual channel
// attention block. Encoder levels are joined by 2x2x2 max pooling; the
// decoder upsamples with a stride-2 transposed convolution, concatenates the
// calibrated encoder features of the same level, and repeats the
// DoubleConv + attention block. A 1x1x1 convolution produces class logits.

#include <cstdint>
#include <string>
#include <vector>

#include "rcan/nn.hpp"
#include "rcan/rca.hpp"
#include "rcan/tensor.hpp"

namespace rcan {

struct ModelConfig {
  std::int64_t in_channels = 4;
  std::int64_t out_classes = 4;
  std::int64_t levels = 4;
  std::int64_t base_width = 16;
  std::int64_t attention_k = 3;
  std::int64_t norm_groups = 8;
  AttentionAblation ablation;
  // Training crop; its extents must be divisible by 2^(levels-1).
  Triple patch{32, 32, 32};

  bool operator==(const ModelConfig&) const = default;

  std::int64_t width(std::int64_t level) const { return base_width << level; }
  // gcd(norm_groups, channels), so every level can be normalised.
  std::int64_t groups_for(std::int64_t channels) const;
  std::int64_t attention_blocks() const { return 2 * levels - 1; }
  // Throws ConfigInvalid.
  void validate() const;
  // ShapeMismatch unless every extent is divisible by 2^(levels-1).
  void check_input_extent(const Triple& extent) const;
};

struct ParameterSpec {
  std::string name;
  Shape shape;
};

// Names and shapes of every parameter, in the order forward consumes them.
std::vector<ParameterSpec> parameter_layout(const ModelConfig& cfg);
std::int64_t parameter_count(const ModelConfig& cfg);

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
};

template <typename T>
class Model {
 public:
  Model(ModelConfig cfg, std::vector<Parameter<T>> params);

  const ModelConfig& config() const noexcept { return cfg_; }
  const std::vector<Parameter<T>>& parameters() const noexcept { return params_; }
  std::vector<Tensor<T>> values() const;
  // Replaces every value; shapes must match. Throws ShapeMismatch.
  void set_values(std::vector<Tensor<T>> values);
  const Tensor<T>& parameter(const std::string& name) const;

  template <typename U>
  Model<U> cast() const {
    std::vector<Parameter<U>> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back({p.name, p.value.detach().template cast<U>()});
    return Model<U>(cfg_, std::move(out));
  }

 private:
  ModelConfig cfg_;
  std::vector<Parameter<T>> params_;
};

// Deterministic in (cfg, seed): He-uniform conv weights, zero biases,
// gamma 1, beta 0, attention weights 0. Throws ConfigInvalid.
template <typename T>
Model<T> build_model(const ModelConfig& cfg, std::uint64_t seed);

// x: N x in_channels x D x H x W. params follow parameter_layout(cfg) and
// may live on a tape. When probe is given, every attention map is appended
// in execution order. Throws ShapeMismatch.
template <typename T>
Tensor<T> forward(const ModelConfig& cfg, std::span<const Tensor<T>> params, const Tensor<T>& x,
                  std::vector<AttentionMap<T>>* probe = nullptr);

template <typename T>
Tensor<T> forward(const Model<T>& m, const Tensor<T>& x, std::vector<AttentionMap<T>>* probe = nullptr) {
  const auto v = m.values();
  return forward<T>(m.config(), v, x, probe);
}

struct LevelSummary {
  std::int64_t level;
  std::int64_t channels;
  Triple extent;
};

struct ModelSummary {
  std::int64_t parameter_count = 0;
  std::int64_t attention_parameters = 0;
  std::vector<LevelSummary> levels;
  std::vector<ParameterSpec> parameters;

  std::string to_string() const;
};

ModelSummary describe(const ModelConfig& cfg);

}  // namespace rcan
