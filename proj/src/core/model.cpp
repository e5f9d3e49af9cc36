#include "rcan/model.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "rcan/error.hpp"
#include "rcan/ops.hpp"
#include "rcan/random.hpp"

namespace rcan {

namespace {

constexpr std::int64_t kMaxChannels = 1024;

void push_double_conv(std::vector<ParameterSpec>& out, const std::string& prefix, std::int64_t in,
                      std::int64_t width, std::int64_t k) {
  out.push_back({prefix + ".conv1.weight", ConvSpec::same(in, width).weight_shape()});
  out.push_back({prefix + ".norm1.gamma", {width}});
  out.push_back({prefix + ".norm1.beta", {width}});
  out.push_back({prefix + ".conv2.weight", ConvSpec::same(width, width).weight_shape()});
  out.push_back({prefix + ".norm2.gamma", {width}});
  out.push_back({prefix + ".norm2.beta", {width}});
  out.push_back({prefix + ".rca.weight", {k}});
}

// Walks the flat parameter list in layout order.
template <typename T>
class Cursor {
 public:
  explicit Cursor(std::span<const Tensor<T>> p) : p_(p) {}
  const Tensor<T>& next() {
    require(i_ < p_.size(), ErrorCode::kShapeMismatch, "too few parameters for config");
    return p_[i_++];
  }
  bool done() const { return i_ == p_.size(); }

 private:
  std::span<const Tensor<T>> p_;
  std::size_t i_ = 0;
};

template <typename T>
Tensor<T> double_conv(const ModelConfig& cfg, Cursor<T>& cur, const Tensor<T>& x, std::int64_t width,
                      std::vector<AttentionMap<T>>* probe) {
  const std::int64_t groups = cfg.groups_for(width);
  Tensor<T> h = x;
  for (int stage = 0; stage < 2; ++stage) {
    const auto& w = cur.next();
    const auto& gamma = cur.next();
    const auto& beta = cur.next();
    h = conv3d(h, ConvSpec::same(h.dim(1), width), w);
    h = relu(group_norm(h, groups, gamma, beta));
  }
  AttentionParams<T> ap{cur.next(), cfg.ablation};
  if (!probe) return rca_forward(h, ap);
  AttentionMap<T> m;
  auto y = rca_forward(h, ap, &m);
  probe->push_back(std::move(m));
  return y;
}

}  // namespace

std::int64_t ModelConfig::groups_for(std::int64_t channels) const { return std::gcd(norm_groups, channels); }

void ModelConfig::validate() const {
  auto check = [](bool ok, const std::string& what) { require(ok, ErrorCode::kConfigInvalid, what); };
  check(in_channels >= 1, "in_channels must be >= 1");
  check(out_classes >= 2, "out_classes must be >= 2");
  check(levels >= 1 && levels <= 8, "levels must be in [1, 8]");
  check(base_width >= 1, "base_width must be >= 1");
  check(width(levels - 1) <= kMaxChannels, "base_width * 2^(levels-1) exceeds " + std::to_string(kMaxChannels));
  check(attention_k >= 1 && attention_k % 2 == 1, "attention_k must be odd and positive");
  check(norm_groups >= 1, "norm_groups must be >= 1");
  check(ablation.use_max_pool || ablation.use_avg_pool, "attention needs at least one pooling branch");
  const std::int64_t div = std::int64_t{1} << (levels - 1);
  for (auto e : patch)
    check(e >= 1 && e % div == 0,
          "patch extent " + std::to_string(e) + " not divisible by " + std::to_string(div));
}

void ModelConfig::check_input_extent(const Triple& extent) const {
  const std::int64_t div = std::int64_t{1} << (levels - 1);
  for (auto e : extent)
    require(e >= 1 && e % div == 0, ErrorCode::kShapeMismatch,
            "input extent " + std::to_string(e) + " not divisible by " + std::to_string(div));
}

std::vector<ParameterSpec> parameter_layout(const ModelConfig& cfg) {
  std::vector<ParameterSpec> out;
  const auto k = cfg.attention_k;
  for (std::int64_t i = 0; i < cfg.levels; ++i)
    push_double_conv(out, "enc" + std::to_string(i), i == 0 ? cfg.in_channels : cfg.width(i - 1), cfg.width(i), k);
  for (std::int64_t i = cfg.levels - 2; i >= 0; --i) {
    const auto up = ConvSpec::upsample(cfg.width(i + 1), cfg.width(i));
    out.push_back({"up" + std::to_string(i) + ".weight", up.transpose_weight_shape()});
    out.push_back({"up" + std::to_string(i) + ".bias", {cfg.width(i)}});
    push_double_conv(out, "dec" + std::to_string(i), 2 * cfg.width(i), cfg.width(i), k);
  }
  out.push_back({"head.weight", ConvSpec::same(cfg.width(0), cfg.out_classes, 1, true).weight_shape()});
  out.push_back({"head.bias", {cfg.out_classes}});
  return out;
}

std::int64_t parameter_count(const ModelConfig& cfg) {
  std::int64_t n = 0;
  for (const auto& p : parameter_layout(cfg)) n += numel(p.shape);
  return n;
}

template <typename T>
Model<T>::Model(ModelConfig cfg, std::vector<Parameter<T>> params) : cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.validate();
  const auto layout = parameter_layout(cfg_);
  require(layout.size() == params_.size(), ErrorCode::kShapeMismatch, "parameter count does not match config");
  for (std::size_t i = 0; i < layout.size(); ++i) {
    require(params_[i].name == layout[i].name, ErrorCode::kShapeMismatch,
            "expected parameter " + layout[i].name + ", got " + params_[i].name);
    require(params_[i].value.shape() == layout[i].shape, ErrorCode::kShapeMismatch,
            layout[i].name + ": expected " + shape_str(layout[i].shape) + ", got " +
                shape_str(params_[i].value.shape()));
  }
}

template <typename T>
std::vector<Tensor<T>> Model<T>::values() const {
  std::vector<Tensor<T>> v;
  v.reserve(params_.size());
  for (const auto& p : params_) v.push_back(p.value);
  return v;
}

template <typename T>
void Model<T>::set_values(std::vector<Tensor<T>> values) {
  require(values.size() == params_.size(), ErrorCode::kShapeMismatch, "parameter count mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    require(values[i].shape() == params_[i].value.shape(), ErrorCode::kShapeMismatch, params_[i].name);
    params_[i].value = values[i].detach();
  }
}

template <typename T>
const Tensor<T>& Model<T>::parameter(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.value;
  fail(ErrorCode::kInvalidArgument, "no parameter named " + name);
}

template <typename T>
Model<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::vector<Parameter<T>> params;
  const auto layout = parameter_layout(cfg);
  for (std::size_t idx = 0; idx < layout.size(); ++idx) {
    const auto& spec = layout[idx];
    const auto n = static_cast<std::size_t>(numel(spec.shape));
    std::vector<T> v(n, T(0));
    const auto& name = spec.name;
    auto ends_with = [&](const char* s) { return name.ends_with(s); };
    if (ends_with(".gamma")) {
      std::fill(v.begin(), v.end(), T(1));
    } else if (spec.shape.size() == 5) {
      // He-uniform over the fan-in. A stride-2 kernel-2 transpose feeds each
      // output voxel from one tap per input channel.
      const bool transpose = name.starts_with("up");
      const double fan_in =
          transpose ? static_cast<double>(spec.shape[0])
                    : static_cast<double>(spec.shape[1] * spec.shape[2] * spec.shape[3] * spec.shape[4]);
      const double bound = std::sqrt(6.0 / fan_in);
      Rng rng(derive_seed(seed, {idx}));
      for (auto& e : v) e = static_cast<T>(rng.uniform(-bound, bound));
    }
    params.push_back({name, Tensor<T>(spec.shape, std::move(v))});
  }
  return Model<T>(cfg, std::move(params));
}

template <typename T>
Tensor<T> forward(const ModelConfig& cfg, std::span<const Tensor<T>> params, const Tensor<T>& x,
                  std::vector<AttentionMap<T>>* probe) {
  require(x.rank() == 5 && x.dim(1) == cfg.in_channels, ErrorCode::kShapeMismatch,
          "expected N x " + std::to_string(cfg.in_channels) + " x D x H x W input, got " + shape_str(x.shape()));
  cfg.check_input_extent({x.dim(2), x.dim(3), x.dim(4)});
  Cursor<T> cur(params);
  std::vector<Tensor<T>> skips;
  Tensor<T> h = x;
  for (std::int64_t i = 0; i < cfg.levels; ++i) {
    if (i > 0) h = max_pool3d(h);
    h = double_conv(cfg, cur, h, cfg.width(i), probe);
    skips.push_back(h);
  }
  for (std::int64_t i = cfg.levels - 2; i >= 0; --i) {
    const auto& w = cur.next();
    const auto& b = cur.next();
    h = conv_transpose3d(h, ConvSpec::upsample(cfg.width(i + 1), cfg.width(i)), w, &b);
    h = concat_channels(skips[static_cast<std::size_t>(i)], h);
    h = double_conv(cfg, cur, h, cfg.width(i), probe);
  }
  const auto& hw = cur.next();
  const auto& hb = cur.next();
  auto logits = conv3d(h, ConvSpec::same(cfg.width(0), cfg.out_classes, 1, true), hw, &hb);
  require(cur.done(), ErrorCode::kShapeMismatch, "too many parameters for config");
  return logits;
}

ModelSummary describe(const ModelConfig& cfg) {
  cfg.validate();
  ModelSummary s;
  s.parameters = parameter_layout(cfg);
  for (const auto& p : s.parameters) {
    s.parameter_count += numel(p.shape);
    if (p.name.ends_with(".rca.weight")) s.attention_parameters += numel(p.shape);
  }
  for (std::int64_t i = 0; i < cfg.levels; ++i)
    s.levels.push_back({i, cfg.width(i), {cfg.patch[0] >> i, cfg.patch[1] >> i, cfg.patch[2] >> i}});
  return s;
}

std::string ModelSummary::to_string() const {
  std::ostringstream os;
  os << "parameters " << parameter_count << " (attention " << attention_parameters << ")\n";
  for (const auto& l : levels)
    os << "level " << l.level << ": " << l.channels << " x " << l.extent[0] << "x" << l.extent[1] << "x"
       << l.extent[2] << "\n";
  for (const auto& p : parameters) os << "  " << p.name << " " << shape_str(p.shape) << "\n";
  return os.str();
}

#define RCAN_INSTANTIATE(T)                                                                            \
  template class Model<T>;                                                                             \
  template Model<T> build_model<T>(const ModelConfig&, std::uint64_t);                                 \
  template Tensor<T> forward<T>(const ModelConfig&, std::span<const Tensor<T>>, const Tensor<T>&,      \
                                std::vector<AttentionMap<T>>*);

RCAN_INSTANTIATE(float)
RCAN_INSTANTIATE(double)

}  // namespace rcan
