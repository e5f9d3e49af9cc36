#include "rcan/gradcheck.hpp"

#include "rcan/model.hpp"
#include "rcan/ops.hpp"
#include "rcan/random.hpp"
#include "rcan/rca.hpp"
#include "rcan/train.hpp"

namespace rcan {

namespace {

Tensor64 uniform_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor64(shape, std::move(v));
}

// |x| >= 0.05 so no ReLU kink sits inside a difference step.
Tensor64 signed_tensor(const Shape& shape, Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) {
    const double m = rng.uniform(0.05, 1.0);
    x = rng.bernoulli(0.5) ? m : -m;
  }
  return Tensor64(shape, std::move(v));
}

// sum(r * y) with fixed positive weights r, so no gradient cancels by symmetry.
Tensor64 weighted_sum(const Tensor64& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, uniform_tensor(y.shape(), rng, 0.5, 1.5)));
}

}  // namespace

std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seed) {
  std::vector<GradSuiteEntry> out;
  std::uint64_t stream = 0;
  auto check = [&](std::string name, const DifferentiableOp& op, std::vector<Tensor64> inputs) {
    const auto rep = grad_check(op, inputs);
    out.push_back({std::move(name), rep.max_rel_error, rep.coordinates});
  };
  auto rng_for = [&] { return Rng(derive_seed(seed, {stream++})); };
  const std::uint64_t ws = derive_seed(seed, {0x7773});

  {
    auto rng = rng_for();
    const auto spec = ConvSpec::same(2, 3, 3, true);
    check("conv3d", [&](std::span<const Tensor64> v) { return weighted_sum(conv3d(v[0], spec, v[1], &v[2]), ws); },
          {uniform_tensor({1, 2, 4, 4, 4}, rng), uniform_tensor(spec.weight_shape(), rng), uniform_tensor({3}, rng)});
  }
  {
    auto rng = rng_for();
    const ConvSpec spec{2, 2, {3, 3, 3}, {2, 1, 2}, {1, 0, 1}, false};
    check("conv3d_strided", [&](std::span<const Tensor64> v) { return weighted_sum(conv3d(v[0], spec, v[1]), ws); },
          {uniform_tensor({1, 2, 4, 4, 4}, rng), uniform_tensor(spec.weight_shape(), rng)});
  }
  {
    auto rng = rng_for();
    const auto spec = ConvSpec::upsample(4, 2, true);
    check("conv_transpose3d",
          [&](std::span<const Tensor64> v) { return weighted_sum(conv_transpose3d(v[0], spec, v[1], &v[2]), ws); },
          {uniform_tensor({1, 4, 2, 2, 2}, rng), uniform_tensor(spec.transpose_weight_shape(), rng),
           uniform_tensor({2}, rng)});
  }
  {
    auto rng = rng_for();
    check("max_pool3d", [&](std::span<const Tensor64> v) { return weighted_sum(max_pool3d(v[0]), ws); },
          {uniform_tensor({1, 4, 4, 4, 4}, rng)});
  }
  {
    auto rng = rng_for();
    check("global_max_pool", [&](std::span<const Tensor64> v) { return weighted_sum(global_max_pool(v[0]).values, ws); },
          {uniform_tensor({1, 4, 4, 4, 4}, rng)});
  }
  {
    auto rng = rng_for();
    check("global_avg_pool", [&](std::span<const Tensor64> v) { return weighted_sum(global_avg_pool(v[0]).values, ws); },
          {uniform_tensor({1, 4, 4, 4, 4}, rng)});
  }
  {
    auto rng = rng_for();
    check("conv1d_channel",
          [&](std::span<const Tensor64> v) {
            return weighted_sum(conv1d_channel(ChannelDescriptor<double>(v[0]), v[1]).values, ws);
          },
          {uniform_tensor({1, 4, 1, 1, 1}, rng), uniform_tensor({3}, rng)});
  }
  {
    auto rng = rng_for();
    check("group_norm",
          [&](std::span<const Tensor64> v) { return weighted_sum(group_norm(v[0], 2, v[1], v[2]), ws); },
          {uniform_tensor({1, 4, 4, 4, 4}, rng), uniform_tensor({4}, rng, 0.5, 1.5), uniform_tensor({4}, rng)});
  }
  {
    auto rng = rng_for();
    check("sigmoid", [&](std::span<const Tensor64> v) { return weighted_sum(sigmoid(v[0]), ws); },
          {uniform_tensor({1, 4, 4, 4, 4}, rng, -4, 4)});
  }
  {
    auto rng = rng_for();
    check("relu", [&](std::span<const Tensor64> v) { return weighted_sum(relu(v[0]), ws); },
          {signed_tensor({1, 4, 4, 4, 4}, rng)});
  }
  const std::pair<const char*, AttentionAblation> variants[] = {{"rca_forward", {}},
                                                                 {"rca_forward_no_max", {false, true, true}},
                                                                 {"rca_forward_no_avg", {true, false, true}},
                                                                 {"rca_forward_no_residual", {true, true, false}}};
  for (const auto& [name, ab] : variants) {
    auto rng = rng_for();
    check(name,
          [&, ab = ab](std::span<const Tensor64> v) {
            return weighted_sum(rca_forward(v[0], AttentionParams<double>{v[1], ab}), ws);
          },
          {uniform_tensor({1, 4, 4, 4, 4}, rng), uniform_tensor({3}, rng)});
  }
  for (LossKind kind : {LossKind::kSoftDice, LossKind::kDicePlusCe}) {
    auto rng = rng_for();
    LabelMap l{{4, 4, 4}, std::vector<std::uint8_t>(64), {1, 1, 1}};
    for (auto& v : l.labels) v = label_of_class(static_cast<int>(rng.below(4)));
    check(std::string("soft_dice_ce_loss/") + loss_name(kind),
          [&](std::span<const Tensor64> v) { return soft_dice_ce_loss(v[0], l, kind); },
          {uniform_tensor({1, 4, 4, 4, 4}, rng, -2, 2)});
  }
  {
    ModelConfig cfg;
    cfg.levels = 2;
    cfg.base_width = 2;
    cfg.patch = {4, 4, 4};
    auto rng = rng_for();
    auto values = build_model<double>(cfg, rng.bits()).values();
    const auto layout = parameter_layout(cfg);
    for (std::size_t i = 0; i < values.size(); ++i)
      if (layout[i].name.ends_with(".rca.weight")) values[i] = uniform_tensor(values[i].shape(), rng);
    values.push_back(uniform_tensor({1, 4, 4, 4, 4}, rng));
    check("model_forward",
          [&](std::span<const Tensor64> v) {
            return weighted_sum(forward<double>(cfg, v.first(v.size() - 1), v.back()), ws);
          },
          std::move(values));
  }
  return out;
}

}  // namespace rcan
