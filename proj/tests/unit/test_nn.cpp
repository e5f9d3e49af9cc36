#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "rcan/nn.hpp"
#include "rcan/ops.hpp"
#include "test_support.hpp"

using namespace rcan;
using rcan::testing::max_abs_diff;
using rcan::testing::naive_conv3d;
using rcan::testing::random_tensor;
using rcan::testing::weighted_sum;

namespace {

template <typename Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kOk;
}

std::vector<double> values(const Tensor64& t) { return {t.data().begin(), t.data().end()}; }

// Transposed convolution as a plain convolution: insert stride-1 zeros
// between input voxels, pad by k-1, correlate with the spatially flipped
// kernel whose in/out axes are swapped.
Tensor64 zero_stuffed_transpose(const Tensor64& x, const ConvSpec& spec, const Tensor64& w) {
  const std::int64_t n = x.dim(0), c = x.dim(1);
  const Triple s = spec.stride, k = spec.kernel;
  Triple ext{};
  for (int a = 0; a < 3; ++a) ext[a] = (x.dim(2 + a) - 1) * s[a] + 1;
  std::vector<double> stuffed(static_cast<std::size_t>(n * c * ext[0] * ext[1] * ext[2]), 0.0);
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t d = 0; d < x.dim(2); ++d)
        for (std::int64_t h = 0; h < x.dim(3); ++h)
          for (std::int64_t ww = 0; ww < x.dim(4); ++ww) {
            const std::int64_t o = (((b * c + ch) * ext[0] + d * s[0]) * ext[1] + h * s[1]) * ext[2] + ww * s[2];
            stuffed[static_cast<std::size_t>(o)] = x.at({b, ch, d, h, ww});
          }
  Tensor64 xs({n, c, ext[0], ext[1], ext[2]}, stuffed);
  ConvSpec conv{spec.in_channels, spec.out_channels, k, {1, 1, 1}, {k[0] - 1, k[1] - 1, k[2] - 1}, false};
  std::vector<double> flipped(static_cast<std::size_t>(numel(conv.weight_shape())));
  std::size_t i = 0;
  for (std::int64_t oc = 0; oc < spec.out_channels; ++oc)
    for (std::int64_t ic = 0; ic < spec.in_channels; ++ic)
      for (std::int64_t a = 0; a < k[0]; ++a)
        for (std::int64_t b = 0; b < k[1]; ++b)
          for (std::int64_t cc = 0; cc < k[2]; ++cc)
            flipped[i++] = w.at({ic, oc, k[0] - 1 - a, k[1] - 1 - b, k[2] - 1 - cc});
  Shape out{n, spec.out_channels, (x.dim(2) - 1) * s[0] + k[0], (x.dim(3) - 1) * s[1] + k[1],
            (x.dim(4) - 1) * s[2] + k[2]};
  return Tensor64(out, naive_conv3d(xs, conv, Tensor64(conv.weight_shape(), flipped), static_cast<const Tensor64*>(nullptr)));
}

}  // namespace

TEST(Conv3d, IdentityKernel) {
  Rng rng(1);
  auto x = random_tensor<float>({1, 1, 3, 3, 3}, rng);
  ConvSpec spec = ConvSpec::same(1, 1, 1);
  auto y = conv3d(x, spec, build_tensor<float>({1, 1, 1, 1, 1}, {1.0f}));
  EXPECT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(Conv3d, ZeroWeightsAndBias) {
  Rng rng(2);
  auto x = random_tensor<float>({2, 3, 4, 3, 5}, rng);
  ConvSpec spec = ConvSpec::same(3, 2, 3, true);
  auto w = zeros<float>(spec.weight_shape());
  auto b = zeros<float>({2});
  auto y = conv3d(x, spec, w, &b);
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Conv3d, NeighbourCount) {
  ConvSpec spec = ConvSpec::same(1, 1, 3);
  auto y = conv3d(full<float>({1, 1, 2, 2, 2}, 1.0f), spec, full<float>(spec.weight_shape(), 1.0f));
  for (float v : y.data()) EXPECT_EQ(v, 8.0f);
  // 3x3x3 ones: corner sees 8, edge 12, face 18, centre 27.
  auto z = conv3d(full<double>({1, 1, 3, 3, 3}, 1.0), spec, full<double>(spec.weight_shape(), 1.0));
  EXPECT_EQ(z.at({0, 0, 0, 0, 0}), 8.0);
  EXPECT_EQ(z.at({0, 0, 0, 0, 1}), 12.0);
  EXPECT_EQ(z.at({0, 0, 0, 1, 1}), 18.0);
  EXPECT_EQ(z.at({0, 0, 1, 1, 1}), 27.0);
}

TEST(Conv3d, ErrorGates) {
  ConvSpec spec = ConvSpec::same(2, 1, 3);
  auto x = zeros<float>({1, 2, 3, 3, 3});
  EXPECT_EQ(code_of([&] { conv3d(x, spec, zeros<float>({1, 1, 3, 3, 3})); }), ErrorCode::kShapeMismatch);
  EXPECT_EQ(code_of([&] { conv3d(zeros<float>({1, 3, 3, 3, 3}), spec, zeros<float>(spec.weight_shape())); }),
            ErrorCode::kShapeMismatch);
  ConvSpec big{2, 1, {5, 5, 5}, {1, 1, 1}, {0, 0, 0}, false};
  EXPECT_EQ(code_of([&] { conv3d(x, big, zeros<float>(big.weight_shape())); }), ErrorCode::kOutputCollapsed);
  auto bias = zeros<float>({1});
  EXPECT_EQ(code_of([&] { conv3d(x, spec, zeros<float>(spec.weight_shape()), &bias); }), ErrorCode::kShapeMismatch);
}

TEST(Conv3d, MatchesNaiveReference) {
  Rng rng(42);
  for (int trial = 0; trial < 60; ++trial) {
    const std::int64_t ic = 1 + rng.below(3), oc = 1 + rng.below(3), n = 1 + rng.below(2);
    const std::int64_t k = rng.bernoulli(0.5) ? 3 : 1;
    ConvSpec spec{ic, oc, {k, k, k}, {1 + static_cast<std::int64_t>(rng.below(2)), 1, 1 + static_cast<std::int64_t>(rng.below(2))},
                  {static_cast<std::int64_t>(rng.below(2)), static_cast<std::int64_t>(rng.below(2)), 1}, rng.bernoulli(0.5)};
    Shape xs{n, ic, static_cast<std::int64_t>(3 + rng.below(3)), static_cast<std::int64_t>(3 + rng.below(3)),
             static_cast<std::int64_t>(3 + rng.below(3))};
    auto x64 = random_tensor<double>(xs, rng);
    auto w64 = random_tensor<double>(spec.weight_shape(), rng);
    auto b64 = random_tensor<double>({oc}, rng);
    const Tensor64* bp = spec.has_bias ? &b64 : nullptr;
    auto y64 = conv3d(x64, spec, w64, bp);
    auto ref = naive_conv3d(x64, spec, w64, bp);
    EXPECT_LT(max_abs_diff<double>(y64.data(), ref), 1e-10);

    auto x32 = x64.cast<float>(), w32 = w64.cast<float>(), b32 = b64.cast<float>();
    auto y32 = conv3d(x32, spec, w32, spec.has_bias ? &b32 : nullptr);
    auto ref32 = naive_conv3d(x32, spec, w32, spec.has_bias ? &b32 : nullptr);
    EXPECT_LT(max_abs_diff<float>(y32.data(), ref32), 1e-5);
  }
}

TEST(Conv3d, GradCheck) {
  Rng rng(9);
  for (const ConvSpec& spec : {ConvSpec::same(2, 3, 3, true), ConvSpec{2, 2, {3, 3, 3}, {2, 1, 2}, {1, 0, 1}, false}}) {
    std::vector<Tensor64> in{random_tensor<double>({1, 2, 3, 4, 3}, rng), random_tensor<double>(spec.weight_shape(), rng)};
    if (spec.has_bias) in.push_back(random_tensor<double>({spec.out_channels}, rng));
    auto rep = grad_check(
        [spec](std::span<const Tensor64> v) {
          return weighted_sum(conv3d(v[0], spec, v[1], v.size() > 2 ? &v[2] : nullptr), 17);
        },
        in);
    EXPECT_LT(rep.max_rel_error, 1e-6);
  }
}

TEST(Conv3d, SigmoidConvGradCheck) {
  Rng rng(10);
  ConvSpec spec = ConvSpec::same(2, 2, 3);
  std::vector<Tensor64> in{random_tensor<double>({1, 2, 3, 3, 3}, rng), random_tensor<double>(spec.weight_shape(), rng)};
  auto rep = grad_check([spec](std::span<const Tensor64> v) { return sum(sigmoid(conv3d(v[0], spec, v[1]))); }, in);
  EXPECT_LT(rep.max_rel_error, 1e-4);
}

TEST(ConvTranspose3d, SingleSourceSpread) {
  ConvSpec spec = ConvSpec::upsample(1, 1, false);
  auto y = conv_transpose3d(build_tensor<float>({1, 1, 1, 1, 1}, {2.5f}), spec, full<float>(spec.transpose_weight_shape(), 1.0f));
  EXPECT_EQ(y.shape(), (Shape{1, 1, 2, 2, 2}));
  for (float v : y.data()) EXPECT_EQ(v, 2.5f);
}

TEST(ConvTranspose3d, ZeroInput) {
  Rng rng(3);
  ConvSpec spec = ConvSpec::upsample(2, 3, false);
  auto y = conv_transpose3d(zeros<float>({1, 2, 2, 3, 2}), spec, random_tensor<float>(spec.transpose_weight_shape(), rng));
  EXPECT_EQ(y.shape(), (Shape{1, 3, 4, 6, 4}));
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(ConvTranspose3d, MatchesZeroStuffedConvolution) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const std::int64_t ic = trial == 0 ? 2 : 1 + rng.below(3), oc = 1 + rng.below(3);
    ConvSpec spec = ConvSpec::upsample(ic, oc, false);
    Shape xs{1 + static_cast<std::int64_t>(rng.below(2)), ic, 1 + static_cast<std::int64_t>(rng.below(3)),
             2, 1 + static_cast<std::int64_t>(rng.below(3))};
    if (trial == 0) xs = {1, 2, 2, 2, 2};
    auto x = random_tensor<double>(xs, rng);
    auto w = random_tensor<double>(spec.transpose_weight_shape(), rng);
    auto y = conv_transpose3d(x, spec, w);
    auto ref = zero_stuffed_transpose(x, spec, w);
    EXPECT_EQ(y.shape(), ref.shape());
    EXPECT_LT(max_abs_diff<double>(y.data(), ref.data()), 1e-12);
  }
}

// <conv_transpose(x), y> == <x, conv(y)> for the stride-2 convolution with
// the same weights.
TEST(ConvTranspose3d, AdjointIdentity) {
  Rng rng(5);
  ConvSpec up = ConvSpec::upsample(2, 3, false);
  ConvSpec down{3, 2, {2, 2, 2}, {2, 2, 2}, {0, 0, 0}, false};
  auto x = random_tensor<double>({1, 2, 2, 3, 2}, rng);
  auto w = random_tensor<double>(up.transpose_weight_shape(), rng);
  auto y = random_tensor<double>({1, 3, 4, 6, 4}, rng);
  // conv weights out x in = 2 x 3: reuse w (in=2 x out=3) read as [c_small][c_big].
  auto lhs = sum(mul(conv_transpose3d(x, up, w), y)).item();
  auto rhs = sum(mul(x, conv3d(y, down, Tensor64(down.weight_shape(), values(w))))).item();
  EXPECT_NEAR(lhs, rhs, 1e-10);
}

TEST(ConvTranspose3d, GradCheck) {
  Rng rng(6);
  ConvSpec spec = ConvSpec::upsample(2, 2, true);
  std::vector<Tensor64> in{random_tensor<double>({1, 2, 2, 2, 2}, rng), random_tensor<double>(spec.transpose_weight_shape(), rng),
                           random_tensor<double>({2}, rng)};
  auto rep = grad_check(
      [spec](std::span<const Tensor64> v) { return weighted_sum(conv_transpose3d(v[0], spec, v[1], &v[2]), 21); }, in);
  EXPECT_LT(rep.max_rel_error, 1e-6);
}

TEST(MaxPool3d, ConstantAndBlockMax) {
  auto y = max_pool3d(full<float>({1, 2, 4, 2, 6}, 3.5f));
  EXPECT_EQ(y.shape(), (Shape{1, 2, 2, 1, 3}));
  for (float v : y.data()) EXPECT_EQ(v, 3.5f);
  auto z = max_pool3d(build_tensor<float>({1, 1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8}));
  EXPECT_EQ(z.item(), 8.0f);
}

TEST(MaxPool3d, TieGoesToFirstIndex) {
  Tape<double> tape;
  auto x = tape.variable(Tensor64({1, 1, 2, 2, 2}, {5, 5, 0, 0, 0, 0, 0, 0}));
  auto g = tape.backward(sum(max_pool3d(x))).of(x);
  EXPECT_EQ(values(g), (std::vector<double>{1, 0, 0, 0, 0, 0, 0, 0}));
}

TEST(MaxPool3d, OddExtent) {
  EXPECT_EQ(code_of([] { max_pool3d(zeros<float>({1, 1, 2, 3, 2})); }), ErrorCode::kOddExtent);
}

TEST(MaxPool3d, GradCheck) {
  Rng rng(7);
  std::vector<Tensor64> in{random_tensor<double>({1, 2, 4, 2, 4}, rng)};
  EXPECT_LT(grad_check([](std::span<const Tensor64> v) { return weighted_sum(max_pool3d(v[0]), 3); }, in).max_rel_error, 1e-6);
}

TEST(GlobalPools, Constants) {
  auto x = build_tensor<float>({1, 2, 1, 1, 2}, {3, 3, -1, -1});
  auto mx = global_max_pool(x);
  auto av = global_avg_pool(x);
  EXPECT_EQ(mx.values.shape(), (Shape{1, 2, 1, 1, 1}));
  EXPECT_EQ(mx.values.data()[0], 3.0f);
  EXPECT_EQ(mx.values.data()[1], -1.0f);
  EXPECT_EQ(av.values.data()[0], 3.0f);
  EXPECT_EQ(av.values.data()[1], -1.0f);
}

TEST(GlobalPools, SmallSet) {
  auto x = build_tensor<double>({1, 1, 1, 2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(global_max_pool(x).values.item(), 4.0);
  EXPECT_EQ(global_avg_pool(x).values.item(), 2.5);
}

TEST(GlobalPools, MatchExhaustiveScan) {
  Rng rng(8);
  auto x = random_tensor<double>({1, 3, 4, 4, 4}, rng);
  auto mx = global_max_pool(x);
  auto av = global_avg_pool(x);
  for (std::int64_t c = 0; c < 3; ++c) {
    double best = -1e300, total = 0.0;
    for (std::int64_t d = 0; d < 4; ++d)
      for (std::int64_t h = 0; h < 4; ++h)
        for (std::int64_t w = 0; w < 4; ++w) {
          best = std::max(best, x.at({0, c, d, h, w}));
          total += x.at({0, c, d, h, w});
        }
    EXPECT_EQ(mx.values.data()[c], best);
    EXPECT_NEAR(av.values.data()[c], total / 64.0, 1e-15);
  }
}

TEST(GlobalPools, PermutationInvariant) {
  Rng rng(12);
  auto x = random_tensor<float>({2, 3, 3, 4, 2}, rng);
  const std::int64_t spatial = 24;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<float> v(x.data().begin(), x.data().end());
    for (std::int64_t p = 0; p < 6; ++p) {
      // Fisher-Yates within one (batch, channel) plane.
      for (std::int64_t i = spatial - 1; i > 0; --i) {
        const std::int64_t j = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(i + 1)));
        std::swap(v[p * spatial + i], v[p * spatial + j]);
      }
    }
    auto xp = x.with_data(v);
    auto a = global_max_pool(x).values, b = global_max_pool(xp).values;
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.data()[i], b.data()[i]);
    auto c = global_avg_pool(x).values, d = global_avg_pool(xp).values;
    for (std::size_t i = 0; i < c.size(); ++i) EXPECT_EQ(c.data()[i], d.data()[i]);
  }
}

TEST(GlobalPools, GradChecks) {
  Rng rng(13);
  std::vector<Tensor64> in{random_tensor<double>({1, 3, 2, 3, 2}, rng)};
  EXPECT_LT(grad_check([](std::span<const Tensor64> v) { return sum(global_avg_pool(v[0]).values); }, in).max_rel_error, 1e-6);
  EXPECT_LT(grad_check([](std::span<const Tensor64> v) { return weighted_sum(global_max_pool(v[0]).values, 5); }, in).max_rel_error,
            1e-6);
  // d/dx of the mean is 1/(D*H*W) everywhere.
  Tape<double> tape;
  auto x = tape.variable(in[0]);
  auto g = tape.backward(sum(global_avg_pool(x).values)).of(x);
  for (double v : g.data()) EXPECT_DOUBLE_EQ(v, 1.0 / 12.0);
}

TEST(Conv1dChannel, IdentityTapAndZeros) {
  ChannelDescriptor<double> d(Tensor64({1, 3, 1, 1, 1}, {1, 2, 3}));
  EXPECT_EQ(values(conv1d_channel(d, Tensor64({3}, {0, 1, 0})).values), (std::vector<double>{1, 2, 3}));
  EXPECT_EQ(values(conv1d_channel(d, Tensor64({3}, {0, 0, 0})).values), (std::vector<double>{0, 0, 0}));
  EXPECT_EQ(values(conv1d_channel(d, Tensor64({3}, {1, 1, 1})).values), (std::vector<double>{3, 6, 5}));
}

TEST(Conv1dChannel, IdentityForEveryOddK) {
  Rng rng(14);
  for (std::int64_t k = 1; k <= 9; k += 2) {
    std::vector<double> w(static_cast<std::size_t>(k), 0.0);
    w[static_cast<std::size_t>(k / 2)] = 1.0;
    ChannelDescriptor<double> d(random_tensor<double>({2, 5, 1, 1, 1}, rng));
    EXPECT_EQ(values(conv1d_channel(d, Tensor64({k}, w)).values), values(d.values)) << k;
  }
}

TEST(Conv1dChannel, EvenKernelRejected) {
  ChannelDescriptor<double> d(Tensor64({1, 3, 1, 1, 1}, {1, 2, 3}));
  EXPECT_EQ(code_of([&] { conv1d_channel(d, Tensor64({2}, {1, 1})); }), ErrorCode::kEvenKernel);
}

TEST(Conv1dChannel, GradCheck) {
  Rng rng(15);
  std::vector<Tensor64> in{random_tensor<double>({2, 5, 1, 1, 1}, rng), random_tensor<double>({3}, rng)};
  auto rep = grad_check(
      [](std::span<const Tensor64> v) {
        return weighted_sum(conv1d_channel(ChannelDescriptor<double>(v[0]), v[1]).values, 8);
      },
      in);
  EXPECT_LT(rep.max_rel_error, 1e-6);
}

TEST(GroupNorm, ConstantInputGivesZero) {
  auto y = group_norm(full<float>({1, 4, 2, 2, 2}, 3.0f), 2, full<float>({4}, 1.0f), zeros<float>({4}));
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(GroupNorm, MomentsPerGroup) {
  Rng rng(16);
  auto x = random_tensor<double>({2, 8, 3, 2, 4}, rng, -3.0, 5.0);
  auto y = group_norm(x, 4, full<double>({8}, 1.0), zeros<double>({8}));
  const std::int64_t per_group = 2 * 24;
  for (std::int64_t slab = 0; slab < 8; ++slab) {
    double mean = 0.0, sq = 0.0;
    for (std::int64_t i = 0; i < per_group; ++i) mean += y.data()[slab * per_group + i];
    mean /= per_group;
    for (std::int64_t i = 0; i < per_group; ++i) sq += std::pow(y.data()[slab * per_group + i] - mean, 2);
    EXPECT_LT(std::abs(mean), 1e-5);
    EXPECT_NEAR(sq / per_group, 1.0, 1e-4);
  }
}

TEST(GroupNorm, AffineCollapse) {
  Rng rng(17);
  auto y = group_norm(random_tensor<float>({1, 4, 2, 2, 2}, rng), 4, zeros<float>({4}), full<float>({4}, 7.0f));
  for (float v : y.data()) EXPECT_EQ(v, 7.0f);
}

TEST(GroupNorm, IndivisibleGroups) {
  EXPECT_EQ(code_of([] { group_norm(zeros<float>({1, 6, 1, 1, 2}), 4, zeros<float>({6}), zeros<float>({6})); }),
            ErrorCode::kIndivisibleGroups);
}

TEST(GroupNorm, GradCheck) {
  Rng rng(18);
  std::vector<Tensor64> in{random_tensor<double>({1, 4, 2, 2, 2}, rng), random_tensor<double>({4}, rng, 0.5, 1.5),
                           random_tensor<double>({4}, rng)};
  auto rep = grad_check(
      [](std::span<const Tensor64> v) { return weighted_sum(group_norm(v[0], 2, v[1], v[2]), 9); }, in);
  EXPECT_LT(rep.max_rel_error, 1e-4);
}
