#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "rcan/error.hpp"
#include "rcan/metrics.hpp"
#include "test_support.hpp"

using namespace rcan;
using rcan::testing::brute_force_hd95;
using rcan::testing::random_mask;
using rcan::testing::TempDir;

namespace {

BinaryGrid empty_grid(Triple e) { return {e, std::vector<std::uint8_t>(static_cast<std::size_t>(voxel_count(e)), 0)}; }

std::size_t at(Triple e, std::int64_t d, std::int64_t h, std::int64_t w) {
  return static_cast<std::size_t>((d * e[1] + h) * e[2] + w);
}

LabelMap label_map(Triple e, Spacing s = {1.0, 1.0, 1.0}) {
  return {e, std::vector<std::uint8_t>(static_cast<std::size_t>(voxel_count(e)), 0), s};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Regions, MasksFromLabels) {
  auto l = label_map({1, 1, 4});
  l.labels = {0, 1, 2, 4};
  const auto m = region_masks(l);
  EXPECT_EQ(m.wt.voxels, (std::vector<std::uint8_t>{0, 1, 1, 1}));
  EXPECT_EQ(m.tc.voxels, (std::vector<std::uint8_t>{0, 1, 0, 1}));
  EXPECT_EQ(m.et.voxels, (std::vector<std::uint8_t>{0, 0, 0, 1}));
  EXPECT_STREQ(region_name(Region::kEt), "ET");
  EXPECT_STREQ(region_name(Region::kWt), "WT");
  EXPECT_STREQ(region_name(Region::kTc), "TC");
}

TEST(Regions, NestedForRandomLabels) {
  Rng rng(11);
  const std::uint8_t values[4] = {0, 1, 2, 4};
  for (int trial = 0; trial < 20; ++trial) {
    auto l = label_map({5, 6, 7});
    for (auto& v : l.labels) v = values[rng.below(4)];
    const auto m = region_masks(l);
    for (std::size_t i = 0; i < l.labels.size(); ++i) {
      EXPECT_LE(m.et.voxels[i], m.tc.voxels[i]);
      EXPECT_LE(m.tc.voxels[i], m.wt.voxels[i]);
    }
  }
}

TEST(Regions, RejectsUnknownLabel) {
  auto l = label_map({1, 1, 2});
  l.labels = {0, 3};
  try {
    region_masks(l);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidLabelValue);
  }
}

TEST(Overlap, HandCountedExample) {
  // TP = 2, FP = 2, FN = 0, TN = 23 in a 3x3x3 grid.
  const Triple e{3, 3, 3};
  auto p = empty_grid(e), g = empty_grid(e);
  g.voxels[0] = g.voxels[1] = 1;
  p.voxels[0] = p.voxels[1] = p.voxels[2] = p.voxels[3] = 1;
  const auto m = overlap_metrics(p, g);
  EXPECT_NEAR(m.dice, 4.0 / 6.0, 1e-12);
  ASSERT_TRUE(m.sensitivity && m.specificity);
  EXPECT_DOUBLE_EQ(*m.sensitivity, 1.0);
  EXPECT_NEAR(*m.specificity, 23.0 / 25.0, 1e-12);
}

TEST(Overlap, BothEmpty) {
  const auto z = empty_grid({4, 4, 4});
  const auto m = overlap_metrics(z, z);
  EXPECT_DOUBLE_EQ(m.dice, 1.0);
  EXPECT_FALSE(m.sensitivity.has_value());
  ASSERT_TRUE(m.specificity.has_value());
  EXPECT_DOUBLE_EQ(*m.specificity, 1.0);
  EXPECT_FALSE(hausdorff95(z, z, {1, 1, 1}).has_value());
}

TEST(Overlap, OneSideEmpty) {
  auto g = empty_grid({3, 3, 3});
  g.voxels[13] = 1;
  const auto z = empty_grid({3, 3, 3});
  EXPECT_DOUBLE_EQ(overlap_metrics(z, g).dice, 0.0);
  EXPECT_DOUBLE_EQ(*overlap_metrics(z, g).sensitivity, 0.0);
  EXPECT_FALSE(hausdorff95(z, g, {1, 1, 1}).has_value());
  EXPECT_FALSE(hausdorff95(g, z, {1, 1, 1}).has_value());
}

TEST(Overlap, ShapeMismatch) {
  try {
    overlap_metrics(empty_grid({2, 2, 2}), empty_grid({2, 2, 3}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
  }
  EXPECT_THROW(hausdorff95(empty_grid({2, 2, 2}), empty_grid({3, 2, 2}), {1, 1, 1}), Error);
}

TEST(Overlap, DiceInUnitIntervalAndSymmetric) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Triple e{1 + static_cast<std::int64_t>(rng.below(8)), 1 + static_cast<std::int64_t>(rng.below(8)),
                   1 + static_cast<std::int64_t>(rng.below(8))};
    const auto a = random_mask(e, rng), b = random_mask(e, rng);
    const double d = overlap_metrics(a, b).dice;
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 1.0);
    EXPECT_DOUBLE_EQ(d, overlap_metrics(b, a).dice);
    EXPECT_DOUBLE_EQ(overlap_metrics(a, a).dice, 1.0);
  }
}

TEST(Overlap, DiceDropsWhenTruePositiveBecomesFalseNegative) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const Triple e{6, 6, 6};
    const auto g = random_mask(e, rng);
    auto p = random_mask(e, rng);
    std::vector<std::size_t> tps;
    for (std::size_t i = 0; i < p.voxels.size(); ++i)
      if (p.voxels[i] && g.voxels[i]) tps.push_back(i);
    if (tps.empty()) continue;
    const double before = overlap_metrics(p, g).dice;
    p.voxels[tps[rng.below(tps.size())]] = 0;
    EXPECT_LT(overlap_metrics(p, g).dice, before);
  }
}

TEST(Hausdorff, SingleVoxelsThreeApart) {
  const Triple e{1, 1, 5};
  auto a = empty_grid(e), b = empty_grid(e);
  a.voxels[0] = 1;
  b.voxels[3] = 1;
  EXPECT_DOUBLE_EQ(*hausdorff95(a, b, {1, 1, 1}), 3.0);
  EXPECT_DOUBLE_EQ(*hausdorff95(a, b, {1, 1, 0.5}), 1.5);
}

TEST(Hausdorff, AnisotropicSpacingScalesAlongAxis) {
  const Triple e{5, 1, 1};
  auto a = empty_grid(e), b = empty_grid(e);
  a.voxels[0] = 1;
  b.voxels[3] = 1;
  EXPECT_DOUBLE_EQ(*hausdorff95(a, b, {2.5, 1, 1}), 7.5);
  EXPECT_DOUBLE_EQ(*hausdorff95(a, b, {1, 9, 9}), 3.0);
}

TEST(Hausdorff, IdenticalMasksGiveZero) {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const auto m = random_mask({6, 7, 8}, rng);
    const auto h = hausdorff95(m, m, {1.2, 0.8, 2.0});
    if (m.count() == 0) {
      EXPECT_FALSE(h.has_value());
    } else {
      EXPECT_DOUBLE_EQ(*h, 0.0);
    }
  }
}

TEST(Hausdorff, BoundaryOfSolidCube) {
  auto m = empty_grid({3, 3, 3});
  std::fill(m.voxels.begin(), m.voxels.end(), 1);
  // Grid edges count as background, so only the centre is interior.
  EXPECT_EQ(boundary_voxels(m).size(), 26u);
  auto big = empty_grid({5, 5, 5});
  for (std::int64_t d = 1; d < 4; ++d)
    for (std::int64_t h = 1; h < 4; ++h)
      for (std::int64_t w = 1; w < 4; ++w) big.voxels[at(big.extent, d, h, w)] = 1;
  EXPECT_EQ(boundary_voxels(big).size(), 26u);
}

TEST(Hausdorff, PercentileInterpolatesLinearly) {
  EXPECT_DOUBLE_EQ(percentile({0, 10}, 95), 9.5);
  EXPECT_DOUBLE_EQ(percentile({3, 1, 2}, 50), 2.0);
  EXPECT_DOUBLE_EQ(percentile({4}, 95), 4.0);
  EXPECT_DOUBLE_EQ(percentile({1, 2, 3, 4, 5}, 100), 5.0);
  EXPECT_THROW(percentile({}, 50), Error);
}

TEST(Hausdorff, MatchesAllPairsOracle) {
  Rng rng(2024);
  int compared = 0;
  for (int trial = 0; trial < 120; ++trial) {
    const Triple e{1 + static_cast<std::int64_t>(rng.below(16)), 1 + static_cast<std::int64_t>(rng.below(16)),
                   1 + static_cast<std::int64_t>(rng.below(16))};
    const Spacing s = trial % 2 ? Spacing{1.0, 1.0, 1.0}
                                : Spacing{rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0)};
    const auto a = random_mask(e, rng), b = random_mask(e, rng);
    const auto got = hausdorff95(a, b, s);
    const auto want = brute_force_hd95(a, b, s);
    ASSERT_EQ(got.has_value(), want.has_value()) << "trial " << trial;
    if (got) {
      EXPECT_EQ(*got, *want) << "trial " << trial;
      ++compared;
    }
  }
  EXPECT_GE(compared, 100);
}

TEST(Hausdorff, Symmetric) {
  Rng rng(99);
  for (int trial = 0; trial < 30; ++trial) {
    const auto a = random_mask({9, 10, 11}, rng), b = random_mask({9, 10, 11}, rng);
    const Spacing s{1.0, 1.5, 0.7};
    const auto ab = hausdorff95(a, b, s), ba = hausdorff95(b, a, s);
    ASSERT_EQ(ab.has_value(), ba.has_value());
    if (ab) EXPECT_DOUBLE_EQ(*ab, *ba);
  }
}

TEST(Evaluate, PerfectPrediction) {
  auto gt = label_map({6, 6, 6}, {1.0, 1.0, 2.0});
  for (std::int64_t w = 1; w < 5; ++w) {
    gt.labels[at(gt.extent, 2, 2, w)] = 2;
    gt.labels[at(gt.extent, 3, 3, w)] = 1;
  }
  gt.labels[at(gt.extent, 3, 3, 2)] = 4;
  const auto r = evaluate_case(gt, gt, "c0");
  EXPECT_EQ(r.case_id, "c0");
  for (auto region : kRegions) {
    EXPECT_DOUBLE_EQ(r.of(region).overlap.dice, 1.0);
    EXPECT_DOUBLE_EQ(*r.of(region).hd95, 0.0);
  }
  EXPECT_DOUBLE_EQ(r.mean_dice(), 1.0);
}

TEST(Evaluate, DilatedWholeTumourMatchesOracle) {
  const Triple e{10, 10, 10};
  auto gt = label_map(e, {1.0, 2.0, 1.5});
  for (std::int64_t d = 3; d < 7; ++d)
    for (std::int64_t h = 3; h < 7; ++h)
      for (std::int64_t w = 3; w < 7; ++w) gt.labels[at(e, d, h, w)] = 2;
  // Face-connected dilation by one voxel.
  auto pred = gt;
  for (std::int64_t d = 0; d < 10; ++d)
    for (std::int64_t h = 0; h < 10; ++h)
      for (std::int64_t w = 0; w < 10; ++w) {
        const std::int64_t n[6][3] = {{d - 1, h, w}, {d + 1, h, w}, {d, h - 1, w},
                                      {d, h + 1, w}, {d, h, w - 1}, {d, h, w + 1}};
        for (const auto& q : n)
          if (q[0] >= 0 && q[0] < 10 && q[1] >= 0 && q[1] < 10 && q[2] >= 0 && q[2] < 10 && gt.labels[at(e, q[0], q[1], q[2])])
            pred.labels[at(e, d, h, w)] = 2;
      }
  const auto r = evaluate_case(pred, gt);
  const auto& wt = r.of(Region::kWt);
  // 64 core voxels, 6 faces of 16 added.
  EXPECT_NEAR(wt.overlap.dice, 2.0 * 64 / (64 + 160), 1e-12);
  EXPECT_DOUBLE_EQ(*wt.overlap.sensitivity, 1.0);
  EXPECT_NEAR(*wt.overlap.specificity, (1000.0 - 160) / (1000.0 - 64), 1e-12);
  const auto pm = region_masks(pred), gm = region_masks(gt);
  EXPECT_NEAR(*wt.hd95, *brute_force_hd95(pm.wt, gm.wt, gt.spacing), 1e-12);
  // No tumour core anywhere: dice 1 by convention, distances undefined.
  EXPECT_DOUBLE_EQ(r.of(Region::kEt).overlap.dice, 1.0);
  EXPECT_FALSE(r.of(Region::kEt).hd95.has_value());
  EXPECT_FALSE(r.of(Region::kTc).overlap.sensitivity.has_value());
}

TEST(Evaluate, ExtentMismatch) {
  try {
    evaluate_case(label_map({2, 2, 2}), label_map({2, 2, 4}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
  }
}

TEST(Aggregate, MeansSkipUndefined) {
  CaseReport a, b;
  a.case_id = "a";
  b.case_id = "b";
  for (auto region : kRegions) {
    auto& ra = a.regions[static_cast<std::size_t>(region)];
    auto& rb = b.regions[static_cast<std::size_t>(region)];
    ra.overlap = {0.5, 1.0, 0.9};
    rb.overlap = {1.0, std::nullopt, 1.0};
    ra.hd95 = 4.0;
  }
  const auto g = aggregate({a, b});
  EXPECT_EQ(g.cases, 2);
  for (const auto& r : g.regions) {
    EXPECT_DOUBLE_EQ(*r.dice.mean, 0.75);
    EXPECT_EQ(r.dice.defined, 2);
    EXPECT_DOUBLE_EQ(*r.sensitivity.mean, 1.0);
    EXPECT_EQ(r.sensitivity.defined, 1);
    EXPECT_DOUBLE_EQ(*r.hd95.mean, 4.0);
    EXPECT_EQ(r.hd95.defined, 1);
  }
  EXPECT_DOUBLE_EQ(*g.mean_dice, 0.75);
  EXPECT_FALSE(aggregate({}).mean_dice.has_value());
}

TEST(Aggregate, CsvLayout) {
  TempDir dir;
  CaseReport a;
  a.case_id = "case_000";
  for (auto& r : a.regions) r.overlap = {0.25, std::nullopt, 1.0};
  a.regions[1].hd95 = 2.0;
  write_metrics_csv({a}, dir / "metrics.csv");
  const std::string text = slurp(dir / "metrics.csv");
  EXPECT_EQ(text,
            "case_id,region,dice,sensitivity,specificity,hd95\n"
            "case_000,ET,0.250000,undefined,1.000000,undefined\n"
            "case_000,WT,0.250000,undefined,1.000000,2.000000\n"
            "case_000,TC,0.250000,undefined,1.000000,undefined\n"
            "MEAN,ET,0.250000,undefined,1.000000,undefined\n"
            "MEAN,WT,0.250000,undefined,1.000000,2.000000\n"
            "MEAN,TC,0.250000,undefined,1.000000,undefined\n");

  write_summary_csv({{"full", aggregate({a})}}, dir / "summary.csv");
  EXPECT_EQ(slurp(dir / "summary.csv"),
            "config,mean_dice,et_dice,wt_dice,tc_dice,et_hd95,wt_hd95,tc_hd95\n"
            "full,0.250000,0.250000,0.250000,0.250000,undefined,2.000000,undefined\n");
}
