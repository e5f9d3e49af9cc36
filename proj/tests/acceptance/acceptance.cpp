// Acceptance suite: one PASS/FAIL line per criterion, measured at the stated
// tolerances. Exit status is the number of failing criteria that are not
// listed with --expect-fail.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rcan/error.hpp"
#include "rcan/gradcheck.hpp"
#include "rcan/metrics.hpp"
#include "rcan/model.hpp"
#include "rcan/rca.hpp"
#include "rcan/train.hpp"
#include "test_support.hpp"

using namespace rcan;
using namespace rcan::testing;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename T>
bool bitwise_equal(std::span<const T> a, std::span<const T> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kOk;
}

// 1. Finite-difference gradients of every differentiable op.
Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const auto entries = run_gradient_suite(7);
  const double secs = seconds_since(t0);
  double worst = 0.0;
  std::string worst_op;
  for (const auto& e : entries)
    if (e.max_rel_error >= worst) {
      worst = e.max_rel_error;
      worst_op = e.op;
    }
  return {worst < 1e-4 && secs < 120.0,
          fmt("%zu ops, max rel error %.2e (%s) < 1e-4, %.1f s < 120 s", entries.size(), worst, worst_op.c_str(), secs)};
}

// 2. conv3d against nested loops, hausdorff95 against all pairs.
Outcome oracle_parity() {
  Rng rng(2);
  double conv_diff = 0.0;
  int conv_cases = 0;
  for (; conv_cases < 120; ++conv_cases) {
    ConvSpec spec;
    spec.in_channels = 1 + static_cast<std::int64_t>(rng.below(3));
    spec.out_channels = 1 + static_cast<std::int64_t>(rng.below(3));
    spec.has_bias = rng.bernoulli(0.5);
    Triple extent{};
    for (int a = 0; a < 3; ++a) {
      spec.kernel[a] = rng.bernoulli(0.5) ? 3 : 1 + static_cast<std::int64_t>(rng.below(2));
      spec.stride[a] = 1 + static_cast<std::int64_t>(rng.below(2));
      spec.padding[a] = static_cast<std::int64_t>(rng.below(2));
      extent[a] = spec.kernel[a] + static_cast<std::int64_t>(rng.below(4));
    }
    const std::int64_t n = 1 + static_cast<std::int64_t>(rng.below(2));
    auto x = random_tensor<double>({n, spec.in_channels, extent[0], extent[1], extent[2]}, rng);
    auto w = random_tensor<double>(spec.weight_shape(), rng);
    auto b = random_tensor<double>({spec.out_channels}, rng);
    const auto* bp = spec.has_bias ? &b : nullptr;
    conv_diff = std::max(conv_diff, max_abs_diff<double>(conv3d(x, spec, w, bp).data(), naive_conv3d(x, spec, w, bp)));
  }
  int hd_cases = 0, hd_mismatch = 0;
  for (int trial = 0; hd_cases < 120; ++trial) {
    const Triple e{1 + static_cast<std::int64_t>(rng.below(16)), 1 + static_cast<std::int64_t>(rng.below(16)),
                   1 + static_cast<std::int64_t>(rng.below(16))};
    const Spacing s = trial % 2 ? Spacing{1, 1, 1}
                                : Spacing{rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0)};
    const auto a = random_mask(e, rng), b = random_mask(e, rng);
    const auto got = hausdorff95(a, b, s);
    const auto want = brute_force_hd95(a, b, s);
    if (!want) {
      hd_mismatch += got.has_value();
      continue;
    }
    ++hd_cases;
    hd_mismatch += !(got && *got == *want);
  }
  return {conv_diff < 1e-10 && hd_mismatch == 0,
          fmt("conv3d %d cases max diff %.1e < 1e-10; hausdorff95 %d cases, %d inexact", conv_cases, conv_diff,
              hd_cases, hd_mismatch)};
}

// 3. Gate and residual algebra.
Outcome attention_algebra() {
  Rng rng(3);
  bool exact_full = true, exact_plain = true;
  double resid = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::int64_t c = 1 + static_cast<std::int64_t>(rng.below(8));
    const auto x = random_tensor<float>({1, c, 3, 4, 5}, rng, -5, 5);
    const auto zero = zeros<float>({3});
    const auto y = rca_forward(x, AttentionParams<float>{zero, {}});
    const auto y0 = rca_forward(x, AttentionParams<float>{zero, {true, true, false}});
    for (std::size_t i = 0; i < x.size(); ++i) {
      exact_full = exact_full && y.data()[i] == 1.5f * x.data()[i];
      exact_plain = exact_plain && y0.data()[i] == 0.5f * x.data()[i];
    }
    const AttentionParams<float> p{random_tensor<float>({3}, rng, -2, 2), {}};
    const auto out = rca_forward(x, p);
    const auto gated = mul(x, attention_map(x, p).values);
    for (std::size_t i = 0; i < x.size(); ++i)
      resid = std::max(resid, std::abs(static_cast<double>(out.data()[i] - x.data()[i]) - gated.data()[i]));
  }
  return {exact_full && exact_plain && resid < 1e-6,
          fmt("zero weights: 1.5x %s, 0.5x without residual %s; |rca(x) - x - M*x| max %.1e < 1e-6",
              exact_full ? "exact" : "INEXACT", exact_plain ? "exact" : "INEXACT", resid)};
}

// 4. Gate invariance under spatial shuffles.
Outcome spatial_symmetry() {
  Rng rng(4);
  int broken = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::int64_t c = 2 + static_cast<std::int64_t>(rng.below(7));
    const Shape shape{1, c, 2 + static_cast<std::int64_t>(rng.below(5)), 2 + static_cast<std::int64_t>(rng.below(5)),
                      2 + static_cast<std::int64_t>(rng.below(5))};
    const auto x = random_tensor<float>(shape, rng, -3, 3);
    const AttentionParams<float> p{random_tensor<float>({3}, rng, -2, 2), {}};
    const std::int64_t V = shape[2] * shape[3] * shape[4];
    std::vector<float> shuffled(x.data().begin(), x.data().end());
    for (std::int64_t ch = 0; ch < c; ++ch) {
      float* base = shuffled.data() + ch * V;
      for (std::int64_t i = V - 1; i > 0; --i)
        std::swap(base[i], base[rng.below(static_cast<std::uint64_t>(i + 1))]);
    }
    const auto a = attention_map(x, p).values;
    const auto b = attention_map(Tensor32(shape, std::move(shuffled)), p).values;
    broken += !bitwise_equal(a.data(), b.data());
  }
  return {broken == 0, fmt("50 trials, %d maps differ bitwise", broken)};
}

// 5. Single-case overfit, twice, for speed and determinism.
Outcome overfit(const std::filesystem::path& work) {
  ModelConfig mc;
  mc.levels = 3;
  mc.base_width = 8;
  mc.patch = {32, 32, 32};
  TrainConfig tc;
  tc.epochs = 1;
  tc.steps_per_epoch = 200;
  tc.seed = 1;
  tc.loss = LossKind::kSoftDice;
  tc.lr0 = 1e-4;
  tc.augment = AugmentParams::none(mc.patch);
  const auto s = synth_case(1, {32, 32, 32});
  double best = 0.0, slowest = 0.0;
  std::int64_t best_step = -1;
  std::vector<std::string> ckpts;
  for (int run = 0; run < 2; ++run) {
    const auto t0 = Clock::now();
    const auto dir = work / ("overfit" + std::to_string(run));
    const auto r = run_training(build_model<float>(mc, 1), {{s.volume, s.labels}}, tc, dir);
    slowest = std::max(slowest, seconds_since(t0));
    if (run == 0)
      for (const auto& h : r.history)
        if (h.soft_dice > best) {
          best = h.soft_dice;
          best_step = h.step;
        }
    ckpts.push_back(slurp(dir / "checkpoint.rcan"));
  }
  const bool same = ckpts[0] == ckpts[1];
  return {best >= 0.90 && slowest <= 600.0 && same,
          fmt("best soft dice %.4f at step %lld (need >= 0.90 within 200), %.0f s per run <= 600 s, checkpoints %s",
              best, static_cast<long long>(best_step), slowest, same ? "bitwise equal" : "DIFFER")};
}

// 6. Step schedule values.
Outcome schedule() {
  TrainConfig c;
  const double a = lr_at_epoch(c, 50), b = lr_at_epoch(c, 120), d = lr_at_epoch(c, 180);
  return {a == 1e-4 && b == 2e-5 && d == 4e-6, fmt("epochs 50/120/180 -> %.17g / %.17g / %.17g", a, b, d)};
}

// 7. Hand-counted confusion example and the empty convention.
Outcome metric_conventions() {
  const Triple e{3, 3, 3};
  BinaryGrid p{e, std::vector<std::uint8_t>(27, 0)}, g = p;
  g.voxels[0] = g.voxels[1] = 1;
  p.voxels[0] = p.voxels[1] = p.voxels[2] = p.voxels[3] = 1;
  const auto m = overlap_metrics(p, g);
  const BinaryGrid z{e, std::vector<std::uint8_t>(27, 0)};
  const auto empty = overlap_metrics(z, z);
  const bool hd_undefined = !hausdorff95(z, z, {1, 1, 1}).has_value();
  const bool ok = std::abs(m.dice - 0.6667) <= 1e-4 && m.sensitivity && *m.sensitivity == 1.0 && m.specificity &&
                  std::abs(*m.specificity - 0.92) <= 1e-12 && empty.dice == 1.0 && hd_undefined;
  return {ok, fmt("dice %.4f, sensitivity %.4f, specificity %.4f; empty pair dice %.1f, hd95 %s", m.dice,
                  m.sensitivity.value_or(-1), m.specificity.value_or(-1), empty.dice,
                  hd_undefined ? "undefined" : "DEFINED")};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(RCAN_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// 8. The ablation command on five synthetic cases.
Outcome ablation_harness(const std::filesystem::path& work) {
  const auto data = work / "ablate_data";
  const auto out = work / "ablate";
  if (run_cli("synth --cases 5 --extent 16 --seed 5 --out " + data.string()) != 0) return {false, "synth failed"};
  const int code = run_cli("ablate --data " + (data / "manifest.json").string() +
                           " --set model.levels=2 model.base_width=4 model.patch=16 train.augment.patch=16"
                           " train.epochs=1 train.steps_per_epoch=3 data.folds=5 --seed 11 --out " +
                           out.string());
  if (code != 0) return {false, fmt("ablate exited %d", code)};
  int csvs = 0;
  std::vector<std::size_t> hashes;
  std::vector<std::vector<Tensor32>> payloads;
  for (const char* name : {"full", "no-max", "no-avg", "no-residual"}) {
    const auto dir = out / name;
    const auto csv = slurp(dir / "metrics.csv");
    csvs += csv.rfind("case_id,region,dice,sensitivity,specificity,hd95\n", 0) == 0;
    hashes.push_back(std::hash<std::string>{}(slurp(dir / "checkpoint.rcan")));
    payloads.push_back(load_checkpoint(dir / "checkpoint.rcan").model.values());
  }
  int same_hash = 0, same_params = 0;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = i + 1; j < 4; ++j) {
      same_hash += hashes[i] == hashes[j];
      bool equal = true;
      for (std::size_t k = 0; k < payloads[i].size(); ++k)
        equal = equal && bitwise_equal(payloads[i][k].data(), payloads[j][k].data());
      same_params += equal;
    }
  const bool summary = std::filesystem::exists(out / "summary.csv");
  return {csvs == 4 && same_hash == 0 && same_params == 0 && summary,
          fmt("%d/4 metrics CSVs, %d equal checkpoint hashes and %d equal parameter sets among 6 pairs, summary %s",
              csvs, same_hash, same_params, summary ? "written" : "MISSING")};
}

// 9. NIfTI round trip and the three error gates.
Outcome nifti_io(const std::filesystem::path& work) {
  Rng rng(9);
  int mismatches = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const Triple e{1 + static_cast<std::int64_t>(rng.below(12)), 1 + static_cast<std::int64_t>(rng.below(12)),
                   1 + static_cast<std::int64_t>(rng.below(12))};
    NiftiGrid g{e, {rng.uniform(0.5, 2), rng.uniform(0.5, 2), rng.uniform(0.5, 2)}, nifti::kFloat32, {}};
    for (std::int64_t i = 0; i < voxel_count(e); ++i) g.values.push_back(static_cast<float>(rng.normal() * 1e3));
    write_nifti(g, work / "rt.nii");
    const auto back = read_nifti(work / "rt.nii");
    mismatches += !(back.extent == e && bitwise_equal<float>(back.values, g.values));
  }
  NiftiGrid g{{4, 4, 4}, {1, 1, 1}, nifti::kFloat32, std::vector<float>(64, 1.0f)};
  write_nifti(g, work / "ok.nii");
  const auto good = slurp(work / "ok.nii");
  auto spit = [&](const char* name, std::string bytes) {
    std::ofstream(work / name, std::ios::binary) << bytes;
    return work / name;
  };
  auto magic = good;
  magic.replace(344, 4, std::string("ni1\0", 4));
  auto dtype = good;
  const std::int16_t f64 = 64;
  std::memcpy(dtype.data() + 70, &f64, 2);
  const auto c_magic = code_of([&] { read_nifti(spit("magic.nii", magic)); });
  const auto c_dtype = code_of([&] { read_nifti(spit("dtype.nii", dtype)); });
  const auto c_trunc = code_of([&] { read_nifti(spit("short.nii", good.substr(0, good.size() - 1))); });
  const bool gates = c_magic == ErrorCode::kBadMagic && c_dtype == ErrorCode::kUnsupportedDatatype &&
                     c_trunc == ErrorCode::kTruncatedFile;
  return {mismatches == 0 && gates,
          fmt("10 float32 round trips, %d not bitwise; gates %s / %s / %s", mismatches,
              std::string(error_name(c_magic)).c_str(), std::string(error_name(c_dtype)).c_str(),
              std::string(error_name(c_trunc)).c_str())};
}

// 10. Extents through the network and region nesting.
Outcome shapes_and_nesting() {
  Rng rng(10);
  int bad_shapes = 0;
  for (int trial = 0; trial < 20; ++trial) {
    ModelConfig cfg;
    cfg.levels = 1 + static_cast<std::int64_t>(rng.below(3));
    cfg.base_width = 2 + static_cast<std::int64_t>(rng.below(4)) * 2;
    const std::int64_t unit = std::int64_t{1} << (cfg.levels - 1);
    Triple e{};
    for (auto& v : e) v = unit * (1 + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(12 / unit + 1))));
    cfg.patch = e;
    const auto m = build_model<float>(cfg, trial);
    const auto y = forward(m, random_tensor<float>({1, 4, e[0], e[1], e[2]}, rng));
    bad_shapes += y.shape() != Shape{1, cfg.out_classes, e[0], e[1], e[2]};
  }
  int bad_nesting = 0;
  const std::uint8_t values[4] = {0, 1, 2, 4};
  for (int trial = 0; trial < 100; ++trial) {
    const Triple e{1 + static_cast<std::int64_t>(rng.below(10)), 1 + static_cast<std::int64_t>(rng.below(10)),
                   1 + static_cast<std::int64_t>(rng.below(10))};
    LabelMap l{e, std::vector<std::uint8_t>(static_cast<std::size_t>(voxel_count(e))), {1, 1, 1}};
    for (auto& v : l.labels) v = values[rng.below(4)];
    const auto r = region_masks(l);
    for (std::size_t i = 0; i < l.labels.size(); ++i)
      bad_nesting += r.et.voxels[i] > r.tc.voxels[i] || r.tc.voxels[i] > r.wt.voxels[i];
  }
  return {bad_shapes == 0 && bad_nesting == 0,
          fmt("20 random models, %d extent changes; 100 label maps, %d nesting violations", bad_shapes, bad_nesting)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<int> only, expect_fail;
  app.add_option("--only", only, "run just these criteria");
  app.add_option("--expect-fail", expect_fail, "criteria known to fail; reported but not counted in the exit status");
  CLI11_PARSE(app, argc, argv);

  TempDir work;
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"oracle parity", oracle_parity},
      {"attention algebra", attention_algebra},
      {"spatial symmetry", spatial_symmetry},
      {"overfit run", [&] { return overfit(work.path()); }},
      {"lr schedule", schedule},
      {"metric conventions", metric_conventions},
      {"ablation harness", [&] { return ablation_harness(work.path()); }},
      {"nifti round trip", [&] { return nifti_io(work.path()); }},
      {"shapes and nesting", shapes_and_nesting},
  };
  const std::set<int> wanted(only.begin(), only.end()), known(expect_fail.begin(), expect_fail.end());
  int failed = 0, unexpected = 0, ran = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!wanted.empty() && !wanted.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    ++ran;
    if (!o.pass) {
      ++failed;
      unexpected += !known.count(id);
    }
    std::printf("[%s] %2d %-20s %s%s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str(),
                !o.pass && known.count(id) ? "  (expected)" : "");
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed", ran - failed, ran);
  if (failed > unexpected) std::printf(", %d expected failure(s)", failed - unexpected);
  std::printf("\n");
  return unexpected;
}
