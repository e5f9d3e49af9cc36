#include <cmath>
#include <fstream>
#include <numbers>

#include "json.hpp"
#include "rcan/data.hpp"
#include "rcan/error.hpp"
#include "rcan/random.hpp"

namespace rcan {

namespace {

// Mean intensity per tissue and modality (T1, T1ce, T2, FLAIR). Each
// modality is a different affine image of the tissue class, so no single
// modality separates all four classes.
struct Tissue {
  std::uint8_t label;
  std::array<double, kModalities> mean;
};
constexpr Tissue kBrain{0, {1.0, 1.0, 1.0, 1.0}};
constexpr Tissue kEdema{2, {0.85, 0.9, 1.7, 1.9}};
constexpr Tissue kNecrotic{1, {0.55, 0.65, 2.0, 1.3}};
constexpr Tissue kEnhancing{4, {1.0, 2.1, 1.35, 1.45}};

constexpr std::uint64_t kSynthStream = 0x73796e7468;

}  // namespace

bool Ellipsoid::contains(double d, double h, double w) const {
  const double a = (d - centre[0]) / radii[0], b = (h - centre[1]) / radii[1], c = (w - centre[2]) / radii[2];
  return a * a + b * b + c * c <= 1.0;
}

double Ellipsoid::volume() const { return 4.0 / 3.0 * std::numbers::pi * radii[0] * radii[1] * radii[2]; }

SynthCase synth_case(std::uint64_t seed, Triple extent, const SynthParams& p) {
  for (auto e : extent)
    require(e >= 16, ErrorCode::kExtentTooSmall, "synthetic extent " + std::to_string(e) + " is below 16");
  Rng rng(derive_seed(seed, {kSynthStream}));
  SynthCase s;
  for (int a = 0; a < 3; ++a) {
    const double e = static_cast<double>(extent[a]);
    s.brain.centre[a] = (e - 1.0) / 2.0 + rng.uniform(-0.03, 0.03) * e;
    s.brain.radii[a] = p.brain_radius * e * rng.uniform(0.95, 1.0);
    s.edema.radii[a] = rng.uniform(p.edema_lo, p.edema_hi) * e;
    // Keep the tumour centre well inside the brain.
    const double slack = std::max(0.0, s.brain.radii[a] - s.edema.radii[a] - 1.0);
    s.edema.centre[a] = s.brain.centre[a] + 0.5 * rng.uniform(-1.0, 1.0) * slack;
  }
  s.necrotic.centre = s.core.centre = s.edema.centre;
  for (int a = 0; a < 3; ++a) {
    s.necrotic.radii[a] = p.necrotic_ratio * s.edema.radii[a];
    s.core.radii[a] = p.core_ratio * s.necrotic.radii[a];
  }

  const auto n = static_cast<std::size_t>(voxel_count(extent));
  s.volume.extent = s.labels.extent = extent;
  s.volume.case_id = "synth_" + std::to_string(seed);
  s.volume.data.assign(kModalities * n, 0.0f);
  s.labels.labels.assign(n, 0);
  Rng noise(derive_seed(seed, {kSynthStream, 1}));
  for (std::int64_t d = 0; d < extent[0]; ++d)
    for (std::int64_t h = 0; h < extent[1]; ++h)
      for (std::int64_t w = 0; w < extent[2]; ++w) {
        const auto idx = static_cast<std::size_t>((d * extent[1] + h) * extent[2] + w);
        const double dd = static_cast<double>(d), hh = static_cast<double>(h), ww = static_cast<double>(w);
        const Tissue* t = nullptr;
        if (s.core.contains(dd, hh, ww))
          t = &kEnhancing;
        else if (s.necrotic.contains(dd, hh, ww))
          t = &kNecrotic;
        else if (s.edema.contains(dd, hh, ww))
          t = &kEdema;
        else if (s.brain.contains(dd, hh, ww))
          t = &kBrain;
        if (!t) continue;
        s.labels.labels[idx] = t->label;
        for (int m = 0; m < kModalities; ++m) {
          const double v = t->mean[static_cast<std::size_t>(m)] + p.noise * noise.normal();
          // Brain voxels stay strictly positive so the nonzero mask is the brain.
          s.volume.data[m * n + idx] = static_cast<float>(std::max(v, 0.05));
        }
      }
  return s;
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::kIoError, "cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kConfigInvalid, path.string() + ": " + e.what());
  }
  require(j.is_array(), ErrorCode::kConfigInvalid, path.string() + ": manifest must be a JSON array");
  Manifest m;
  m.base_dir = path.parent_path();
  try {
    for (const auto& c : j) {
      ManifestEntry e;
      e.case_id = c.at("case_id").get<std::string>();
      for (int k = 0; k < kModalities; ++k)
        e.modalities[static_cast<std::size_t>(k)] = c.at("modalities").at(kModalityNames[static_cast<std::size_t>(k)]).get<std::string>();
      e.label = c.at("label").get<std::string>();
      m.cases.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kConfigInvalid, path.string() + ": " + e.what());
  }
  return m;
}

void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& c : m.cases) {
    nlohmann::json mods;
    for (int k = 0; k < kModalities; ++k)
      mods[kModalityNames[static_cast<std::size_t>(k)]] = c.modalities[static_cast<std::size_t>(k)];
    j.push_back({{"case_id", c.case_id}, {"modalities", mods}, {"label", c.label}});
  }
  std::ofstream out(path);
  require(out.good(), ErrorCode::kIoError, "cannot write " + path.string());
  out << j.dump(2) << "\n";
}

Volume read_volume(const std::array<std::filesystem::path, kModalities>& paths, const std::string& case_id) {
  Volume v;
  v.case_id = case_id;
  for (int k = 0; k < kModalities; ++k) {
    auto g = read_nifti(paths[static_cast<std::size_t>(k)]);
    if (k == 0) {
      v.extent = g.extent;
      v.spacing = g.spacing;
    }
    require(g.extent == v.extent, ErrorCode::kShapeMismatch, case_id + ": modality extents differ");
    v.data.insert(v.data.end(), g.values.begin(), g.values.end());
  }
  return v;
}

Sample load_case(const Manifest& m, std::size_t index) {
  require(index < m.cases.size(), ErrorCode::kInvalidArgument, "case index out of range");
  const auto& c = m.cases[index];
  std::array<std::filesystem::path, kModalities> paths;
  for (std::size_t k = 0; k < paths.size(); ++k) paths[k] = m.base_dir / c.modalities[k];
  Sample s{read_volume(paths, c.case_id), read_labels(m.base_dir / c.label)};
  require(s.labels.extent == s.volume.extent, ErrorCode::kShapeMismatch, c.case_id + ": label extent differs");
  return s;
}

Manifest write_synthetic_dataset(const std::filesystem::path& dir, int cases, Triple extent, std::uint64_t seed) {
  require(cases >= 1, ErrorCode::kInvalidArgument, "need at least one case");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, ErrorCode::kIoError, "cannot create " + dir.string());
  Manifest m;
  m.base_dir = dir;
  for (int i = 0; i < cases; ++i) {
    auto s = synth_case(derive_seed(seed, {static_cast<std::uint64_t>(i)}), extent);
    char id[32];
    std::snprintf(id, sizeof id, "case_%03d", i);
    ManifestEntry e;
    e.case_id = id;
    for (int k = 0; k < kModalities; ++k) {
      const std::string name = std::string(id) + "_" + kModalityNames[static_cast<std::size_t>(k)] + ".nii";
      const auto mod = s.volume.modality(k);
      write_nifti({extent, s.volume.spacing, nifti::kFloat32, std::vector<float>(mod.begin(), mod.end())}, dir / name);
      e.modalities[static_cast<std::size_t>(k)] = name;
    }
    e.label = std::string(id) + "_seg.nii";
    write_labels(s.labels, dir / e.label);
    m.cases.push_back(std::move(e));
  }
  write_manifest(m, dir / "manifest.json");
  return m;
}

}  // namespace rcan
