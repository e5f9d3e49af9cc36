#pragma once

// Volumes, label maps and everything that produces them: NIfTI-1 I/O,
// brain-masked z-scoring, seeded augmentation, k-fold splits, a synthetic
// case generator and the dataset manifest.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rcan/nn.hpp"
#include "rcan/tensor.hpp"

namespace rcan {

using Spacing = std::array<double, 3>;  // millimetres along (D, H, W)

inline std::int64_t voxel_count(const Triple& e) { return e[0] * e[1] * e[2]; }

inline constexpr int kModalities = 4;  // T1, T1ce, T2, FLAIR
inline constexpr std::array<const char*, kModalities> kModalityNames{"t1", "t1ce", "t2", "flair"};

struct Volume {
  Triple extent{0, 0, 0};
  std::vector<float> data;  // modality-major, each modality D x H x W
  Spacing spacing{1, 1, 1};
  std::string case_id;

  std::span<float> modality(int m);
  std::span<const float> modality(int m) const;
  // 1 x 4 x D x H x W network input.
  Tensor32 as_batch() const;
};

struct LabelMap {
  Triple extent{0, 0, 0};
  std::vector<std::uint8_t> labels;  // values in {0, 1, 2, 4}
  Spacing spacing{1, 1, 1};
};

bool valid_label(int v);
// Throws InvalidLabelValue.
void check_labels(const LabelMap& l);

// A single NIfTI-1 grid in (D, H, W) order; integer datatypes are widened
// to float exactly.
struct NiftiGrid {
  Triple extent{0, 0, 0};
  Spacing spacing{1, 1, 1};
  std::int16_t datatype = 16;
  std::vector<float> values;
};

namespace nifti {
inline constexpr std::int16_t kUint8 = 2;
inline constexpr std::int16_t kInt16 = 4;
inline constexpr std::int16_t kFloat32 = 16;
}  // namespace nifti

// Throws BadMagic, UnsupportedDatatype, TruncatedFile, BadHeader, IoError.
NiftiGrid read_nifti(const std::filesystem::path& path);
// Writes a single-file little-endian NIfTI-1. Values must be representable
// in the datatype. Throws IoError, EmptyShape, InvalidArgument.
void write_nifti(const NiftiGrid& grid, const std::filesystem::path& path);

LabelMap read_labels(const std::filesystem::path& path);
void write_labels(const LabelMap& l, const std::filesystem::path& path);

// Per-modality z-score over the nonzero voxels; zeros stay zero. Population
// variance, floored at 1e-8. Throws EmptyBrainMask.
Volume normalize(const Volume& v);

struct AugmentParams {
  double p_flip = 0.5;  // per axis
  double p_rotate = 0.5;
  double max_rotation_deg = 20.0;
  double p_scale = 0.5;
  double scale_lo = 0.9;
  double scale_hi = 1.1;
  double p_elastic = 0.5;
  double elastic_sigma = 10.0;
  double elastic_alpha = 6.0;
  double p_intensity = 0.5;
  double intensity_shift = 0.1;  // fraction of each modality's std
  Triple patch{32, 32, 32};

  // All probabilities zero.
  static AugmentParams none(Triple patch);
  // InvalidArgument when outside the supported ranges.
  void validate() const;
};

struct Sample {
  Volume volume;
  LabelMap labels;
};

// Flip, rotation/scaling/elastic warp (trilinear for the image, nearest for
// labels), intensity shift on brain voxels, then a random crop. The same
// geometric transform hits both grids. Throws PatchLargerThanVolume.
Sample augment(const Volume& v, const LabelMap& l, std::uint64_t seed, const AugmentParams& p);

// Reverses one axis (0 = D, 1 = H, 2 = W) of both grids.
void flip(Volume& v, LabelMap& l, int axis);

struct SplitPlan {
  std::vector<std::vector<std::string>> folds;
  std::uint64_t seed = 0;
};

// Seeded shuffle then round-robin. Throws TooFewCases.
SplitPlan kfold_split(const std::vector<std::string>& case_ids, int k, std::uint64_t seed);

struct SynthParams {
  double brain_radius = 0.42;  // fraction of the extent per axis
  double edema_lo = 0.18;      // edema radii drawn in [lo, hi] x extent
  double edema_hi = 0.25;
  double necrotic_ratio = 0.72;  // of the edema radii
  double core_ratio = 0.55;      // of the necrotic radii
  double noise = 0.1;
};

struct Ellipsoid {
  std::array<double, 3> centre;
  std::array<double, 3> radii;
  bool contains(double d, double h, double w) const;
  double volume() const;
};

struct SynthCase {
  Volume volume;
  LabelMap labels;
  Ellipsoid brain, edema, necrotic, core;
};

// Throws ExtentTooSmall (any axis < 16).
SynthCase synth_case(std::uint64_t seed, Triple extent, const SynthParams& p = {});

struct ManifestEntry {
  std::string case_id;
  std::array<std::string, kModalities> modalities;
  std::string label;
};

struct Manifest {
  std::vector<ManifestEntry> cases;
  std::filesystem::path base_dir;  // relative paths resolve against this
};

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& m, const std::filesystem::path& path);
Sample load_case(const Manifest& m, std::size_t index);
// Four modality files in t1, t1ce, t2, flair order. Throws ShapeMismatch.
Volume read_volume(const std::array<std::filesystem::path, kModalities>& paths, const std::string& case_id = "");

// Writes n synthetic cases as NIfTI files plus manifest.json into dir.
Manifest write_synthetic_dataset(const std::filesystem::path& dir, int cases, Triple extent, std::uint64_t seed);

}  // namespace rcan
