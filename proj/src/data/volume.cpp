#include <algorithm>
#include <cmath>
#include <numbers>

#include "rcan/data.hpp"
#include "rcan/error.hpp"
#include "rcan/random.hpp"

namespace rcan {

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 matmul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

// Rotation by angle about `axis`, acting on (d, h, w) coordinates.
Mat3 rotation(int axis, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  const int i = (axis + 1) % 3, j = (axis + 2) % 3;
  Mat3 r{};
  r[axis][axis] = 1.0;
  r[i][i] = c;
  r[i][j] = -s;
  r[j][i] = s;
  r[j][j] = c;
  return r;
}

// Separable Gaussian blur with clamp-to-edge borders, in place.
void gaussian_blur(std::vector<double>& f, const Triple& e, double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (int t = -radius; t <= radius; ++t) total += k[static_cast<std::size_t>(t + radius)] = std::exp(-0.5 * t * t / (sigma * sigma));
  for (auto& v : k) v /= total;

  const std::array<std::int64_t, 3> stride{e[1] * e[2], e[2], 1};
  std::vector<double> line;
  for (int axis = 0; axis < 3; ++axis) {
    const std::int64_t len = e[static_cast<std::size_t>(axis)];
    const std::int64_t st = stride[static_cast<std::size_t>(axis)];
    line.resize(static_cast<std::size_t>(len));
    for (std::int64_t base = 0; base < voxel_count(e); ++base) {
      if ((base / st) % len != 0) continue;  // visit each line once, from its first voxel
      for (std::int64_t i = 0; i < len; ++i) line[static_cast<std::size_t>(i)] = f[static_cast<std::size_t>(base + i * st)];
      for (std::int64_t i = 0; i < len; ++i) {
        double acc = 0.0;
        for (int t = -radius; t <= radius; ++t) {
          const std::int64_t j = std::clamp<std::int64_t>(i + t, 0, len - 1);
          acc += k[static_cast<std::size_t>(t + radius)] * line[static_cast<std::size_t>(j)];
        }
        f[static_cast<std::size_t>(base + i * st)] = acc;
      }
    }
  }
}

float trilinear(const float* src, const Triple& e, double d, double h, double w) {
  const double fd = std::floor(d), fh = std::floor(h), fw = std::floor(w);
  const auto d0 = static_cast<std::int64_t>(fd), h0 = static_cast<std::int64_t>(fh), w0 = static_cast<std::int64_t>(fw);
  const double td = d - fd, th = h - fh, tw = w - fw;
  double acc = 0.0;
  for (int a = 0; a < 2; ++a) {
    const std::int64_t dd = d0 + a;
    if (dd < 0 || dd >= e[0]) continue;
    const double wd = a ? td : 1.0 - td;
    for (int b = 0; b < 2; ++b) {
      const std::int64_t hh = h0 + b;
      if (hh < 0 || hh >= e[1]) continue;
      const double wh = b ? th : 1.0 - th;
      for (int c = 0; c < 2; ++c) {
        const std::int64_t ww = w0 + c;
        if (ww < 0 || ww >= e[2]) continue;
        const double wgt = wd * wh * (c ? tw : 1.0 - tw);
        acc += wgt * src[(dd * e[1] + hh) * e[2] + ww];
      }
    }
  }
  return static_cast<float>(acc);
}

std::uint8_t nearest(const std::uint8_t* src, const Triple& e, double d, double h, double w) {
  const auto dd = static_cast<std::int64_t>(std::lround(d));
  const auto hh = static_cast<std::int64_t>(std::lround(h));
  const auto ww = static_cast<std::int64_t>(std::lround(w));
  if (dd < 0 || dd >= e[0] || hh < 0 || hh >= e[1] || ww < 0 || ww >= e[2]) return 0;
  return src[(dd * e[1] + hh) * e[2] + ww];
}

struct Warp {
  Mat3 inverse;  // output offset from centre -> source offset from centre
  std::array<std::vector<double>, 3> displacement;  // empty when no elastic term
};

void apply_warp(Volume& v, LabelMap& l, const Warp& warp) {
  const Triple e = v.extent;
  const std::array<double, 3> c{(e[0] - 1) / 2.0, (e[1] - 1) / 2.0, (e[2] - 1) / 2.0};
  const auto n = static_cast<std::size_t>(voxel_count(e));
  Volume out = v;
  LabelMap lout = l;
  for (std::int64_t d = 0; d < e[0]; ++d)
    for (std::int64_t h = 0; h < e[1]; ++h)
      for (std::int64_t w = 0; w < e[2]; ++w) {
        const auto idx = static_cast<std::size_t>((d * e[1] + h) * e[2] + w);
        const std::array<double, 3> r{d - c[0], h - c[1], w - c[2]};
        std::array<double, 3> s{};
        for (int i = 0; i < 3; ++i) {
          s[i] = c[i];
          for (int j = 0; j < 3; ++j) s[i] += warp.inverse[i][j] * r[j];
          if (!warp.displacement[i].empty()) s[i] += warp.displacement[i][idx];
        }
        for (int m = 0; m < kModalities; ++m)
          out.data[m * n + idx] = trilinear(v.data.data() + m * n, e, s[0], s[1], s[2]);
        lout.labels[idx] = nearest(l.labels.data(), e, s[0], s[1], s[2]);
      }
  v = std::move(out);
  l = std::move(lout);
}

}  // namespace

std::span<float> Volume::modality(int m) {
  const auto n = static_cast<std::size_t>(voxel_count(extent));
  return std::span<float>(data).subspan(static_cast<std::size_t>(m) * n, n);
}

std::span<const float> Volume::modality(int m) const {
  const auto n = static_cast<std::size_t>(voxel_count(extent));
  return std::span<const float>(data).subspan(static_cast<std::size_t>(m) * n, n);
}

Tensor32 Volume::as_batch() const { return Tensor32({1, kModalities, extent[0], extent[1], extent[2]}, data); }

bool valid_label(int v) { return v == 0 || v == 1 || v == 2 || v == 4; }

void check_labels(const LabelMap& l) {
  require(static_cast<std::int64_t>(l.labels.size()) == voxel_count(l.extent), ErrorCode::kShapeMismatch,
          "label grid size does not match extent");
  for (auto v : l.labels) require(valid_label(v), ErrorCode::kInvalidLabelValue, "label value " + std::to_string(v));
}

Volume normalize(const Volume& v) {
  Volume out = v;
  for (int m = 0; m < kModalities; ++m) {
    auto x = out.modality(m);
    double sum = 0.0;
    std::int64_t count = 0;
    for (float f : x)
      if (f != 0.0f) {
        sum += f;
        ++count;
      }
    require(count > 0, ErrorCode::kEmptyBrainMask,
            v.case_id + ": modality " + kModalityNames[static_cast<std::size_t>(m)] + " has no nonzero voxels");
    const double mean = sum / static_cast<double>(count);
    double sq = 0.0;
    for (float f : x)
      if (f != 0.0f) sq += (f - mean) * (f - mean);
    const double sd = std::sqrt(std::max(sq / static_cast<double>(count), 1e-8));
    for (auto& f : x)
      if (f != 0.0f) f = static_cast<float>((f - mean) / sd);
  }
  return out;
}

AugmentParams AugmentParams::none(Triple patch) {
  AugmentParams p;
  p.p_flip = p.p_rotate = p.p_scale = p.p_elastic = p.p_intensity = 0.0;
  p.patch = patch;
  return p;
}

void AugmentParams::validate() const {
  auto prob = [](double q) { return q >= 0.0 && q <= 1.0; };
  require(prob(p_flip) && prob(p_rotate) && prob(p_scale) && prob(p_elastic) && prob(p_intensity),
          ErrorCode::kInvalidArgument, "augmentation probabilities must lie in [0, 1]");
  require(max_rotation_deg >= 0.0 && max_rotation_deg <= 180.0, ErrorCode::kInvalidArgument, "rotation range");
  require(scale_lo > 0.0 && scale_lo <= scale_hi, ErrorCode::kInvalidArgument, "scale range");
  require(elastic_sigma > 0.0 && elastic_alpha >= 0.0, ErrorCode::kInvalidArgument, "elastic parameters");
  require(intensity_shift >= 0.0 && intensity_shift < 1.0, ErrorCode::kInvalidArgument, "intensity shift");
  for (auto e : patch) require(e >= 1, ErrorCode::kInvalidArgument, "patch extent");
}

void flip(Volume& v, LabelMap& l, int axis) {
  require(axis >= 0 && axis < 3, ErrorCode::kInvalidArgument, "flip axis must be 0, 1 or 2");
  const Triple e = v.extent;
  const std::array<std::int64_t, 3> stride{e[1] * e[2], e[2], 1};
  const std::int64_t len = e[static_cast<std::size_t>(axis)];
  const std::int64_t st = stride[static_cast<std::size_t>(axis)];
  const std::int64_t n = voxel_count(e);
  for (std::int64_t idx = 0; idx < n; ++idx) {
    const std::int64_t i = (idx / st) % len;
    if (2 * i >= len - 1) continue;  // swap each pair once
    const std::int64_t mirror = idx + (len - 1 - 2 * i) * st;
    for (int m = 0; m < kModalities; ++m) std::swap(v.data[m * n + idx], v.data[m * n + mirror]);
    std::swap(l.labels[static_cast<std::size_t>(idx)], l.labels[static_cast<std::size_t>(mirror)]);
  }
}

Sample augment(const Volume& v, const LabelMap& l, std::uint64_t seed, const AugmentParams& p) {
  p.validate();
  require(l.extent == v.extent, ErrorCode::kShapeMismatch, "volume and label extents differ");
  for (int a = 0; a < 3; ++a)
    require(p.patch[a] <= v.extent[a], ErrorCode::kPatchLargerThanVolume,
            "patch " + std::to_string(p.patch[a]) + " exceeds extent " + std::to_string(v.extent[a]));

  Sample s{v, l};
  const Triple e = v.extent;

  // Every draw happens regardless of the probabilities so one toggle does
  // not shift the random stream of the others.
  Rng flip_rng(derive_seed(seed, {1}));
  for (int axis = 0; axis < 3; ++axis)
    if (flip_rng.bernoulli(p.p_flip)) flip(s.volume, s.labels, axis);

  Rng geo(derive_seed(seed, {2}));
  const bool do_rotate = geo.bernoulli(p.p_rotate);
  std::array<double, 3> angle{};
  for (auto& a : angle) a = geo.uniform(-p.max_rotation_deg, p.max_rotation_deg) * std::numbers::pi / 180.0;
  const bool do_scale = geo.bernoulli(p.p_scale);
  const double factor = geo.uniform(p.scale_lo, p.scale_hi);
  const bool do_elastic = geo.bernoulli(p.p_elastic);

  if (do_rotate || do_scale || do_elastic) {
    Warp warp;
    Mat3 r{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
    if (do_rotate) r = matmul(rotation(0, angle[0]), matmul(rotation(1, angle[1]), rotation(2, angle[2])));
    // Inverse of (scale * R) is R^T / scale.
    const double inv_scale = do_scale ? 1.0 / factor : 1.0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) warp.inverse[i][j] = r[j][i] * inv_scale;
    if (do_elastic) {
      Rng field_rng(derive_seed(seed, {3}));
      for (auto& f : warp.displacement) {
        f.resize(static_cast<std::size_t>(voxel_count(e)));
        for (auto& x : f) x = field_rng.uniform(-1.0, 1.0);
        gaussian_blur(f, e, p.elastic_sigma);
        double peak = 0.0;
        for (double x : f) peak = std::max(peak, std::abs(x));
        if (peak > 0.0)
          for (auto& x : f) x *= p.elastic_alpha / peak;
      }
    }
    apply_warp(s.volume, s.labels, warp);
  }

  Rng shift_rng(derive_seed(seed, {4}));
  for (int m = 0; m < kModalities; ++m) {
    const bool on = shift_rng.bernoulli(p.p_intensity);
    const double u = shift_rng.uniform(-p.intensity_shift, p.intensity_shift);
    if (!on) continue;
    auto x = s.volume.modality(m);
    double sum = 0.0, sq = 0.0;
    std::int64_t count = 0;
    for (float f : x)
      if (f != 0.0f) {
        sum += f;
        sq += static_cast<double>(f) * f;
        ++count;
      }
    if (count == 0) continue;
    const double mean = sum / static_cast<double>(count);
    const double sd = std::sqrt(std::max(sq / static_cast<double>(count) - mean * mean, 0.0));
    for (auto& f : x)
      if (f != 0.0f) f = static_cast<float>(f + u * sd);
  }

  Rng crop_rng(derive_seed(seed, {5}));
  Triple off{};
  for (int a = 0; a < 3; ++a) off[a] = static_cast<std::int64_t>(crop_rng.below(static_cast<std::uint64_t>(e[a] - p.patch[a] + 1)));
  if (p.patch == e) return s;

  Sample c;
  c.volume.extent = c.labels.extent = p.patch;
  c.volume.spacing = c.labels.spacing = s.volume.spacing;
  c.volume.case_id = s.volume.case_id;
  const auto n = voxel_count(e), pn = voxel_count(p.patch);
  c.volume.data.resize(static_cast<std::size_t>(kModalities * pn));
  c.labels.labels.resize(static_cast<std::size_t>(pn));
  for (std::int64_t d = 0; d < p.patch[0]; ++d)
    for (std::int64_t h = 0; h < p.patch[1]; ++h)
      for (std::int64_t w = 0; w < p.patch[2]; ++w) {
        const auto dst = (d * p.patch[1] + h) * p.patch[2] + w;
        const auto src = ((d + off[0]) * e[1] + h + off[1]) * e[2] + w + off[2];
        for (int m = 0; m < kModalities; ++m)
          c.volume.data[static_cast<std::size_t>(m * pn + dst)] = s.volume.data[static_cast<std::size_t>(m * n + src)];
        c.labels.labels[static_cast<std::size_t>(dst)] = s.labels.labels[static_cast<std::size_t>(src)];
      }
  return c;
}

SplitPlan kfold_split(const std::vector<std::string>& case_ids, int k, std::uint64_t seed) {
  require(k >= 2, ErrorCode::kInvalidArgument, "k must be >= 2");
  require(case_ids.size() >= static_cast<std::size_t>(k), ErrorCode::kTooFewCases,
          std::to_string(case_ids.size()) + " cases for " + std::to_string(k) + " folds");
  std::vector<std::string> ids = case_ids;
  Rng rng(derive_seed(seed, {0x6b666f6c64}));
  for (std::size_t i = ids.size() - 1; i > 0; --i) std::swap(ids[i], ids[rng.below(i + 1)]);
  SplitPlan plan{std::vector<std::vector<std::string>>(static_cast<std::size_t>(k)), seed};
  for (std::size_t i = 0; i < ids.size(); ++i) plan.folds[i % static_cast<std::size_t>(k)].push_back(ids[i]);
  return plan;
}

}  // namespace rcan
