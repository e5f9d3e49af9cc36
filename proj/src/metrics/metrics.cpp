#include "rcan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "rcan/error.hpp"

namespace rcan {

namespace {

void check_same_extent(const BinaryGrid& a, const BinaryGrid& b) {
  require(a.extent == b.extent && a.voxels.size() == b.voxels.size() &&
              static_cast<std::int64_t>(a.voxels.size()) == voxel_count(a.extent),
          ErrorCode::kShapeMismatch, "mask extents differ");
}

double squared_distance(const Triple& a, const Triple& b, const Spacing& s) {
  const double dd = static_cast<double>(a[0] - b[0]) * s[0];
  const double dh = static_cast<double>(a[1] - b[1]) * s[1];
  const double dw = static_cast<double>(a[2] - b[2]) * s[2];
  return dd * dd + dh * dh + dw * dw;
}

// Exact nearest distance from every query to the target set. Targets are
// sorted by d so the scan can stop once the d-gap alone exceeds the best
// candidate; the distance expression is the same as the brute-force one.
void directed_distances(const std::vector<Triple>& queries, std::vector<Triple> targets, const Spacing& s,
                        std::vector<double>& out) {
  std::sort(targets.begin(), targets.end());
  for (const auto& q : queries) {
    auto start = std::lower_bound(targets.begin(), targets.end(), Triple{q[0], std::numeric_limits<std::int64_t>::min(), 0});
    double best = std::numeric_limits<double>::infinity();
    for (auto it = start; it != targets.end(); ++it) {
      const double gap = static_cast<double>((*it)[0] - q[0]) * s[0];
      if (gap * gap > best) break;
      best = std::min(best, squared_distance(q, *it, s));
    }
    for (auto it = start; it != targets.begin();) {
      --it;
      const double gap = static_cast<double>(q[0] - (*it)[0]) * s[0];
      if (gap * gap > best) break;
      best = std::min(best, squared_distance(q, *it, s));
    }
    out.push_back(std::sqrt(best));
  }
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "undefined";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

MeanValue mean_of(const std::vector<std::optional<double>>& values) {
  MeanValue m;
  double sum = 0.0;
  for (const auto& v : values)
    if (v) {
      sum += *v;
      ++m.defined;
    }
  if (m.defined > 0) m.mean = sum / static_cast<double>(m.defined);
  return m;
}

}  // namespace

std::int64_t BinaryGrid::count() const {
  std::int64_t n = 0;
  for (auto v : voxels) n += v != 0;
  return n;
}

const char* region_name(Region r) {
  switch (r) {
    case Region::kEt:
      return "ET";
    case Region::kWt:
      return "WT";
    default:
      return "TC";
  }
}

const BinaryGrid& RegionMasks::of(Region r) const {
  switch (r) {
    case Region::kEt:
      return et;
    case Region::kWt:
      return wt;
    default:
      return tc;
  }
}

RegionMasks region_masks(const LabelMap& l) {
  check_labels(l);
  RegionMasks m;
  const auto n = l.labels.size();
  m.et = m.tc = m.wt = BinaryGrid{l.extent, std::vector<std::uint8_t>(n, 0)};
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = l.labels[i];
    m.wt.voxels[i] = v != 0;
    m.tc.voxels[i] = v == 1 || v == 4;
    m.et.voxels[i] = v == 4;
  }
  return m;
}

OverlapMetrics overlap_metrics(const BinaryGrid& pred, const BinaryGrid& gt) {
  check_same_extent(pred, gt);
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < pred.voxels.size(); ++i) {
    const bool p = pred.voxels[i] != 0, g = gt.voxels[i] != 0;
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
    tn += !p && !g;
  }
  OverlapMetrics m;
  m.dice = (tp + fp + fn == 0) ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
  if (tp + fn > 0) m.sensitivity = static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (tn + fp > 0) m.specificity = static_cast<double>(tn) / static_cast<double>(tn + fp);
  return m;
}

std::vector<Triple> boundary_voxels(const BinaryGrid& m) {
  const Triple e = m.extent;
  auto at = [&](std::int64_t d, std::int64_t h, std::int64_t w) {
    if (d < 0 || h < 0 || w < 0 || d >= e[0] || h >= e[1] || w >= e[2]) return false;
    return m.voxels[static_cast<std::size_t>((d * e[1] + h) * e[2] + w)] != 0;
  };
  std::vector<Triple> out;
  for (std::int64_t d = 0; d < e[0]; ++d)
    for (std::int64_t h = 0; h < e[1]; ++h)
      for (std::int64_t w = 0; w < e[2]; ++w)
        if (at(d, h, w) && (!at(d - 1, h, w) || !at(d + 1, h, w) || !at(d, h - 1, w) || !at(d, h + 1, w) ||
                            !at(d, h, w - 1) || !at(d, h, w + 1)))
          out.push_back({d, h, w});
  return out;
}

double percentile(std::vector<double> values, double q) {
  require(!values.empty(), ErrorCode::kInvalidArgument, "percentile of an empty set");
  require(q >= 0.0 && q <= 100.0, ErrorCode::kInvalidArgument, "percentile outside [0, 100]");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = static_cast<std::size_t>(std::ceil(pos));
  return values[lo] + (values[hi] - values[lo]) * (pos - static_cast<double>(lo));
}

std::optional<double> hausdorff95(const BinaryGrid& pred, const BinaryGrid& gt, const Spacing& spacing) {
  check_same_extent(pred, gt);
  const auto bp = boundary_voxels(pred);
  const auto bg = boundary_voxels(gt);
  if (bp.empty() || bg.empty()) return std::nullopt;
  std::vector<double> d;
  d.reserve(bp.size() + bg.size());
  directed_distances(bp, bg, spacing, d);
  directed_distances(bg, bp, spacing, d);
  return percentile(std::move(d), 95.0);
}

double CaseReport::mean_dice() const {
  double s = 0.0;
  for (const auto& r : regions) s += r.overlap.dice;
  return s / static_cast<double>(regions.size());
}

CaseReport evaluate_case(const LabelMap& pred, const LabelMap& gt, const std::string& case_id) {
  require(pred.extent == gt.extent, ErrorCode::kShapeMismatch, "prediction and ground truth extents differ");
  const auto pm = region_masks(pred);
  const auto gm = region_masks(gt);
  CaseReport r;
  r.case_id = case_id;
  for (auto region : kRegions) {
    auto& out = r.regions[static_cast<std::size_t>(region)];
    out.overlap = overlap_metrics(pm.of(region), gm.of(region));
    out.hd95 = hausdorff95(pm.of(region), gm.of(region), gt.spacing);
  }
  return r;
}

Aggregate aggregate(const std::vector<CaseReport>& reports) {
  Aggregate a;
  a.cases = static_cast<std::int64_t>(reports.size());
  for (auto region : kRegions) {
    std::vector<std::optional<double>> dice, sens, spec, hd;
    for (const auto& r : reports) {
      const auto& x = r.of(region);
      dice.push_back(x.overlap.dice);
      sens.push_back(x.overlap.sensitivity);
      spec.push_back(x.overlap.specificity);
      hd.push_back(x.hd95);
    }
    auto& out = a.regions[static_cast<std::size_t>(region)];
    out = {mean_of(dice), mean_of(sens), mean_of(spec), mean_of(hd)};
  }
  if (!reports.empty()) {
    double s = 0.0;
    for (const auto& r : a.regions) s += *r.dice.mean;
    a.mean_dice = s / 3.0;
  }
  return a;
}

void write_metrics_csv(const std::vector<CaseReport>& reports, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(out.good(), ErrorCode::kIoError, "cannot write " + path.string());
  out << "case_id,region,dice,sensitivity,specificity,hd95\n";
  for (const auto& r : reports)
    for (auto region : kRegions) {
      const auto& x = r.of(region);
      out << r.case_id << ',' << region_name(region) << ',' << fmt(x.overlap.dice) << ',' << fmt(x.overlap.sensitivity)
          << ',' << fmt(x.overlap.specificity) << ',' << fmt(x.hd95) << '\n';
    }
  const auto a = aggregate(reports);
  for (auto region : kRegions) {
    const auto& x = a.regions[static_cast<std::size_t>(region)];
    out << "MEAN," << region_name(region) << ',' << fmt(x.dice.mean) << ',' << fmt(x.sensitivity.mean) << ','
        << fmt(x.specificity.mean) << ',' << fmt(x.hd95.mean) << '\n';
  }
}

void write_summary_csv(const std::vector<std::pair<std::string, Aggregate>>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(out.good(), ErrorCode::kIoError, "cannot write " + path.string());
  out << "config,mean_dice,et_dice,wt_dice,tc_dice,et_hd95,wt_hd95,tc_hd95\n";
  for (const auto& [name, a] : rows) {
    out << name << ',' << fmt(a.mean_dice);
    for (auto region : kRegions) out << ',' << fmt(a.regions[static_cast<std::size_t>(region)].dice.mean);
    for (auto region : kRegions) out << ',' << fmt(a.regions[static_cast<std::size_t>(region)].hd95.mean);
    out << '\n';
  }
}

}  // namespace rcan
