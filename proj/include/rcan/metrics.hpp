#pragma once

// Evaluation regions (ET = {4}, TC = {1, 4}, WT = {1, 2, 4}) and the
// overlap and surface-distance metrics reported per region.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rcan/data.hpp"

namespace rcan {

struct BinaryGrid {
  Triple extent{0, 0, 0};
  std::vector<std::uint8_t> voxels;  // 0 or 1

  std::int64_t count() const;
};

enum class Region { kEt = 0, kWt = 1, kTc = 2 };
inline constexpr std::array<Region, 3> kRegions{Region::kEt, Region::kWt, Region::kTc};
const char* region_name(Region r);

struct RegionMasks {
  BinaryGrid et, tc, wt;
  const BinaryGrid& of(Region r) const;
};

// Throws InvalidLabelValue.
RegionMasks region_masks(const LabelMap& l);

struct OverlapMetrics {
  double dice = 0.0;  // 1 when both masks are empty
  std::optional<double> sensitivity;  // undefined without ground-truth positives
  std::optional<double> specificity;  // undefined without ground-truth negatives
};

// Throws ShapeMismatch.
OverlapMetrics overlap_metrics(const BinaryGrid& pred, const BinaryGrid& gt);

// Foreground voxels with at least one face neighbour that is background or
// outside the grid, as (d, h, w) triples.
std::vector<Triple> boundary_voxels(const BinaryGrid& m);

// 95th percentile (linear interpolation) of the pooled directed
// boundary-to-boundary distances in millimetres; undefined if either mask
// is empty. Throws ShapeMismatch.
std::optional<double> hausdorff95(const BinaryGrid& pred, const BinaryGrid& gt, const Spacing& spacing);

// Linear-interpolation percentile of unsorted values, q in [0, 100].
double percentile(std::vector<double> values, double q);

struct RegionReport {
  OverlapMetrics overlap;
  std::optional<double> hd95;
};

struct CaseReport {
  std::string case_id;
  std::array<RegionReport, 3> regions;  // indexed by Region

  const RegionReport& of(Region r) const { return regions[static_cast<std::size_t>(r)]; }
  double mean_dice() const;
};

// Spacing is taken from gt. Throws ShapeMismatch, InvalidLabelValue.
CaseReport evaluate_case(const LabelMap& pred, const LabelMap& gt, const std::string& case_id = "");

// Mean of the defined values and how many were defined.
struct MeanValue {
  std::optional<double> mean;
  std::int64_t defined = 0;
};

struct RegionAggregate {
  MeanValue dice, sensitivity, specificity, hd95;
};

struct Aggregate {
  std::array<RegionAggregate, 3> regions;
  std::optional<double> mean_dice;  // average of the ET, WT, TC dice means
  std::int64_t cases = 0;
};

Aggregate aggregate(const std::vector<CaseReport>& reports);

// case_id,region,dice,sensitivity,specificity,hd95 with one row per (case,
// region) and MEAN rows at the end. Undefined values print as "undefined".
void write_metrics_csv(const std::vector<CaseReport>& reports, const std::filesystem::path& path);

// One row per configuration: config,mean_dice,et_dice,wt_dice,tc_dice,
// et_hd95,wt_hd95,tc_hd95.
void write_summary_csv(const std::vector<std::pair<std::string, Aggregate>>& rows, const std::filesystem::path& path);

}  // namespace rcan
