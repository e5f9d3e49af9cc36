#pragma once

// End-to-end workflows over a manifest: training, evaluation, inference,
// the attention ablation sweep and slice export. Each command-line
// subcommand maps onto one function here.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "rcan/config.hpp"
#include "rcan/data.hpp"
#include "rcan/metrics.hpp"
#include "rcan/model.hpp"
#include "rcan/train.hpp"

namespace rcan {

// folds <= 1 trains and evaluates on every case; otherwise fold `fold` of a
// seeded k-fold split is held out for evaluation.
struct DataSplit {
  int folds = 1;
  int fold = 0;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataSplit data;

  // Throws ConfigInvalid.
  void validate() const;
};

Json to_json(const RunConfig& c);
// Missing sections keep their defaults. Throws ConfigInvalid.
RunConfig run_config_from_json(const Json& j);

// Indices into m.cases for the training and held-out parts of the split.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_cases(const Manifest& m, const RunConfig& c);

// Builds a model from the run seed and trains it on the training part.
// Writes config.json, history.csv and checkpoint.rcan under out_dir.
TrainResult train_from_manifest(const RunConfig& c, const Manifest& m, const std::filesystem::path& out_dir);

// Normalises (when asked) and predicts a full volume.
LabelMap infer_volume(const Model<float>& model, const Volume& v, bool normalize_input);

// One report per listed case, in order; writes metrics.csv when the path is
// non-empty.
std::vector<CaseReport> evaluate_manifest(const Model<float>& model, const Manifest& m,
                                          const std::vector<std::size_t>& indices, bool normalize_input,
                                          const std::filesystem::path& metrics_csv = {});

inline constexpr const char* kAblationNames[4] = {"full", "no-max", "no-avg", "no-residual"};

// Ablation flags for one of kAblationNames. Throws InvalidArgument.
AttentionAblation ablation_named(const std::string& name);

struct AblationRun {
  std::string name;
  Aggregate aggregate;
  std::filesystem::path checkpoint;
  std::filesystem::path metrics;
};

// Trains and evaluates the four attention variants from the same seed,
// each under out_dir/<name>/, then writes out_dir/summary.csv.
std::vector<AblationRun> run_ablation(const RunConfig& c, const Manifest& m, const std::filesystem::path& out_dir);

// Axial (constant d) 8-bit PGM slices per case under out_dir/<case_id>/:
// one series per modality, the ground truth and, with a model, the
// prediction. Returns the number of images written.
std::int64_t export_slices(const Manifest& m, const Model<float>* model, bool normalize_input,
                           const std::filesystem::path& out_dir, std::int64_t max_cases = -1);

}  // namespace rcan
