#pragma once

// Loss, optimiser, learning-rate schedule, checkpoints and the training loop.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rcan/data.hpp"
#include "rcan/model.hpp"
#include "rcan/tensor.hpp"

namespace rcan {

enum class LossKind { kSoftDice, kDicePlusCe };

const char* loss_name(LossKind k);
// Throws ConfigInvalid.
LossKind parse_loss(const std::string& s);

// Class channel for a label value: 0, 1, 2 map to themselves, 4 to 3.
int class_index(std::uint8_t label);
std::uint8_t label_of_class(int c);

struct LossParts {
  double soft_dice = 0.0;  // mean foreground soft dice
  double cross_entropy = 0.0;
};

// logits: 1 x C x D x H x W, labels D x H x W. Soft dice over foreground
// classes 1..C-1 with smoothing 1, optionally plus mean voxel cross-entropy.
// Returns shape [1]. Throws ShapeMismatch, InvalidLabelValue.
template <typename T>
Tensor<T> soft_dice_ce_loss(const Tensor<T>& logits, const LabelMap& labels, LossKind kind,
                            LossParts* parts = nullptr);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  bool operator==(const AdamConfig&) const = default;
};

struct OptimizerState {
  AdamConfig adam;
  std::uint64_t step = 0;
  std::vector<std::vector<float>> m;  // first moments, one per parameter
  std::vector<std::vector<float>> v;  // second moments

  static OptimizerState for_params(const std::vector<Tensor32>& params, AdamConfig adam = {});
};

// Adam with bias correction; weight decay is added to the gradient. Returns
// the updated parameters. Throws ShapeMismatch.
std::vector<Tensor32> adam_step(const std::vector<Tensor32>& params, const std::vector<Tensor32>& grads,
                                OptimizerState& state, double lr, double weight_decay);

struct TrainConfig {
  std::int64_t epochs = 2;
  std::int64_t steps_per_epoch = 1;
  double lr0 = 1e-4;
  double weight_decay = 1e-5;
  std::vector<std::int64_t> lr_milestones{100, 150};
  double lr_factor = 0.2;
  std::int64_t batch_size = 1;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::kSoftDice;
  AdamConfig adam;
  bool normalize = true;
  AugmentParams augment;
  std::int64_t checkpoint_every = 0;  // epochs; 0 = only at the end

  // Throws ConfigInvalid.
  void validate() const;
};

// lr0 * factor^n with n the number of milestones m <= epoch (0-based), so a
// milestone's factor first applies to the epoch after it.
double lr_at_epoch(const TrainConfig& cfg, std::int64_t epoch);

struct HistoryRow {
  std::int64_t epoch;
  std::int64_t step;  // global step
  double loss;
  double lr;
  double soft_dice;
};

struct TrainResult {
  Model<float> model;
  OptimizerState optimizer;
  std::vector<HistoryRow> history;
};

struct TrainHooks {
  // Called after every step; returning false stops training early.
  std::function<bool(const HistoryRow&)> on_step;
};

// Trains in place on the given cases. When out_dir is set, writes
// history.csv and checkpoint.rcan (plus checkpoint_epochN.rcan every
// checkpoint_every epochs). Throws NonFiniteLoss.
TrainResult run_training(Model<float> model, const std::vector<Sample>& cases, const TrainConfig& cfg,
                         const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                         const TrainHooks& hooks = {});

void write_history_csv(const std::vector<HistoryRow>& rows, const std::filesystem::path& path);

struct Checkpoint {
  Model<float> model;
  std::optional<OptimizerState> optimizer;
};

// "RCAN" | u32 version | u32 config length | config JSON | u32 count |
// per parameter (u32 name length, name, u32 rank, u32 extents, f32 data) |
// u8 has optimiser | [f64 beta1, beta2, eps | u64 step | f32 m, v per
// parameter]. Little-endian. Throws IoError.
void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                     const OptimizerState* optimizer = nullptr);
// Throws BadCheckpoint, IoError.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Argmax over classes, mapped back to label values. Volume extents must be
// divisible by 2^(levels-1).
LabelMap predict_labels(const Model<float>& model, const Volume& v);

}  // namespace rcan
