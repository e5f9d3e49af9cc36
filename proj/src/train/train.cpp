#include "rcan/train.hpp"

#include <cmath>
#include <fstream>
#include <memory>

#include "rcan/error.hpp"
#include "rcan/random.hpp"

namespace rcan {

namespace {

constexpr double kSmooth = 1.0;

}  // namespace

const char* loss_name(LossKind k) { return k == LossKind::kSoftDice ? "soft_dice" : "dice_plus_ce"; }

LossKind parse_loss(const std::string& s) {
  if (s == "soft_dice") return LossKind::kSoftDice;
  if (s == "dice_plus_ce") return LossKind::kDicePlusCe;
  fail(ErrorCode::kConfigInvalid, "unknown loss " + s + " (expected soft_dice or dice_plus_ce)");
}

int class_index(std::uint8_t label) {
  require(valid_label(label), ErrorCode::kInvalidLabelValue, "label value " + std::to_string(label));
  return label == 4 ? 3 : label;
}

std::uint8_t label_of_class(int c) { return static_cast<std::uint8_t>(c == 3 ? 4 : c); }

template <typename T>
Tensor<T> soft_dice_ce_loss(const Tensor<T>& logits, const LabelMap& labels, LossKind kind, LossParts* parts) {
  require(logits.rank() == 5 && logits.dim(0) == 1 && logits.dim(1) >= 2, ErrorCode::kShapeMismatch,
          "logits must be 1 x C x D x H x W with C >= 2, got " + shape_str(logits.shape()));
  require(labels.extent == Triple{logits.dim(2), logits.dim(3), logits.dim(4)} &&
              static_cast<std::int64_t>(labels.labels.size()) == voxel_count(labels.extent),
          ErrorCode::kShapeMismatch, "labels do not match logits " + shape_str(logits.shape()));
  const std::int64_t C = logits.dim(1);
  const std::int64_t V = voxel_count(labels.extent);
  const T* z = logits.ptr();

  std::vector<int> cls(static_cast<std::size_t>(V));
  for (std::int64_t v = 0; v < V; ++v) {
    cls[static_cast<std::size_t>(v)] = class_index(labels.labels[static_cast<std::size_t>(v)]);
    require(cls[static_cast<std::size_t>(v)] < C, ErrorCode::kInvalidLabelValue, "label class exceeds logits channels");
  }

  auto p = std::make_shared<std::vector<double>>(static_cast<std::size_t>(C * V));
  double ce = 0.0;
  for (std::int64_t v = 0; v < V; ++v) {
    double mx = z[v];
    for (std::int64_t c = 1; c < C; ++c) mx = std::max(mx, static_cast<double>(z[c * V + v]));
    double total = 0.0;
    for (std::int64_t c = 0; c < C; ++c) total += (*p)[c * V + v] = std::exp(z[c * V + v] - mx);
    for (std::int64_t c = 0; c < C; ++c) (*p)[c * V + v] /= total;
    const int g = cls[static_cast<std::size_t>(v)];
    ce -= static_cast<double>(z[g * V + v]) - mx - std::log(total);
  }
  ce /= static_cast<double>(V);

  // Per-class intersection, prediction mass and label mass.
  auto inter = std::make_shared<std::vector<double>>(static_cast<std::size_t>(C), 0.0);
  auto denom = std::make_shared<std::vector<double>>(static_cast<std::size_t>(C), 0.0);
  double dice_sum = 0.0;
  for (std::int64_t c = 1; c < C; ++c) {
    double I = 0.0, P = 0.0, G = 0.0;
    for (std::int64_t v = 0; v < V; ++v) {
      const double pv = (*p)[c * V + v];
      const bool g = cls[static_cast<std::size_t>(v)] == c;
      P += pv;
      if (g) {
        I += pv;
        G += 1.0;
      }
    }
    (*inter)[c] = I;
    (*denom)[c] = P + G + kSmooth;
    dice_sum += (2.0 * I + kSmooth) / (*denom)[c];
  }
  const double fg = static_cast<double>(C - 1);
  const double soft_dice = dice_sum / fg;
  double loss = 1.0 - soft_dice;
  const bool with_ce = kind == LossKind::kDicePlusCe;
  if (with_ce) loss += ce;
  if (parts) *parts = {soft_dice, ce};

  BackwardFn<T> backward = [p, inter, denom, cls = std::move(cls), C, V, fg, with_ce](std::span<const T> go,
                                                                                      GradSink<T>& sink) {
    auto& gz = sink.grad(0);
    const double g0 = go[0];
    std::vector<double> dp(static_cast<std::size_t>(C));
    for (std::int64_t v = 0; v < V; ++v) {
      const int g = cls[static_cast<std::size_t>(v)];
      dp[0] = 0.0;
      for (std::int64_t c = 1; c < C; ++c) {
        const double S = (*denom)[c];
        const double num = 2.0 * (*inter)[c] + kSmooth;
        dp[c] = -(g0 / fg) * ((g == c ? 2.0 : 0.0) / S - num / (S * S));
      }
      double dot = 0.0;
      for (std::int64_t c = 0; c < C; ++c) dot += (*p)[c * V + v] * dp[c];
      for (std::int64_t c = 0; c < C; ++c) {
        const double pc = (*p)[c * V + v];
        double d = pc * (dp[c] - dot);
        if (with_ce) d += g0 * (pc - (g == c ? 1.0 : 0.0)) / static_cast<double>(V);
        gz[c * V + v] += static_cast<T>(d);
      }
    }
  };
  return make_result<T>("soft_dice_ce_loss", {1}, {static_cast<T>(loss)}, {&logits}, std::move(backward));
}

OptimizerState OptimizerState::for_params(const std::vector<Tensor32>& params, AdamConfig adam) {
  OptimizerState s;
  s.adam = adam;
  for (const auto& p : params) {
    s.m.emplace_back(p.size(), 0.0f);
    s.v.emplace_back(p.size(), 0.0f);
  }
  return s;
}

std::vector<Tensor32> adam_step(const std::vector<Tensor32>& params, const std::vector<Tensor32>& grads,
                                OptimizerState& state, double lr, double weight_decay) {
  require(params.size() == grads.size() && params.size() == state.m.size() && params.size() == state.v.size(),
          ErrorCode::kShapeMismatch, "parameter, gradient and moment counts differ");
  for (std::size_t i = 0; i < params.size(); ++i)
    require(params[i].shape() == grads[i].shape() && state.m[i].size() == params[i].size() &&
                state.v[i].size() == params[i].size(),
            ErrorCode::kShapeMismatch, "shape mismatch at parameter " + std::to_string(i));
  state.step += 1;
  const auto& a = state.adam;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(a.beta1, t);
  const double c2 = 1.0 - std::pow(a.beta2, t);
  std::vector<Tensor32> out;
  out.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto th = params[i].data();
    const auto g = grads[i].data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    std::vector<float> next(th.begin(), th.end());
    for (std::size_t j = 0; j < next.size(); ++j) {
      const double gj = static_cast<double>(g[j]) + weight_decay * th[j];
      const double mj = a.beta1 * m[j] + (1.0 - a.beta1) * gj;
      const double vj = a.beta2 * v[j] + (1.0 - a.beta2) * gj * gj;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      if (lr != 0.0) next[j] = static_cast<float>(th[j] - lr * (mj / c1) / (std::sqrt(vj / c2) + a.eps));
    }
    out.push_back(params[i].with_data(std::move(next)));
  }
  return out;
}

void TrainConfig::validate() const {
  auto check = [](bool ok, const std::string& what) { require(ok, ErrorCode::kConfigInvalid, what); };
  check(epochs >= 1, "epochs must be >= 1");
  check(steps_per_epoch >= 1, "steps_per_epoch must be >= 1");
  check(lr0 > 0.0 && std::isfinite(lr0), "lr0 must be positive");
  check(weight_decay >= 0.0, "weight_decay must be >= 0");
  check(lr_factor > 0.0 && lr_factor < 1.0, "lr_factor must lie in (0, 1)");
  for (std::size_t i = 0; i < lr_milestones.size(); ++i) {
    check(lr_milestones[i] >= 0, "milestones must be >= 0");
    check(i == 0 || lr_milestones[i] > lr_milestones[i - 1], "milestones must be ascending");
  }
  check(batch_size >= 1, "batch_size must be >= 1");
  check(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.eps > 0.0,
        "Adam betas must lie in [0, 1) and eps be positive");
  check(checkpoint_every >= 0, "checkpoint_every must be >= 0");
}

double lr_at_epoch(const TrainConfig& cfg, std::int64_t epoch) {
  int n = 0;
  for (auto m : cfg.lr_milestones)
    if (m <= epoch) ++n;
  // Dividing by an exactly formed power of 1/factor keeps decimal rates
  // exact where repeated multiplication would drift (1e-4 * 0.2 * 0.2).
  const double step = 1.0 / cfg.lr_factor;
  double divisor = 1.0;
  for (int i = 0; i < n; ++i) divisor *= step;
  return cfg.lr0 / divisor;
}

void write_history_csv(const std::vector<HistoryRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(out.good(), ErrorCode::kIoError, "cannot write " + path.string());
  out << "epoch,step,loss,lr,soft_dice\n";
  out.precision(9);
  for (const auto& r : rows) out << r.epoch << ',' << r.step << ',' << r.loss << ',' << r.lr << ',' << r.soft_dice << '\n';
}

TrainResult run_training(Model<float> model, const std::vector<Sample>& cases, const TrainConfig& cfg,
                         const std::optional<std::filesystem::path>& out_dir, const TrainHooks& hooks) {
  cfg.validate();
  require(!cases.empty(), ErrorCode::kInvalidArgument, "training needs at least one case");
  std::vector<Sample> prepared;
  prepared.reserve(cases.size());
  for (const auto& c : cases) prepared.push_back({cfg.normalize ? normalize(c.volume) : c.volume, c.labels});
  if (out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(*out_dir, ec);
    require(!ec, ErrorCode::kIoError, "cannot create " + out_dir->string());
  }

  const ModelConfig mcfg = model.config();
  std::vector<Tensor32> params = model.values();
  TrainResult result{model, OptimizerState::for_params(params, cfg.adam), {}};
  auto& state = result.optimizer;
  bool stop = false;

  for (std::int64_t epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    std::vector<std::size_t> order(prepared.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle(derive_seed(cfg.seed, {static_cast<std::uint64_t>(epoch), 0x73687566}));
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[shuffle.below(i + 1)]);

    for (std::int64_t s = 0; s < cfg.steps_per_epoch && !stop; ++s) {
      const std::int64_t global = epoch * cfg.steps_per_epoch + s;
      std::vector<std::vector<double>> acc(params.size());
      double loss_sum = 0.0, dice_sum = 0.0;
      for (std::int64_t b = 0; b < cfg.batch_size; ++b) {
        const std::int64_t draw = s * cfg.batch_size + b;
        const auto& c = prepared[order[static_cast<std::size_t>(draw) % order.size()]];
        const auto sample = augment(c.volume, c.labels,
                                    derive_seed(cfg.seed, {static_cast<std::uint64_t>(epoch),
                                                           static_cast<std::uint64_t>(draw), 0x617567}),
                                    cfg.augment);
        Tape<float> tape;
        std::vector<Tensor32> vars;
        vars.reserve(params.size());
        for (const auto& p : params) vars.push_back(tape.variable(p));
        const auto logits = forward<float>(mcfg, vars, tape.constant(sample.volume.as_batch()));
        LossParts parts;
        const auto loss = soft_dice_ce_loss(logits, sample.labels, cfg.loss, &parts);
        const double lv = loss.item();
        require(std::isfinite(lv), ErrorCode::kNonFiniteLoss,
                "loss is " + std::to_string(lv) + " at epoch " + std::to_string(epoch) + ", step " +
                    std::to_string(global) + ", case " + c.volume.case_id);
        const auto grads = tape.backward(loss);
        for (std::size_t i = 0; i < params.size(); ++i) {
          if (acc[i].empty()) acc[i].assign(params[i].size(), 0.0);
          if (!grads.has(vars[i])) continue;
          const auto g = grads.of(vars[i]);
          const auto gd = g.data();
          require(all_finite(gd), ErrorCode::kNonFiniteLoss,
                  "non-finite gradient for " + model.parameters()[i].name + " at step " + std::to_string(global));
          for (std::size_t j = 0; j < gd.size(); ++j) acc[i][j] += gd[j];
        }
        loss_sum += lv;
        dice_sum += parts.soft_dice;
      }
      const double inv = 1.0 / static_cast<double>(cfg.batch_size);
      std::vector<Tensor32> grads;
      grads.reserve(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) {
        std::vector<float> g(acc[i].size());
        for (std::size_t j = 0; j < g.size(); ++j) g[j] = static_cast<float>(acc[i][j] * inv);
        grads.push_back(params[i].with_data(std::move(g)));
      }
      params = adam_step(params, grads, state, lr, cfg.weight_decay);
      const HistoryRow row{epoch, global, loss_sum * inv, lr, dice_sum * inv};
      result.history.push_back(row);
      if (hooks.on_step && !hooks.on_step(row)) stop = true;
    }
    if (out_dir && cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
      result.model.set_values(params);
      save_checkpoint(*out_dir / ("checkpoint_epoch" + std::to_string(epoch + 1) + ".rcan"), result.model, &state);
    }
  }
  result.model.set_values(params);
  if (out_dir) {
    write_history_csv(result.history, *out_dir / "history.csv");
    save_checkpoint(*out_dir / "checkpoint.rcan", result.model, &state);
  }
  return result;
}

LabelMap predict_labels(const Model<float>& model, const Volume& v) {
  const auto logits = forward(model, v.as_batch());
  const std::int64_t C = logits.dim(1);
  const std::int64_t V = voxel_count(v.extent);
  LabelMap out{v.extent, std::vector<std::uint8_t>(static_cast<std::size_t>(V)), v.spacing};
  const float* z = logits.ptr();
  for (std::int64_t i = 0; i < V; ++i) {
    int best = 0;
    for (std::int64_t c = 1; c < C; ++c)
      if (z[c * V + i] > z[best * V + i]) best = static_cast<int>(c);
    out.labels[static_cast<std::size_t>(i)] = label_of_class(best);
  }
  return out;
}

template Tensor<float> soft_dice_ce_loss<float>(const Tensor<float>&, const LabelMap&, LossKind, LossParts*);
template Tensor<double> soft_dice_ce_loss<double>(const Tensor<double>&, const LabelMap&, LossKind, LossParts*);

}  // namespace rcan
