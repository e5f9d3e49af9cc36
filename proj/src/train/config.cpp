#include "rcan/config.hpp"

#include <set>

#include "rcan/error.hpp"

namespace rcan {

namespace {

void reject_unknown(const Json& j, const std::set<std::string>& known, const char* what) {
  require(j.is_object(), ErrorCode::kConfigInvalid, std::string(what) + " must be a JSON object");
  for (const auto& [k, _] : j.items())
    require(known.count(k) > 0, ErrorCode::kConfigInvalid, std::string("unknown key ") + what + "." + k);
}

template <typename V>
void read(const Json& j, const char* key, V& out, const char* what) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorCode::kConfigInvalid, std::string(what) + "." + key + " has the wrong type");
  }
}

void read_triple(const Json& j, const char* key, Triple& out, const char* what) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (v.is_number_integer()) {
    out = {v.get<std::int64_t>(), v.get<std::int64_t>(), v.get<std::int64_t>()};
    return;
  }
  std::vector<std::int64_t> e;
  read(j, key, e, what);
  require(e.size() == 3, ErrorCode::kConfigInvalid, std::string(what) + "." + key + " needs 3 extents");
  out = {e[0], e[1], e[2]};
}

}  // namespace

Json to_json(const ModelConfig& c) {
  return {{"in_channels", c.in_channels},
          {"out_classes", c.out_classes},
          {"levels", c.levels},
          {"base_width", c.base_width},
          {"attention_k", c.attention_k},
          {"norm_groups", c.norm_groups},
          {"use_max_pool", c.ablation.use_max_pool},
          {"use_avg_pool", c.ablation.use_avg_pool},
          {"use_residual", c.ablation.use_residual},
          {"patch", {c.patch[0], c.patch[1], c.patch[2]}}};
}

ModelConfig model_config_from_json(const Json& j) {
  const char* w = "model";
  reject_unknown(j, {"in_channels", "out_classes", "levels", "base_width", "attention_k", "norm_groups",
                     "use_max_pool", "use_avg_pool", "use_residual", "patch"},
                 w);
  ModelConfig c;
  read(j, "in_channels", c.in_channels, w);
  read(j, "out_classes", c.out_classes, w);
  read(j, "levels", c.levels, w);
  read(j, "base_width", c.base_width, w);
  read(j, "attention_k", c.attention_k, w);
  read(j, "norm_groups", c.norm_groups, w);
  read(j, "use_max_pool", c.ablation.use_max_pool, w);
  read(j, "use_avg_pool", c.ablation.use_avg_pool, w);
  read(j, "use_residual", c.ablation.use_residual, w);
  read_triple(j, "patch", c.patch, w);
  c.validate();
  return c;
}

Json to_json(const AugmentParams& p) {
  return {{"p_flip", p.p_flip},
          {"p_rotate", p.p_rotate},
          {"max_rotation_deg", p.max_rotation_deg},
          {"p_scale", p.p_scale},
          {"scale_lo", p.scale_lo},
          {"scale_hi", p.scale_hi},
          {"p_elastic", p.p_elastic},
          {"elastic_sigma", p.elastic_sigma},
          {"elastic_alpha", p.elastic_alpha},
          {"p_intensity", p.p_intensity},
          {"intensity_shift", p.intensity_shift},
          {"patch", {p.patch[0], p.patch[1], p.patch[2]}}};
}

AugmentParams augment_params_from_json(const Json& j) {
  const char* w = "augment";
  reject_unknown(j, {"p_flip", "p_rotate", "max_rotation_deg", "p_scale", "scale_lo", "scale_hi", "p_elastic",
                     "elastic_sigma", "elastic_alpha", "p_intensity", "intensity_shift", "patch"},
                 w);
  AugmentParams p;
  read(j, "p_flip", p.p_flip, w);
  read(j, "p_rotate", p.p_rotate, w);
  read(j, "max_rotation_deg", p.max_rotation_deg, w);
  read(j, "p_scale", p.p_scale, w);
  read(j, "scale_lo", p.scale_lo, w);
  read(j, "scale_hi", p.scale_hi, w);
  read(j, "p_elastic", p.p_elastic, w);
  read(j, "elastic_sigma", p.elastic_sigma, w);
  read(j, "elastic_alpha", p.elastic_alpha, w);
  read(j, "p_intensity", p.p_intensity, w);
  read(j, "intensity_shift", p.intensity_shift, w);
  read_triple(j, "patch", p.patch, w);
  try {
    p.validate();
  } catch (const Error& e) {
    fail(ErrorCode::kConfigInvalid, e.what());
  }
  return p;
}

Json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"steps_per_epoch", c.steps_per_epoch},
          {"lr0", c.lr0},
          {"weight_decay", c.weight_decay},
          {"lr_milestones", c.lr_milestones},
          {"lr_factor", c.lr_factor},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"loss", loss_name(c.loss)},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"adam_eps", c.adam.eps},
          {"normalize", c.normalize},
          {"checkpoint_every", c.checkpoint_every},
          {"augment", to_json(c.augment)}};
}

TrainConfig train_config_from_json(const Json& j) {
  const char* w = "train";
  reject_unknown(j, {"epochs", "steps_per_epoch", "lr0", "weight_decay", "lr_milestones", "lr_factor", "batch_size",
                     "seed", "loss", "beta1", "beta2", "adam_eps", "normalize", "checkpoint_every", "augment"},
                 w);
  TrainConfig c;
  read(j, "epochs", c.epochs, w);
  read(j, "steps_per_epoch", c.steps_per_epoch, w);
  read(j, "lr0", c.lr0, w);
  read(j, "weight_decay", c.weight_decay, w);
  read(j, "lr_milestones", c.lr_milestones, w);
  read(j, "lr_factor", c.lr_factor, w);
  read(j, "batch_size", c.batch_size, w);
  read(j, "seed", c.seed, w);
  std::string loss = loss_name(c.loss);
  read(j, "loss", loss, w);
  c.loss = parse_loss(loss);
  read(j, "beta1", c.adam.beta1, w);
  read(j, "beta2", c.adam.beta2, w);
  read(j, "adam_eps", c.adam.eps, w);
  read(j, "normalize", c.normalize, w);
  read(j, "checkpoint_every", c.checkpoint_every, w);
  if (j.contains("augment")) c.augment = augment_params_from_json(j.at("augment"));
  c.validate();
  return c;
}

void apply_override(Json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, ErrorCode::kConfigInvalid,
          "override must look like path=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    require(node->is_object() && node->contains(key), ErrorCode::kConfigInvalid, "unknown config path " + path);
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  require(!node->is_object(), ErrorCode::kConfigInvalid, "cannot override a whole section: " + path);
  *node = value;
}

}  // namespace rcan
