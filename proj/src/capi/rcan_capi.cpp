#include "rcan/rcan.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include "rcan/error.hpp"
#include "rcan/gradcheck.hpp"
#include "rcan/pipeline.hpp"

struct rcan_model {
  rcan::Model<float> model;
};

namespace {

thread_local std::string last_error;

rcan_status set_error(rcan_status s, const std::string& msg) {
  last_error = msg;
  return s;
}

// Runs body and converts any exception into a status plus message.
template <typename Body>
rcan_status guarded(Body&& body) {
  try {
    last_error.clear();
    body();
    return RCAN_OK;
  } catch (const rcan::Error& e) {
    return set_error(static_cast<rcan_status>(e.code()), e.what());
  } catch (const nlohmann::json::exception& e) {
    return set_error(RCAN_CONFIG_INVALID, std::string("ConfigInvalid: ") + e.what());
  } catch (const std::exception& e) {
    return set_error(RCAN_INTERNAL, std::string("Internal: ") + e.what());
  } catch (...) {
    return set_error(RCAN_INTERNAL, "Internal: unknown exception");
  }
}

void need(const void* p, const char* what) {
  rcan::require(p != nullptr, rcan::ErrorCode::kInvalidArgument, std::string(what) + " must not be null");
}

char* dup_string(const std::string& s) {
  auto* out = static_cast<char*>(std::malloc(s.size() + 1));
  rcan::require(out != nullptr, rcan::ErrorCode::kInternal, "out of memory");
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

rcan::RunConfig parse_run(const char* json) {
  if (!json) return {};
  const auto j = rcan::Json::parse(json, nullptr, false);
  rcan::require(!j.is_discarded(), rcan::ErrorCode::kConfigInvalid, "config is not valid JSON");
  return rcan::run_config_from_json(j);
}

rcan::Json opt(const std::optional<double>& v) { return v ? rcan::Json(*v) : rcan::Json(nullptr); }

rcan::Json aggregate_json(const rcan::Aggregate& a) {
  rcan::Json j{{"cases", a.cases}, {"mean_dice", opt(a.mean_dice)}};
  for (auto r : rcan::kRegions) {
    const auto& x = a.regions[static_cast<std::size_t>(r)];
    j[rcan::region_name(r)] = {{"dice", opt(x.dice.mean)},
                               {"sensitivity", opt(x.sensitivity.mean)},
                               {"specificity", opt(x.specificity.mean)},
                               {"hd95", opt(x.hd95.mean)},
                               {"hd95_defined", x.hd95.defined}};
  }
  return j;
}

}  // namespace

extern "C" {

const char* rcan_version(void) { return "1.0.0"; }

// error_name returns views of string literals, so data() is terminated.
const char* rcan_status_name(rcan_status status) { return rcan::error_name(static_cast<rcan::ErrorCode>(status)).data(); }

const char* rcan_last_error(void) { return last_error.c_str(); }

void rcan_string_free(char* s) { std::free(s); }

rcan_status rcan_config_resolve(const char* base_json, const char* const* overrides, size_t n_overrides,
                                char** resolved_json) {
  return guarded([&] {
    need(resolved_json, "resolved_json");
    // Round trip through the typed config so every section is complete.
    rcan::Json j = rcan::to_json(parse_run(base_json));
    for (size_t i = 0; i < n_overrides; ++i) {
      need(overrides[i], "override");
      rcan::apply_override(j, overrides[i]);
    }
    *resolved_json = dup_string(rcan::to_json(rcan::run_config_from_json(j)).dump(2));
  });
}

rcan_status rcan_model_create(const char* config_json, uint64_t seed, rcan_model** out) {
  return guarded([&] {
    need(out, "out");
    *out = nullptr;
    const auto run = parse_run(config_json);
    *out = new rcan_model{rcan::build_model<float>(run.model, seed)};
  });
}

rcan_status rcan_model_load(const char* checkpoint_path, rcan_model** out) {
  return guarded([&] {
    need(checkpoint_path, "checkpoint_path");
    need(out, "out");
    *out = nullptr;
    *out = new rcan_model{rcan::load_checkpoint(checkpoint_path).model};
  });
}

rcan_status rcan_model_save(const rcan_model* model, const char* checkpoint_path) {
  return guarded([&] {
    need(model, "model");
    need(checkpoint_path, "checkpoint_path");
    rcan::save_checkpoint(checkpoint_path, model->model);
  });
}

void rcan_model_destroy(rcan_model* model) { delete model; }

rcan_status rcan_model_parameter_count(const rcan_model* model, int64_t* count) {
  return guarded([&] {
    need(model, "model");
    need(count, "count");
    *count = rcan::parameter_count(model->model.config());
  });
}

rcan_status rcan_model_describe(const rcan_model* model, char** json) {
  return guarded([&] {
    need(model, "model");
    need(json, "json");
    const auto s = rcan::describe(model->model.config());
    rcan::Json params = rcan::Json::array();
    for (const auto& p : s.parameters) params.push_back({{"name", p.name}, {"shape", p.shape}});
    rcan::Json levels = rcan::Json::array();
    for (const auto& l : s.levels)
      levels.push_back({{"level", l.level}, {"channels", l.channels}, {"extent", l.extent}});
    *json = dup_string(rcan::Json{{"config", rcan::to_json(model->model.config())},
                                  {"parameter_count", s.parameter_count},
                                  {"attention_parameters", s.attention_parameters},
                                  {"levels", levels},
                                  {"parameters", params},
                                  {"summary", s.to_string()}}
                           .dump(2));
  });
}

rcan_status rcan_model_forward(const rcan_model* model, const float* input, int64_t d, int64_t h, int64_t w,
                               float* logits, size_t logits_len) {
  return guarded([&] {
    need(model, "model");
    need(input, "input");
    need(logits, "logits");
    const auto& cfg = model->model.config();
    rcan::require(d > 0 && h > 0 && w > 0, rcan::ErrorCode::kInvalidArgument, "extents must be positive");
    const rcan::Shape in_shape{1, cfg.in_channels, d, h, w};
    const auto n = static_cast<std::size_t>(rcan::numel(in_shape));
    rcan::require(logits_len == static_cast<std::size_t>(cfg.out_classes * d * h * w), rcan::ErrorCode::kShapeMismatch,
                  "logits buffer must hold out_classes * d * h * w floats");
    const auto y = rcan::forward(model->model, rcan::Tensor32(in_shape, std::vector<float>(input, input + n)));
    std::memcpy(logits, y.ptr(), logits_len * sizeof(float));
  });
}

rcan_status rcan_synth(const char* out_dir, int cases, int extent, uint64_t seed) {
  return guarded([&] {
    need(out_dir, "out_dir");
    rcan::write_synthetic_dataset(out_dir, cases, {extent, extent, extent}, seed);
  });
}

rcan_status rcan_train(const char* config_json, const char* manifest_path, const char* out_dir, rcan_model** out) {
  return guarded([&] {
    need(manifest_path, "manifest_path");
    need(out_dir, "out_dir");
    if (out) *out = nullptr;
    auto result = rcan::train_from_manifest(parse_run(config_json), rcan::read_manifest(manifest_path), out_dir);
    if (out) *out = new rcan_model{std::move(result.model)};
  });
}

rcan_status rcan_eval(const rcan_model* model, const char* manifest_path, int normalize, const char* metrics_csv,
                      char** summary_json) {
  return guarded([&] {
    need(model, "model");
    need(manifest_path, "manifest_path");
    const auto m = rcan::read_manifest(manifest_path);
    std::vector<std::size_t> all(m.cases.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const auto reports = rcan::evaluate_manifest(model->model, m, all, normalize != 0,
                                                 metrics_csv ? std::filesystem::path(metrics_csv) : std::filesystem::path());
    if (summary_json) *summary_json = dup_string(aggregate_json(rcan::aggregate(reports)).dump(2));
  });
}

rcan_status rcan_infer(const rcan_model* model, const char* const modality_paths[4], int normalize,
                       const char* out_label_path) {
  return guarded([&] {
    need(model, "model");
    need(modality_paths, "modality_paths");
    need(out_label_path, "out_label_path");
    std::array<std::filesystem::path, rcan::kModalities> paths;
    for (std::size_t k = 0; k < paths.size(); ++k) {
      need(modality_paths[k], "modality path");
      paths[k] = modality_paths[k];
    }
    const auto v = rcan::read_volume(paths);
    rcan::write_labels(rcan::infer_volume(model->model, v, normalize != 0), out_label_path);
  });
}

rcan_status rcan_gradcheck(uint64_t seed, char** report_json, int* all_passed) {
  return guarded([&] {
    const auto entries = rcan::run_gradient_suite(seed);
    bool ok = true;
    rcan::Json j = rcan::Json::array();
    for (const auto& e : entries) {
      ok = ok && e.passed();
      j.push_back({{"op", e.op}, {"max_rel_error", e.max_rel_error}, {"coordinates", e.coordinates},
                   {"passed", e.passed()}});
    }
    if (report_json) *report_json = dup_string(j.dump(2));
    if (all_passed) *all_passed = ok ? 1 : 0;
  });
}

rcan_status rcan_ablate(const char* config_json, const char* manifest_path, const char* out_dir,
                        char** summary_json) {
  return guarded([&] {
    need(manifest_path, "manifest_path");
    need(out_dir, "out_dir");
    const auto runs = rcan::run_ablation(parse_run(config_json), rcan::read_manifest(manifest_path), out_dir);
    rcan::Json j = rcan::Json::array();
    for (const auto& r : runs)
      j.push_back({{"config", r.name},
                   {"metrics", r.metrics.string()},
                   {"checkpoint", r.checkpoint.string()},
                   {"aggregate", aggregate_json(r.aggregate)}});
    if (summary_json) *summary_json = dup_string(j.dump(2));
  });
}

rcan_status rcan_export_slices(const char* manifest_path, const rcan_model* model, int normalize, const char* out_dir,
                               int64_t max_cases, int64_t* images_written) {
  return guarded([&] {
    need(manifest_path, "manifest_path");
    need(out_dir, "out_dir");
    const auto n = rcan::export_slices(rcan::read_manifest(manifest_path), model ? &model->model : nullptr,
                                       normalize != 0, out_dir, max_cases);
    if (images_written) *images_written = n;
  });
}

}  // extern "C"
