#include "rcan/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include "rcan/error.hpp"

namespace rcan {

namespace {

void make_dir(const std::filesystem::path& p) {
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  require(!ec, ErrorCode::kIoError, "cannot create " + p.string());
}

std::vector<Sample> load_cases(const Manifest& m, const std::vector<std::size_t>& indices) {
  std::vector<Sample> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(load_case(m, i));
  return out;
}

void write_pgm(const std::filesystem::path& path, std::int64_t rows, std::int64_t cols,
               const std::vector<std::uint8_t>& pixels) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorCode::kIoError, "cannot write " + path.string());
  out << "P5\n" << cols << ' ' << rows << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  require(out.good(), ErrorCode::kIoError, "write failed for " + path.string());
}

// Labels 0, 1, 2, 4 as evenly spaced grey levels.
std::uint8_t label_grey(std::uint8_t label) { return static_cast<std::uint8_t>(class_index(label) * 85); }

std::int64_t write_label_series(const LabelMap& l, const std::filesystem::path& dir, const std::string& stem) {
  const auto [D, H, W] = l.extent;
  for (std::int64_t d = 0; d < D; ++d) {
    std::vector<std::uint8_t> px(static_cast<std::size_t>(H * W));
    for (std::int64_t i = 0; i < H * W; ++i) px[static_cast<std::size_t>(i)] = label_grey(l.labels[static_cast<std::size_t>(d * H * W + i)]);
    char name[64];
    std::snprintf(name, sizeof name, "%s_z%03lld.pgm", stem.c_str(), static_cast<long long>(d));
    write_pgm(dir / name, H, W, px);
  }
  return D;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  train.validate();
  require(data.folds >= 1, ErrorCode::kConfigInvalid, "data.folds must be at least 1");
  require(data.fold >= 0 && (data.folds == 1 ? data.fold == 0 : data.fold < data.folds), ErrorCode::kConfigInvalid,
          "data.fold must lie in [0, folds)");
}

Json to_json(const RunConfig& c) {
  return {{"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"data", {{"folds", c.data.folds}, {"fold", c.data.fold}}}};
}

RunConfig run_config_from_json(const Json& j) {
  require(j.is_object(), ErrorCode::kConfigInvalid, "config must be a JSON object");
  for (const auto& [k, _] : j.items())
    require(k == "model" || k == "train" || k == "data", ErrorCode::kConfigInvalid, "unknown config section " + k);
  RunConfig c;
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("data")) {
    const auto& d = j.at("data");
    require(d.is_object(), ErrorCode::kConfigInvalid, "data must be a JSON object");
    for (const auto& [k, v] : d.items()) {
      require(k == "folds" || k == "fold", ErrorCode::kConfigInvalid, "unknown key data." + k);
      require(v.is_number_integer(), ErrorCode::kConfigInvalid, "data." + k + " must be an integer");
    }
    c.data.folds = d.value("folds", c.data.folds);
    c.data.fold = d.value("fold", c.data.fold);
  }
  c.validate();
  return c;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_cases(const Manifest& m, const RunConfig& c) {
  std::vector<std::size_t> all(m.cases.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  if (c.data.folds <= 1) return {all, all};
  std::vector<std::string> ids;
  for (const auto& e : m.cases) ids.push_back(e.case_id);
  const auto plan = kfold_split(ids, c.data.folds, c.train.seed);
  const auto& held = plan.folds[static_cast<std::size_t>(c.data.fold)];
  const std::set<std::string> held_set(held.begin(), held.end());
  std::vector<std::size_t> train, val;
  for (auto i : all) (held_set.count(ids[i]) ? val : train).push_back(i);
  return {train, val};
}

TrainResult train_from_manifest(const RunConfig& c, const Manifest& m, const std::filesystem::path& out_dir) {
  c.validate();
  make_dir(out_dir);
  {
    std::ofstream cfg(out_dir / "config.json");
    require(cfg.good(), ErrorCode::kIoError, "cannot write config.json");
    cfg << to_json(c).dump(2) << '\n';
  }
  const auto [train_idx, _] = split_cases(m, c);
  auto model = build_model<float>(c.model, c.train.seed);
  return run_training(std::move(model), load_cases(m, train_idx), c.train, out_dir);
}

LabelMap infer_volume(const Model<float>& model, const Volume& v, bool normalize_input) {
  return predict_labels(model, normalize_input ? normalize(v) : v);
}

std::vector<CaseReport> evaluate_manifest(const Model<float>& model, const Manifest& m,
                                          const std::vector<std::size_t>& indices, bool normalize_input,
                                          const std::filesystem::path& metrics_csv) {
  std::vector<CaseReport> reports;
  for (auto i : indices) {
    const auto s = load_case(m, i);
    reports.push_back(evaluate_case(infer_volume(model, s.volume, normalize_input), s.labels, m.cases[i].case_id));
  }
  if (!metrics_csv.empty()) write_metrics_csv(reports, metrics_csv);
  return reports;
}

AttentionAblation ablation_named(const std::string& name) {
  if (name == "full") return {true, true, true};
  if (name == "no-max") return {false, true, true};
  if (name == "no-avg") return {true, false, true};
  if (name == "no-residual") return {true, true, false};
  fail(ErrorCode::kInvalidArgument, "unknown ablation " + name);
}

std::vector<AblationRun> run_ablation(const RunConfig& c, const Manifest& m, const std::filesystem::path& out_dir) {
  make_dir(out_dir);
  const auto [_, val_idx] = split_cases(m, c);
  std::vector<AblationRun> runs;
  std::vector<std::pair<std::string, Aggregate>> rows;
  for (const char* name : kAblationNames) {
    RunConfig rc = c;
    rc.model.ablation = ablation_named(name);
    const auto dir = out_dir / name;
    const auto result = train_from_manifest(rc, m, dir);
    const auto reports = evaluate_manifest(result.model, m, val_idx, rc.train.normalize, dir / "metrics.csv");
    runs.push_back({name, aggregate(reports), dir / "checkpoint.rcan", dir / "metrics.csv"});
    rows.emplace_back(name, runs.back().aggregate);
  }
  write_summary_csv(rows, out_dir / "summary.csv");
  return runs;
}

std::int64_t export_slices(const Manifest& m, const Model<float>* model, bool normalize_input,
                           const std::filesystem::path& out_dir, std::int64_t max_cases) {
  std::int64_t written = 0;
  const auto n = max_cases < 0 ? m.cases.size() : std::min(m.cases.size(), static_cast<std::size_t>(max_cases));
  for (std::size_t i = 0; i < n; ++i) {
    const auto s = load_case(m, i);
    const auto dir = out_dir / m.cases[i].case_id;
    make_dir(dir);
    const auto [D, H, W] = s.volume.extent;
    const std::int64_t V = D * H * W;
    for (int mod = 0; mod < kModalities; ++mod) {
      const auto* x = s.volume.data.data() + static_cast<std::ptrdiff_t>(mod) * V;
      // One window per modality volume so slices share a grey scale.
      const auto [lo, hi] = std::minmax_element(x, x + V);
      const double scale = *hi > *lo ? 255.0 / (static_cast<double>(*hi) - *lo) : 0.0;
      for (std::int64_t d = 0; d < D; ++d) {
        std::vector<std::uint8_t> px(static_cast<std::size_t>(H * W));
        for (std::int64_t j = 0; j < H * W; ++j)
          px[static_cast<std::size_t>(j)] =
              static_cast<std::uint8_t>(std::lround((static_cast<double>(x[d * H * W + j]) - *lo) * scale));
        char name[64];
        std::snprintf(name, sizeof name, "%s_z%03lld.pgm", kModalityNames[mod], static_cast<long long>(d));
        write_pgm(dir / name, H, W, px);
        ++written;
      }
    }
    written += write_label_series(s.labels, dir, "gt");
    if (model) written += write_label_series(infer_volume(*model, s.volume, normalize_input), dir, "pred");
  }
  return written;
}

}  // namespace rcan
