// Command-line front end. Talks to the library only through the C API.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rcan/rcan.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

// Failure from a library call, reported with exit code 2.
struct RuntimeFailure {
  std::string message;
};

// Bad flags or configuration, reported with exit code 1.
struct UsageFailure {
  std::string message;
};

void check(rcan_status s, const char* what) {
  if (s != RCAN_OK) throw RuntimeFailure{std::string(what) + " failed: " + rcan_last_error()};
}

std::string take(char* s) {
  std::string out = s ? s : "";
  rcan_string_free(s);
  return out;
}

struct ModelHandle {
  rcan_model* ptr = nullptr;
  ~ModelHandle() { rcan_model_destroy(ptr); }
};

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeFailure{"cannot read " + path};
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void make_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw RuntimeFailure{"cannot create " + dir + ": " + ec.message()};
}

// Options shared by the commands that take a run configuration.
struct RunOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  bool print_config = false;
  std::int64_t seed = -1;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    cmd->add_option("--set", overrides, "override a field, e.g. --set train.lr0=1e-3")->take_all();
    cmd->add_option("--seed", seed, "run seed (sets train.seed)")->check(CLI::NonNegativeNumber);
    cmd->add_flag("--print-config", print_config, "print the resolved configuration and exit");
  }

  std::string resolve() const {
    std::vector<std::string> all = overrides;
    if (seed >= 0) all.push_back("train.seed=" + std::to_string(seed));
    std::vector<const char*> ptrs;
    for (const auto& o : all) ptrs.push_back(o.c_str());
    const std::string base = config_path.empty() ? "" : read_text(config_path);
    char* out = nullptr;
    const auto s = rcan_config_resolve(config_path.empty() ? nullptr : base.c_str(), ptrs.data(), ptrs.size(), &out);
    if (s == RCAN_CONFIG_INVALID) throw UsageFailure{rcan_last_error()};
    check(s, "config");
    return take(out);
  }
};

void print_summary(const std::string& json) {
  const auto j = nlohmann::json::parse(json);
  auto num = [](const nlohmann::json& v) {
    if (v.is_null()) return std::string("undefined");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v.get<double>());
    return std::string(buf);
  };
  std::printf("cases %lld  mean dice %s\n", j.at("cases").get<long long>(), num(j.at("mean_dice")).c_str());
  for (const char* r : {"ET", "WT", "TC"}) {
    const auto& x = j.at(r);
    std::printf("  %s dice %s  sens %s  spec %s  hd95 %s\n", r, num(x.at("dice")).c_str(),
                num(x.at("sensitivity")).c_str(), num(x.at("specificity")).c_str(), num(x.at("hd95")).c_str());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Residual channel attention network for brain tumour segmentation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", rcan_version());

  std::string out_dir = ".";
  std::string data;
  std::string checkpoint;
  bool no_normalize = false;

  auto* synth = app.add_subcommand("synth", "write a synthetic dataset and manifest.json");
  int cases = 5, extent = 32;
  std::uint64_t synth_seed = 0;
  synth->add_option("--cases", cases, "number of cases")->check(CLI::PositiveNumber);
  synth->add_option("--extent", extent, "cube edge in voxels (>= 16)")->check(CLI::Range(16, 512));
  synth->add_option("--seed", synth_seed, "dataset seed");
  synth->add_option("--out", out_dir, "output directory");

  auto* train = app.add_subcommand("train", "train a model on a manifest");
  RunOptions train_opts;
  train_opts.attach(train);
  train->add_option("--data", data, "manifest.json");
  train->add_option("--out", out_dir, "output directory");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  eval->add_option("--checkpoint", checkpoint, "checkpoint.rcan")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data, "manifest.json")->required()->check(CLI::ExistingFile);
  eval->add_option("--out", out_dir, "output directory for metrics.csv");
  eval->add_flag("--no-normalize", no_normalize, "skip per-modality z-scoring");

  auto* infer = app.add_subcommand("infer", "predict a label map for one volume");
  std::vector<std::string> inputs;
  std::string label_name = "prediction_seg.nii";
  infer->add_option("--checkpoint", checkpoint, "checkpoint.rcan")->required()->check(CLI::ExistingFile);
  infer->add_option("--inputs", inputs, "t1 t1ce t2 flair NIfTI files")->required()->expected(4)->check(CLI::ExistingFile);
  infer->add_option("--out", out_dir, "output directory");
  infer->add_option("--name", label_name, "output file name");
  infer->add_flag("--no-normalize", no_normalize, "skip per-modality z-scoring");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
  std::uint64_t grad_seed = 7;
  grad->add_option("--seed", grad_seed, "input seed");

  auto* ablate = app.add_subcommand("ablate", "train and evaluate the four attention variants");
  RunOptions ablate_opts;
  ablate_opts.attach(ablate);
  ablate->add_option("--data", data, "manifest.json");
  ablate->add_option("--out", out_dir, "output directory");

  auto* slices = app.add_subcommand("export-slices", "write axial PGM slices per case");
  std::int64_t max_cases = -1;
  slices->add_option("--data", data, "manifest.json")->required()->check(CLI::ExistingFile);
  slices->add_option("--checkpoint", checkpoint, "optional checkpoint for prediction slices")->check(CLI::ExistingFile);
  slices->add_option("--out", out_dir, "output directory");
  slices->add_option("--max-cases", max_cases, "export at most this many cases");
  slices->add_flag("--no-normalize", no_normalize, "skip per-modality z-scoring");

  if (argc > 1 && argv[1][0] != '-') {
    bool known = false;
    for (const auto* sub : app.get_subcommands({})) known = known || sub->get_name() == argv[1];
    if (!known) {
      std::fprintf(stderr, "unknown command '%s'\n\n%s", argv[1], app.help().c_str());
      return kExitUsage;
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (synth->parsed()) {
      check(rcan_synth(out_dir.c_str(), cases, extent, synth_seed), "synth");
      std::printf("wrote %d cases to %s\n", cases, (std::filesystem::path(out_dir) / "manifest.json").c_str());
    } else if (train->parsed() || ablate->parsed()) {
      const bool is_train = train->parsed();
      const auto& opts = is_train ? train_opts : ablate_opts;
      const std::string cfg = opts.resolve();
      if (opts.print_config) {
        std::printf("%s\n", cfg.c_str());
        return kExitOk;
      }
      if (data.empty()) {
        std::fprintf(stderr, "--data is required\n%s", (is_train ? train : ablate)->help().c_str());
        return kExitUsage;
      }
      make_dir(out_dir);
      if (is_train) {
        check(rcan_train(cfg.c_str(), data.c_str(), out_dir.c_str(), nullptr), "train");
        std::printf("trained; artifacts in %s\n", out_dir.c_str());
      } else {
        char* summary = nullptr;
        check(rcan_ablate(cfg.c_str(), data.c_str(), out_dir.c_str(), &summary), "ablate");
        const auto runs = nlohmann::json::parse(take(summary));
        for (const auto& r : runs) {
          std::printf("[%s]\n", r.at("config").get<std::string>().c_str());
          print_summary(r.at("aggregate").dump());
        }
        std::printf("summary: %s\n", (std::filesystem::path(out_dir) / "summary.csv").c_str());
      }
    } else if (eval->parsed()) {
      ModelHandle m;
      check(rcan_model_load(checkpoint.c_str(), &m.ptr), "load checkpoint");
      make_dir(out_dir);
      const auto csv = (std::filesystem::path(out_dir) / "metrics.csv").string();
      char* summary = nullptr;
      check(rcan_eval(m.ptr, data.c_str(), no_normalize ? 0 : 1, csv.c_str(), &summary), "eval");
      print_summary(take(summary));
    } else if (infer->parsed()) {
      ModelHandle m;
      check(rcan_model_load(checkpoint.c_str(), &m.ptr), "load checkpoint");
      make_dir(out_dir);
      const char* paths[4] = {inputs[0].c_str(), inputs[1].c_str(), inputs[2].c_str(), inputs[3].c_str()};
      const auto target = (std::filesystem::path(out_dir) / label_name).string();
      check(rcan_infer(m.ptr, paths, no_normalize ? 0 : 1, target.c_str()), "infer");
      std::printf("wrote %s\n", target.c_str());
    } else if (grad->parsed()) {
      char* report = nullptr;
      int ok = 0;
      check(rcan_gradcheck(grad_seed, &report, &ok), "gradcheck");
      for (const auto& e : nlohmann::json::parse(take(report)))
        std::printf("%-28s max rel error %.3e over %5zu coords  %s\n", e.at("op").get<std::string>().c_str(),
                    e.at("max_rel_error").get<double>(), e.at("coordinates").get<std::size_t>(),
                    e.at("passed").get<bool>() ? "ok" : "FAIL");
      if (!ok) {
        std::fprintf(stderr, "gradcheck: some ops exceed the tolerance\n");
        return kExitRuntime;
      }
    } else if (slices->parsed()) {
      ModelHandle m;
      if (!checkpoint.empty()) check(rcan_model_load(checkpoint.c_str(), &m.ptr), "load checkpoint");
      std::int64_t n = 0;
      check(rcan_export_slices(data.c_str(), m.ptr, no_normalize ? 0 : 1, out_dir.c_str(), max_cases, &n),
            "export-slices");
      std::printf("wrote %lld images under %s\n", static_cast<long long>(n), out_dir.c_str());
    }
  } catch (const UsageFailure& f) {
    std::fprintf(stderr, "error: %s\n", f.message.c_str());
    return kExitUsage;
  } catch (const RuntimeFailure& f) {
    std::fprintf(stderr, "error: %s\n", f.message.c_str());
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitOk;
}
