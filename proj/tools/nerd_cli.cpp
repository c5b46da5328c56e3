// nerd: command-line front end over the C API.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "nerd/nerd.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Failure {
  std::string code;
  std::string message;
  int exit;
};

int exit_for(nerd_status s) {
  if (s == NERD_OK) return 0;
  if (s == NERD_E_CONTRACT || s == NERD_E_INTERNAL) return 2;
  return 1;
}

[[noreturn]] void fail(const std::string& code, const std::string& message, int exit_code = 1) {
  throw Failure{code, message, exit_code};
}

void check(nerd_status s) {
  if (s != NERD_OK) fail(nerd_status_name(s), nerd_last_error(), exit_for(s));
}

json take(char* text) {
  json j = json::parse(text);
  nerd_free_string(text);
  return j;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("io", "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return json::parse(ss.str());
  } catch (const json::exception& e) {
    fail("config", path + ": invalid JSON: " + e.what());
  }
}

std::string base_dir_of(const std::string& path) {
  const fs::path p = fs::absolute(path).parent_path();
  return p.string();
}

void print(const json& j) { std::cout << j.dump(2) << std::endl; }

void log_line(const char* line, void*) { std::cerr << line << std::endl; }

struct Globals {
  std::string config;
  std::string out;
  std::vector<std::uint64_t> seeds;
  std::string device = "cpu";
};

void check_device(const Globals& g) {
  if (g.device != "cpu") fail("config", "device \"" + g.device + "\" is not available; only \"cpu\" is supported");
}

std::uint64_t single_seed(const Globals& g, std::uint64_t fallback) {
  if (g.seeds.size() > 1) fail("config", "this command takes a single seed");
  return g.seeds.empty() ? fallback : g.seeds.front();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NeRD: position-aware segmentation heads, training and evaluation"};
  app.set_version_flag("--version", std::string(nerd_version()));
  app.require_subcommand(1);

  Globals g;
  app.add_option("--config", g.config, "Config or request file (JSON)");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--seed,--seeds", g.seeds, "Seed or seeds")->delimiter(',');
  app.add_option("--device", g.device, "Compute device (cpu)");

  // prepare
  auto* prepare = app.add_subcommand("prepare", "Preprocess NIfTI/raw volumes into a sample directory");
  std::string manifest;
  prepare->add_option("manifest", manifest, "Prepare manifest (JSON)");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate the synthetic border-bias dataset");

  // train
  auto* train = app.add_subcommand("train", "Train one run per seed and evaluate on the test split");
  std::optional<int> epochs;
  int stop_after = -1;
  train->add_option("--epochs", epochs, "Override train.epochs");
  train->add_option("--stop-after-epoch", stop_after, "Stop each seed after this many epochs (resumable)")
      ->group("");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Compute segmentation metrics");
  std::string checkpoint, predictions, dataset_dir, split = "test", mode;
  std::optional<int> connectivity, ldice_factor;
  std::optional<double> threshold;
  evaluate->add_option("--checkpoint", checkpoint, "Model checkpoint");
  evaluate->add_option("--predictions", predictions, "Directory of predicted .mask files");
  evaluate->add_option("--dataset", dataset_dir, "Dataset directory");
  evaluate->add_option("--split", split, "Split to evaluate")->check(CLI::IsMember({"train", "val", "test"}));
  evaluate->add_option("--connectivity", connectivity, "4, 8, 6 or 26");
  evaluate->add_option("--ldice-factor", ldice_factor, "LDice numerator factor (1 or 2)");
  evaluate->add_option("--mode", mode, "volume (26-connected) or slice (8-connected)");
  evaluate->add_option("--threshold", threshold, "Probability threshold");

  // diagnose
  auto* diagnose = app.add_subcommand("diagnose", "Per-position feature statistics and shift score");
  std::string d_checkpoint, d_dataset, d_split = "test", colormap, preset;
  std::optional<int> band;
  diagnose->add_option("--checkpoint", d_checkpoint, "Model checkpoint");
  diagnose->add_option("--dataset", d_dataset, "Dataset directory");
  diagnose->add_option("--split", d_split, "Split to use")->check(CLI::IsMember({"train", "val", "test"}));
  diagnose->add_option("--band", band, "Border band width in pixels");
  diagnose->add_option("--colormap", colormap, "gray or viridis");
  diagnose->add_option("--preset", preset, "Untrained model preset when no checkpoint is given");

  // report
  auto* report = app.add_subcommand("report", "Comparison table and overlay panels across runs");
  std::vector<std::string> run_dirs;
  std::optional<int> slices;
  report->add_option("runs", run_dirs, "Experiment output directories")->required();
  report->add_option("--slices", slices, "Overlay panels to render");

  for (auto* sub : app.get_subcommands([](const CLI::App*) { return true; })) sub->fallthrough();

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
      return app.exit(e);
    } catch (const CLI::ParseError& e) {
      fail("usage", e.what());
    }
    check_device(g);
    nerd_set_log_callback(log_line, nullptr);
    char* result = nullptr;

    if (*prepare) {
      if (manifest.empty()) manifest = g.config;
      if (manifest.empty()) fail("usage", "prepare needs a manifest (positional or --config)");
      if (g.out.empty()) fail("usage", "prepare needs --out");
      check(nerd_prepare(manifest.c_str(), g.out.c_str(), &result));
      print(take(result));
    } else if (*synth) {
      json cfg = g.config.empty() ? json::object() : read_json_file(g.config);
      if (!g.seeds.empty()) cfg["seed"] = single_seed(g, 0);
      if (g.out.empty()) fail("usage", "synth needs --out");
      check(nerd_synth(cfg.dump().c_str(), g.out.c_str(), &result));
      print(take(result));
    } else if (*train) {
      if (g.config.empty()) fail("usage", "train needs --config");
      json cfg = read_json_file(g.config);
      std::string base = base_dir_of(g.config);
      if (!g.out.empty()) cfg["output"] = fs::absolute(g.out).string();
      if (!g.seeds.empty()) cfg["seeds"] = g.seeds;
      if (!cfg.contains("train")) cfg["train"] = json::object();
      cfg["train"]["device"] = g.device;
      if (epochs) cfg["train"]["epochs"] = *epochs;
      check(nerd_train(cfg.dump().c_str(), base.c_str(), stop_after, &result));
      print(take(result));
    } else if (*evaluate) {
      json req = g.config.empty() ? json::object() : read_json_file(g.config);
      const std::string base = g.config.empty() ? fs::current_path().string() : base_dir_of(g.config);
      if (!checkpoint.empty()) req["checkpoint"] = fs::absolute(checkpoint).string();
      if (!predictions.empty()) req["predictions"] = fs::absolute(predictions).string();
      if (!dataset_dir.empty()) req["dataset"] = {{"dir", fs::absolute(dataset_dir).string()}};
      if (!req.contains("split") || evaluate->count("--split")) req["split"] = split;
      json& ev = req["evaluation"];
      if (ev.is_null()) ev = json::object();
      if (!mode.empty()) ev["mode"] = mode;
      if (connectivity) ev["connectivity"] = *connectivity;
      if (ldice_factor) ev["ldice_factor"] = *ldice_factor;
      if (threshold) ev["threshold"] = *threshold;
      if (!g.out.empty()) req["out"] = fs::absolute(g.out).string();
      check(nerd_evaluate(req.dump().c_str(), base.c_str(), &result));
      print(take(result));
    } else if (*diagnose) {
      json req = g.config.empty() ? json::object() : read_json_file(g.config);
      const std::string base = g.config.empty() ? fs::current_path().string() : base_dir_of(g.config);
      if (!d_checkpoint.empty()) req["checkpoint"] = fs::absolute(d_checkpoint).string();
      if (!preset.empty()) req["model"] = {{"preset", preset}};
      if (!d_dataset.empty()) req["dataset"] = {{"dir", fs::absolute(d_dataset).string()}};
      if (!req.contains("split") || diagnose->count("--split")) req["split"] = d_split;
      if (band) req["band"] = *band;
      if (!colormap.empty()) req["colormap"] = colormap;
      if (!g.seeds.empty()) req["seed"] = single_seed(g, 0);
      if (!g.out.empty()) req["out"] = fs::absolute(g.out).string();
      check(nerd_diagnose(req.dump().c_str(), base.c_str(), &result));
      print(take(result));
    } else if (*report) {
      json req = {{"runs", json::array()}};
      for (const auto& r : run_dirs) req["runs"].push_back(fs::absolute(r).string());
      if (g.out.empty()) fail("usage", "report needs --out");
      req["out"] = fs::absolute(g.out).string();
      if (slices) req["slices"] = *slices;
      check(nerd_report(req.dump().c_str(), nullptr, &result));
      print(take(result));
    }
    return 0;
  } catch (const Failure& f) {
    std::cerr << json{{"error", {{"code", f.code}, {"message", f.message}, {"exit", f.exit}}}}.dump() << std::endl;
    return f.exit;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", {{"code", "internal"}, {"message", e.what()}, {"exit", 2}}}}.dump() << std::endl;
    return 2;
  }
}
