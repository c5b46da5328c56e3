#pragma once

// Command drivers behind the C API and the `nerd` CLI.
//
// Run directory layout (one per seed):
//   <output>/seed_<s>/config.json        resolved config, frozen
//   <output>/seed_<s>/checkpoints/       last.ckpt, best.ckpt
//   <output>/seed_<s>/history.csv
//   <output>/seed_<s>/metrics/           metrics.csv, metrics.json (test split)
//   <output>/seed_<s>/figures/           overlay panels
//   <output>/summary.csv                 mean (std) across seeds

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nerd/data.hpp"
#include "nerd/dataset_io.hpp"
#include "nerd/metrics.hpp"
#include "nerd/model.hpp"
#include "nerd/train.hpp"

namespace nerd {

using LogFn = std::function<void(const std::string&)>;

/// Either a prepared dataset directory or an inline synthetic config.
struct DatasetSource {
  std::optional<std::filesystem::path> dir;
  std::optional<SynthConfig> synth;
};

nlohmann::json to_json(const DatasetSource& s);
DatasetSource dataset_source_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
Dataset load_dataset(const DatasetSource& source);

struct ExperimentConfig {
  DatasetSource dataset;
  ModelConfig model;
  TrainConfig train;
  EvalConventions evaluation;
  std::filesystem::path output = "runs";
  std::vector<std::uint64_t> seeds{0};
  /// Test slices rendered as overlay panels per run.
  int figure_slices = 2;

  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& c);
/// Keys: dataset, model, train, evaluation, output, seeds, figure_slices.
/// Relative paths resolve against `base_dir`.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
ExperimentConfig read_experiment_config(const std::filesystem::path& path);

std::filesystem::path seed_dir(const std::filesystem::path& output, std::uint64_t seed);

nlohmann::json cmd_prepare(const std::filesystem::path& manifest, const std::filesystem::path& out);
nlohmann::json cmd_synth(const SynthConfig& config, const std::filesystem::path& out);
/// Trains one run per seed (resuming interrupted runs), evaluates each on the
/// test split and writes summary.csv.
nlohmann::json cmd_train(const ExperimentConfig& config, const LogFn& log = {}, int stop_after_epoch = -1);

struct EvaluateRequest {
  /// Model checkpoint; predictions are computed and written under out/predictions.
  std::optional<std::filesystem::path> checkpoint;
  /// Alternatively, a directory of <split>/<volume>/slice_####.mask files.
  std::optional<std::filesystem::path> predictions;
  DatasetSource dataset;
  Split split = Split::Test;
  EvalConventions conventions;
  std::filesystem::path out;
};

nlohmann::json cmd_evaluate(const EvaluateRequest& request);

struct DiagnoseRequest {
  /// Trained checkpoint, or an untrained model from `model` + `seed`.
  std::optional<std::filesystem::path> checkpoint;
  std::optional<ModelConfig> model;
  std::uint64_t seed = 0;
  DatasetSource dataset;
  Split split = Split::Test;
  int band = 8;
  std::string colormap = "viridis";
  std::filesystem::path out;
};

nlohmann::json cmd_diagnose(const DiagnoseRequest& request);

struct ReportRequest {
  /// Experiment output directories (each holding seed_<s>/ runs).
  std::vector<std::filesystem::path> runs;
  std::filesystem::path out;
  int slices = 2;
};

/// comparison.csv with one row per (model, filters) pair, metrics as
/// "mean (std)" over seeds, plus overlay panels image | GT | each run.
nlohmann::json cmd_report(const ReportRequest& request);

/// Model label used in reports, e.g. "nerdc".
std::string model_label(const ModelConfig& c);
/// Filter label, e.g. "low" or "8-16-32-64-128".
std::string filter_label(const ModelConfig& c);

}  // namespace nerd
