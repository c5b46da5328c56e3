#include "nerd/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "nerd/diagnostics.hpp"
#include "nerd/error.hpp"
#include "nerd/image.hpp"
#include "nerd/io.hpp"
#include "nerd/json_util.hpp"

namespace nerd {
namespace fs = std::filesystem;

namespace {

fs::path resolve(const fs::path& base, const fs::path& p) {
  return p.is_absolute() || base.empty() ? p : base / p;
}

std::string mean_std(const MetricSummary& s) {
  if (!s.mean) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f (%.2f)", *s.mean, *s.std);
  return buf;
}

std::optional<double> json_number(const nlohmann::json& j) {
  if (j.is_number()) return j.get<double>();
  return std::nullopt;
}

std::vector<VolumeMetrics> evaluate_split(const Dataset& ds, Split split,
                                          const std::vector<std::vector<std::uint8_t>>& masks,
                                          const EvalConventions& conv) {
  std::vector<VolumeMetrics> rows;
  std::size_t k = 0;
  for (const auto* v : ds.volumes_in(split)) {
    Mask3D pred{static_cast<int>(v->slices.size()), ds.height, ds.width, {}};
    Mask3D gt = pred;
    for (const auto& s : v->slices) {
      if (s.label.empty()) throw InvalidArgument("volume " + v->id + " has no ground-truth labels");
      pred.voxels.insert(pred.voxels.end(), masks[k].begin(), masks[k].end());
      gt.voxels.insert(gt.voxels.end(), s.label.begin(), s.label.end());
      ++k;
    }
    rows.push_back(evaluate_volume(v->id, pred, gt, v->spacing, conv));
  }
  return rows;
}

std::vector<const SliceSample*> split_slices(const Dataset& ds, Split split) {
  const auto slices = ds.slices(split);
  if (slices.empty()) throw InvalidArgument(std::string("dataset has no ") + split_name(split) + " slices");
  return slices;
}

RgbImage render_image(const SliceSample& s) {
  RgbImage img(s.height, s.width);
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x) img.set(y, x, colormap("gray", s.image[static_cast<std::size_t>(y) * s.width + x]));
  return img;
}

RgbImage render_overlay(const SliceSample& s, const std::vector<std::uint8_t>& mask, Rgb color) {
  RgbImage img = render_image(s);
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x) {
      if (!mask[static_cast<std::size_t>(y) * s.width + x]) continue;
      const Rgb base = img.get(y, x);
      Rgb out;
      for (int c = 0; c < 3; ++c) out[c] = static_cast<std::uint8_t>((base[c] + color[c]) / 2);
      img.set(y, x, out);
    }
  return img;
}

// Evenly spaced picks from the split, deterministic.
std::vector<std::size_t> figure_picks(std::size_t total, int wanted) {
  std::vector<std::size_t> out;
  const std::size_t n = std::min<std::size_t>(total, static_cast<std::size_t>(std::max(wanted, 0)));
  for (std::size_t i = 0; i < n; ++i) out.push_back(i * total / n);
  return out;
}

std::string figure_name(const SliceSample& s) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "overlay_%s_%04d.png", s.volume_id.c_str(), s.slice_index);
  return buf;
}

constexpr Rgb kGtColor{255, 60, 60};
constexpr Rgb kPredColor{60, 220, 90};

}  // namespace

// ------------------------------------------------------------ config

nlohmann::json to_json(const DatasetSource& s) {
  if (s.dir) return {{"dir", s.dir->string()}};
  if (s.synth) return {{"synth", to_json(*s.synth)}};
  return nlohmann::json::object();
}

DatasetSource dataset_source_from_json(const nlohmann::json& j, const fs::path& base_dir) {
  require_keys(j, {"dir", "synth"}, "dataset");
  DatasetSource s;
  if (j.contains("dir") == j.contains("synth"))
    throw ConfigError("dataset: give exactly one of 'dir' or 'synth'");
  if (j.contains("dir")) s.dir = resolve(base_dir, get_or<std::string>(j, "dir", "", "dataset"));
  if (j.contains("synth")) s.synth = synth_config_from_json(j.at("synth"));
  return s;
}

Dataset load_dataset(const DatasetSource& source) {
  if (source.dir) {
    if (!fs::exists(*source.dir / "manifest.json"))
      throw IoError("no dataset manifest at " + (*source.dir / "manifest.json").string());
    return read_dataset(*source.dir);
  }
  if (source.synth) return generate_border_bias(*source.synth);
  throw ConfigError("dataset: no source given");
}

void ExperimentConfig::validate() const {
  if (!dataset.dir && !dataset.synth) throw ConfigError("dataset: no source given");
  if (seeds.empty()) throw ConfigError("seeds must list at least one seed");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw ConfigError("seeds must be distinct");
  if (output.empty()) throw ConfigError("output directory is empty");
  if (figure_slices < 0) throw ConfigError("figure_slices must be >= 0");
  train.validate();
  evaluation.validate();
  if (dataset.synth) dataset.synth->validate();
  // Building a throwaway model surfaces head/backbone combinations that the
  // individual parsers cannot see.
  SegmentationModel<float> probe(model, 0);
  (void)probe;
}

nlohmann::json to_json(const ExperimentConfig& c) {
  return {{"dataset", to_json(c.dataset)}, {"model", to_json(c.model)},
          {"train", to_json(c.train)},     {"evaluation", to_json(c.evaluation)},
          {"output", c.output.string()},   {"seeds", c.seeds},
          {"figure_slices", c.figure_slices}};
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const fs::path& base_dir) {
  const std::string where = "experiment";
  require_keys(j, {"dataset", "model", "train", "evaluation", "output", "seeds", "figure_slices"}, where);
  if (!j.contains("dataset")) throw ConfigError("experiment: missing 'dataset'");
  ExperimentConfig c;
  c.dataset = dataset_source_from_json(j.at("dataset"), base_dir);
  c.model = model_config_from_json(j.value("model", nlohmann::json::object()));
  c.train = train_config_from_json(j.value("train", nlohmann::json::object()));
  if (j.contains("evaluation")) c.evaluation = eval_conventions_from_json(j.at("evaluation"));
  c.output = resolve(base_dir, get_or<std::string>(j, "output", c.output.string(), where));
  c.seeds = get_or(j, "seeds", c.seeds, where);
  c.figure_slices = get_or(j, "figure_slices", c.figure_slices, where);
  c.validate();
  return c;
}

ExperimentConfig read_experiment_config(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("config file not found: " + path.string());
  return experiment_config_from_json(parse_json_text(read_text(path), path.string()), path.parent_path());
}

fs::path seed_dir(const fs::path& output, std::uint64_t seed) { return output / ("seed_" + std::to_string(seed)); }

std::string model_label(const ModelConfig& c) { return head_kind_name(c.head.kind); }

std::string filter_label(const ModelConfig& c) {
  if (c.backbone.filters == preset_filters("low")) return "low";
  if (c.backbone.filters == preset_filters("high")) return "high";
  std::string s;
  for (int f : c.backbone.filters) s += (s.empty() ? "" : "-") + std::to_string(f);
  return s;
}

// ------------------------------------------------------------ commands

nlohmann::json cmd_prepare(const fs::path& manifest, const fs::path& out) {
  const PrepareConfig config = read_prepare_manifest(manifest);
  const Dataset ds = prepare_dataset(config);
  const WriteStats stats = write_dataset(ds, out);
  return {{"out", out.string()},           {"volumes", ds.volumes.size()},
          {"channels", ds.channels},       {"height", ds.height},
          {"width", ds.width},             {"written", stats.written},
          {"skipped", stats.skipped}};
}

nlohmann::json cmd_synth(const SynthConfig& config, const fs::path& out) {
  const Dataset ds = generate_border_bias(config);
  const WriteStats stats = write_dataset(ds, out);
  return {{"out", out.string()},
          {"train", ds.slices(Split::Train).size()},
          {"val", ds.slices(Split::Val).size()},
          {"test", ds.slices(Split::Test).size()},
          {"rule", ds.source.value("resolved_rule", "")},
          {"written", stats.written},
          {"skipped", stats.skipped}};
}

nlohmann::json cmd_train(const ExperimentConfig& config, const LogFn& log, int stop_after_epoch) {
  config.validate();
  const Dataset ds = load_dataset(config.dataset);
  if (ds.channels != config.model.backbone.in_channels)
    throw ConfigError("model.in_channels is " + std::to_string(config.model.backbone.in_channels) +
                      " but the dataset has " + std::to_string(ds.channels) + " channels");
  split_slices(ds, Split::Train);
  split_slices(ds, Split::Val);
  const auto test = split_slices(ds, Split::Test);

  nlohmann::json runs = nlohmann::json::array();
  std::vector<std::pair<std::uint64_t, std::vector<VolumeMetrics>>> per_seed;
  std::vector<TrainHistory> histories;
  bool complete = true;
  for (std::uint64_t seed : config.seeds) {
    const fs::path dir = seed_dir(config.output, seed);
    ExperimentConfig frozen = config;
    frozen.seeds = {seed};
    frozen.train.seed = seed;
    frozen.output = fs::absolute(config.output);
    if (frozen.dataset.dir) frozen.dataset.dir = fs::absolute(*frozen.dataset.dir);
    fs::create_directories(dir / "checkpoints");
    write_text(dir / "config.json", to_json(frozen).dump(2) + "\n");

    SegmentationModel<float> model(config.model, seed);
    TrainOptions opt;
    opt.run_dir = dir;
    opt.stop_after_epoch = stop_after_epoch;
    if (log)
      opt.on_epoch = [&](const EpochRecord& e) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "seed %llu epoch %d/%d lr %.3g loss %.5f val_dice %.4f",
                      static_cast<unsigned long long>(seed), e.epoch + 1, frozen.train.epochs, e.lr, e.train_loss,
                      e.val_dice);
        log(buf);
      };
    const TrainHistory h = train_model(model, ds, frozen.train, opt);
    if (static_cast<int>(h.epochs.size()) < frozen.train.epochs) {
      complete = false;
      runs.push_back({{"seed", seed}, {"dir", dir.string()}, {"epochs_done", h.epochs.size()}, {"complete", false}});
      continue;
    }
    histories.push_back(h);

    const auto masks = predict_masks(model, test, config.evaluation.threshold, config.train.batch_size);
    auto rows = evaluate_split(ds, Split::Test, masks, config.evaluation);
    write_metrics_report(dir / "metrics", rows, config.evaluation,
                         {{"checkpoint", "checkpoints/best.ckpt"}, {"split", "test"}, {"seed", seed}});
    for (std::size_t i : figure_picks(test.size(), config.figure_slices)) {
      const auto& s = *test[i];
      write_png(dir / "figures" / figure_name(s),
                hconcat({render_image(s), render_overlay(s, s.label, kGtColor), render_overlay(s, masks[i], kPredColor)}));
    }
    const auto summary = summarize(rows);
    runs.push_back({{"seed", seed},
                    {"dir", dir.string()},
                    {"best_epoch", h.best_epoch},
                    {"best_val_dice", h.best_val_dice},
                    {"test_dice", *summary.front().mean},
                    {"complete", true}});
    per_seed.emplace_back(seed, std::move(rows));
    if (log) log("seed " + std::to_string(seed) + " test dice " + format_value(summary.front().mean));
  }

  if (complete) {
    // Rows: one per seed (mean over test volumes), then mean (std) over seeds.
    std::ostringstream csv;
    csv << "seed,best_epoch,best_val_dice";
    for (const auto& n : metric_names()) csv << ',' << n;
    csv << '\n';
    std::vector<std::pair<std::string, std::vector<std::optional<double>>>> columns;
    for (const auto& n : metric_names()) columns.emplace_back(n, std::vector<std::optional<double>>{});
    for (std::size_t k = 0; k < per_seed.size(); ++k) {
      const auto summary = summarize(per_seed[k].second);
      csv << per_seed[k].first << ',' << histories[k].best_epoch << ',' << format_value(histories[k].best_val_dice);
      for (std::size_t m = 0; m < summary.size(); ++m) {
        csv << ',' << format_value(summary[m].mean);
        columns[m].second.push_back(summary[m].mean);
      }
      csv << '\n';
    }
    csv << "mean (std),,";
    for (const auto& s : summarize_values(columns)) csv << ',' << mean_std(s);
    csv << '\n';
    write_text(config.output / "summary.csv", csv.str());
  }
  return {{"output", config.output.string()}, {"runs", runs}, {"complete", complete}};
}

nlohmann::json cmd_evaluate(const EvaluateRequest& req) {
  req.conventions.validate();
  if (req.checkpoint.has_value() == req.predictions.has_value())
    throw ConfigError("evaluate: give exactly one of a checkpoint or a predictions directory");
  if (req.out.empty()) throw ConfigError("evaluate: output directory is empty");
  const Dataset ds = load_dataset(req.dataset);
  const auto slices = split_slices(ds, req.split);

  std::vector<std::vector<std::uint8_t>> masks;
  nlohmann::json provenance = {{"split", split_name(req.split)}};
  if (req.checkpoint) {
    if (!fs::exists(*req.checkpoint)) throw IoError("checkpoint not found: " + req.checkpoint->string());
    auto model = load_model<float>(*req.checkpoint);
    masks = predict_masks(*model, slices, req.conventions.threshold);
    for (std::size_t i = 0; i < slices.size(); ++i) {
      const auto& s = *slices[i];
      write_file_atomic(req.out / "predictions" /
                            slice_relpath(split_name(req.split), s.volume_id, s.slice_index, ".mask"),
                        encode_mask(masks[i], s.height, s.width));
    }
    provenance["checkpoint"] = req.checkpoint->filename().string();
  } else {
    for (const auto* s : slices) {
      const fs::path p = *req.predictions / slice_relpath(split_name(req.split), s->volume_id, s->slice_index, ".mask");
      if (!fs::exists(p)) throw IoError("missing prediction mask " + p.string());
      int h = 0, w = 0;
      masks.push_back(decode_mask(read_file(p), h, w, p.string()));
      if (h != s->height || w != s->width)
        throw ShapeError(p.string() + " is " + std::to_string(h) + "x" + std::to_string(w) + ", expected " +
                         std::to_string(s->height) + "x" + std::to_string(s->width));
    }
    provenance["predictions"] = "mask directory";
  }
  const auto rows = evaluate_split(ds, req.split, masks, req.conventions);
  write_metrics_report(req.out, rows, req.conventions, provenance);
  const auto summary = summarize(rows);
  nlohmann::json aggregate = nlohmann::json::object();
  for (const auto& s : summary) aggregate[s.name] = s.mean ? nlohmann::json(*s.mean) : nlohmann::json(nullptr);
  return {{"out", req.out.string()}, {"volumes", rows.size()}, {"mean", aggregate}};
}

nlohmann::json cmd_diagnose(const DiagnoseRequest& req) {
  if (req.checkpoint.has_value() == req.model.has_value())
    throw ConfigError("diagnose: give exactly one of a checkpoint or a model config");
  if (req.out.empty()) throw ConfigError("diagnose: output directory is empty");
  check_colormap(req.colormap);
  const Dataset ds = load_dataset(req.dataset);
  const auto slices = split_slices(ds, req.split);
  std::unique_ptr<SegmentationModel<double>> model;
  if (req.checkpoint) {
    if (!fs::exists(*req.checkpoint)) throw IoError("checkpoint not found: " + req.checkpoint->string());
    model = load_model<double>(*req.checkpoint);
  } else {
    model = std::make_unique<SegmentationModel<double>>(*req.model, req.seed);
  }
  const SpatialStats stats = feature_stats(model->backbone(), slices);
  const double shift = shift_score(stats, req.band);
  const double control = control_score(stats, req.band);
  write_container(req.out / "stats.ckpt", stats_to_container(stats));
  const auto images = export_heatmaps(stats, req.out / "heatmaps", req.colormap);
  const nlohmann::json result = {{"band", req.band},
                                 {"samples", stats.count},
                                 {"channels", stats.channels},
                                 {"shift_score", shift},
                                 {"control_score", control},
                                 {"heatmaps", images.size()}};
  write_text(req.out / "diagnostics.json", result.dump(2) + "\n");
  return result;
}

nlohmann::json cmd_report(const ReportRequest& req) {
  if (req.runs.empty()) throw ConfigError("report: no run directories given");
  if (req.out.empty()) throw ConfigError("report: output directory is empty");

  struct Run {
    ExperimentConfig config;
    std::vector<fs::path> seed_dirs;
  };
  std::vector<Run> runs;
  for (const auto& dir : req.runs) {
    if (!fs::is_directory(dir)) throw IoError("run directory not found: " + dir.string());
    Run run;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.is_directory() && entry.path().filename().string().rfind("seed_", 0) == 0 &&
          fs::exists(entry.path() / "metrics" / "metrics.json"))
        run.seed_dirs.push_back(entry.path());
    std::sort(run.seed_dirs.begin(), run.seed_dirs.end());
    if (run.seed_dirs.empty()) throw IoError(dir.string() + " holds no evaluated seed_* runs");
    run.config = read_experiment_config(run.seed_dirs.front() / "config.json");
    runs.push_back(std::move(run));
  }

  // (model, filters) -> metric columns over every seed of every matching run.
  std::map<std::pair<std::string, std::string>, std::map<std::string, std::vector<std::optional<double>>>> table;
  std::vector<std::pair<std::string, std::string>> row_order;
  for (const auto& run : runs) {
    const auto key = std::make_pair(model_label(run.config.model), filter_label(run.config.model));
    if (!table.count(key)) row_order.push_back(key);
    auto& cols = table[key];
    for (const auto& sd : run.seed_dirs) {
      const auto doc = parse_json_text(read_text(sd / "metrics" / "metrics.json"), sd.string());
      for (const auto& n : metric_names()) cols[n].push_back(json_number(doc.at("aggregate").at(n).at("mean")));
    }
  }
  std::ostringstream csv;
  csv << "model,filters,seeds";
  for (const auto& n : metric_names()) csv << ',' << n;
  csv << '\n';
  for (const auto& key : row_order) {
    auto& cols = table[key];
    std::vector<std::pair<std::string, std::vector<std::optional<double>>>> columns;
    for (const auto& n : metric_names()) columns.emplace_back(n, cols[n]);
    csv << key.first << ',' << key.second << ',' << cols[metric_names().front()].size();
    for (const auto& s : summarize_values(columns)) csv << ',' << '"' << mean_std(s) << '"';
    csv << '\n';
  }
  write_text(req.out / "comparison.csv", csv.str());

  // Overlay panels on the first run's test split: image | GT | each run.
  const Dataset ds = load_dataset(runs.front().config.dataset);
  const auto test = split_slices(ds, Split::Test);
  const auto picks = figure_picks(test.size(), req.slices);
  std::vector<std::vector<std::vector<std::uint8_t>>> preds;
  for (const auto& run : runs) {
    const fs::path ckpt = run.seed_dirs.front() / "checkpoints" / "best.ckpt";
    if (!fs::exists(ckpt)) throw IoError("checkpoint not found: " + ckpt.string());
    auto model = load_model<float>(ckpt);
    std::vector<const SliceSample*> chosen;
    for (auto i : picks) chosen.push_back(test[i]);
    if (chosen.empty()) {
      preds.emplace_back();
      continue;
    }
    if (chosen.front()->channels != model->config().backbone.in_channels)
      throw ShapeError("run " + run.seed_dirs.front().string() + " expects a different channel count");
    preds.push_back(predict_masks(*model, chosen, run.config.evaluation.threshold));
  }
  nlohmann::json figures = nlohmann::json::array();
  for (std::size_t p = 0; p < picks.size(); ++p) {
    const auto& s = *test[picks[p]];
    std::vector<RgbImage> panels{render_image(s), render_overlay(s, s.label, kGtColor)};
    for (const auto& run_preds : preds) panels.push_back(render_overlay(s, run_preds[p], kPredColor));
    const std::string name = figure_name(s);
    write_png(req.out / "figures" / name, hconcat(panels));
    figures.push_back(name);
  }
  nlohmann::json columns = nlohmann::json::array({"image", "ground truth"});
  for (const auto& run : runs) columns.push_back(model_label(run.config.model) + "/" + filter_label(run.config.model));
  const nlohmann::json result = {{"out", req.out.string()}, {"rows", row_order.size()},
                                 {"figures", figures},      {"panel_columns", columns}};
  write_text(req.out / "report.json", result.dump(2) + "\n");
  return result;
}

}  // namespace nerd
