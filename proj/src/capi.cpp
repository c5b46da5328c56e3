#include "nerd/nerd.h"

#include <cstring>
#include <memory>
#include <mutex>
#include <new>
#include <string>

#include "nerd/error.hpp"
#include "nerd/experiment.hpp"
#include "nerd/json_util.hpp"

struct nerd_model {
  std::unique_ptr<nerd::SegmentationModel<float>> impl;
};

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

thread_local std::string g_last_error;
std::mutex g_log_mutex;
nerd_log_fn g_log_fn = nullptr;
void* g_log_user = nullptr;

nerd_status to_status(nerd::ErrorCode code) { return static_cast<nerd_status>(static_cast<int>(code)); }

template <class F>
nerd_status guarded(F&& f) {
  g_last_error.clear();
  try {
    f();
    return NERD_OK;
  } catch (const nerd::Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return NERD_E_INTERNAL;
  } catch (const fs::filesystem_error& e) {
    g_last_error = e.what();
    return NERD_E_IO;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return NERD_E_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (!p) throw nerd::InvalidArgument(std::string(what) + " is NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void emit(char** out, const json& j) {
  if (out) *out = dup_string(j.dump(2));
}

json parse(const char* text, const char* what) {
  require(text, what);
  return nerd::parse_json_text(text, what);
}

fs::path base_of(const char* base_dir) { return base_dir ? fs::path(base_dir) : fs::path(); }

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

nerd::LogFn logger() {
  std::lock_guard lock(g_log_mutex);
  if (!g_log_fn) return {};
  return [fn = g_log_fn, user = g_log_user](const std::string& line) { fn(line.c_str(), user); };
}

nerd::Split split_of(const json& j) {
  return nerd::parse_split(nerd::get_or<std::string>(j, "split", "test", "request"));
}

nerd::DatasetSource dataset_of(const json& j, const fs::path& base) {
  if (!j.contains("dataset")) throw nerd::ConfigError("request: missing 'dataset'");
  return nerd::dataset_source_from_json(j.at("dataset"), base);
}

}  // namespace

extern "C" {

const char* nerd_version(void) { return "1.0.0"; }

const char* nerd_status_name(nerd_status status) {
  if (status == NERD_OK) return "ok";
  if (status < NERD_E_INVALID_ARGUMENT || status > NERD_E_INTERNAL) return "unknown";
  return nerd::error_code_name(static_cast<nerd::ErrorCode>(static_cast<int>(status)));
}

const char* nerd_last_error(void) { return g_last_error.c_str(); }

void nerd_free_string(char* s) { std::free(s); }

void nerd_set_log_callback(nerd_log_fn fn, void* user) {
  std::lock_guard lock(g_log_mutex);
  g_log_fn = fn;
  g_log_user = user;
}

nerd_status nerd_prepare(const char* manifest_path, const char* out_dir, char** result_json) {
  return guarded([&] {
    require(manifest_path, "manifest_path");
    require(out_dir, "out_dir");
    emit(result_json, nerd::cmd_prepare(manifest_path, out_dir));
  });
}

nerd_status nerd_synth(const char* config_json, const char* out_dir, char** result_json) {
  return guarded([&] {
    require(out_dir, "out_dir");
    const nerd::SynthConfig config =
        config_json ? nerd::synth_config_from_json(parse(config_json, "synth config")) : nerd::SynthConfig{};
    config.validate();
    emit(result_json, nerd::cmd_synth(config, out_dir));
  });
}

nerd_status nerd_train(const char* config_json, const char* base_dir, int stop_after_epoch, char** result_json) {
  return guarded([&] {
    const auto config = nerd::experiment_config_from_json(parse(config_json, "experiment config"), base_of(base_dir));
    emit(result_json, nerd::cmd_train(config, logger(), stop_after_epoch));
  });
}

nerd_status nerd_evaluate(const char* request_json, const char* base_dir, char** result_json) {
  return guarded([&] {
    const json j = parse(request_json, "evaluate request");
    nerd::require_keys(j, {"checkpoint", "predictions", "dataset", "split", "evaluation", "out"}, "evaluate");
    const fs::path base = base_of(base_dir);
    nerd::EvaluateRequest req;
    if (j.contains("checkpoint")) req.checkpoint = resolve(base, j.at("checkpoint").get<std::string>());
    if (j.contains("predictions")) req.predictions = resolve(base, j.at("predictions").get<std::string>());
    req.dataset = dataset_of(j, base);
    req.split = split_of(j);
    if (j.contains("evaluation")) req.conventions = nerd::eval_conventions_from_json(j.at("evaluation"));
    req.out = resolve(base, nerd::get_or<std::string>(j, "out", "", "evaluate"));
    emit(result_json, nerd::cmd_evaluate(req));
  });
}

nerd_status nerd_diagnose(const char* request_json, const char* base_dir, char** result_json) {
  return guarded([&] {
    const json j = parse(request_json, "diagnose request");
    nerd::require_keys(j, {"checkpoint", "model", "seed", "dataset", "split", "band", "colormap", "out"}, "diagnose");
    const fs::path base = base_of(base_dir);
    nerd::DiagnoseRequest req;
    if (j.contains("checkpoint")) req.checkpoint = resolve(base, j.at("checkpoint").get<std::string>());
    if (j.contains("model")) req.model = nerd::model_config_from_json(j.at("model"));
    req.seed = nerd::get_or(j, "seed", req.seed, "diagnose");
    req.dataset = dataset_of(j, base);
    req.split = split_of(j);
    req.band = nerd::get_or(j, "band", req.band, "diagnose");
    req.colormap = nerd::get_or(j, "colormap", req.colormap, "diagnose");
    req.out = resolve(base, nerd::get_or<std::string>(j, "out", "", "diagnose"));
    emit(result_json, nerd::cmd_diagnose(req));
  });
}

nerd_status nerd_report(const char* request_json, const char* base_dir, char** result_json) {
  return guarded([&] {
    const json j = parse(request_json, "report request");
    nerd::require_keys(j, {"runs", "out", "slices"}, "report");
    const fs::path base = base_of(base_dir);
    nerd::ReportRequest req;
    for (const auto& r : nerd::get_or<std::vector<std::string>>(j, "runs", {}, "report"))
      req.runs.push_back(resolve(base, r));
    req.out = resolve(base, nerd::get_or<std::string>(j, "out", "", "report"));
    req.slices = nerd::get_or(j, "slices", req.slices, "report");
    emit(result_json, nerd::cmd_report(req));
  });
}

nerd_status nerd_model_create(const char* config_json, uint64_t seed, nerd_model** out) {
  return guarded([&] {
    require(out, "out");
    *out = nullptr;
    const auto config = nerd::model_config_from_json(parse(config_json, "model config"));
    auto m = std::make_unique<nerd_model>();
    m->impl = std::make_unique<nerd::SegmentationModel<float>>(config, seed);
    *out = m.release();
  });
}

nerd_status nerd_model_load(const char* path, nerd_model** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = nullptr;
    auto m = std::make_unique<nerd_model>();
    m->impl = nerd::load_model<float>(path);
    *out = m.release();
  });
}

nerd_status nerd_model_save(const nerd_model* model, const char* path) {
  return guarded([&] {
    require(model, "model");
    require(path, "path");
    nerd::save_model(*model->impl, path);
  });
}

void nerd_model_free(nerd_model* model) { delete model; }

nerd_status nerd_model_param_count(const nerd_model* model, size_t* out) {
  return guarded([&] {
    require(model, "model");
    require(out, "out");
    *out = model->impl->param_count();
  });
}

nerd_status nerd_model_config(const nerd_model* model, char** config_json) {
  return guarded([&] {
    require(model, "model");
    require(config_json, "config_json");
    emit(config_json, nerd::to_json(model->impl->config()));
  });
}

nerd_status nerd_model_predict(nerd_model* model, const float* images, int batch, int channels, int height,
                               int width, float* logits) {
  return guarded([&] {
    require(model, "model");
    require(images, "images");
    require(logits, "logits");
    if (batch < 1 || channels < 1 || height < 1 || width < 1)
      throw nerd::InvalidArgument("batch, channels, height and width must be positive");
    nerd::Tensor<float> t(channels, batch, height, width);
    const std::size_t pix = t.pixels();
    for (int b = 0; b < batch; ++b)
      for (int c = 0; c < channels; ++c)
        std::memcpy(t.plane(c, b), images + (static_cast<std::size_t>(b) * channels + c) * pix, pix * sizeof(float));
    const auto out = model->impl->forward(t);
    std::memcpy(logits, out.data(), out.size() * sizeof(float));
  });
}

nerd_status nerd_dice(const uint8_t* pred, const uint8_t* gt, int depth, int height, int width, double* out) {
  return guarded([&] {
    require(pred, "pred");
    require(gt, "gt");
    require(out, "out");
    if (depth < 1 || height < 1 || width < 1) throw nerd::InvalidArgument("mask dimensions must be positive");
    const std::size_t n = static_cast<std::size_t>(depth) * height * width;
    nerd::Mask3D p{depth, height, width, {pred, pred + n}};
    nerd::Mask3D g{depth, height, width, {gt, gt + n}};
    *out = nerd::dice(p, g);
  });
}

nerd_status nerd_evaluate_masks(const uint8_t* pred, const uint8_t* gt, int depth, int height, int width,
                                const double spacing[3], int connectivity, int ldice_factor, char** result_json) {
  return guarded([&] {
    require(pred, "pred");
    require(gt, "gt");
    require(spacing, "spacing");
    require(result_json, "result_json");
    if (depth < 1 || height < 1 || width < 1) throw nerd::InvalidArgument("mask dimensions must be positive");
    const std::size_t n = static_cast<std::size_t>(depth) * height * width;
    nerd::Mask3D p{depth, height, width, {pred, pred + n}};
    nerd::Mask3D g{depth, height, width, {gt, gt + n}};
    nerd::EvalConventions conv;
    conv.connectivity = connectivity;
    conv.ldice_factor = ldice_factor;
    try {
      conv.validate();
    } catch (const nerd::ConfigError& e) {
      throw nerd::InvalidArgument(e.what());
    }
    const auto m = nerd::evaluate_volume("volume", p, g, {spacing[0], spacing[1], spacing[2]}, conv);
    json j = {{"conventions", nerd::to_json(conv)},
              {"counts", {{"tp_gt", m.counts.tp_gt}, {"tp_pred", m.counts.tp_pred}, {"gl", m.counts.gl},
                          {"pl", m.counts.pl}}}};
    auto num = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    j["dice"] = m.dice;
    j["jaccard"] = m.jaccard;
    j["ldice"] = num(m.lesion.ldice);
    j["ltpr"] = num(m.lesion.ltpr);
    j["lppv"] = num(m.lesion.lppv);
    j["lfpr"] = num(m.lesion.lfpr);
    j["hd"] = num(m.hd);
    j["hd95"] = num(m.hd95);
    j["asd"] = num(m.asd);
    emit(result_json, j);
  });
}

nerd_status nerd_lr_at(const char* train_config_json, int epoch, double* out) {
  return guarded([&] {
    require(out, "out");
    const nerd::TrainConfig config = train_config_json
                                         ? nerd::train_config_from_json(parse(train_config_json, "train config"))
                                         : nerd::TrainConfig{};
    *out = nerd::lr_at(epoch, config);
  });
}

}  // extern "C"
