#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "nerd/nerd.h"

namespace fs = std::filesystem;

namespace {

std::string take(char* s) {
  std::string out = s ? s : "";
  nerd_free_string(s);
  return out;
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("nerd_capi_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

const char* kModel = R"({"filters": [2, 4, 4, 4, 4], "feature_channels": 3, "head": "nerdm"})";

}  // namespace

TEST_SUITE("capi") {
  TEST_CASE("version and status names") {
    CHECK(std::string(nerd_version()) == "1.0.0");
    CHECK(std::string(nerd_status_name(NERD_OK)) == "ok");
    CHECK(std::string(nerd_status_name(NERD_E_CONFIG)) == "config");
    CHECK(std::string(nerd_status_name(static_cast<nerd_status>(42))) == "unknown");
  }

  TEST_CASE("model lifecycle") {
    const auto dir = scratch("model");
    nerd_model* m = nullptr;
    REQUIRE(nerd_model_create(kModel, 3, &m) == NERD_OK);
    size_t n = 0;
    CHECK(nerd_model_param_count(m, &n) == NERD_OK);
    CHECK(n > 0);
    char* cfg = nullptr;
    CHECK(nerd_model_config(m, &cfg) == NERD_OK);
    CHECK(nlohmann::json::parse(take(cfg))["head"] == "nerdm");

    std::vector<float> img(2 * 16 * 16, 0.25f), a(2 * 16 * 16), b(2 * 16 * 16);
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i % 7) / 7.0f;
    CHECK(nerd_model_predict(m, img.data(), 2, 1, 16, 16, a.data()) == NERD_OK);
    CHECK(nerd_model_predict(m, img.data(), 2, 1, 10, 16, a.data()) == NERD_E_SHAPE);
    CHECK(std::string(nerd_last_error()).find("height") != std::string::npos);
    CHECK(nerd_model_predict(m, img.data(), 2, 1, 16, 16, a.data()) == NERD_OK);

    const std::string path = (dir / "m.ckpt").string();
    CHECK(nerd_model_save(m, path.c_str()) == NERD_OK);
    nerd_model* loaded = nullptr;
    REQUIRE(nerd_model_load(path.c_str(), &loaded) == NERD_OK);
    CHECK(nerd_model_predict(loaded, img.data(), 2, 1, 16, 16, b.data()) == NERD_OK);
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
    nerd_model_free(loaded);
    nerd_model_free(m);
    nerd_model_free(nullptr);
  }

  TEST_CASE("errors map to status codes") {
    nerd_model* m = nullptr;
    CHECK(nerd_model_create(R"({"preset": "giant"})", 0, &m) == NERD_E_CONFIG);
    CHECK(m == nullptr);
    CHECK(std::string(nerd_last_error()).find("giant") != std::string::npos);
    CHECK(nerd_model_create("{not json", 0, &m) == NERD_E_CONFIG);
    CHECK(nerd_model_create(kModel, 0, nullptr) == NERD_E_INVALID_ARGUMENT);
    CHECK(nerd_model_load("/nonexistent/x.ckpt", &m) == NERD_E_IO);
    CHECK(nerd_model_create(R"({"preset": "low", "head": "nerdc", "classifier_hidden": [4]})", 0, &m) ==
          NERD_E_CONFIG);
  }

  TEST_CASE("metrics and schedule") {
    const uint8_t p[4] = {1, 1, 1, 1};
    const uint8_t g[4] = {0, 1, 1, 1};
    double d = 0;
    CHECK(nerd_dice(p, g, 1, 2, 2, &d) == NERD_OK);
    CHECK(d == doctest::Approx(6.0 / 7.0));
    const double spacing[3] = {1, 1, 1};
    char* out = nullptr;
    CHECK(nerd_evaluate_masks(p, g, 1, 2, 2, spacing, 8, 2, &out) == NERD_OK);
    const auto j = nlohmann::json::parse(take(out));
    CHECK(j["counts"]["gl"] == 1);
    CHECK(j["lfpr"] == 0.0);
    CHECK(nerd_evaluate_masks(p, g, 1, 2, 2, spacing, 5, 2, &out) == NERD_E_INVALID_ARGUMENT);
    double lr = 0;
    CHECK(nerd_lr_at(nullptr, 63, &lr) == NERD_OK);
    CHECK(lr == 2.5e-4);
    CHECK(nerd_lr_at(R"({"epochs": 10})", 10, &lr) == NERD_E_INVALID_ARGUMENT);
  }

  TEST_CASE("synth, train, evaluate and diagnose through the C API") {
    const auto dir = scratch("pipeline");
    std::vector<std::string> lines;
    nerd_set_log_callback([](const char* line, void* user) { static_cast<std::vector<std::string>*>(user)->push_back(line); },
                          &lines);
    const nlohmann::json synth = {{"height", 32}, {"width", 32}, {"band", 6},  {"radius_min", 2}, {"radius_max", 3},
                                  {"blobs_min", 2}, {"blobs_max", 3}, {"train", 6}, {"val", 2}, {"test", 2}};
    char* out = nullptr;
    REQUIRE(nerd_synth(synth.dump().c_str(), (dir / "data").string().c_str(), &out) == NERD_OK);
    CHECK(nlohmann::json::parse(take(out))["written"] == 11);

    const nlohmann::json exp = {{"dataset", {{"dir", "data"}}},
                                {"model", nlohmann::json::parse(kModel)},
                                {"train", {{"epochs", 2}, {"batch_size", 3}}},
                                {"output", "runs"},
                                {"seeds", {1}}};
    REQUIRE(nerd_train(exp.dump().c_str(), dir.string().c_str(), -1, &out) == NERD_OK);
    take(out);
    CHECK(fs::exists(dir / "runs" / "seed_1" / "metrics" / "metrics.csv"));
    CHECK(!lines.empty());
    nerd_set_log_callback(nullptr, nullptr);

    const nlohmann::json eval = {{"checkpoint", "runs/seed_1/checkpoints/best.ckpt"},
                                 {"dataset", {{"dir", "data"}}},
                                 {"out", "eval"}};
    CHECK(nerd_evaluate(eval.dump().c_str(), dir.string().c_str(), &out) == NERD_OK);
    take(out);
    CHECK(fs::exists(dir / "eval" / "metrics.csv"));

    const nlohmann::json diag = {{"model", nlohmann::json::parse(kModel)}, {"dataset", {{"dir", "data"}}},
                                 {"split", "train"}, {"band", 4}, {"out", "diag"}};
    CHECK(nerd_diagnose(diag.dump().c_str(), dir.string().c_str(), &out) == NERD_OK);
    const auto dj = nlohmann::json::parse(take(out));
    CHECK(dj.contains("shift_score"));

    const nlohmann::json bad = {{"runs", {"missing"}}, {"out", "rep"}};
    CHECK(nerd_report(bad.dump().c_str(), dir.string().c_str(), &out) == NERD_E_IO);
  }
}
