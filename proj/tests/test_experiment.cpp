#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "nerd/error.hpp"
#include "nerd/experiment.hpp"
#include "nerd/volume_io.hpp"
#include "support.hpp"

using namespace nerd;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int exit = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Run run_cli(const std::string& args, const fs::path& dir) {
  const fs::path err = dir / "stderr.txt";
  const std::string cmd = std::string("'") + NERD_CLI_PATH + "' " + args + " 2>'" + err.string() + "'";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.exit = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = slurp(err);
  return r;
}

json tiny_synth_json() {
  return {{"height", 32}, {"width", 32}, {"band", 6}, {"radius_min", 2}, {"radius_max", 3},
          {"blobs_min", 2}, {"blobs_max", 3}, {"train", 6}, {"val", 2}, {"test", 2}, {"seed", 4}};
}

ExperimentConfig tiny_experiment(const fs::path& out, HeadKind head) {
  ExperimentConfig c;
  c.dataset.synth = synth_config_from_json(tiny_synth_json());
  c.model.backbone.filters = {2, 4, 4, 4, 4};
  c.model.backbone.feature_channels = 3;
  c.model.head.kind = head;
  c.model.head.calibrator_hidden = {6};
  c.train.epochs = 1;
  c.train.batch_size = 3;
  c.output = out;
  c.figure_slices = 1;
  return c;
}

// Last stderr line parsed as the machine-readable error record.
json error_line(const std::string& err) {
  std::string last;
  std::istringstream in(err);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) last = line;
  return json::parse(last);
}

}  // namespace

TEST_SUITE("experiment") {
  TEST_CASE("invalid head combination fails before any training") {
    const auto dir = test::scratch_dir("exp_invalid");
    auto c = tiny_experiment(dir / "runs", HeadKind::NerdC);
    c.model.head.classifier_hidden = {4};
    CHECK_THROWS_AS(cmd_train(c), ConfigError);
    CHECK_FALSE(fs::exists(dir / "runs"));
  }

  TEST_CASE("three seeds give three runs and a summary") {
    const auto dir = test::scratch_dir("exp_seeds");
    auto c = tiny_experiment(dir / "runs", HeadKind::NerdM);
    c.seeds = {0, 1, 2};
    std::vector<std::string> log;
    cmd_train(c, [&](const std::string& l) { log.push_back(l); });
    for (int s = 0; s < 3; ++s) {
      const auto run = seed_dir(c.output, s);
      CHECK(fs::exists(run / "history.csv"));
      CHECK(fs::exists(run / "config.json"));
      CHECK(fs::exists(run / "checkpoints" / "best.ckpt"));
      CHECK(fs::exists(run / "metrics" / "metrics.csv"));
      CHECK(fs::exists(run / "figures"));
      const auto frozen = json::parse(slurp(run / "config.json"));
      CHECK(frozen["seeds"] == json::array({s}));
    }
    const std::string summary = slurp(c.output / "summary.csv");
    std::istringstream in(summary);
    std::vector<std::string> lines;
    for (std::string l; std::getline(in, l);) lines.push_back(l);
    REQUIRE(lines.size() == 5);
    CHECK(lines[4].rfind("mean (std)", 0) == 0);
    CHECK(!log.empty());

    // A second report over the same runs yields one row per model/filter pair.
    auto other = tiny_experiment(dir / "base", HeadKind::Baseline);
    cmd_train(other);
    ReportRequest rep;
    rep.runs = {c.output, other.output};
    rep.out = dir / "report";
    rep.slices = 1;
    cmd_report(rep);
    const std::string table = slurp(rep.out / "comparison.csv");
    CHECK(std::count(table.begin(), table.end(), '\n') == 3);
    CHECK(table.find("nerdm,2-4-4-4-4,3,") != std::string::npos);
    CHECK(table.find("baseline,2-4-4-4-4,1,") != std::string::npos);
    CHECK(fs::exists(rep.out / "figures"));
  }

  TEST_CASE("evaluating oracle predictions gives perfect scores") {
    const auto dir = test::scratch_dir("exp_oracle");
    const auto data = dir / "data";
    cmd_synth(synth_config_from_json(tiny_synth_json()), data);
    const Dataset d = read_dataset(data);
    const auto preds = dir / "preds";
    for (const auto* v : d.volumes_in(Split::Test))
      for (const auto& s : v->slices) {
        const auto p = preds / slice_relpath("test", v->id, s.slice_index, ".mask");
        fs::create_directories(p.parent_path());
        const auto bytes = encode_mask(s.label, s.height, s.width);
        std::ofstream(p, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
      }
    EvaluateRequest req;
    req.predictions = preds;
    req.dataset.dir = data;
    req.out = dir / "eval";
    cmd_evaluate(req);
    const auto j = json::parse(slurp(dir / "eval" / "metrics.json"));
    for (const auto& v : j["volumes"]) {
      CHECK(v["dice"] == 100.0);
      CHECK((v["lfpr"] == 0.0 || v["lfpr"].is_null()));
    }
  }

  TEST_CASE("cli synth is idempotent and validates") {
    const auto dir = test::scratch_dir("cli_synth");
    std::ofstream(dir / "synth.json") << tiny_synth_json().dump();
    const std::string args = "synth --config '" + (dir / "synth.json").string() + "' --out '" + (dir / "data").string() + "'";
    const Run first = run_cli(args, dir);
    CHECK(first.exit == 0);
    CHECK(json::parse(first.out)["written"] == 11);
    const Run second = run_cli(args, dir);
    CHECK(second.exit == 0);
    CHECK(json::parse(second.out)["skipped"] == 11);

    auto bad = tiny_synth_json();
    bad["band"] = 20;
    std::ofstream(dir / "bad.json") << bad.dump();
    const Run r = run_cli("synth --config '" + (dir / "bad.json").string() + "' --out '" + (dir / "x").string() + "'", dir);
    CHECK(r.exit == 1);
    CHECK(error_line(r.err)["error"]["code"] == "config");
  }

  TEST_CASE("cli error surface") {
    const auto dir = test::scratch_dir("cli_errors");
    Run r = run_cli("report '" + (dir / "nope").string() + "' --out '" + (dir / "rep").string() + "'", dir);
    CHECK(r.exit == 1);
    CHECK(error_line(r.err)["error"]["exit"] == 1);
    r = run_cli("synth --out '" + (dir / "d").string() + "' --device cuda", dir);
    CHECK(r.exit == 1);
    CHECK(error_line(r.err)["error"]["message"].get<std::string>().find("cuda") != std::string::npos);
    r = run_cli("train --bogus", dir);
    CHECK(r.exit == 1);
    CHECK(error_line(r.err)["error"]["code"] == "usage");
    r = run_cli("--help", dir);
    CHECK(r.exit == 0);
    CHECK(r.out.find("diagnose") != std::string::npos);
  }

  TEST_CASE("cli prepare is idempotent and names missing files") {
    const auto dir = test::scratch_dir("cli_prepare");
    Volume v;
    v.depth = 2;
    v.height = 20;
    v.width = 24;
    for (int i = 0; i < 2 * 20 * 24; ++i) v.values.push_back(i % 17);
    Volume label = v;
    for (auto& x : label.values) x = x > 12 ? 1 : 0;
    write_nifti(dir / "t1.nii.gz", v);
    write_nifti(dir / "flair.nii.gz", v);
    write_nifti(dir / "label.nii.gz", label);
    json manifest = {{"modalities", {"T1", "FLAIR"}},
                     {"crop", {16, 16}},
                     {"volumes",
                      {{{"id", "a"}, {"split", "train"}, {"images", {{"T1", "t1.nii.gz"}, {"FLAIR", "flair.nii.gz"}}},
                        {"label", "label.nii.gz"}}}}};
    std::ofstream(dir / "manifest.json") << manifest.dump();
    const std::string args = "prepare '" + (dir / "manifest.json").string() + "' --out '" + (dir / "out").string() + "'";
    Run r = run_cli(args, dir);
    CHECK(r.exit == 0);
    const Dataset d = read_dataset(dir / "out", true);
    CHECK(d.channels == 2);
    CHECK(d.height == 16);
    r = run_cli(args, dir);
    CHECK(r.exit == 0);
    CHECK(json::parse(r.out)["written"] == 0);

    manifest["volumes"][0]["images"]["FLAIR"] = "absent.nii.gz";
    std::ofstream(dir / "manifest.json") << manifest.dump();
    r = run_cli(args, dir);
    CHECK(r.exit == 1);
    CHECK(r.err.find("absent.nii.gz") != std::string::npos);
  }
}
