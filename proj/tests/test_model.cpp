#include <fstream>
#include <set>

#include "doctest.h"
#include "nerd/error.hpp"
#include "nerd/model.hpp"
#include "support.hpp"

using namespace nerd;

namespace {

ModelConfig small(HeadKind kind) {
  ModelConfig c;
  c.backbone.filters = {2, 4, 4, 4, 4};
  c.backbone.in_channels = 2;
  c.backbone.feature_channels = 3;
  c.head.kind = kind;
  c.head.calibrator_hidden = {6};
  return c;
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("config json round trip and errors") {
    const auto c = small(HeadKind::NerdM);
    const auto back = model_config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
    CHECK(model_config_from_json({{"preset", "high"}}).backbone.filters[4] == 512);
    CHECK_THROWS_AS(model_config_from_json({{"preset", "huge"}}), ConfigError);
    CHECK_THROWS_AS(model_config_from_json({{"preset", "low"}, {"bogus", 1}}), ConfigError);
    CHECK_THROWS_AS(model_config_from_json({{"preset", "low"}, {"head", "nerdz"}}), ConfigError);
  }

  TEST_CASE("parameter names are unique and counts add up") {
    for (auto kind : {HeadKind::Baseline, HeadKind::NerdM, HeadKind::NerdC}) {
      SegmentationModel<float> m(small(kind), 1);
      const auto params = m.params();
      std::set<std::string> names;
      for (auto* p : params) names.insert(p->name);
      CHECK(names.size() == params.size());
      CHECK(m.param_count() == m.backbone().param_count() + m.head().param_count());
    }
  }

  TEST_CASE("checkpoint round trip reproduces the logits") {
    const auto dir = test::scratch_dir("model");
    SegmentationModel<float> m(small(HeadKind::NerdC), 3);
    Rng rng(3);
    for (auto* p : m.params())
      for (auto& v : p->value) v = static_cast<float>(rng.uniform(-0.5, 0.5));
    save_model(m, dir / "m.ckpt");
    auto loaded = load_model<float>(dir / "m.ckpt");
    CHECK(to_json(loaded->config()) == to_json(m.config()));
    const auto x = test::random_tensor<float>(2, 2, 16, 16, rng);
    const auto a = m.forward(x), b = loaded->forward(x);
    CHECK(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
    auto as_double = load_model<double>(dir / "m.ckpt");
    CHECK(as_double->param_count() == m.param_count());
  }

  TEST_CASE("loading rejects wrong kinds and corrupt files") {
    const auto dir = test::scratch_dir("model_bad");
    Container c;
    c.kind = "something-else";
    write_container(dir / "x.ckpt", c);
    CHECK_THROWS(load_model<float>(dir / "x.ckpt"));
    std::ofstream(dir / "junk.ckpt") << "not a container";
    CHECK_THROWS_AS(load_model<float>(dir / "junk.ckpt"), Error);
    CHECK_THROWS_AS(load_model<float>(dir / "missing.ckpt"), IoError);
  }

  TEST_CASE("snapshot and restore") {
    SegmentationModel<double> m(small(HeadKind::Baseline), 0);
    const auto params = m.params();
    const auto snap = snapshot(params);
    for (auto* p : params) std::fill(p->value.begin(), p->value.end(), 0.0);
    restore(params, snap);
    CHECK(snapshot(params) == snap);
  }

  TEST_CASE("model gradient reaches the input layer") {
    SegmentationModel<double> m(small(HeadKind::NerdM), 5);
    Rng rng(5);
    const auto x = test::random_tensor<double>(2, 1, 16, 16, rng);
    const auto r = test::random_tensor<double>(1, 1, 16, 16, rng);
    zero_grads(m.params());
    m.forward(x);
    m.backward(r);
    double norm = 0;
    for (double g : m.params().front()->grad) norm += g * g;
    CHECK(norm > 0);
  }
}
