#include "doctest.h"
#include "nerd/backbone.hpp"
#include "nerd/error.hpp"
#include "nerd/model.hpp"
#include "support.hpp"

using namespace nerd;

namespace {

// Layer-by-layer count written out independently of the implementation.
std::size_t ledger(int in, std::array<int, 5> f, int c, bool norm) {
  auto conv3 = [&](int i, int o) { return std::size_t(9) * i * o + (norm ? 2 * o : o); };
  auto dbl = [&](int i, int o) { return conv3(i, o) + conv3(o, o); };
  std::size_t n = dbl(in, f[0]);
  for (int i = 1; i < 5; ++i) n += dbl(f[i - 1], f[i]);
  for (int i = 3; i >= 0; --i) n += std::size_t(f[i + 1]) * f[i] + f[i] + dbl(2 * f[i], f[i]);
  return n + std::size_t(f[0]) * c + c;
}

}  // namespace

TEST_SUITE("backbone") {
  TEST_CASE("presets") {
    CHECK(preset_filters("low") == std::array<int, 5>{16, 32, 64, 128, 256});
    CHECK(preset_filters("high") == std::array<int, 5>{32, 64, 128, 256, 512});
    CHECK_THROWS_AS(preset_filters("medium"), ConfigError);
  }

  TEST_CASE("parameter count equals the layer ledger") {
    BackboneConfig cfg = low_preset(2);
    cfg.feature_channels = 16;
    Backbone<float> low(cfg, 0);
    CHECK(low.param_count() == ledger(2, cfg.filters, 16, true));
    CHECK(param_count(low) == low.param_count());

    BackboneConfig plain;
    plain.filters = {3, 4, 5, 6, 7};
    plain.feature_channels = 5;
    plain.norm = NormKind::None;
    Backbone<float> p(plain, 0);
    CHECK(p.param_count() == ledger(1, plain.filters, 5, false));

    Backbone<float> high(high_preset(2), 0);
    CHECK(high.param_count() > low.param_count());
  }

  TEST_CASE("invalid configs") {
    BackboneConfig cfg;
    cfg.filters = {8, 4, 8, 8, 8};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.filters = {0, 4, 8, 8, 8};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = BackboneConfig{};
    cfg.in_channels = 0;
    CHECK_THROWS_AS(Backbone<float>(cfg, 0), ConfigError);
  }

  TEST_CASE("same seed gives identical parameters and outputs") {
    BackboneConfig cfg;
    cfg.filters = {4, 4, 8, 8, 8};
    Backbone<float> a(cfg, 42), b(cfg, 42), c(cfg, 43);
    const auto pa = a.params(), pb = b.params(), pc = c.params();
    bool same = true, differs = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
      same = same && pa[i]->value == pb[i]->value && pa[i]->name == pb[i]->name;
      differs = differs || pa[i]->value != pc[i]->value;
    }
    CHECK(same);
    CHECK(differs);
    Rng rng(1);
    const auto x = test::random_tensor<float>(1, 2, 32, 32, rng);
    const auto ya = a.forward(x), yb = b.forward(x);
    CHECK(std::equal(ya.values().begin(), ya.values().end(), yb.values().begin()));
  }

  TEST_CASE("spatial size is preserved") {
    BackboneConfig cfg;
    cfg.filters = {2, 2, 4, 4, 4};
    cfg.feature_channels = 3;
    Backbone<float> net(cfg, 0);
    for (int h : {32, 48, 64, 160})
      for (int w : {32, 48, 64, 224}) {
        const auto y = net.forward(Tensor<float>(1, 1, h, w, 0.5f));
        CHECK(y.height() == h);
        CHECK(y.width() == w);
        CHECK(y.channels() == 3);
      }
  }

  TEST_CASE("WMH crop through the low preset") {
    Backbone<float> net(low_preset(2), 0);
    Rng rng(2);
    const auto y = net.forward(test::random_tensor<float>(2, 1, 160, 224, rng, 0, 1));
    CHECK(y.height() == 160);
    CHECK(y.width() == 224);
    CHECK(y.channels() == 16);
  }

  TEST_CASE("zeros give a finite output") {
    Backbone<float> net(low_preset(1), 0);
    const auto y = net.forward(Tensor<float>(1, 1, 64, 64));
    bool finite = true;
    for (float v : y.values()) finite = finite && std::isfinite(v);
    CHECK(finite);
  }

  TEST_CASE("indivisible sizes name the axis") {
    BackboneConfig cfg;
    cfg.filters = {2, 2, 2, 2, 2};
    Backbone<float> net(cfg, 0);
    try {
      net.forward(Tensor<float>(1, 1, 40, 32));
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      CHECK(std::string(e.what()).find("height") != std::string::npos);
    }
    try {
      net.forward(Tensor<float>(1, 1, 32, 20));
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      CHECK(std::string(e.what()).find("width") != std::string::npos);
    }
    CHECK_THROWS_AS(net.forward(Tensor<float>(2, 1, 32, 32)), ShapeError);
  }

  TEST_CASE("backbone gradients match finite differences") {
    BackboneConfig cfg;
    cfg.filters = {2, 2, 2, 2, 2};
    Backbone<double> net(cfg, 7);
    Rng rng(8);
    const auto x = test::random_tensor<double>(1, 2, 32, 32, rng);
    const auto y0 = net.forward(x);
    const auto r = test::random_tensor<double>(y0.channels(), y0.batch(), y0.height(), y0.width(), rng);
    auto run = [&](bool backward) {
      const auto y = net.forward(x);
      if (backward) net.backward(r);
      return test::dot(y, r);
    };
    CHECK(test::check_params(net.params(), run) < 1e-3);
  }
}
