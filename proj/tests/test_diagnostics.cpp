#include <fstream>
#include <sstream>

#include "doctest.h"
#include "nerd/diagnostics.hpp"
#include "nerd/error.hpp"
#include "nerd/image.hpp"
#include "support.hpp"

using namespace nerd;

namespace {

SpatialStats constant_stats(int c, int h, int w, double mean, double var) {
  SpatialStats s;
  s.channels = c;
  s.height = h;
  s.width = w;
  s.count = 4;
  s.mean.assign(static_cast<std::size_t>(c) * h * w, mean);
  s.m2.assign(s.mean.size(), var * 4);
  return s;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("diagnostics") {
  TEST_CASE("identical samples have zero spread") {
    StatsAccumulator acc(2, 3, 3);
    Rng rng(1);
    const auto x = test::random_vector(18, rng);
    acc.add_sample(x);
    acc.add_sample(x);
    for (double s : acc.stats().std_map()) CHECK(s == 0.0);
    CHECK(acc.stats().mean == x);
  }

  TEST_CASE("two-point statistics") {
    StatsAccumulator acc(1, 1, 2);
    acc.add_sample(std::vector<double>{1.0, 5.0});
    acc.add_sample(std::vector<double>{3.0, -1.0});
    CHECK(acc.stats().mean == std::vector<double>{2.0, 2.0});
    CHECK(acc.stats().std_map() == std::vector<double>{1.0, 3.0});
    CHECK(acc.stats().count == 2);
    CHECK_THROWS_AS(acc.add_sample(std::vector<double>{1.0}), ShapeError);
  }

  TEST_CASE("order, sharding and a two-pass oracle") {
    Rng rng(7);
    std::vector<std::vector<double>> samples;
    for (int i = 0; i < 50; ++i) samples.push_back(test::random_vector(3 * 4 * 5, rng, -10, 30));
    StatsAccumulator fwd(3, 4, 5), rev(3, 4, 5), left(3, 4, 5), right(3, 4, 5);
    for (int i = 0; i < 50; ++i) {
      fwd.add_sample(samples[i]);
      rev.add_sample(samples[49 - i]);
      (i < 17 ? left : right).add_sample(samples[i]);
    }
    left.merge(right);
    const auto oracle_mean = [&](std::size_t k) {
      double s = 0;
      for (const auto& x : samples) s += x[k];
      return s / 50;
    };
    for (std::size_t k = 0; k < 60; ++k) {
      const double m = oracle_mean(k);
      double v = 0;
      for (const auto& x : samples) v += (x[k] - m) * (x[k] - m);
      const double sd = std::sqrt(v / 50);
      for (const auto* acc : {&fwd, &rev, &left}) {
        CHECK(std::abs(acc->stats().mean[k] - m) <= 1e-10 * std::abs(m));
        CHECK(std::abs(acc->stats().std_map()[k] - sd) <= 1e-10 * sd);
      }
    }
  }

  TEST_CASE("feature_stats over a backbone") {
    BackboneConfig cfg;
    cfg.filters = {2, 2, 2, 2, 2};
    cfg.feature_channels = 3;
    Backbone<double> net(cfg, 0);
    SliceSample a;
    a.height = a.width = 16;
    a.channels = 1;
    a.image.assign(256, 0.5f);
    a.label.assign(256, 0);
    SliceSample b = a;
    const auto same = feature_stats(net, {&a, &b});
    for (double s : same.std_map()) CHECK(s == 0.0);
    CHECK(same.channels == 3);
    CHECK_THROWS_AS(feature_stats(net, {&a}), InvalidArgument);
    SliceSample c = a;
    c.height = c.width = 32;
    c.image.assign(1024, 0.1f);
    CHECK_THROWS_AS(feature_stats(net, {&a, &c}), ShapeError);
  }

  TEST_CASE("shift score examples") {
    CHECK(shift_score(constant_stats(2, 16, 16, 3.0, 1.0), 4) == 0.0);
    SpatialStats ind = constant_stats(1, 16, 16, 0.0, 1.0);
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) ind.mean[y * 16 + x] = in_band(y, x, 16, 16, 4) ? 1.0 : 0.0;
    CHECK(shift_score(ind, 4) == doctest::Approx(1.0 / (1.0 + 1e-8)).epsilon(1e-15));
    CHECK(control_score(ind, 4) == 0.0);
    SpatialStats shifted = ind;
    for (auto& m : shifted.mean) m += 17.0;
    CHECK(shift_score(shifted, 4) == doctest::Approx(shift_score(ind, 4)).epsilon(1e-12));
    CHECK(in_band(0, 5, 16, 16, 1));
    CHECK_FALSE(in_band(1, 5, 16, 16, 1));
    CHECK_THROWS_AS(shift_score(ind, 8), InvalidArgument);
    CHECK_THROWS_AS(shift_score(ind, 0), InvalidArgument);
  }

  TEST_CASE("heatmaps") {
    const auto dir = test::scratch_dir("heatmaps");
    Rng rng(3);
    SpatialStats s = constant_stats(3, 8, 10, 0.0, 1.0);
    for (auto& m : s.mean) m = rng.uniform();
    const auto files = export_heatmaps(s, dir / "a");
    CHECK(files.size() == 6);
    CHECK(std::filesystem::exists(dir / "a" / "colorbar.json"));
    export_heatmaps(s, dir / "b");
    for (const auto& f : files) CHECK(slurp(f) == slurp(dir / "b" / f.filename()));
    // std map is constant: one colour everywhere.
    const RgbImage img = read_png(dir / "a" / "std_c00.png");
    CHECK(img.width == 10);
    CHECK(img.height == 8);
    bool uniform = true;
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) uniform = uniform && img.get(y, x) == img.get(0, 0);
    CHECK(uniform);
    CHECK_THROWS_AS(export_heatmaps(s, dir / "c", "jet"), ConfigError);
  }

  TEST_CASE("stats container round trip") {
    SpatialStats s = constant_stats(2, 3, 4, 1.5, 0.25);
    s.mean[5] = -2;
    const auto back = stats_from_container(decode_container(encode_container(stats_to_container(s)), "mem"));
    CHECK(back.mean == s.mean);
    CHECK(back.m2 == s.m2);
    CHECK(back.count == s.count);
  }

  TEST_CASE("white noise through an untrained backbone shows a border shift") {
    BackboneConfig cfg;
    cfg.filters = {4, 8, 8, 8, 8};
    cfg.feature_channels = 4;
    Backbone<double> net(cfg, 0);
    Rng rng(9);
    std::vector<SliceSample> samples(12);
    std::vector<const SliceSample*> refs;
    for (auto& s : samples) {
      s.height = s.width = 32;
      s.channels = 1;
      for (int i = 0; i < 1024; ++i) s.image.push_back(static_cast<float>(rng.normal()));
      s.label.assign(1024, 0);
      refs.push_back(&s);
    }
    const auto stats = feature_stats(net, refs, 4);
    CHECK(shift_score(stats, 4) > control_score(stats, 4));
  }
}
