#include "nerd/diagnostics.hpp"

#include <cmath>
#include <cstdio>

#include "nerd/error.hpp"
#include "nerd/image.hpp"
#include "nerd/io.hpp"
#include "nerd/train.hpp"

namespace nerd {
namespace {

constexpr double kScoreEps = 1e-8;

template <class InA, class InB>
double region_score(const SpatialStats& s, InA in_a, InB in_b) {
  if (s.count == 0) throw InvalidArgument("statistics are empty");
  double total = 0.0;
  const std::size_t plane = static_cast<std::size_t>(s.height) * s.width;
  for (int c = 0; c < s.channels; ++c) {
    double ma = 0, mb = 0, va = 0, vb = 0;
    std::size_t na = 0, nb = 0;
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x) {
        const std::size_t i = c * plane + static_cast<std::size_t>(y) * s.width + x;
        if (in_a(y, x)) {
          ma += s.mean[i];
          va += s.variance_at(i);
          ++na;
        } else if (in_b(y, x)) {
          mb += s.mean[i];
          vb += s.variance_at(i);
          ++nb;
        }
      }
    if (na == 0 || nb == 0) throw InvalidArgument("a comparison region is empty");
    ma /= na;
    mb /= nb;
    const double pooled = std::sqrt((va / na + vb / nb) / 2.0);
    total += std::abs(ma - mb) / (pooled + kScoreEps);
  }
  return total / s.channels;
}

void check_band(const SpatialStats& s, int band) {
  if (band < 1 || 2 * band >= std::min(s.height, s.width))
    throw InvalidArgument("band " + std::to_string(band) + " must satisfy 1 <= band < min(H, W) / 2 for a " +
                          std::to_string(s.height) + "x" + std::to_string(s.width) + " map");
}

}  // namespace

std::vector<double> SpatialStats::std_map() const {
  std::vector<double> out(m2.size());
  for (std::size_t i = 0; i < m2.size(); ++i) out[i] = std::sqrt(variance_at(i));
  return out;
}

StatsAccumulator::StatsAccumulator(int channels, int height, int width) {
  if (channels < 1 || height < 1 || width < 1) throw InvalidArgument("statistics need a non-empty map");
  stats_.channels = channels;
  stats_.height = height;
  stats_.width = width;
  const std::size_t n = static_cast<std::size_t>(channels) * height * width;
  stats_.mean.assign(n, 0.0);
  stats_.m2.assign(n, 0.0);
}

void StatsAccumulator::add_sample(std::span<const double> chw) {
  if (chw.size() != stats_.mean.size()) throw ShapeError("sample does not match the statistics shape");
  ++stats_.count;
  const double n = static_cast<double>(stats_.count);
  for (std::size_t i = 0; i < chw.size(); ++i) {
    const double delta = chw[i] - stats_.mean[i];
    stats_.mean[i] += delta / n;
    stats_.m2[i] += delta * (chw[i] - stats_.mean[i]);
  }
}

template <class T>
void StatsAccumulator::add(const FeatureMap<T>& f) {
  if (f.channels() != stats_.channels || f.height() != stats_.height || f.width() != stats_.width)
    throw ShapeError("feature map " + f.shape_string() + " does not match the statistics shape");
  const std::size_t pix = f.pixels();
  std::vector<double> sample(stats_.mean.size());
  for (int b = 0; b < f.batch(); ++b) {
    for (int c = 0; c < f.channels(); ++c) {
      const T* p = f.plane(c, b);
      for (std::size_t i = 0; i < pix; ++i) sample[c * pix + i] = static_cast<double>(p[i]);
    }
    add_sample(sample);
  }
}

void StatsAccumulator::merge(const StatsAccumulator& other) {
  const auto& o = other.stats_;
  if (o.channels != stats_.channels || o.height != stats_.height || o.width != stats_.width)
    throw ShapeError("cannot merge statistics of different shapes");
  if (o.count == 0) return;
  if (stats_.count == 0) {
    stats_ = o;
    return;
  }
  const double na = static_cast<double>(stats_.count), nb = static_cast<double>(o.count);
  const double n = na + nb;
  for (std::size_t i = 0; i < stats_.mean.size(); ++i) {
    const double delta = o.mean[i] - stats_.mean[i];
    stats_.mean[i] += delta * nb / n;
    stats_.m2[i] += o.m2[i] + delta * delta * na * nb / n;
  }
  stats_.count += o.count;
}

template <class T>
SpatialStats feature_stats(Backbone<T>& backbone, const std::vector<const SliceSample*>& samples, int batch_size) {
  if (samples.size() < 2) throw InvalidArgument("feature statistics need at least two samples");
  if (batch_size < 1) throw InvalidArgument("batch size must be >= 1");
  const auto* first = samples.front();
  for (const auto* s : samples)
    if (s->height != first->height || s->width != first->width || s->channels != first->channels)
      throw ShapeError("samples have heterogeneous sizes (" + std::to_string(first->height) + "x" +
                       std::to_string(first->width) + " vs " + std::to_string(s->height) + "x" +
                       std::to_string(s->width) + ")");
  StatsAccumulator acc(backbone.config().resolved_feature_channels(), first->height, first->width);
  for (std::size_t b0 = 0; b0 < samples.size(); b0 += batch_size) {
    const std::size_t nb = std::min<std::size_t>(batch_size, samples.size() - b0);
    std::vector<const SliceSample*> chunk(samples.begin() + b0, samples.begin() + b0 + nb);
    acc.add(backbone.forward(batch_tensor<T>(chunk)));
  }
  return acc.stats();
}

bool in_band(int y, int x, int height, int width, int band) {
  return std::min({y, x, height - 1 - y, width - 1 - x}) < band;
}

double shift_score(const SpatialStats& s, int band) {
  check_band(s, band);
  return region_score(
      s, [&](int y, int x) { return in_band(y, x, s.height, s.width, band); },
      [&](int y, int x) { return !in_band(y, x, s.height, s.width, band); });
}

double control_score(const SpatialStats& s, int band) {
  check_band(s, band);
  const int mid = s.width / 2;
  return region_score(
      s, [&](int y, int x) { return !in_band(y, x, s.height, s.width, band) && x < mid; },
      [&](int y, int x) { return !in_band(y, x, s.height, s.width, band) && x >= mid; });
}

std::vector<std::filesystem::path> export_heatmaps(const SpatialStats& stats, const std::filesystem::path& dir,
                                                   const std::string& cmap) {
  check_colormap(cmap);
  if (stats.count == 0) throw InvalidArgument("statistics are empty");
  const auto std_values = stats.std_map();
  const std::size_t plane = static_cast<std::size_t>(stats.height) * stats.width;
  std::vector<std::filesystem::path> written;
  nlohmann::json entries = nlohmann::json::array();
  for (int c = 0; c < stats.channels; ++c) {
    for (const char* kind : {"mean", "std"}) {
      const auto& src = std::string(kind) == "mean" ? stats.mean : std_values;
      RgbImage img;
      const auto [lo, hi] = render_scalar(std::span<const double>(src.data() + c * plane, plane), stats.height,
                                          stats.width, cmap, img);
      char name[32];
      std::snprintf(name, sizeof name, "%s_c%02d.png", kind, c);
      write_png(dir / name, img);
      written.push_back(dir / name);
      entries.push_back({{"file", name}, {"channel", c}, {"statistic", kind}, {"min", lo}, {"max", hi}});
    }
  }
  const nlohmann::json bar = {{"colormap", cmap}, {"scaling", "min-max per image"}, {"samples", stats.count},
                              {"images", entries}};
  write_text(dir / "colorbar.json", bar.dump(2) + "\n");
  return written;
}

Container stats_to_container(const SpatialStats& s) {
  Container c;
  c.kind = "nerd-spatial-stats";
  c.meta = {{"count", s.count}, {"channels", s.channels}, {"height", s.height}, {"width", s.width}};
  c.add("mean", {s.channels, s.height, s.width}, s.mean);
  c.add("m2", {s.channels, s.height, s.width}, s.m2);
  c.add("std", {s.channels, s.height, s.width}, s.std_map());
  return c;
}

SpatialStats stats_from_container(const Container& c) {
  if (c.kind != "nerd-spatial-stats") throw IoError("container is not a statistics file (kind " + c.kind + ")");
  SpatialStats s;
  s.count = c.meta.at("count").get<std::uint64_t>();
  s.channels = c.meta.at("channels").get<int>();
  s.height = c.meta.at("height").get<int>();
  s.width = c.meta.at("width").get<int>();
  s.mean = c.array("mean").values;
  s.m2 = c.array("m2").values;
  return s;
}

template void StatsAccumulator::add<float>(const FeatureMap<float>&);
template void StatsAccumulator::add<double>(const FeatureMap<double>&);
template SpatialStats feature_stats<float>(Backbone<float>&, const std::vector<const SliceSample*>&, int);
template SpatialStats feature_stats<double>(Backbone<double>&, const std::vector<const SliceSample*>&, int);

}  // namespace nerd
