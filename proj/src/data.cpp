#include "nerd/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "nerd/error.hpp"
#include "nerd/json_util.hpp"
#include "nerd/rng.hpp"

namespace nerd {

void Volume::validate() const {
  if (depth < 1 || height < 1 || width < 1) throw InvalidArgument("volume: empty dimensions");
  if (values.size() != static_cast<std::size_t>(depth) * height * width)
    throw InvalidArgument("volume: value count does not match dimensions");
  for (double s : spacing)
    if (!(s > 0.0) || !std::isfinite(s)) throw InvalidArgument("volume: spacing must be positive");
  for (double v : values)
    if (!std::isfinite(v)) throw InvalidArgument("volume: non-finite voxel value");
}

std::vector<Slice2D> slice_volume(const Volume& volume, const std::string& volume_id) {
  std::vector<Slice2D> out;
  out.reserve(volume.depth);
  const std::size_t plane = volume.plane_size();
  for (int d = 0; d < volume.depth; ++d) {
    Slice2D s;
    s.height = volume.height;
    s.width = volume.width;
    s.values.assign(volume.values.begin() + d * plane, volume.values.begin() + (d + 1) * plane);
    s.volume_id = volume_id;
    s.index = d;
    out.push_back(std::move(s));
  }
  return out;
}

Volume stack_slices(const std::vector<Slice2D>& slices, const std::array<double, 3>& spacing) {
  if (slices.empty()) throw InvalidArgument("stack_slices: no slices");
  Volume v;
  v.depth = static_cast<int>(slices.size());
  v.height = slices.front().height;
  v.width = slices.front().width;
  v.spacing = spacing;
  v.values.reserve(v.plane_size() * v.depth);
  for (const auto& s : slices) {
    if (s.height != v.height || s.width != v.width)
      throw InvalidArgument("stack_slices: slices differ in size");
    v.values.insert(v.values.end(), s.values.begin(), s.values.end());
  }
  return v;
}

Slice2D center_crop(const Slice2D& slice, int target_height, int target_width) {
  if (target_height < 1 || target_width < 1)
    throw InvalidArgument("center_crop: target must be positive");
  if (target_height > slice.height || target_width > slice.width)
    throw InvalidArgument("center_crop: target " + std::to_string(target_height) + "x" +
                          std::to_string(target_width) + " exceeds source " +
                          std::to_string(slice.height) + "x" + std::to_string(slice.width));
  const int top = (slice.height - target_height) / 2;
  const int left = (slice.width - target_width) / 2;
  Slice2D out;
  out.height = target_height;
  out.width = target_width;
  out.volume_id = slice.volume_id;
  out.index = slice.index;
  out.values.reserve(static_cast<std::size_t>(target_height) * target_width);
  for (int y = 0; y < target_height; ++y) {
    const auto row = slice.values.begin() + static_cast<std::size_t>(top + y) * slice.width + left;
    out.values.insert(out.values.end(), row, row + target_width);
  }
  return out;
}

Volume center_crop(const Volume& volume, int target_height, int target_width) {
  Volume out = volume;
  out.height = target_height;
  out.width = target_width;
  out.values.clear();
  for (const auto& s : slice_volume(volume)) {
    const Slice2D c = center_crop(s, target_height, target_width);
    out.values.insert(out.values.end(), c.values.begin(), c.values.end());
  }
  return out;
}

Normalization parse_normalization(const std::string& name) {
  if (name == "minmax") return Normalization::MinMax;
  if (name == "zscore") return Normalization::ZScore;
  throw ConfigError("normalization must be 'minmax' or 'zscore', got '" + name + "'");
}

void normalize_intensity(std::vector<double>& values, Normalization mode) {
  if (values.empty()) return;
  if (mode == Normalization::MinMax) {
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    const double min = *lo;
    const double range = *hi - *lo;
    for (auto& v : values) v = range > 0.0 ? (v - min) / range : 0.0;
    return;
  }
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  for (auto& v : values) v = sd > 0.0 ? (v - mean) / sd : 0.0;
}

Slice2D normalize_intensity(const Slice2D& slice, Normalization mode) {
  Slice2D out = slice;
  normalize_intensity(out.values, mode);
  return out;
}

MultiChannelImage concat_modalities(const std::vector<Slice2D>& slices) {
  if (slices.empty()) throw InvalidArgument("concat_modalities: no slices");
  MultiChannelImage out;
  out.height = slices.front().height;
  out.width = slices.front().width;
  out.channels = static_cast<int>(slices.size());
  for (const auto& s : slices) {
    if (s.height != out.height || s.width != out.width)
      throw InvalidArgument("concat_modalities: modality sizes differ (" +
                            std::to_string(s.height) + "x" + std::to_string(s.width) + " vs " +
                            std::to_string(out.height) + "x" + std::to_string(out.width) + ")");
    out.values.insert(out.values.end(), s.values.begin(), s.values.end());
  }
  return out;
}

const char* split_name(Split s) noexcept {
  switch (s) {
    case Split::Train:
      return "train";
    case Split::Val:
      return "val";
    case Split::Test:
      return "test";
  }
  return "unknown";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw ConfigError("split must be train, val or test, got '" + name + "'");
}

std::vector<const SliceSample*> Dataset::slices(Split split) const {
  std::vector<const SliceSample*> out;
  for (const auto& v : volumes)
    if (v.split == split)
      for (const auto& s : v.slices) out.push_back(&s);
  return out;
}

std::vector<const SampleVolume*> Dataset::volumes_in(Split split) const {
  std::vector<const SampleVolume*> out;
  for (const auto& v : volumes)
    if (v.split == split) out.push_back(&v);
  return out;
}

void Dataset::validate() const {
  std::set<std::string> ids;
  for (const auto& v : volumes) {
    if (!ids.insert(v.id).second)
      throw InvalidArgument("dataset: volume id '" + v.id + "' appears more than once");
    if (v.slices.empty()) throw InvalidArgument("dataset: volume '" + v.id + "' has no slices");
    for (const auto& s : v.slices) {
      if (s.height != height || s.width != width || s.channels != channels)
        throw InvalidArgument("dataset: volume '" + v.id + "' has a slice of a different size");
      if (s.image.size() != static_cast<std::size_t>(channels) * height * width ||
          s.label.size() != static_cast<std::size_t>(height) * width)
        throw InvalidArgument("dataset: volume '" + v.id + "' has a malformed slice");
    }
  }
}

// ------------------------------------------------------------ synthetic

void SynthConfig::validate() const {
  if (height < 8 || width < 8) throw ConfigError("synth: image must be at least 8x8");
  if (!(2 * band < std::min(height, width)) || band < 1)
    throw ConfigError("synth: band r=" + std::to_string(band) +
                      " must satisfy 1 <= r < min(H,W)/2");
  if (train < 1 || val < 1 || test < 1) throw ConfigError("synth: split counts must be >= 1");
  if (slices_per_volume < 1) throw ConfigError("synth: slices_per_volume must be >= 1");
  if (train % slices_per_volume || val % slices_per_volume || test % slices_per_volume)
    throw ConfigError("synth: split counts must be multiples of slices_per_volume");
  if (blobs_min < 1 || blobs_max < blobs_min) throw ConfigError("synth: invalid blob count range");
  if (radius_min < 1 || radius_max < radius_min) throw ConfigError("synth: invalid radius range");
  if (2 * radius_max + 1 > std::min(height, width))
    throw ConfigError("synth: blobs do not fit the image");
  if (!(noise >= 0.0)) throw ConfigError("synth: noise must be >= 0");
  if (max_retries < 1) throw ConfigError("synth: max_retries must be >= 1");
}

namespace {

const char* rule_name(BandRule r) {
  switch (r) {
    case BandRule::Border:
      return "border";
    case BandRule::Center:
      return "center";
    case BandRule::Random:
      return "random";
  }
  return "random";
}

BandRule parse_rule(const std::string& s) {
  if (s == "border") return BandRule::Border;
  if (s == "center") return BandRule::Center;
  if (s == "random") return BandRule::Random;
  throw ConfigError("synth: rule must be border, center or random");
}

}  // namespace

nlohmann::json to_json(const SynthConfig& c) {
  return {{"height", c.height},       {"width", c.width},
          {"blobs_min", c.blobs_min}, {"blobs_max", c.blobs_max},
          {"radius_min", c.radius_min}, {"radius_max", c.radius_max},
          {"band", c.band},           {"noise", c.noise},
          {"rule", rule_name(c.rule)}, {"train", c.train},
          {"val", c.val},             {"test", c.test},
          {"slices_per_volume", c.slices_per_volume}, {"seed", c.seed},
          {"max_retries", c.max_retries}};
}

SynthConfig synth_config_from_json(const nlohmann::json& j) {
  const std::string w = "synth";
  require_keys(j,
               {"height", "width", "blobs_min", "blobs_max", "radius_min", "radius_max", "band",
                "noise", "rule", "train", "val", "test", "slices_per_volume", "seed",
                "max_retries"},
               w);
  SynthConfig c;
  c.height = get_or(j, "height", c.height, w);
  c.width = get_or(j, "width", c.width, w);
  c.blobs_min = get_or(j, "blobs_min", c.blobs_min, w);
  c.blobs_max = get_or(j, "blobs_max", c.blobs_max, w);
  c.radius_min = get_or(j, "radius_min", c.radius_min, w);
  c.radius_max = get_or(j, "radius_max", c.radius_max, w);
  c.band = get_or(j, "band", c.band, w);
  c.noise = get_or(j, "noise", c.noise, w);
  c.rule = parse_rule(get_or<std::string>(j, "rule", rule_name(c.rule), w));
  c.train = get_or(j, "train", c.train, w);
  c.val = get_or(j, "val", c.val, w);
  c.test = get_or(j, "test", c.test, w);
  c.slices_per_volume = get_or(j, "slices_per_volume", c.slices_per_volume, w);
  c.seed = get_or(j, "seed", c.seed, w);
  c.max_retries = get_or(j, "max_retries", c.max_retries, w);
  c.validate();
  return c;
}

BandRule resolved_rule(const SynthConfig& c) {
  if (c.rule != BandRule::Random) return c.rule;
  Rng rng(derive_seed(c.seed, 0xB0DE));
  return rng.uniform() < 0.5 ? BandRule::Border : BandRule::Center;
}

bool in_border_band(int cy, int cx, int height, int width, int band) {
  return std::min({cy, cx, height - 1 - cy, width - 1 - cx}) < band;
}

bool blob_is_foreground(int cy, int cx, const SynthConfig& c, BandRule rule) {
  const bool in_band = in_border_band(cy, cx, c.height, c.width, c.band);
  return rule == BandRule::Border ? in_band : !in_band;
}

std::vector<std::uint8_t> rasterize_labels(const std::vector<Blob>& blobs, int height, int width) {
  std::vector<std::uint8_t> label(static_cast<std::size_t>(height) * width, 0);
  for (const auto& b : blobs) {
    if (!b.foreground) continue;
    for (int y = b.cy - b.radius; y <= b.cy + b.radius; ++y)
      for (int x = b.cx - b.radius; x <= b.cx + b.radius; ++x) {
        if (y < 0 || y >= height || x < 0 || x >= width) continue;
        const int dy = y - b.cy;
        const int dx = x - b.cx;
        if (dy * dy + dx * dx <= b.radius * b.radius)
          label[static_cast<std::size_t>(y) * width + x] = 1;
      }
  }
  return label;
}

namespace {

constexpr double kBackground = 0.2;
constexpr double kPeak = 0.9;

SliceSample synth_slice(const SynthConfig& c, BandRule rule, Rng& rng, std::vector<Blob>& blobs) {
  const int count = c.blobs_min + static_cast<int>(rng.below(c.blobs_max - c.blobs_min + 1));
  blobs.clear();
  for (int n = 0; n < count; ++n) {
    const int r = c.radius_min + static_cast<int>(rng.below(c.radius_max - c.radius_min + 1));
    bool placed = false;
    for (int attempt = 0; attempt < c.max_retries && !placed; ++attempt) {
      const int cy = r + static_cast<int>(rng.below(c.height - 2 * r));
      const int cx = r + static_cast<int>(rng.below(c.width - 2 * r));
      bool clear = true;
      for (const auto& o : blobs) {
        const int dy = cy - o.cy;
        const int dx = cx - o.cx;
        const int gap = r + o.radius + 2;
        if (dy * dy + dx * dx <= gap * gap) {
          clear = false;
          break;
        }
      }
      if (clear) {
        blobs.push_back({cy, cx, r, blob_is_foreground(cy, cx, c, rule)});
        placed = true;
      }
    }
    if (!placed)
      throw GenerationError("synth: could not place blob " + std::to_string(n + 1) + " of " +
                            std::to_string(count) + " after " + std::to_string(c.max_retries) +
                            " attempts");
  }

  std::vector<double> img(static_cast<std::size_t>(c.height) * c.width, kBackground);
  for (const auto& b : blobs) {
    const double scale = static_cast<double>((b.radius + 1) * (b.radius + 1));
    for (int y = b.cy - b.radius; y <= b.cy + b.radius; ++y)
      for (int x = b.cx - b.radius; x <= b.cx + b.radius; ++x) {
        const int d2 = (y - b.cy) * (y - b.cy) + (x - b.cx) * (x - b.cx);
        if (d2 > b.radius * b.radius) continue;
        img[static_cast<std::size_t>(y) * c.width + x] =
            kBackground + (kPeak - kBackground) * (1.0 - d2 / scale);
      }
  }
  for (auto& v : img) v += c.noise * rng.normal();
  normalize_intensity(img, Normalization::MinMax);

  SliceSample s;
  s.height = c.height;
  s.width = c.width;
  s.channels = 1;
  s.image.assign(img.begin(), img.end());
  s.label = rasterize_labels(blobs, c.height, c.width);
  return s;
}

}  // namespace

Dataset generate_border_bias(const SynthConfig& config) {
  config.validate();
  const BandRule rule = resolved_rule(config);
  Dataset ds;
  ds.height = config.height;
  ds.width = config.width;
  ds.channels = 1;
  ds.modalities = {"synthetic"};
  ds.source = {{"kind", "synthetic"},
               {"config", to_json(config)},
               {"resolved_rule", rule_name(rule)}};

  const std::array<std::pair<Split, int>, 3> splits{
      {{Split::Train, config.train}, {Split::Val, config.val}, {Split::Test, config.test}}};
  std::uint64_t volume_index = 0;
  for (const auto& [split, slices] : splits) {
    const int volumes = slices / config.slices_per_volume;
    for (int v = 0; v < volumes; ++v, ++volume_index) {
      Rng rng(derive_seed(config.seed, volume_index));
      SampleVolume vol;
      char id[32];
      std::snprintf(id, sizeof id, "%s_%04d", split_name(split), v);
      vol.id = id;
      vol.split = split;
      for (int k = 0; k < config.slices_per_volume; ++k) {
        std::vector<Blob> blobs;
        SliceSample s = synth_slice(config, rule, rng, blobs);
        s.volume_id = vol.id;
        s.slice_index = k;
        nlohmann::json meta = nlohmann::json::array();
        for (const auto& b : blobs) meta.push_back({b.cy, b.cx, b.radius, b.foreground ? 1 : 0});
        vol.slices.push_back(std::move(s));
        vol.slice_meta.push_back({{"blobs", meta}});
      }
      ds.volumes.push_back(std::move(vol));
    }
  }
  return ds;
}

}  // namespace nerd
