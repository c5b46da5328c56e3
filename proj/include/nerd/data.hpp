#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace nerd {

/// D x H x W scalar volume; the first axis is the slicing (axial) axis.
struct Volume {
  int depth = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;
  /// Physical voxel size in mm along (depth, height, width).
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::string modality;

  std::size_t plane_size() const noexcept { return static_cast<std::size_t>(height) * width; }
  /// Throws InvalidArgument on non-positive spacing, a size mismatch or
  /// non-finite values.
  void validate() const;
};

/// One 2D plane with its provenance.
struct Slice2D {
  int height = 0;
  int width = 0;
  std::vector<double> values;  // row-major
  std::string volume_id;
  int index = 0;
};

std::vector<Slice2D> slice_volume(const Volume& volume, const std::string& volume_id = "");
/// Inverse of slice_volume; all slices must share H x W.
Volume stack_slices(const std::vector<Slice2D>& slices, const std::array<double, 3>& spacing);

/// Centered window; odd remainders drop the extra row/column at the
/// bottom/right. Throws InvalidArgument if the target exceeds the source.
Slice2D center_crop(const Slice2D& slice, int target_height, int target_width);
Volume center_crop(const Volume& volume, int target_height, int target_width);

enum class Normalization { MinMax, ZScore };
Normalization parse_normalization(const std::string& name);

/// minmax: (x - min) / (max - min); zscore: (x - mean) / std with the
/// population std. A constant input maps to all zeros in both modes.
void normalize_intensity(std::vector<double>& values, Normalization mode);
Slice2D normalize_intensity(const Slice2D& slice, Normalization mode);

/// Channel-planar C x H x W image.
struct MultiChannelImage {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> values;
};

/// Stacks congruent slices along the channel axis, in the given order.
MultiChannelImage concat_modalities(const std::vector<Slice2D>& slices);

/// Training sample: image in C x H x W planar order, label H x W in {0, 1}.
struct SliceSample {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> image;
  std::vector<std::uint8_t> label;
  std::string volume_id;
  int slice_index = 0;
};

enum class Split { Train, Val, Test };
const char* split_name(Split s) noexcept;
Split parse_split(const std::string& name);

struct SampleVolume {
  std::string id;
  Split split = Split::Train;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::vector<SliceSample> slices;
  /// Optional per-slice metadata (synthetic blob lists), kept in the manifest.
  std::vector<nlohmann::json> slice_meta;
};

struct Dataset {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::string> modalities;
  nlohmann::json source = nlohmann::json::object();
  std::vector<SampleVolume> volumes;

  std::vector<const SliceSample*> slices(Split split) const;
  std::vector<const SampleVolume*> volumes_in(Split split) const;
  /// Throws InvalidArgument on empty/heterogeneous samples or a volume id
  /// assigned to more than one split.
  void validate() const;
};

// ------------------------------------------------------------ synthetic

enum class BandRule { Border, Center, Random };

struct SynthConfig {
  int height = 64;
  int width = 64;
  int blobs_min = 5;
  int blobs_max = 9;
  int radius_min = 3;
  int radius_max = 5;
  /// Width r of the border band, in pixels.
  int band = 16;
  double noise = 0.1;
  BandRule rule = BandRule::Random;
  int train = 200;
  int val = 40;
  int test = 40;
  int slices_per_volume = 1;
  std::uint64_t seed = 7;
  int max_retries = 1000;

  /// Throws ConfigError unless r < min(H, W) / 2, counts >= 1 and blob
  /// sizes fit the image.
  void validate() const;
};

nlohmann::json to_json(const SynthConfig& c);
SynthConfig synth_config_from_json(const nlohmann::json& j);

struct Blob {
  int cy = 0;
  int cx = 0;
  int radius = 0;
  bool foreground = false;
};

/// Rule actually applied for a config (Random resolves from the seed).
BandRule resolved_rule(const SynthConfig& c);
/// True when the blob centroid lies within `band` pixels of an edge.
bool in_border_band(int cy, int cx, int height, int width, int band);
/// Label rule: foreground iff the centroid is in the band (Border rule) or
/// outside it (Center rule).
bool blob_is_foreground(int cy, int cx, const SynthConfig& c, BandRule rule);
/// Disk membership used for both intensity and label: (y-cy)^2+(x-cx)^2 <= r^2.
std::vector<std::uint8_t> rasterize_labels(const std::vector<Blob>& blobs, int height, int width);

/// Identical textured blobs scattered uniformly over a noisy background; the
/// label of each blob depends only on where its centroid lies relative to
/// the border band. Volume k is drawn from derive_seed(seed, k), so any
/// partition of volumes across workers emits identical bytes.
Dataset generate_border_bias(const SynthConfig& config);

}  // namespace nerd
