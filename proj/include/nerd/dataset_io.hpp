#pragma once

// On-disk dataset layout shared by `prepare` and `synth`:
//
//   <dir>/manifest.json
//   <dir>/<split>/<volume_id>/slice_####.bin
//
// Slice file: magic "NERDSLC1", u32 height, width, channels, has_label,
// float32 image [C][H][W], uint8 label [H][W] (little-endian).
// Mask file (slice_####.mask): magic "NERDMSK1", u32 height, width, uint8 [H][W].

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nerd/data.hpp"

namespace nerd {

std::vector<char> encode_slice(const SliceSample& s);
SliceSample decode_slice(const std::vector<char>& bytes, const std::string& origin);

std::vector<char> encode_mask(std::span<const std::uint8_t> mask, int height, int width);
std::vector<std::uint8_t> decode_mask(const std::vector<char>& bytes, int& height, int& width,
                                      const std::string& origin);

std::string slice_relpath(const std::string& split, const std::string& volume_id, int index,
                          const std::string& extension = ".bin");

struct WriteStats {
  int written = 0;
  int skipped = 0;
};

/// Writes every slice plus manifest.json. Files whose current content
/// already has the same SHA-256 are left untouched.
WriteStats write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
/// Reads a dataset directory; verifies recorded hashes when `verify` is set.
Dataset read_dataset(const std::filesystem::path& dir, bool verify = false);

/// Input manifest for `prepare` (JSON):
///   {"modalities": ["T1", "FLAIR"], "crop": [160, 224],
///    "normalize": "minmax", "normalize_scope": "volume",
///    "label_foreground": [1],
///    "volumes": [{"id", "split", "images": {"T1": path, ...}, "label": path}]}
/// Relative paths resolve against the manifest's directory.
struct PrepareVolume {
  std::string id;
  Split split = Split::Train;
  std::map<std::string, std::filesystem::path> images;
  std::filesystem::path label;
};

struct PrepareConfig {
  std::vector<std::string> modalities;
  std::optional<std::pair<int, int>> crop;
  Normalization normalization = Normalization::MinMax;
  bool per_volume = true;
  std::vector<int> label_foreground;  // empty: any non-zero label is foreground
  std::vector<PrepareVolume> volumes;
};

PrepareConfig prepare_config_from_json(const nlohmann::json& j,
                                       const std::filesystem::path& base_dir);
PrepareConfig read_prepare_manifest(const std::filesystem::path& path);

/// Loads, crops, normalizes, concatenates modalities and slices each volume.
/// Throws IoError naming any missing input file.
Dataset prepare_dataset(const PrepareConfig& config);

}  // namespace nerd
