#include "nerd/dataset_io.hpp"

#include <cmath>
#include <cstring>

#include "nerd/error.hpp"
#include "nerd/io.hpp"
#include "nerd/json_util.hpp"
#include "nerd/volume_io.hpp"

namespace nerd {
namespace fs = std::filesystem;
namespace {

constexpr char kSliceMagic[8] = {'N', 'E', 'R', 'D', 'S', 'L', 'C', '1'};
constexpr char kMaskMagic[8] = {'N', 'E', 'R', 'D', 'M', 'S', 'K', '1'};

void put_u32(std::vector<char>& out, std::uint32_t v) {
  const auto* p = reinterpret_cast<const char*>(&v);
  out.insert(out.end(), p, p + 4);
}

std::uint32_t get_u32(const std::vector<char>& in, std::size_t pos) {
  std::uint32_t v;
  std::memcpy(&v, in.data() + pos, 4);
  return v;
}

}  // namespace

std::vector<char> encode_slice(const SliceSample& s) {
  std::vector<char> out(kSliceMagic, kSliceMagic + 8);
  put_u32(out, s.height);
  put_u32(out, s.width);
  put_u32(out, s.channels);
  put_u32(out, s.label.empty() ? 0 : 1);
  const auto* img = reinterpret_cast<const char*>(s.image.data());
  out.insert(out.end(), img, img + s.image.size() * sizeof(float));
  out.insert(out.end(), s.label.begin(), s.label.end());
  return out;
}

SliceSample decode_slice(const std::vector<char>& bytes, const std::string& origin) {
  if (bytes.size() < 24 || std::memcmp(bytes.data(), kSliceMagic, 8) != 0)
    throw IoError(origin + ": not a slice file");
  SliceSample s;
  s.height = static_cast<int>(get_u32(bytes, 8));
  s.width = static_cast<int>(get_u32(bytes, 12));
  s.channels = static_cast<int>(get_u32(bytes, 16));
  const bool has_label = get_u32(bytes, 20) != 0;
  const std::size_t pixels = static_cast<std::size_t>(s.height) * s.width;
  const std::size_t image_bytes = pixels * s.channels * sizeof(float);
  if (bytes.size() != 24 + image_bytes + (has_label ? pixels : 0))
    throw IoError(origin + ": slice file size does not match its header");
  s.image.resize(pixels * s.channels);
  std::memcpy(s.image.data(), bytes.data() + 24, image_bytes);
  if (has_label) {
    s.label.assign(bytes.begin() + 24 + image_bytes, bytes.end());
    for (auto v : s.label)
      if (v > 1) throw IoError(origin + ": label is not binary");
  }
  return s;
}

std::vector<char> encode_mask(std::span<const std::uint8_t> mask, int height, int width) {
  std::vector<char> out(kMaskMagic, kMaskMagic + 8);
  put_u32(out, height);
  put_u32(out, width);
  out.insert(out.end(), mask.begin(), mask.end());
  return out;
}

std::vector<std::uint8_t> decode_mask(const std::vector<char>& bytes, int& height, int& width,
                                      const std::string& origin) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMaskMagic, 8) != 0)
    throw IoError(origin + ": not a mask file");
  height = static_cast<int>(get_u32(bytes, 8));
  width = static_cast<int>(get_u32(bytes, 12));
  if (bytes.size() != 16 + static_cast<std::size_t>(height) * width)
    throw IoError(origin + ": mask file size does not match its header");
  return std::vector<std::uint8_t>(bytes.begin() + 16, bytes.end());
}

std::string slice_relpath(const std::string& split, const std::string& volume_id, int index,
                          const std::string& extension) {
  char name[32];
  std::snprintf(name, sizeof name, "slice_%04d", index);
  return split + "/" + volume_id + "/" + name + extension;
}

namespace {

// Writes `bytes` unless the file already holds exactly that content.
bool write_if_changed(const fs::path& path, const std::vector<char>& bytes,
                      const std::string& digest) {
  if (fs::exists(path) && fs::file_size(path) == bytes.size() && sha256_file(path) == digest)
    return false;
  write_file_atomic(path, bytes);
  return true;
}

}  // namespace

WriteStats write_dataset(const Dataset& dataset, const fs::path& dir) {
  dataset.validate();
  WriteStats stats;
  nlohmann::json manifest;
  manifest["format"] = "nerd-dataset";
  manifest["version"] = 1;
  manifest["height"] = dataset.height;
  manifest["width"] = dataset.width;
  manifest["channels"] = dataset.channels;
  manifest["modalities"] = dataset.modalities;
  manifest["source"] = dataset.source;
  manifest["volumes"] = nlohmann::json::array();
  for (const auto& v : dataset.volumes) {
    nlohmann::json entry = {{"id", v.id}, {"split", split_name(v.split)}, {"spacing", v.spacing}};
    entry["slices"] = nlohmann::json::array();
    for (std::size_t k = 0; k < v.slices.size(); ++k) {
      const auto bytes = encode_slice(v.slices[k]);
      const std::string digest = sha256_hex(bytes);
      const std::string rel = slice_relpath(split_name(v.split), v.id, static_cast<int>(k));
      if (write_if_changed(dir / rel, bytes, digest))
        ++stats.written;
      else
        ++stats.skipped;
      nlohmann::json s = {{"file", rel}, {"sha256", digest}};
      if (k < v.slice_meta.size()) s["meta"] = v.slice_meta[k];
      entry["slices"].push_back(std::move(s));
    }
    manifest["volumes"].push_back(std::move(entry));
  }
  const std::string text = manifest.dump(2) + "\n";
  const std::vector<char> bytes(text.begin(), text.end());
  if (write_if_changed(dir / "manifest.json", bytes, sha256_hex(bytes)))
    ++stats.written;
  else
    ++stats.skipped;
  return stats;
}

Dataset read_dataset(const fs::path& dir, bool verify) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw IoError("no dataset manifest at " + manifest_path.string());
  const auto m = parse_json_text(read_text(manifest_path), manifest_path.string());
  if (m.value("format", "") != "nerd-dataset")
    throw IoError(manifest_path.string() + ": not a dataset manifest");
  Dataset ds;
  try {
    ds.height = m.at("height").get<int>();
    ds.width = m.at("width").get<int>();
    ds.channels = m.at("channels").get<int>();
    ds.modalities = m.at("modalities").get<std::vector<std::string>>();
    ds.source = m.value("source", nlohmann::json::object());
    for (const auto& e : m.at("volumes")) {
      SampleVolume v;
      v.id = e.at("id").get<std::string>();
      v.split = parse_split(e.at("split").get<std::string>());
      const auto sp = e.at("spacing").get<std::vector<double>>();
      if (sp.size() != 3) throw IoError(manifest_path.string() + ": spacing must have 3 entries");
      v.spacing = {sp[0], sp[1], sp[2]};
      int index = 0;
      for (const auto& s : e.at("slices")) {
        const fs::path file = dir / s.at("file").get<std::string>();
        const auto bytes = read_file(file);
        if (verify && sha256_hex(bytes) != s.at("sha256").get<std::string>())
          throw IoError(file.string() + ": content hash mismatch");
        SliceSample sample = decode_slice(bytes, file.string());
        sample.volume_id = v.id;
        sample.slice_index = index++;
        v.slices.push_back(std::move(sample));
        v.slice_meta.push_back(s.value("meta", nlohmann::json()));
      }
      ds.volumes.push_back(std::move(v));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(manifest_path.string() + ": malformed manifest: " + e.what());
  }
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------- prepare

PrepareConfig prepare_config_from_json(const nlohmann::json& j, const fs::path& base_dir) {
  const std::string w = "prepare manifest";
  require_keys(j, {"modalities", "crop", "normalize", "normalize_scope", "label_foreground", "volumes"}, w);
  PrepareConfig c;
  c.modalities = get_or<std::vector<std::string>>(j, "modalities", {}, w);
  if (c.modalities.empty()) throw ConfigError(w + ": 'modalities' must list at least one entry");
  if (j.contains("crop")) {
    const auto crop = get_or<std::vector<int>>(j, "crop", {}, w);
    if (crop.size() != 2 || crop[0] < 1 || crop[1] < 1)
      throw ConfigError(w + ": 'crop' must be [height, width]");
    c.crop = std::make_pair(crop[0], crop[1]);
  }
  c.normalization = parse_normalization(get_or<std::string>(j, "normalize", "minmax", w));
  const auto scope = get_or<std::string>(j, "normalize_scope", "volume", w);
  if (scope != "volume" && scope != "slice")
    throw ConfigError(w + ": normalize_scope must be 'volume' or 'slice'");
  c.per_volume = scope == "volume";
  c.label_foreground = get_or<std::vector<int>>(j, "label_foreground", {}, w);
  if (!j.contains("volumes") || !j.at("volumes").is_array() || j.at("volumes").empty())
    throw ConfigError(w + ": 'volumes' must be a non-empty list");
  auto resolve = [&](const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };
  for (const auto& e : j.at("volumes")) {
    require_keys(e, {"id", "split", "images", "label"}, w + " volume");
    PrepareVolume v;
    v.id = get_or<std::string>(e, "id", "", w);
    if (v.id.empty() || v.id.find('/') != std::string::npos)
      throw ConfigError(w + ": volume ids must be non-empty and contain no '/'");
    v.split = parse_split(get_or<std::string>(e, "split", "", w));
    const auto images = get_or<std::map<std::string, std::string>>(e, "images", {}, w);
    for (const auto& m : c.modalities) {
      const auto it = images.find(m);
      if (it == images.end())
        throw ConfigError(w + ": volume '" + v.id + "' lacks modality '" + m + "'");
      v.images[m] = resolve(it->second);
    }
    const auto label = get_or<std::string>(e, "label", "", w);
    if (label.empty()) throw ConfigError(w + ": volume '" + v.id + "' needs a label");
    v.label = resolve(label);
    c.volumes.push_back(std::move(v));
  }
  return c;
}

PrepareConfig read_prepare_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("missing manifest " + path.string());
  return prepare_config_from_json(parse_json_text(read_text(path), path.string()),
                                  path.parent_path());
}

Dataset prepare_dataset(const PrepareConfig& config) {
  Dataset ds;
  ds.channels = static_cast<int>(config.modalities.size());
  ds.modalities = config.modalities;
  ds.source = {{"kind", "prepared"},
               {"normalize", config.normalization == Normalization::MinMax ? "minmax" : "zscore"},
               {"normalize_scope", config.per_volume ? "volume" : "slice"}};
  if (config.crop) ds.source["crop"] = {config.crop->first, config.crop->second};

  for (const auto& pv : config.volumes) {
    std::vector<Volume> channels;
    for (const auto& m : config.modalities) {
      const fs::path& path = pv.images.at(m);
      if (!fs::exists(path))
        throw IoError("volume '" + pv.id + "': missing " + m + " file " + path.string());
      Volume v = read_volume(path);
      v.modality = m;
      if (config.crop) v = center_crop(v, config.crop->first, config.crop->second);
      if (config.per_volume) normalize_intensity(v.values, config.normalization);
      channels.push_back(std::move(v));
    }
    if (!fs::exists(pv.label))
      throw IoError("volume '" + pv.id + "': missing label file " + pv.label.string());
    Volume label = read_volume(pv.label);
    if (config.crop) label = center_crop(label, config.crop->first, config.crop->second);

    for (const auto& c : channels)
      if (c.depth != label.depth || c.height != label.height || c.width != label.width)
        throw InvalidArgument("volume '" + pv.id + "': modality " + c.modality +
                              " is not congruent with the label");

    SampleVolume out;
    out.id = pv.id;
    out.split = pv.split;
    out.spacing = label.spacing;
    std::vector<std::vector<Slice2D>> per_modality;
    for (const auto& c : channels) per_modality.push_back(slice_volume(c, pv.id));
    const auto label_slices = slice_volume(label, pv.id);
    for (int d = 0; d < label.depth; ++d) {
      std::vector<Slice2D> parts;
      for (auto& m : per_modality) {
        parts.push_back(config.per_volume ? m[d] : normalize_intensity(m[d], config.normalization));
      }
      const MultiChannelImage img = concat_modalities(parts);
      SliceSample s;
      s.height = img.height;
      s.width = img.width;
      s.channels = img.channels;
      s.image.assign(img.values.begin(), img.values.end());
      s.label.resize(label_slices[d].values.size());
      for (std::size_t i = 0; i < s.label.size(); ++i) {
        const double v = label_slices[d].values[i];
        bool fg = v != 0.0;
        if (!config.label_foreground.empty()) {
          fg = false;
          for (int f : config.label_foreground) fg = fg || std::lround(v) == f;
        }
        s.label[i] = fg ? 1 : 0;
      }
      s.volume_id = pv.id;
      s.slice_index = d;
      out.slices.push_back(std::move(s));
    }
    if (ds.volumes.empty()) {
      ds.height = label.height;
      ds.width = label.width;
    }
    ds.volumes.push_back(std::move(out));
  }
  ds.validate();
  return ds;
}

}  // namespace nerd
