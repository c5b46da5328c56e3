#include "nerd/volume_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>

#include "nerd/error.hpp"
#include "nerd/io.hpp"
#include "nerd/json_util.hpp"

namespace nerd {
namespace {

constexpr int kHeaderSize = 348;

struct GzCloser {
  void operator()(gzFile f) const { gzclose(f); }
};
using GzHandle = std::unique_ptr<std::remove_pointer_t<gzFile>, GzCloser>;

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

template <class U>
U read_at(const char* hdr, int offset, bool swap) {
  U v;
  std::memcpy(&v, hdr + offset, sizeof(U));
  if (swap) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    std::reverse(b, b + sizeof(U));
  }
  return v;
}

template <class U>
void write_at(char* hdr, int offset, U v) {
  std::memcpy(hdr + offset, &v, sizeof(U));
}

std::vector<char> read_all_gz(const std::filesystem::path& path) {
  GzHandle f(gzopen(path.string().c_str(), "rb"));
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<char> out;
  char buf[1 << 16];
  int n;
  while ((n = gzread(f.get(), buf, sizeof buf)) > 0) out.insert(out.end(), buf, buf + n);
  if (n < 0) throw IoError("read failed for " + path.string());
  return out;
}

template <class U>
void decode_voxels(const char* src, std::size_t count, bool swap, std::vector<double>& out) {
  out.resize(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = static_cast<double>(read_at<U>(src, static_cast<int>(i * sizeof(U)), swap));
}

}  // namespace

Volume read_nifti(const std::filesystem::path& path) {
  const std::vector<char> bytes = read_all_gz(path);
  if (bytes.size() < kHeaderSize) throw IoError(path.string() + ": truncated NIfTI header");
  const char* hdr = bytes.data();
  bool swap = false;
  if (read_at<std::int32_t>(hdr, 0, false) != kHeaderSize) {
    swap = true;
    if (read_at<std::int32_t>(hdr, 0, true) != kHeaderSize)
      throw IoError(path.string() + ": not a NIfTI-1 file");
  }
  if (std::memcmp(hdr + 344, "n+1", 4) != 0)
    throw IoError(path.string() + ": only single-file NIfTI-1 (n+1) is supported");

  std::int16_t dim[8];
  for (int i = 0; i < 8; ++i) dim[i] = read_at<std::int16_t>(hdr, 40 + 2 * i, swap);
  if (dim[0] < 2 || dim[0] > 7) throw IoError(path.string() + ": invalid dimension count");
  for (int i = 4; i <= dim[0]; ++i)
    if (dim[i] > 1) throw IoError(path.string() + ": only 2D/3D volumes are supported");
  const int nx = dim[1];
  const int ny = dim[2];
  const int nz = dim[0] >= 3 ? std::max<int>(dim[3], 1) : 1;
  if (nx < 1 || ny < 1) throw IoError(path.string() + ": empty volume");

  const auto datatype = read_at<std::int16_t>(hdr, 70, swap);
  float pixdim[8];
  for (int i = 0; i < 8; ++i) pixdim[i] = read_at<float>(hdr, 76 + 4 * i, swap);
  const auto vox_offset = static_cast<std::size_t>(read_at<float>(hdr, 108, swap));
  const float slope = read_at<float>(hdr, 112, swap);
  const float inter = read_at<float>(hdr, 116, swap);

  const std::size_t count = static_cast<std::size_t>(nx) * ny * nz;
  std::size_t elem = 0;
  switch (datatype) {
    case 2: case 256: elem = 1; break;
    case 4: case 512: elem = 2; break;
    case 8: case 16: case 768: elem = 4; break;
    case 64: elem = 8; break;
    default:
      throw IoError(path.string() + ": unsupported NIfTI datatype " + std::to_string(datatype));
  }
  if (vox_offset + count * elem > bytes.size()) throw IoError(path.string() + ": truncated voxel data");
  const char* src = bytes.data() + vox_offset;

  Volume v;
  v.depth = nz;
  v.height = ny;
  v.width = nx;
  switch (datatype) {
    case 2: decode_voxels<std::uint8_t>(src, count, swap, v.values); break;
    case 256: decode_voxels<std::int8_t>(src, count, swap, v.values); break;
    case 4: decode_voxels<std::int16_t>(src, count, swap, v.values); break;
    case 512: decode_voxels<std::uint16_t>(src, count, swap, v.values); break;
    case 8: decode_voxels<std::int32_t>(src, count, swap, v.values); break;
    case 768: decode_voxels<std::uint32_t>(src, count, swap, v.values); break;
    case 16: decode_voxels<float>(src, count, swap, v.values); break;
    case 64: decode_voxels<double>(src, count, swap, v.values); break;
  }
  if (slope != 0.0f && std::isfinite(slope))
    for (auto& x : v.values) x = slope * x + inter;

  // A missing pixdim (0) on a 2D image means an unspecified slice thickness.
  auto spacing = [](float s) { return s > 0.0f && std::isfinite(s) ? static_cast<double>(s) : 1.0; };
  v.spacing = {spacing(pixdim[3]), spacing(pixdim[2]), spacing(pixdim[1])};
  v.validate();
  return v;
}

void write_nifti(const std::filesystem::path& path, const Volume& volume) {
  volume.validate();
  std::vector<char> out(352, 0);
  char* hdr = out.data();
  write_at<std::int32_t>(hdr, 0, kHeaderSize);
  const std::int16_t dim[8] = {3, static_cast<std::int16_t>(volume.width),
                               static_cast<std::int16_t>(volume.height),
                               static_cast<std::int16_t>(volume.depth), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) write_at(hdr, 40 + 2 * i, dim[i]);
  write_at<std::int16_t>(hdr, 70, 16);
  write_at<std::int16_t>(hdr, 72, 32);
  const float pixdim[8] = {1.0f, static_cast<float>(volume.spacing[2]),
                           static_cast<float>(volume.spacing[1]),
                           static_cast<float>(volume.spacing[0]), 0, 0, 0, 0};
  for (int i = 0; i < 8; ++i) write_at(hdr, 76 + 4 * i, pixdim[i]);
  write_at<float>(hdr, 108, 352.0f);
  write_at<float>(hdr, 112, 1.0f);
  write_at<float>(hdr, 116, 0.0f);
  std::memcpy(hdr + 344, "n+1", 4);
  for (double v : volume.values) {
    const float f = static_cast<float>(v);
    const auto* p = reinterpret_cast<const char*>(&f);
    out.insert(out.end(), p, p + 4);
  }
  if (ends_with(path.string(), ".gz")) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    GzHandle f(gzopen(path.string().c_str(), "wb"));
    if (!f || gzwrite(f.get(), out.data(), static_cast<unsigned>(out.size())) !=
                  static_cast<int>(out.size()))
      throw IoError("cannot write " + path.string());
  } else {
    write_file_atomic(path, out);
  }
}

Volume read_raw_volume(const std::filesystem::path& path) {
  auto sidecar = path;
  sidecar += ".json";
  if (!std::filesystem::exists(sidecar)) throw IoError("missing sidecar header " + sidecar.string());
  const auto meta = parse_json_text(read_text(sidecar), sidecar.string());
  require_keys(meta, {"dims", "spacing"}, sidecar.string());
  const auto dims = get_or<std::vector<int>>(meta, "dims", {}, sidecar.string());
  const auto spacing = get_or<std::vector<double>>(meta, "spacing", {1.0, 1.0, 1.0}, sidecar.string());
  if (dims.size() != 3 || spacing.size() != 3)
    throw IoError(sidecar.string() + ": dims and spacing must have 3 entries");
  const auto bytes = read_file(path);
  Volume v;
  v.depth = dims[0];
  v.height = dims[1];
  v.width = dims[2];
  v.spacing = {spacing[0], spacing[1], spacing[2]};
  const std::size_t count = static_cast<std::size_t>(v.depth) * v.height * v.width;
  if (bytes.size() != count * 4)
    throw IoError(path.string() + ": expected " + std::to_string(count * 4) + " bytes, found " +
                  std::to_string(bytes.size()));
  decode_voxels<float>(bytes.data(), count, false, v.values);
  v.validate();
  return v;
}

void write_raw_volume(const std::filesystem::path& path, const Volume& volume) {
  volume.validate();
  std::vector<char> out;
  out.reserve(volume.values.size() * 4);
  for (double v : volume.values) {
    const float f = static_cast<float>(v);
    const auto* p = reinterpret_cast<const char*>(&f);
    out.insert(out.end(), p, p + 4);
  }
  write_file_atomic(path, out);
  auto sidecar = path;
  sidecar += ".json";
  const nlohmann::json meta = {{"dims", {volume.depth, volume.height, volume.width}},
                               {"spacing", volume.spacing}};
  write_text(sidecar, meta.dump(2) + "\n");
}

Volume read_volume(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("missing volume file " + path.string());
  const std::string name = path.string();
  if (ends_with(name, ".nii") || ends_with(name, ".nii.gz")) return read_nifti(path);
  if (ends_with(name, ".raw")) return read_raw_volume(path);
  throw IoError(name + ": unknown volume format (expected .nii, .nii.gz or .raw)");
}

}  // namespace nerd
