#include "nerd/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "nerd/error.hpp"

namespace nerd {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};

// Anchor colours sampled from matplotlib's viridis at t = 0, .25, .5, .75, 1.
constexpr std::array<std::array<double, 3>, 5> kViridis{{{68, 1, 84},
                                                         {59, 82, 139},
                                                         {33, 145, 140},
                                                         {94, 201, 98},
                                                         {253, 231, 37}}};

}  // namespace

RgbImage::RgbImage(int h, int w, Rgb fill) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3) {
  for (std::size_t i = 0; i < pixels.size(); i += 3) std::copy(fill.begin(), fill.end(), pixels.begin() + i);
}

void RgbImage::set(int y, int x, Rgb c) {
  std::copy(c.begin(), c.end(), pixels.begin() + (static_cast<std::size_t>(y) * width + x) * 3);
}

Rgb RgbImage::get(int y, int x) const {
  const auto* p = pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  return {p[0], p[1], p[2]};
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  if (image.height < 1 || image.width < 1 ||
      image.pixels.size() != static_cast<std::size_t>(image.height) * image.width * 3)
    throw InvalidArgument("cannot encode an empty or malformed image");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::unique_ptr<std::FILE, FileCloser> f(std::fopen(tmp.string().c_str(), "wb"));
    if (!f) throw IoError("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
      png_destroy_write_struct(&png, &info);
      throw IoError("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      throw IoError("PNG encoding failed for " + path.string());
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < image.height; ++y)
      png_write_row(png, image.pixels.data() + static_cast<std::size_t>(y) * image.width * 3);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
  }
  std::filesystem::rename(tmp, path);
}

RgbImage read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str()))
    throw IoError("cannot read PNG " + path.string());
  img.format = PNG_FORMAT_RGB;
  RgbImage out(static_cast<int>(img.height), static_cast<int>(img.width));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError("cannot decode PNG " + path.string());
  }
  return out;
}

void check_colormap(const std::string& name) {
  if (name != "gray" && name != "viridis")
    throw ConfigError("unknown colormap \"" + name + "\" (expected gray or viridis)");
}

Rgb colormap(const std::string& name, double t) {
  check_colormap(name);
  t = std::isfinite(t) ? std::clamp(t, 0.0, 1.0) : 0.0;
  if (name == "gray") {
    const auto v = static_cast<std::uint8_t>(std::lround(t * 255.0));
    return {v, v, v};
  }
  const double pos = t * (kViridis.size() - 1);
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(pos), kViridis.size() - 2);
  const double f = pos - static_cast<double>(i);
  Rgb c;
  for (int k = 0; k < 3; ++k)
    c[k] = static_cast<std::uint8_t>(std::lround(kViridis[i][k] + f * (kViridis[i + 1][k] - kViridis[i][k])));
  return c;
}

std::pair<double, double> render_scalar(std::span<const double> values, int height, int width,
                                        const std::string& cmap, RgbImage& out) {
  if (values.size() != static_cast<std::size_t>(height) * width) throw ShapeError("scalar map size mismatch");
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;
  out = RgbImage(height, width);
  const double range = hi - lo;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double v = values[static_cast<std::size_t>(y) * width + x];
      out.set(y, x, colormap(cmap, range > 0.0 ? (v - lo) / range : 0.0));
    }
  return {lo, hi};
}

RgbImage hconcat(const std::vector<RgbImage>& panels, int gap) {
  if (panels.empty()) throw InvalidArgument("no panels to concatenate");
  int h = 0, w = 0;
  for (const auto& p : panels) {
    h = std::max(h, p.height);
    w += p.width;
  }
  w += gap * static_cast<int>(panels.size() - 1);
  RgbImage out(h, w, {255, 255, 255});
  int x0 = 0;
  for (const auto& p : panels) {
    for (int y = 0; y < p.height; ++y)
      for (int x = 0; x < p.width; ++x) out.set(y, x0 + x, p.get(y, x));
    x0 += p.width + gap;
  }
  return out;
}

}  // namespace nerd
