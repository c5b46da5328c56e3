#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace nerd {

using Rgb = std::array<std::uint8_t, 3>;

/// 8-bit RGB image, row-major.
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3

  RgbImage() = default;
  RgbImage(int h, int w, Rgb fill = {0, 0, 0});
  void set(int y, int x, Rgb c);
  Rgb get(int y, int x) const;
};

/// Deterministic PNG encoding (no timestamps or text chunks).
void write_png(const std::filesystem::path& path, const RgbImage& image);
RgbImage read_png(const std::filesystem::path& path);

/// "gray" or "viridis"; t is clamped to [0, 1].
Rgb colormap(const std::string& name, double t);
void check_colormap(const std::string& name);

/// Min-max scales `values` (row-major h x w) through a colormap. A constant
/// map renders as the colormap's low end. Returns the (min, max) used.
std::pair<double, double> render_scalar(std::span<const double> values, int height, int width,
                                        const std::string& cmap, RgbImage& out);

/// Horizontal concatenation with a `gap`-pixel white separator.
RgbImage hconcat(const std::vector<RgbImage>& panels, int gap = 2);

}  // namespace nerd
