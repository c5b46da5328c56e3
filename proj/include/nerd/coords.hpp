#pragma once

#include <array>
#include <memory>
#include <vector>

namespace nerd {

/// Per-pixel distances to the four image borders, channel order
/// (top, right, bottom, left).
class PositionField {
 public:
  static constexpr int kDims = 4;

  PositionField(int height, int width, std::vector<double> values, bool normalized);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  bool normalized() const noexcept { return normalized_; }
  std::size_t pixels() const noexcept { return static_cast<std::size_t>(height_) * width_; }

  /// Row-major [pixel][4] storage, pixel = y * width + x.
  const std::vector<double>& values() const noexcept { return values_; }
  std::array<double, 4> at(int y, int x) const;

 private:
  int height_;
  int width_;
  std::vector<double> values_;
  bool normalized_;
};

/// values[y][x] = (y, W-1-x, H-1-y, x). Throws InvalidArgument on a
/// non-positive dimension.
PositionField position_field(int height, int width);

/// Rows divided by max(H-1, 1), columns by max(W-1, 1). Throws
/// ContractViolation when the field is already normalized.
PositionField normalize_positions(const PositionField& field);

/// Normalized field for (H, W), computed once and shared. Safe for
/// concurrent callers.
std::shared_ptr<const PositionField> cached_normalized_field(int height, int width);

}  // namespace nerd
