#include "nerd/coords.hpp"

#include <algorithm>
#include <map>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <utility>

#include "nerd/error.hpp"

namespace nerd {

PositionField::PositionField(int height, int width, std::vector<double> values, bool normalized)
    : height_(height), width_(width), values_(std::move(values)), normalized_(normalized) {}

std::array<double, 4> PositionField::at(int y, int x) const {
  const std::size_t base = (static_cast<std::size_t>(y) * width_ + x) * kDims;
  return {values_[base], values_[base + 1], values_[base + 2], values_[base + 3]};
}

PositionField position_field(int height, int width) {
  if (height < 1 || width < 1)
    throw InvalidArgument("position_field: dimensions must be positive, got " +
                          std::to_string(height) + "x" + std::to_string(width));
  std::vector<double> v(static_cast<std::size_t>(height) * width * PositionField::kDims);
  std::size_t k = 0;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      v[k++] = y;
      v[k++] = width - 1 - x;
      v[k++] = height - 1 - y;
      v[k++] = x;
    }
  }
  return PositionField(height, width, std::move(v), false);
}

PositionField normalize_positions(const PositionField& field) {
  if (field.normalized()) throw ContractViolation("normalize_positions: field already normalized");
  const double rows = std::max(field.height() - 1, 1);
  const double cols = std::max(field.width() - 1, 1);
  std::vector<double> v = field.values();
  for (std::size_t p = 0; p < field.pixels(); ++p) {
    double* d = v.data() + p * PositionField::kDims;
    d[0] /= rows;
    d[1] /= cols;
    d[2] /= rows;
    d[3] /= cols;
  }
  return PositionField(field.height(), field.width(), std::move(v), true);
}

std::shared_ptr<const PositionField> cached_normalized_field(int height, int width) {
  static std::shared_mutex mutex;
  static std::map<std::pair<int, int>, std::shared_ptr<const PositionField>> cache;
  const auto key = std::make_pair(height, width);
  {
    std::shared_lock lock(mutex);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  auto field =
      std::make_shared<const PositionField>(normalize_positions(position_field(height, width)));
  std::unique_lock lock(mutex);
  return cache.try_emplace(key, std::move(field)).first->second;
}

}  // namespace nerd
