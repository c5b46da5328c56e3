#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nerd/error.hpp"

namespace nerd {

/// Channel-planar activation tensor laid out as [channels][batch][height][width].
///
/// Keeping the channel axis outermost makes every convolution a single GEMM
/// over all (batch, pixel) columns and makes channel concatenation a plain
/// append of planes.
template <class T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(int channels, int batch, int height, int width, T fill = T(0))
      : channels_(channels),
        batch_(batch),
        height_(height),
        width_(width),
        data_(static_cast<std::size_t>(channels) * batch * height * width, fill) {}

  int channels() const noexcept { return channels_; }
  int batch() const noexcept { return batch_; }
  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t pixels() const noexcept { return static_cast<std::size_t>(height_) * width_; }
  /// Columns of the GEMM view: batch * height * width.
  std::size_t columns() const noexcept { return static_cast<std::size_t>(batch_) * pixels(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  std::size_t index(int c, int b, int y, int x) const noexcept {
    return ((static_cast<std::size_t>(c) * batch_ + b) * height_ + y) * width_ + x;
  }
  T& at(int c, int b, int y, int x) noexcept { return data_[index(c, b, y, x)]; }
  const T& at(int c, int b, int y, int x) const noexcept { return data_[index(c, b, y, x)]; }

  /// Plane of one channel across the whole batch (batch * pixels values).
  T* channel(int c) noexcept { return data_.data() + static_cast<std::size_t>(c) * columns(); }
  const T* channel(int c) const noexcept {
    return data_.data() + static_cast<std::size_t>(c) * columns();
  }
  T* plane(int c, int b) noexcept { return channel(c) + static_cast<std::size_t>(b) * pixels(); }
  const T* plane(int c, int b) const noexcept {
    return channel(c) + static_cast<std::size_t>(b) * pixels();
  }

  bool same_shape(const Tensor& o) const noexcept {
    return channels_ == o.channels_ && batch_ == o.batch_ && height_ == o.height_ &&
           width_ == o.width_;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  std::string shape_string() const {
    return "[C=" + std::to_string(channels_) + ", B=" + std::to_string(batch_) +
           ", H=" + std::to_string(height_) + ", W=" + std::to_string(width_) + "]";
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out(channels_, batch_, height_, width_);
    std::transform(data_.begin(), data_.end(), out.data(),
                   [](T v) { return static_cast<U>(v); });
    return out;
  }

 private:
  int channels_ = 0;
  int batch_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

/// Stacks the channel planes of `a` followed by those of `b`.
template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.batch() != b.batch() || a.height() != b.height() || a.width() != b.width())
    throw ShapeError("concat_channels: " + a.shape_string() + " vs " + b.shape_string());
  Tensor<T> out(a.channels() + b.channels(), a.batch(), a.height(), a.width());
  std::copy(a.data(), a.data() + a.size(), out.data());
  std::copy(b.data(), b.data() + b.size(), out.data() + a.size());
  return out;
}

/// Splits a gradient produced for concat_channels(a, b) back into its parts.
template <class T>
void split_channels(const Tensor<T>& joined, int first_channels, Tensor<T>& first,
                    Tensor<T>& second) {
  first = Tensor<T>(first_channels, joined.batch(), joined.height(), joined.width());
  second = Tensor<T>(joined.channels() - first_channels, joined.batch(), joined.height(),
                     joined.width());
  std::copy(joined.data(), joined.data() + first.size(), first.data());
  std::copy(joined.data() + first.size(), joined.data() + joined.size(), second.data());
}

}  // namespace nerd
