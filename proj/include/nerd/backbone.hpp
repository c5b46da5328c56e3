#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nerd/nn.hpp"
#include "nerd/tensor.hpp"

namespace nerd {

struct BackboneConfig {
  int in_channels = 1;
  /// Filter counts per depth level, shallowest first.
  std::array<int, 5> filters{16, 32, 64, 128, 256};
  /// Width C of the final feature map; 0 selects filters[0].
  int feature_channels = 0;
  NormKind norm = NormKind::Instance;

  int resolved_feature_channels() const noexcept {
    return feature_channels > 0 ? feature_channels : filters[0];
  }
  /// Throws ConfigError if the filter list is empty, non-positive or decreasing.
  void validate() const;
};

std::array<int, 5> preset_filters(const std::string& name);  // "low" | "high"
BackboneConfig low_preset(int in_channels = 1);
BackboneConfig high_preset(int in_channels = 1);

/// Final feature map X, channel-planar: channels() == C, batch() == B.
template <class T>
using FeatureMap = Tensor<T>;

/// Converts B x H x W x C interleaved images into the planar layout.
template <class T>
Tensor<T> images_to_tensor(std::span<const T> images, int batch, int height, int width,
                           int channels);

/// Four-level U-Net: double 3x3 conv blocks, 2x2 max pooling, nearest 2x
/// upsampling with a 1x1 channel reduction, skip concatenation, and a final
/// 1x1 projection to the feature width. All 3x3 convolutions zero-pad.
template <class T>
class Backbone {
 public:
  static constexpr int kLevels = 5;
  static constexpr int kDivisor = 16;

  Backbone(const BackboneConfig& config, std::uint64_t seed);

  const BackboneConfig& config() const noexcept { return config_; }
  std::uint64_t seed() const noexcept { return seed_; }

  /// Throws ShapeError naming the axis when H or W is not divisible by 16.
  FeatureMap<T> forward(const Tensor<T>& images);
  /// Gradient of the features w.r.t. the input images; accumulates parameter
  /// gradients. Must follow a forward() on the same input.
  Tensor<T> backward(const FeatureMap<T>& grad_features);

  ParamRefs<T> params();
  std::size_t param_count();

 private:
  BackboneConfig config_;
  std::uint64_t seed_;
  std::array<DoubleConv<T>, 5> encoders_;
  std::array<MaxPool2<T>, 4> pools_;
  std::array<Conv2d<T>, 4> reducers_;  // level i+1 -> level i channel reduction
  std::array<DoubleConv<T>, 4> decoders_;
  Conv2d<T> projection_;
};

}  // namespace nerd
