#include "nerd/backbone.hpp"

#include <string>

namespace nerd {

void BackboneConfig::validate() const {
  if (in_channels < 1) throw ConfigError("backbone: in_channels must be >= 1");
  for (std::size_t i = 0; i < filters.size(); ++i) {
    if (filters[i] < 1) throw ConfigError("backbone: filter counts must be >= 1");
    if (i > 0 && filters[i] < filters[i - 1])
      throw ConfigError("backbone: filter counts must be non-decreasing");
  }
  if (feature_channels < 0) throw ConfigError("backbone: feature_channels must be >= 0");
}

std::array<int, 5> preset_filters(const std::string& name) {
  if (name == "low") return {16, 32, 64, 128, 256};
  if (name == "high") return {32, 64, 128, 256, 512};
  throw ConfigError("unknown backbone preset '" + name + "' (expected low or high)");
}

BackboneConfig low_preset(int in_channels) {
  BackboneConfig c;
  c.in_channels = in_channels;
  c.filters = preset_filters("low");
  return c;
}

BackboneConfig high_preset(int in_channels) {
  BackboneConfig c;
  c.in_channels = in_channels;
  c.filters = preset_filters("high");
  return c;
}

template <class T>
Tensor<T> images_to_tensor(std::span<const T> images, int batch, int height, int width,
                           int channels) {
  const std::size_t expected = static_cast<std::size_t>(batch) * height * width * channels;
  if (images.size() != expected)
    throw ShapeError("images_to_tensor: expected " + std::to_string(expected) + " values, got " +
                     std::to_string(images.size()));
  Tensor<T> out(channels, batch, height, width);
  std::size_t k = 0;
  for (int b = 0; b < batch; ++b)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        for (int c = 0; c < channels; ++c) out.at(c, b, y, x) = images[k++];
  return out;
}

template <class T>
Backbone<T>::Backbone(const BackboneConfig& config, std::uint64_t seed)
    : config_(config), seed_(seed) {
  config_.validate();
  const auto& f = config_.filters;
  int prev = config_.in_channels;
  for (int i = 0; i < kLevels; ++i) {
    encoders_[i] = DoubleConv<T>("backbone.enc" + std::to_string(i), prev, f[i], config_.norm);
    prev = f[i];
  }
  for (int i = 0; i < kLevels - 1; ++i) {
    reducers_[i] = Conv2d<T>("backbone.up" + std::to_string(i), f[i + 1], f[i], 1, true);
    decoders_[i] =
        DoubleConv<T>("backbone.dec" + std::to_string(i), 2 * f[i], f[i], config_.norm);
  }
  projection_ =
      Conv2d<T>("backbone.proj", f[0], config_.resolved_feature_channels(), 1, true);

  Rng rng(seed);
  for (auto& e : encoders_) e.init(rng);
  for (int i = kLevels - 2; i >= 0; --i) {
    reducers_[i].init(rng, false);
    decoders_[i].init(rng);
  }
  projection_.init(rng, false);
}

template <class T>
FeatureMap<T> Backbone<T>::forward(const Tensor<T>& images) {
  if (images.channels() != config_.in_channels)
    throw ShapeError("backbone: expected " + std::to_string(config_.in_channels) +
                     " input channels, got " + std::to_string(images.channels()));
  if (images.height() % kDivisor != 0)
    throw ShapeError("backbone: height " + std::to_string(images.height()) +
                     " is not divisible by 16");
  if (images.width() % kDivisor != 0)
    throw ShapeError("backbone: width " + std::to_string(images.width()) +
                     " is not divisible by 16");

  std::array<Tensor<T>, 4> skips;
  Tensor<T> x = encoders_[0].forward(images);
  for (int i = 0; i < kLevels - 1; ++i) {
    skips[i] = x;
    x = encoders_[i + 1].forward(pools_[i].forward(x));
  }
  for (int i = kLevels - 2; i >= 0; --i) {
    Tensor<T> up = upsample2(reducers_[i].forward(x));
    x = decoders_[i].forward(concat_channels(skips[i], up));
  }
  return projection_.forward(x);
}

template <class T>
Tensor<T> Backbone<T>::backward(const FeatureMap<T>& grad_features) {
  Tensor<T> g = projection_.backward(grad_features);
  std::array<Tensor<T>, 4> skip_grads;
  for (int i = 0; i < kLevels - 1; ++i) {
    Tensor<T> joined = decoders_[i].backward(g);
    Tensor<T> up_grad;
    split_channels(joined, config_.filters[i], skip_grads[i], up_grad);
    g = reducers_[i].backward(upsample2_backward(up_grad));
  }
  for (int i = kLevels - 1; i >= 1; --i) {
    Tensor<T> pooled = encoders_[i].backward(g);
    g = pools_[i - 1].backward(pooled);
    const Tensor<T>& s = skip_grads[i - 1];
    T* gv = g.data();
    const T* sv = s.data();
    for (std::size_t k = 0; k < g.size(); ++k) gv[k] += sv[k];
  }
  return encoders_[0].backward(g);
}

template <class T>
ParamRefs<T> Backbone<T>::params() {
  ParamRefs<T> out;
  for (auto& e : encoders_) e.collect(out);
  for (int i = kLevels - 2; i >= 0; --i) {
    reducers_[i].collect(out);
    decoders_[i].collect(out);
  }
  projection_.collect(out);
  return out;
}

template <class T>
std::size_t Backbone<T>::param_count() {
  return count_params(params());
}

template class Backbone<float>;
template class Backbone<double>;
template Tensor<float> images_to_tensor<float>(std::span<const float>, int, int, int, int);
template Tensor<double> images_to_tensor<double>(std::span<const double>, int, int, int, int);

}  // namespace nerd
