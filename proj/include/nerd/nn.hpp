#pragma once

// Layer primitives with explicit forward/backward passes. Every layer caches
// what its backward pass needs during forward; backward accumulates into the
// parameter gradients and returns the input gradient.

#include <cstdint>
#include <string>
#include <vector>

#include "nerd/rng.hpp"
#include "nerd/tensor.hpp"

namespace nerd {

template <class T>
struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;

  Param() = default;
  Param(std::string n, std::vector<int> s);
  std::size_t size() const noexcept { return value.size(); }
};

template <class T>
using ParamRefs = std::vector<Param<T>*>;

template <class T>
std::size_t count_params(const ParamRefs<T>& params) {
  std::size_t n = 0;
  for (const auto* p : params) n += p->size();
  return n;
}

template <class T>
void zero_grads(const ParamRefs<T>& params) {
  for (auto* p : params) std::fill(p->grad.begin(), p->grad.end(), T(0));
}

/// Uniform init in [-bound, bound] drawn in double, then narrowed.
template <class T>
void init_uniform(Param<T>& p, Rng& rng, double bound) {
  for (auto& v : p.value) v = static_cast<T>(rng.uniform(-bound, bound));
}

/// 2D convolution (kernel 1 or 3, stride 1, zero padding k/2).
template <class T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, bool bias);

  /// He-uniform weights when followed by ReLU, otherwise fan-in scaled;
  /// biases start at zero.
  void init(Rng& rng, bool relu_follows);
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy);
  void collect(ParamRefs<T>& out);

  int in_channels() const noexcept { return in_; }
  int out_channels() const noexcept { return out_; }
  int kernel() const noexcept { return kernel_; }
  bool has_bias() const noexcept { return has_bias_; }

 private:
  int in_ = 0;
  int out_ = 0;
  int kernel_ = 3;
  bool has_bias_ = false;
  Param<T> weight_;  // [out][in * k * k]
  Param<T> bias_;
  Tensor<T> input_;
};

/// Per-sample, per-channel normalization over the spatial plane with a
/// learned affine transform.
template <class T>
class InstanceNorm {
 public:
  InstanceNorm() = default;
  InstanceNorm(const std::string& name, int channels, double eps = 1e-5);

  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy);
  void collect(ParamRefs<T>& out);

 private:
  int channels_ = 0;
  double eps_ = 1e-5;
  Param<T> gamma_;
  Param<T> beta_;
  Tensor<T> normalized_;
  std::vector<double> inv_std_;  // [channel][batch]
};

enum class NormKind { Instance, None };

/// conv3x3 -> (instance norm) -> ReLU. The convolution carries a bias only
/// when no normalization follows it.
template <class T>
class ConvUnit {
 public:
  ConvUnit() = default;
  ConvUnit(const std::string& name, int in_channels, int out_channels, NormKind norm);

  void init(Rng& rng) { conv_.init(rng, true); }
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy);
  void collect(ParamRefs<T>& out);

 private:
  Conv2d<T> conv_;
  InstanceNorm<T> norm_;
  bool use_norm_ = true;
  Tensor<T> activated_;
};

template <class T>
class DoubleConv {
 public:
  DoubleConv() = default;
  DoubleConv(const std::string& name, int in_channels, int out_channels, NormKind norm);

  void init(Rng& rng);
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy);
  void collect(ParamRefs<T>& out);

 private:
  ConvUnit<T> first_;
  ConvUnit<T> second_;
};

/// 2x2 max pooling with stride 2.
template <class T>
class MaxPool2 {
 public:
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy);

 private:
  int in_height_ = 0;
  int in_width_ = 0;
  std::vector<std::uint8_t> argmax_;
};

/// Nearest-neighbour 2x upsampling.
template <class T>
Tensor<T> upsample2(const Tensor<T>& x);
template <class T>
Tensor<T> upsample2_backward(const Tensor<T>& dy);

/// Fully connected layer over row-major [rows][features] inputs.
template <class T>
class Dense {
 public:
  Dense() = default;
  Dense(const std::string& name, int in_features, int out_features, bool bias);

  void init(Rng& rng, bool relu_follows);
  /// `x` is rows x in_features, row-major. Returns rows x out_features.
  std::vector<T> forward(const std::vector<T>& x, std::size_t rows);
  std::vector<T> backward(const std::vector<T>& dy, std::size_t rows);
  void collect(ParamRefs<T>& out);

  int in_features() const noexcept { return in_; }
  int out_features() const noexcept { return out_; }
  Param<T>& weight() noexcept { return weight_; }
  Param<T>& bias() noexcept { return bias_; }

 private:
  int in_ = 0;
  int out_ = 0;
  bool has_bias_ = true;
  Param<T> weight_;  // [out][in]
  Param<T> bias_;
  std::vector<T> input_;
};

/// Dense stack with ReLU between layers and a linear output layer.
template <class T>
class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::string& name, int in_features, const std::vector<int>& hidden, int out_features,
      bool final_bias = true);

  void init(Rng& rng);
  std::vector<T> forward(const std::vector<T>& x, std::size_t rows);
  std::vector<T> backward(const std::vector<T>& dy, std::size_t rows);
  void collect(ParamRefs<T>& out);

  int in_features() const noexcept { return layers_.front().in_features(); }
  int out_features() const noexcept { return layers_.back().out_features(); }
  Dense<T>& output_layer() noexcept { return layers_.back(); }

 private:
  std::vector<Dense<T>> layers_;
  std::vector<std::vector<T>> activations_;  // post-ReLU outputs of hidden layers
};

}  // namespace nerd
