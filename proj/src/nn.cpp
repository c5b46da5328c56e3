#include "nerd/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>

namespace nerd {
namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

// Upper bound on im2col buffer elements; convolutions are processed in
// groups of whole samples that fit.
constexpr std::size_t kColumnBudget = std::size_t{1} << 23;

// Writes the 3x3 patches of samples [b0, b0 + nb) into `col`, a row-major
// (in * 9) x (nb * H * W) matrix.
template <class T>
void im2col3(const Tensor<T>& x, int b0, int nb, T* col) {
  const int h = x.height();
  const int w = x.width();
  const std::size_t p = x.pixels();
  const std::size_t ncols = nb * p;
  for (int ci = 0; ci < x.channels(); ++ci) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        T* dst = col + static_cast<std::size_t>((ci * 3 + ky) * 3 + kx) * ncols;
        for (int b = 0; b < nb; ++b) {
          const T* src = x.plane(ci, b0 + b);
          T* d = dst + b * p;
          for (int y = 0; y < h; ++y) {
            T* drow = d + static_cast<std::size_t>(y) * w;
            const int yy = y + ky - 1;
            if (yy < 0 || yy >= h) {
              std::fill(drow, drow + w, T(0));
              continue;
            }
            const T* srow = src + static_cast<std::size_t>(yy) * w;
            if (kx == 0) {
              drow[0] = T(0);
              std::copy(srow, srow + w - 1, drow + 1);
            } else if (kx == 1) {
              std::copy(srow, srow + w, drow);
            } else {
              std::copy(srow + 1, srow + w, drow);
              drow[w - 1] = T(0);
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col3: scatters patch gradients back into dx.
template <class T>
void col2im3(const T* col, int b0, int nb, Tensor<T>& dx) {
  const int h = dx.height();
  const int w = dx.width();
  const std::size_t p = dx.pixels();
  const std::size_t ncols = nb * p;
  for (int ci = 0; ci < dx.channels(); ++ci) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const T* src = col + static_cast<std::size_t>((ci * 3 + ky) * 3 + kx) * ncols;
        for (int b = 0; b < nb; ++b) {
          T* dplane = dx.plane(ci, b0 + b);
          const T* s = src + b * p;
          for (int y = 0; y < h; ++y) {
            const int yy = y + ky - 1;
            if (yy < 0 || yy >= h) continue;
            const T* srow = s + static_cast<std::size_t>(y) * w;
            T* drow = dplane + static_cast<std::size_t>(yy) * w;
            if (kx == 0) {
              for (int xx = 0; xx < w - 1; ++xx) drow[xx] += srow[xx + 1];
            } else if (kx == 1) {
              for (int xx = 0; xx < w; ++xx) drow[xx] += srow[xx];
            } else {
              for (int xx = 1; xx < w; ++xx) drow[xx] += srow[xx - 1];
            }
          }
        }
      }
    }
  }
}

int samples_per_chunk(std::size_t rows, std::size_t pixels, int batch) {
  const std::size_t per_sample = std::max<std::size_t>(rows * pixels, 1);
  return static_cast<int>(std::clamp<std::size_t>(kColumnBudget / per_sample, 1, batch));
}

}  // namespace

template <class T>
Param<T>::Param(std::string n, std::vector<int> s) : name(std::move(n)), shape(std::move(s)) {
  std::size_t count = 1;
  for (int d : shape) count *= static_cast<std::size_t>(d);
  value.assign(count, T(0));
  grad.assign(count, T(0));
}

// ---------------------------------------------------------------- Conv2d

template <class T>
Conv2d<T>::Conv2d(const std::string& name, int in_channels, int out_channels, int kernel,
                  bool bias)
    : in_(in_channels), out_(out_channels), kernel_(kernel), has_bias_(bias) {
  if (kernel != 1 && kernel != 3) throw InvalidArgument("Conv2d: kernel must be 1 or 3");
  if (in_channels < 1 || out_channels < 1) throw InvalidArgument("Conv2d: empty channel count");
  weight_ = Param<T>(name + ".weight", {out_channels, in_channels, kernel, kernel});
  if (bias) bias_ = Param<T>(name + ".bias", {out_channels});
}

template <class T>
void Conv2d<T>::init(Rng& rng, bool relu_follows) {
  const double fan_in = static_cast<double>(in_) * kernel_ * kernel_;
  init_uniform(weight_, rng, std::sqrt((relu_follows ? 6.0 : 3.0) / fan_in));
  std::fill(bias_.value.begin(), bias_.value.end(), T(0));
}

template <class T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) {
  if (x.channels() != in_)
    throw ShapeError("Conv2d " + weight_.name + ": expected " + std::to_string(in_) +
                     " input channels, got " + x.shape_string());
  input_ = x;
  const int batch = x.batch();
  const std::size_t p = x.pixels();
  const std::size_t k = static_cast<std::size_t>(in_) * kernel_ * kernel_;
  const auto stride = static_cast<Eigen::Index>(x.columns());
  Tensor<T> y(out_, batch, x.height(), x.width());
  ConstMatMap<T> wmat(weight_.value.data(), out_, k, Eigen::OuterStride<>(k));

  const int chunk = samples_per_chunk(kernel_ == 3 ? k : 0, p, batch);
  std::vector<T> col;
  for (int b0 = 0; b0 < batch; b0 += chunk) {
    const int nb = std::min(chunk, batch - b0);
    const auto ncols = static_cast<Eigen::Index>(nb * p);
    MatMap<T> ymap(y.data() + b0 * p, out_, ncols, Eigen::OuterStride<>(stride));
    if (kernel_ == 3) {
      col.resize(k * ncols);
      im2col3(x, b0, nb, col.data());
      ConstMatMap<T> cmap(col.data(), k, ncols, Eigen::OuterStride<>(ncols));
      ymap.noalias() = wmat * cmap;
    } else {
      ConstMatMap<T> xmap(x.data() + b0 * p, in_, ncols, Eigen::OuterStride<>(stride));
      ymap.noalias() = wmat * xmap;
    }
  }
  if (has_bias_) {
    for (int c = 0; c < out_; ++c) {
      T* row = y.channel(c);
      const T b = bias_.value[c];
      for (std::size_t i = 0; i < y.columns(); ++i) row[i] += b;
    }
  }
  return y;
}

template <class T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& dy) {
  const Tensor<T>& x = input_;
  if (dy.channels() != out_ || dy.batch() != x.batch() || dy.height() != x.height() ||
      dy.width() != x.width())
    throw ShapeError("Conv2d backward: gradient shape " + dy.shape_string());
  const int batch = x.batch();
  const std::size_t p = x.pixels();
  const std::size_t k = static_cast<std::size_t>(in_) * kernel_ * kernel_;
  const auto stride = static_cast<Eigen::Index>(x.columns());
  Tensor<T> dx(in_, batch, x.height(), x.width());
  ConstMatMap<T> wmat(weight_.value.data(), out_, k, Eigen::OuterStride<>(k));
  MatMap<T> dwmat(weight_.grad.data(), out_, k, Eigen::OuterStride<>(k));

  const int chunk = samples_per_chunk(kernel_ == 3 ? k : 0, p, batch);
  std::vector<T> col;
  std::vector<T> dcol;
  for (int b0 = 0; b0 < batch; b0 += chunk) {
    const int nb = std::min(chunk, batch - b0);
    const auto ncols = static_cast<Eigen::Index>(nb * p);
    ConstMatMap<T> dymap(dy.data() + b0 * p, out_, ncols, Eigen::OuterStride<>(stride));
    if (kernel_ == 3) {
      col.resize(k * ncols);
      im2col3(x, b0, nb, col.data());
      ConstMatMap<T> cmap(col.data(), k, ncols, Eigen::OuterStride<>(ncols));
      dwmat.noalias() += dymap * cmap.transpose();
      dcol.resize(k * ncols);
      MatMap<T> dcmap(dcol.data(), k, ncols, Eigen::OuterStride<>(ncols));
      dcmap.noalias() = wmat.transpose() * dymap;
      col2im3(dcol.data(), b0, nb, dx);
    } else {
      ConstMatMap<T> xmap(x.data() + b0 * p, in_, ncols, Eigen::OuterStride<>(stride));
      dwmat.noalias() += dymap * xmap.transpose();
      MatMap<T> dxmap(dx.data() + b0 * p, in_, ncols, Eigen::OuterStride<>(stride));
      dxmap.noalias() = wmat.transpose() * dymap;
    }
  }
  if (has_bias_) {
    for (int c = 0; c < out_; ++c) {
      const T* row = dy.channel(c);
      T s = T(0);
      for (std::size_t i = 0; i < dy.columns(); ++i) s += row[i];
      bias_.grad[c] += s;
    }
  }
  return dx;
}

template <class T>
void Conv2d<T>::collect(ParamRefs<T>& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

// ---------------------------------------------------------- InstanceNorm

template <class T>
InstanceNorm<T>::InstanceNorm(const std::string& name, int channels, double eps)
    : channels_(channels), eps_(eps) {
  gamma_ = Param<T>(name + ".gamma", {channels});
  beta_ = Param<T>(name + ".beta", {channels});
  std::fill(gamma_.value.begin(), gamma_.value.end(), T(1));
}

template <class T>
Tensor<T> InstanceNorm<T>::forward(const Tensor<T>& x) {
  if (x.channels() != channels_) throw ShapeError("InstanceNorm: channel mismatch");
  const std::size_t p = x.pixels();
  normalized_ = Tensor<T>(x.channels(), x.batch(), x.height(), x.width());
  inv_std_.assign(static_cast<std::size_t>(channels_) * x.batch(), 0.0);
  Tensor<T> y(x.channels(), x.batch(), x.height(), x.width());
  for (int c = 0; c < channels_; ++c) {
    for (int b = 0; b < x.batch(); ++b) {
      const T* in = x.plane(c, b);
      double mean = 0.0;
      for (std::size_t i = 0; i < p; ++i) mean += in[i];
      mean /= static_cast<double>(p);
      double var = 0.0;
      for (std::size_t i = 0; i < p; ++i) {
        const double d = in[i] - mean;
        var += d * d;
      }
      var /= static_cast<double>(p);
      const double inv = 1.0 / std::sqrt(var + eps_);
      inv_std_[static_cast<std::size_t>(c) * x.batch() + b] = inv;
      T* xh = normalized_.plane(c, b);
      T* out = y.plane(c, b);
      const T g = gamma_.value[c];
      const T be = beta_.value[c];
      for (std::size_t i = 0; i < p; ++i) {
        xh[i] = static_cast<T>((in[i] - mean) * inv);
        out[i] = g * xh[i] + be;
      }
    }
  }
  return y;
}

template <class T>
Tensor<T> InstanceNorm<T>::backward(const Tensor<T>& dy) {
  const std::size_t p = dy.pixels();
  const double n = static_cast<double>(p);
  Tensor<T> dx(dy.channels(), dy.batch(), dy.height(), dy.width());
  for (int c = 0; c < channels_; ++c) {
    const double g = gamma_.value[c];
    double dgamma = 0.0;
    double dbeta = 0.0;
    for (int b = 0; b < dy.batch(); ++b) {
      const T* d = dy.plane(c, b);
      const T* xh = normalized_.plane(c, b);
      double sum_d = 0.0;
      double sum_dx = 0.0;
      for (std::size_t i = 0; i < p; ++i) {
        sum_d += d[i];
        sum_dx += static_cast<double>(d[i]) * xh[i];
      }
      dgamma += sum_dx;
      dbeta += sum_d;
      const double scale = g * inv_std_[static_cast<std::size_t>(c) * dy.batch() + b] / n;
      T* out = dx.plane(c, b);
      for (std::size_t i = 0; i < p; ++i)
        out[i] = static_cast<T>(scale * (n * d[i] - sum_d - xh[i] * sum_dx));
    }
    gamma_.grad[c] += static_cast<T>(dgamma);
    beta_.grad[c] += static_cast<T>(dbeta);
  }
  return dx;
}

template <class T>
void InstanceNorm<T>::collect(ParamRefs<T>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

// ------------------------------------------------------------- ConvUnit

template <class T>
ConvUnit<T>::ConvUnit(const std::string& name, int in_channels, int out_channels, NormKind norm)
    : conv_(name + ".conv", in_channels, out_channels, 3, norm == NormKind::None),
      use_norm_(norm == NormKind::Instance) {
  if (use_norm_) norm_ = InstanceNorm<T>(name + ".norm", out_channels);
}

template <class T>
Tensor<T> ConvUnit<T>::forward(const Tensor<T>& x) {
  Tensor<T> y = conv_.forward(x);
  if (use_norm_) y = norm_.forward(y);
  for (auto& v : y.values()) v = v > T(0) ? v : T(0);
  activated_ = y;
  return y;
}

template <class T>
Tensor<T> ConvUnit<T>::backward(const Tensor<T>& dy) {
  Tensor<T> g = dy;
  const T* a = activated_.data();
  T* gv = g.data();
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!(a[i] > T(0))) gv[i] = T(0);
  if (use_norm_) g = norm_.backward(g);
  return conv_.backward(g);
}

template <class T>
void ConvUnit<T>::collect(ParamRefs<T>& out) {
  conv_.collect(out);
  if (use_norm_) norm_.collect(out);
}

template <class T>
DoubleConv<T>::DoubleConv(const std::string& name, int in_channels, int out_channels,
                          NormKind norm)
    : first_(name + ".0", in_channels, out_channels, norm),
      second_(name + ".1", out_channels, out_channels, norm) {}

template <class T>
void DoubleConv<T>::init(Rng& rng) {
  first_.init(rng);
  second_.init(rng);
}

template <class T>
Tensor<T> DoubleConv<T>::forward(const Tensor<T>& x) {
  return second_.forward(first_.forward(x));
}

template <class T>
Tensor<T> DoubleConv<T>::backward(const Tensor<T>& dy) {
  return first_.backward(second_.backward(dy));
}

template <class T>
void DoubleConv<T>::collect(ParamRefs<T>& out) {
  first_.collect(out);
  second_.collect(out);
}

// ------------------------------------------------------ pooling/upsample

template <class T>
Tensor<T> MaxPool2<T>::forward(const Tensor<T>& x) {
  if (x.height() % 2 != 0 || x.width() % 2 != 0)
    throw ShapeError("MaxPool2: odd spatial size " + x.shape_string());
  in_height_ = x.height();
  in_width_ = x.width();
  const int oh = x.height() / 2;
  const int ow = x.width() / 2;
  Tensor<T> y(x.channels(), x.batch(), oh, ow);
  argmax_.assign(y.size(), 0);
  std::size_t k = 0;
  for (int c = 0; c < x.channels(); ++c) {
    for (int b = 0; b < x.batch(); ++b) {
      const T* in = x.plane(c, b);
      T* out = y.plane(c, b);
      for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j, ++k) {
          const T* r0 = in + static_cast<std::size_t>(2 * i) * x.width() + 2 * j;
          const T* r1 = r0 + x.width();
          const T cand[4] = {r0[0], r0[1], r1[0], r1[1]};
          std::uint8_t best = 0;
          for (std::uint8_t q = 1; q < 4; ++q)
            if (cand[q] > cand[best]) best = q;
          argmax_[k] = best;
          out[static_cast<std::size_t>(i) * ow + j] = cand[best];
        }
      }
    }
  }
  return y;
}

template <class T>
Tensor<T> MaxPool2<T>::backward(const Tensor<T>& dy) {
  Tensor<T> dx(dy.channels(), dy.batch(), in_height_, in_width_);
  std::size_t k = 0;
  for (int c = 0; c < dy.channels(); ++c) {
    for (int b = 0; b < dy.batch(); ++b) {
      const T* g = dy.plane(c, b);
      T* out = dx.plane(c, b);
      for (int i = 0; i < dy.height(); ++i) {
        for (int j = 0; j < dy.width(); ++j, ++k) {
          const int q = argmax_[k];
          const int y = 2 * i + q / 2;
          const int x = 2 * j + q % 2;
          out[static_cast<std::size_t>(y) * in_width_ + x] +=
              g[static_cast<std::size_t>(i) * dy.width() + j];
        }
      }
    }
  }
  return dx;
}

template <class T>
Tensor<T> upsample2(const Tensor<T>& x) {
  Tensor<T> y(x.channels(), x.batch(), x.height() * 2, x.width() * 2);
  for (int c = 0; c < x.channels(); ++c) {
    for (int b = 0; b < x.batch(); ++b) {
      const T* in = x.plane(c, b);
      T* out = y.plane(c, b);
      for (int i = 0; i < y.height(); ++i) {
        const T* src = in + static_cast<std::size_t>(i / 2) * x.width();
        T* dst = out + static_cast<std::size_t>(i) * y.width();
        for (int j = 0; j < y.width(); ++j) dst[j] = src[j / 2];
      }
    }
  }
  return y;
}

template <class T>
Tensor<T> upsample2_backward(const Tensor<T>& dy) {
  Tensor<T> dx(dy.channels(), dy.batch(), dy.height() / 2, dy.width() / 2);
  for (int c = 0; c < dy.channels(); ++c) {
    for (int b = 0; b < dy.batch(); ++b) {
      const T* g = dy.plane(c, b);
      T* out = dx.plane(c, b);
      for (int i = 0; i < dy.height(); ++i) {
        const T* src = g + static_cast<std::size_t>(i) * dy.width();
        T* dst = out + static_cast<std::size_t>(i / 2) * dx.width();
        for (int j = 0; j < dy.width(); ++j) dst[j / 2] += src[j];
      }
    }
  }
  return dx;
}

// ----------------------------------------------------------------- Dense

template <class T>
Dense<T>::Dense(const std::string& name, int in_features, int out_features, bool bias)
    : in_(in_features), out_(out_features), has_bias_(bias) {
  if (in_features < 1 || out_features < 1) throw InvalidArgument("Dense: empty feature count");
  weight_ = Param<T>(name + ".weight", {out_features, in_features});
  if (bias) bias_ = Param<T>(name + ".bias", {out_features});
}

template <class T>
void Dense<T>::init(Rng& rng, bool relu_follows) {
  init_uniform(weight_, rng, std::sqrt((relu_follows ? 6.0 : 3.0) / in_));
  std::fill(bias_.value.begin(), bias_.value.end(), T(0));
}

template <class T>
std::vector<T> Dense<T>::forward(const std::vector<T>& x, std::size_t rows) {
  if (x.size() != rows * in_) throw ShapeError("Dense " + weight_.name + ": input size mismatch");
  input_ = x;
  std::vector<T> y(rows * out_);
  const auto r = static_cast<Eigen::Index>(rows);
  ConstMatMap<T> xm(x.data(), r, in_, Eigen::OuterStride<>(in_));
  ConstMatMap<T> wm(weight_.value.data(), out_, in_, Eigen::OuterStride<>(in_));
  MatMap<T> ym(y.data(), r, out_, Eigen::OuterStride<>(out_));
  ym.noalias() = xm * wm.transpose();
  if (has_bias_) {
    for (std::size_t i = 0; i < rows; ++i)
      for (int o = 0; o < out_; ++o) y[i * out_ + o] += bias_.value[o];
  }
  return y;
}

template <class T>
std::vector<T> Dense<T>::backward(const std::vector<T>& dy, std::size_t rows) {
  if (dy.size() != rows * out_) throw ShapeError("Dense backward: gradient size mismatch");
  const auto r = static_cast<Eigen::Index>(rows);
  ConstMatMap<T> xm(input_.data(), r, in_, Eigen::OuterStride<>(in_));
  ConstMatMap<T> dym(dy.data(), r, out_, Eigen::OuterStride<>(out_));
  ConstMatMap<T> wm(weight_.value.data(), out_, in_, Eigen::OuterStride<>(in_));
  MatMap<T> dwm(weight_.grad.data(), out_, in_, Eigen::OuterStride<>(in_));
  dwm.noalias() += dym.transpose() * xm;
  if (has_bias_) {
    for (std::size_t i = 0; i < rows; ++i)
      for (int o = 0; o < out_; ++o) bias_.grad[o] += dy[i * out_ + o];
  }
  std::vector<T> dx(rows * in_);
  MatMap<T> dxm(dx.data(), r, in_, Eigen::OuterStride<>(in_));
  dxm.noalias() = dym * wm;
  return dx;
}

template <class T>
void Dense<T>::collect(ParamRefs<T>& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

// ------------------------------------------------------------------- Mlp

template <class T>
Mlp<T>::Mlp(const std::string& name, int in_features, const std::vector<int>& hidden,
            int out_features, bool final_bias) {
  int prev = in_features;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    layers_.emplace_back(name + "." + std::to_string(i), prev, hidden[i], true);
    prev = hidden[i];
  }
  layers_.emplace_back(name + "." + std::to_string(hidden.size()), prev, out_features,
                       final_bias);
}

template <class T>
void Mlp<T>::init(Rng& rng) {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].init(rng, i + 1 < layers_.size());
}

template <class T>
std::vector<T> Mlp<T>::forward(const std::vector<T>& x, std::size_t rows) {
  activations_.clear();
  std::vector<T> a = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    a = layers_[i].forward(a, rows);
    if (i + 1 < layers_.size()) {
      for (auto& v : a) v = v > T(0) ? v : T(0);
      activations_.push_back(a);
    }
  }
  return a;
}

template <class T>
std::vector<T> Mlp<T>::backward(const std::vector<T>& dy, std::size_t rows) {
  std::vector<T> g = dy;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    g = layers_[i].backward(g, rows);
    if (i > 0) {
      const auto& act = activations_[i - 1];
      for (std::size_t k = 0; k < g.size(); ++k)
        if (!(act[k] > T(0))) g[k] = T(0);
    }
  }
  return g;
}

template <class T>
void Mlp<T>::collect(ParamRefs<T>& out) {
  for (auto& l : layers_) l.collect(out);
}

#define NERD_INSTANTIATE(T)                                \
  template struct Param<T>;                                \
  template class Conv2d<T>;                                \
  template class InstanceNorm<T>;                          \
  template class ConvUnit<T>;                              \
  template class DoubleConv<T>;                            \
  template class MaxPool2<T>;                              \
  template Tensor<T> upsample2<T>(const Tensor<T>&);       \
  template Tensor<T> upsample2_backward<T>(const Tensor<T>&); \
  template class Dense<T>;                                 \
  template class Mlp<T>;

NERD_INSTANTIATE(float)
NERD_INSTANTIATE(double)

}  // namespace nerd
