#include "nerd/heads.hpp"

#include <cmath>

namespace nerd {
namespace {

template <class T>
void check_features(const FeatureMap<T>& f, int height, int width, int channels,
                    const char* who) {
  if (f.height() != height || f.width() != width || f.channels() != channels)
    throw ShapeError(std::string(who) + ": features " + f.shape_string() +
                     " do not match calibration " + std::to_string(height) + "x" +
                     std::to_string(width) + "x" + std::to_string(channels));
}

void check_field(const PositionField& field, int mlp_inputs, const char* who) {
  if (!field.normalized())
    throw ContractViolation(std::string(who) + ": position field must be normalized");
  if (mlp_inputs != PositionField::kDims)
    throw ShapeError(std::string(who) + ": calibrator must take 4 inputs, takes " +
                     std::to_string(mlp_inputs));
}

// log(e - 1): softplus of this is exactly the identity scale 1.
constexpr double kSoftplusOne = 0.54132485461291802;

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

const char* head_kind_name(HeadKind kind) noexcept {
  switch (kind) {
    case HeadKind::Baseline:
      return "baseline";
    case HeadKind::NerdM:
      return "nerdm";
    case HeadKind::NerdC:
      return "nerdc";
  }
  return "unknown";
}

HeadKind parse_head_kind(const std::string& name) {
  if (name == "baseline") return HeadKind::Baseline;
  if (name == "nerdm") return HeadKind::NerdM;
  if (name == "nerdc") return HeadKind::NerdC;
  throw ConfigError("invalid head kind '" + name + "' (expected baseline, nerdm or nerdc)");
}

template <class T>
std::vector<T> position_rows(const PositionField& field) {
  const auto& v = field.values();
  return std::vector<T>(v.begin(), v.end());
}

template <class T>
CalibratorOutputM<T> calibrate_m(Mlp<T>& mlp, const PositionField& field) {
  check_field(field, mlp.in_features(), "calibrate_m");
  if (mlp.out_features() % 2 != 0)
    throw ShapeError("calibrate_m: calibrator output width must be 2*C, got " +
                     std::to_string(mlp.out_features()));
  const std::size_t p = field.pixels();
  const std::vector<T> raw = mlp.forward(position_rows<T>(field), p);
  CalibratorOutputM<T> out;
  out.height = field.height();
  out.width = field.width();
  out.channels = mlp.out_features() / 2;
  const auto c = static_cast<std::size_t>(out.channels);
  out.inv_sigma.resize(p * c);
  out.neg_mu_over_sigma.resize(p * c);
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      out.inv_sigma[i * c + k] = raw[i * 2 * c + k];
      out.neg_mu_over_sigma[i * c + k] = raw[i * 2 * c + c + k];
    }
  }
  return out;
}

template <class T>
LogitMap<T> nerdm_logits(const FeatureMap<T>& features, const CalibratorOutputM<T>& calib,
                         std::span<const T> w) {
  check_features(features, calib.height, calib.width, calib.channels, "nerdm_logits");
  if (w.size() != static_cast<std::size_t>(calib.channels))
    throw ShapeError("nerdm_logits: classifier has " + std::to_string(w.size()) +
                     " weights for " + std::to_string(calib.channels) + " channels");
  const std::size_t p = features.pixels();
  const std::size_t c = calib.channels;
  LogitMap<T> s(1, features.batch(), features.height(), features.width());
  for (int b = 0; b < features.batch(); ++b) {
    T* out = s.plane(0, b);
    for (std::size_t k = 0; k < c; ++k) {
      const T* x = features.plane(static_cast<int>(k), b);
      const T wk = w[k];
      for (std::size_t i = 0; i < p; ++i)
        out[i] += wk * (x[i] * calib.inv_sigma[i * c + k] + calib.neg_mu_over_sigma[i * c + k]);
    }
  }
  return s;
}

template <class T>
CalibratorOutputC<T> calibrate_c(Mlp<T>& mlp, const PositionField& field) {
  check_field(field, mlp.in_features(), "calibrate_c");
  CalibratorOutputC<T> out;
  out.height = field.height();
  out.width = field.width();
  out.channels = mlp.out_features();
  out.weight_field = mlp.forward(position_rows<T>(field), field.pixels());
  return out;
}

template <class T>
LogitMap<T> nerdc_logits(const FeatureMap<T>& features, const CalibratorOutputC<T>& calib) {
  check_features(features, calib.height, calib.width, calib.channels, "nerdc_logits");
  const std::size_t p = features.pixels();
  const std::size_t c = calib.channels;
  LogitMap<T> s(1, features.batch(), features.height(), features.width());
  for (int b = 0; b < features.batch(); ++b) {
    T* out = s.plane(0, b);
    for (std::size_t k = 0; k < c; ++k) {
      const T* x = features.plane(static_cast<int>(k), b);
      for (std::size_t i = 0; i < p; ++i) out[i] += calib.weight_field[i * c + k] * x[i];
    }
  }
  return s;
}

template <class T>
LogitMap<T> baseline_logits(const FeatureMap<T>& features, std::span<const T> w) {
  if (w.size() != static_cast<std::size_t>(features.channels()))
    throw ShapeError("baseline_logits: classifier has " + std::to_string(w.size()) +
                     " weights for features " + features.shape_string());
  const std::size_t p = features.pixels();
  LogitMap<T> s(1, features.batch(), features.height(), features.width());
  for (int b = 0; b < features.batch(); ++b) {
    T* out = s.plane(0, b);
    for (int k = 0; k < features.channels(); ++k) {
      const T* x = features.plane(k, b);
      const T wk = w[k];
      for (std::size_t i = 0; i < p; ++i) out[i] += wk * x[i];
    }
  }
  return s;
}

template <class T>
std::vector<std::uint8_t> segment(const LogitMap<T>& logits, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw InvalidArgument("segment: threshold must lie in (0, 1), got " +
                          std::to_string(threshold));
  std::vector<std::uint8_t> mask(logits.size());
  const T* s = logits.data();
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask[i] = sigmoid(static_cast<double>(s[i])) >= threshold ? 1 : 0;
  return mask;
}

// ------------------------------------------------------------------ Head

template <class T>
Head<T>::Head(const HeadConfig& config, int feature_channels, std::uint64_t seed)
    : config_(config), channels_(feature_channels) {
  if (feature_channels < 1) throw ConfigError("head: feature_channels must be >= 1");
  for (int h : config.calibrator_hidden)
    if (h < 1) throw ConfigError("head: calibrator widths must be >= 1");
  deep_classifier_ = !config.classifier_hidden.empty();
  if (deep_classifier_ && config.kind == HeadKind::NerdC)
    throw ConfigError("head: nerdc computes its classifier per pixel; classifier_hidden must be empty");

  Rng rng(derive_seed(seed, 0x4EAD));
  // Drawn first for every head kind so that a given seed yields the same
  // initial classifier for baseline, NeRDm and NeRDc.
  std::vector<T> w0(channels_);
  for (auto& v : w0) v = static_cast<T>(rng.uniform(-1.0, 1.0) * std::sqrt(3.0 / channels_));

  if (config.kind != HeadKind::NerdC && !deep_classifier_) {
    weight_ = Param<T>("head.w", {channels_});
    weight_.value = w0;
  }
  if (deep_classifier_) {
    classifier_ = Mlp<T>("head.classifier", channels_, config.classifier_hidden, 1, false);
    classifier_.init(rng);
  }
  if (config.kind == HeadKind::Baseline) return;

  const int out = config.kind == HeadKind::NerdM ? 2 * channels_ : channels_;
  calibrator_ = Mlp<T>("head.calibrator", PositionField::kDims, config.calibrator_hidden, out);
  calibrator_.init(rng);
  Dense<T>& last = calibrator_.output_layer();
  std::fill(last.weight().value.begin(), last.weight().value.end(), T(0));
  auto& bias = last.bias().value;
  if (config.kind == HeadKind::NerdM) {
    const T one = static_cast<T>(config.constrain_scale ? kSoftplusOne : 1.0);
    for (int k = 0; k < channels_; ++k) {
      bias[k] = one;
      bias[channels_ + k] = T(0);
    }
  } else {
    bias = w0;
  }
}

template <class T>
CalibratorOutputM<T> Head<T>::current_m(const PositionField& field) {
  CalibratorOutputM<T> calib = calibrate_m(calibrator_, field);
  if (config_.constrain_scale) {
    raw_calibration_ = calib.inv_sigma;
    for (auto& v : calib.inv_sigma) v = static_cast<T>(softplus(v));
  }
  return calib;
}

template <class T>
LogitMap<T> Head<T>::forward(const FeatureMap<T>& features) {
  if (features.channels() != channels_)
    throw ShapeError("head: expected " + std::to_string(channels_) + " feature channels, got " +
                     features.shape_string());
  features_ = features;
  const auto field = cached_normalized_field(features.height(), features.width());
  const std::size_t p = features.pixels();
  const std::size_t c = channels_;
  const int batch = features.batch();

  if (config_.kind == HeadKind::NerdC) {
    calib_c_ = calibrate_c(calibrator_, *field);
    return nerdc_logits(features, calib_c_);
  }
  if (config_.kind == HeadKind::NerdM) calib_m_ = current_m(*field);

  if (!deep_classifier_) {
    if (config_.kind == HeadKind::NerdM)
      return nerdm_logits<T>(features, calib_m_, weight_.value);
    return baseline_logits<T>(features, weight_.value);
  }

  // Deeper classifier over the (optionally calibrated) feature vectors.
  classifier_input_.assign(static_cast<std::size_t>(batch) * p * c, T(0));
  for (int b = 0; b < batch; ++b) {
    for (std::size_t k = 0; k < c; ++k) {
      const T* x = features.plane(static_cast<int>(k), b);
      for (std::size_t i = 0; i < p; ++i) {
        T z = x[i];
        if (config_.kind == HeadKind::NerdM)
          z = x[i] * calib_m_.inv_sigma[i * c + k] + calib_m_.neg_mu_over_sigma[i * c + k];
        classifier_input_[(b * p + i) * c + k] = z;
      }
    }
  }
  const std::vector<T> s = classifier_.forward(classifier_input_, batch * p);
  LogitMap<T> out(1, batch, features.height(), features.width());
  std::copy(s.begin(), s.end(), out.data());
  return out;
}

template <class T>
FeatureMap<T> Head<T>::backward(const LogitMap<T>& grad_logits) {
  const FeatureMap<T>& x = features_;
  if (grad_logits.batch() != x.batch() || grad_logits.height() != x.height() ||
      grad_logits.width() != x.width())
    throw ShapeError("head backward: gradient shape " + grad_logits.shape_string());
  const std::size_t p = x.pixels();
  const std::size_t c = channels_;
  const int batch = x.batch();
  FeatureMap<T> dx(x.channels(), batch, x.height(), x.width());

  if (config_.kind == HeadKind::NerdC) {
    std::vector<T> dfield(p * c, T(0));
    for (int b = 0; b < batch; ++b) {
      const T* ds = grad_logits.plane(0, b);
      for (std::size_t k = 0; k < c; ++k) {
        const T* xv = x.plane(static_cast<int>(k), b);
        T* dxv = dx.plane(static_cast<int>(k), b);
        for (std::size_t i = 0; i < p; ++i) {
          dxv[i] = ds[i] * calib_c_.weight_field[i * c + k];
          dfield[i * c + k] += ds[i] * xv[i];
        }
      }
    }
    calibrator_.backward(dfield, p);
    return dx;
  }

  // dz[b][i][k]: gradient w.r.t. the classifier input vector at each pixel.
  std::vector<T> dz(static_cast<std::size_t>(batch) * p * c);
  if (deep_classifier_) {
    dz = classifier_.backward(std::vector<T>(grad_logits.data(), grad_logits.data() + grad_logits.size()),
                              batch * p);
  } else {
    for (int b = 0; b < batch; ++b) {
      const T* ds = grad_logits.plane(0, b);
      for (std::size_t k = 0; k < c; ++k) {
        const T* xv = x.plane(static_cast<int>(k), b);
        const T wk = weight_.value[k];
        double dw = 0.0;
        for (std::size_t i = 0; i < p; ++i) {
          dz[(b * p + i) * c + k] = ds[i] * wk;
          T z = xv[i];
          if (config_.kind == HeadKind::NerdM)
            z = xv[i] * calib_m_.inv_sigma[i * c + k] + calib_m_.neg_mu_over_sigma[i * c + k];
          dw += static_cast<double>(ds[i]) * z;
        }
        weight_.grad[k] += static_cast<T>(dw);
      }
    }
  }

  if (config_.kind == HeadKind::Baseline) {
    for (int b = 0; b < batch; ++b)
      for (std::size_t k = 0; k < c; ++k) {
        T* dxv = dx.plane(static_cast<int>(k), b);
        for (std::size_t i = 0; i < p; ++i) dxv[i] = dz[(b * p + i) * c + k];
      }
    return dx;
  }

  // NeRDm: z = x * inv + neg.
  std::vector<T> draw(p * 2 * c, T(0));
  for (int b = 0; b < batch; ++b) {
    for (std::size_t k = 0; k < c; ++k) {
      const T* xv = x.plane(static_cast<int>(k), b);
      T* dxv = dx.plane(static_cast<int>(k), b);
      for (std::size_t i = 0; i < p; ++i) {
        const T g = dz[(b * p + i) * c + k];
        dxv[i] = g * calib_m_.inv_sigma[i * c + k];
        draw[i * 2 * c + k] += g * xv[i];
        draw[i * 2 * c + c + k] += g;
      }
    }
  }
  if (config_.constrain_scale) {
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t k = 0; k < c; ++k)
        draw[i * 2 * c + k] *= static_cast<T>(sigmoid(raw_calibration_[i * c + k]));
  }
  calibrator_.backward(draw, p);
  return dx;
}

template <class T>
ParamRefs<T> Head<T>::params() {
  ParamRefs<T> out;
  if (config_.kind != HeadKind::NerdC && !deep_classifier_) out.push_back(&weight_);
  if (deep_classifier_) classifier_.collect(out);
  if (config_.kind != HeadKind::Baseline) calibrator_.collect(out);
  return out;
}

template <class T>
std::size_t Head<T>::param_count() {
  return count_params(params());
}

template <class T>
std::size_t Head<T>::calibrator_param_count() {
  if (config_.kind == HeadKind::Baseline) return 0;
  ParamRefs<T> refs;
  calibrator_.collect(refs);
  return count_params(refs);
}

#define NERD_HEADS_INSTANTIATE(T)                                                              \
  template std::vector<T> position_rows<T>(const PositionField&);                              \
  template CalibratorOutputM<T> calibrate_m<T>(Mlp<T>&, const PositionField&);                 \
  template LogitMap<T> nerdm_logits<T>(const FeatureMap<T>&, const CalibratorOutputM<T>&,      \
                                       std::span<const T>);                                    \
  template CalibratorOutputC<T> calibrate_c<T>(Mlp<T>&, const PositionField&);                 \
  template LogitMap<T> nerdc_logits<T>(const FeatureMap<T>&, const CalibratorOutputC<T>&);     \
  template LogitMap<T> baseline_logits<T>(const FeatureMap<T>&, std::span<const T>);           \
  template std::vector<std::uint8_t> segment<T>(const LogitMap<T>&, double);                   \
  template class Head<T>;

NERD_HEADS_INSTANTIATE(float)
NERD_HEADS_INSTANTIATE(double)

}  // namespace nerd
