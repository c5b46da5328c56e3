#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nerd/backbone.hpp"
#include "nerd/coords.hpp"
#include "nerd/nn.hpp"

namespace nerd {

enum class HeadKind { Baseline, NerdM, NerdC };

const char* head_kind_name(HeadKind kind) noexcept;
/// Accepts "baseline", "nerdm", "nerdc"; throws ConfigError otherwise.
HeadKind parse_head_kind(const std::string& name);

/// Pre-sigmoid scores s_v, stored as a single-channel tensor (B x H x W).
template <class T>
using LogitMap = Tensor<T>;

/// Per-pixel reparameterized Gaussian: row-major [pixel][channel] fields.
template <class T>
struct CalibratorOutputM {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<T> inv_sigma;
  std::vector<T> neg_mu_over_sigma;
};

/// Per-pixel linear classifier weights, row-major [pixel][channel].
template <class T>
struct CalibratorOutputC {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<T> weight_field;
};

/// Positions of a normalized field as a [pixel][4] matrix in T.
template <class T>
std::vector<T> position_rows(const PositionField& field);

/// Applies the calibrator at every pixel; first C outputs become 1/sigma and
/// the last C become -mu/sigma. Requires an even output width and a
/// normalized field.
template <class T>
CalibratorOutputM<T> calibrate_m(Mlp<T>& mlp, const PositionField& field);

/// s_v = sum_c w_c (x_vc * inv_sigma_vc + neg_mu_over_sigma_vc).
template <class T>
LogitMap<T> nerdm_logits(const FeatureMap<T>& features, const CalibratorOutputM<T>& calib,
                         std::span<const T> w);

template <class T>
CalibratorOutputC<T> calibrate_c(Mlp<T>& mlp, const PositionField& field);

/// s_v = x_v . w_v
template <class T>
LogitMap<T> nerdc_logits(const FeatureMap<T>& features, const CalibratorOutputC<T>& calib);

/// s_v = w . x_v with a single shared, bias-free classifier.
template <class T>
LogitMap<T> baseline_logits(const FeatureMap<T>& features, std::span<const T> w);

/// mask_v = sigmoid(s_v) >= threshold, threshold in (0, 1). Output is
/// B x H x W, row-major per sample.
template <class T>
std::vector<std::uint8_t> segment(const LogitMap<T>& logits, double threshold = 0.5);

struct HeadConfig {
  HeadKind kind = HeadKind::Baseline;
  std::vector<int> calibrator_hidden{64, 64};
  /// Pass 1/sigma through softplus so it stays positive.
  bool constrain_scale = false;
  /// Hidden widths of an optional deeper classifier replacing w (baseline and
  /// NeRDm only). Empty means the single linear projection.
  std::vector<int> classifier_hidden;
};

/// Classification head with its own parameters. Calibrators start at the
/// identity: NeRDm at (1/sigma, -mu/sigma) = (1, 0), NeRDc at a constant
/// weight field, so a fresh head computes the same logits as the baseline.
template <class T>
class Head {
 public:
  Head(const HeadConfig& config, int feature_channels, std::uint64_t seed);

  const HeadConfig& config() const noexcept { return config_; }
  int feature_channels() const noexcept { return channels_; }

  LogitMap<T> forward(const FeatureMap<T>& features);
  /// Returns d(loss)/d(features) and accumulates head parameter gradients.
  FeatureMap<T> backward(const LogitMap<T>& grad_logits);

  ParamRefs<T> params();
  std::size_t param_count();
  /// Parameters of the coordinate MLP only (zero for the baseline head).
  std::size_t calibrator_param_count();

  Mlp<T>& calibrator() { return calibrator_; }
  Param<T>& classifier_weight() { return weight_; }

 private:
  CalibratorOutputM<T> current_m(const PositionField& field);

  HeadConfig config_;
  int channels_;
  Mlp<T> calibrator_;
  Param<T> weight_;  // shared w for baseline / NeRDm
  Mlp<T> classifier_;
  bool deep_classifier_ = false;

  // Forward caches.
  FeatureMap<T> features_;
  std::vector<T> raw_calibration_;
  CalibratorOutputM<T> calib_m_;
  CalibratorOutputC<T> calib_c_;
  std::vector<T> classifier_input_;
};

extern template class Head<float>;
extern template class Head<double>;

}  // namespace nerd
