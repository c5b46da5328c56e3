#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "json.hpp"
#include "nerd/backbone.hpp"
#include "nerd/container.hpp"
#include "nerd/heads.hpp"

namespace nerd {

struct ModelConfig {
  BackboneConfig backbone;
  HeadConfig head;
};

nlohmann::json to_json(const ModelConfig& c);
/// Accepts {"preset": "low"|"high"} or {"filters": [..5..]}, plus optional
/// in_channels, feature_channels, norm, head, calibrator_hidden,
/// constrain_scale, classifier_hidden. Unknown keys are rejected.
ModelConfig model_config_from_json(const nlohmann::json& j);

/// U-Net backbone followed by a baseline, NeRDm or NeRDc head.
template <class T>
class SegmentationModel {
 public:
  SegmentationModel(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  std::uint64_t seed() const noexcept { return seed_; }

  LogitMap<T> forward(const Tensor<T>& images);
  void backward(const LogitMap<T>& grad_logits);

  Backbone<T>& backbone() noexcept { return backbone_; }
  Head<T>& head() noexcept { return head_; }

  /// Backbone parameters first, then head parameters; names are unique.
  ParamRefs<T> params();
  std::size_t param_count() { return count_params(params()); }

 private:
  ModelConfig config_;
  std::uint64_t seed_;
  Backbone<T> backbone_;
  Head<T> head_;
};

/// Trainable scalar count of a model part: anything exposing params(), a
/// single layer exposing collect(), or an explicit parameter list.
template <class Part>
  requires requires(Part& p) { p.params(); }
std::size_t param_count(Part& part) {
  return count_params(part.params());
}
template <template <class> class Layer, class T>
  requires requires(Layer<T>& l, ParamRefs<T>& r) { l.collect(r); }
std::size_t param_count(Layer<T>& layer) {
  ParamRefs<T> refs;
  layer.collect(refs);
  return count_params(refs);
}
template <class T>
std::size_t param_count(const ParamRefs<T>& refs) {
  return count_params(refs);
}

/// Checkpoint of kind "nerd-model": config, seed and every named parameter.
template <class T>
Container model_to_container(SegmentationModel<T>& model);
template <class T>
void load_parameters(SegmentationModel<T>& model, const Container& c);
template <class T>
std::unique_ptr<SegmentationModel<T>> model_from_container(const Container& c);

template <class T>
void save_model(SegmentationModel<T>& model, const std::filesystem::path& path);
template <class T>
std::unique_ptr<SegmentationModel<T>> load_model(const std::filesystem::path& path);

/// Copies of parameter values, in params() order.
template <class T>
std::vector<std::vector<T>> snapshot(const ParamRefs<T>& params);
template <class T>
void restore(const ParamRefs<T>& params, const std::vector<std::vector<T>>& values);

extern template class SegmentationModel<float>;
extern template class SegmentationModel<double>;

}  // namespace nerd
