#include "nerd/model.hpp"

#include <set>

#include "nerd/json_util.hpp"

namespace nerd {

nlohmann::json to_json(const ModelConfig& c) {
  return {{"in_channels", c.backbone.in_channels},
          {"filters", c.backbone.filters},
          {"feature_channels", c.backbone.resolved_feature_channels()},
          {"norm", c.backbone.norm == NormKind::Instance ? "instance" : "none"},
          {"head", head_kind_name(c.head.kind)},
          {"calibrator_hidden", c.head.calibrator_hidden},
          {"constrain_scale", c.head.constrain_scale},
          {"classifier_hidden", c.head.classifier_hidden}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  const std::string where = "model";
  require_keys(j,
               {"preset", "filters", "in_channels", "feature_channels", "norm", "head",
                "calibrator_hidden", "constrain_scale", "classifier_hidden"},
               where);
  ModelConfig c;
  if (j.contains("preset") && j.contains("filters"))
    throw ConfigError("model: give either 'preset' or 'filters', not both");
  if (j.contains("preset")) c.backbone.filters = preset_filters(get_or<std::string>(j, "preset", "", where));
  if (j.contains("filters")) {
    const auto f = get_or<std::vector<int>>(j, "filters", {}, where);
    if (f.size() != 5) throw ConfigError("model: 'filters' must list exactly 5 counts");
    std::copy(f.begin(), f.end(), c.backbone.filters.begin());
  }
  c.backbone.in_channels = get_or(j, "in_channels", c.backbone.in_channels, where);
  c.backbone.feature_channels = get_or(j, "feature_channels", 0, where);
  const auto norm = get_or<std::string>(j, "norm", "instance", where);
  if (norm == "instance")
    c.backbone.norm = NormKind::Instance;
  else if (norm == "none")
    c.backbone.norm = NormKind::None;
  else
    throw ConfigError("model: norm must be 'instance' or 'none'");
  c.head.kind = parse_head_kind(get_or<std::string>(j, "head", "baseline", where));
  c.head.calibrator_hidden = get_or(j, "calibrator_hidden", c.head.calibrator_hidden, where);
  c.head.constrain_scale = get_or(j, "constrain_scale", false, where);
  c.head.classifier_hidden = get_or(j, "classifier_hidden", std::vector<int>{}, where);
  c.backbone.validate();
  return c;
}

template <class T>
SegmentationModel<T>::SegmentationModel(const ModelConfig& config, std::uint64_t seed)
    : config_(config),
      seed_(seed),
      backbone_(config.backbone, seed),
      head_(config.head, config.backbone.resolved_feature_channels(), seed) {}

template <class T>
LogitMap<T> SegmentationModel<T>::forward(const Tensor<T>& images) {
  return head_.forward(backbone_.forward(images));
}

template <class T>
void SegmentationModel<T>::backward(const LogitMap<T>& grad_logits) {
  backbone_.backward(head_.backward(grad_logits));
}

template <class T>
ParamRefs<T> SegmentationModel<T>::params() {
  ParamRefs<T> out = backbone_.params();
  for (auto* p : head_.params()) out.push_back(p);
  return out;
}

template <class T>
Container model_to_container(SegmentationModel<T>& model) {
  Container c;
  c.kind = "nerd-model";
  c.meta["config"] = to_json(model.config());
  c.meta["seed"] = model.seed();
  for (const auto* p : model.params())
    c.add(p->name, p->shape, std::vector<double>(p->value.begin(), p->value.end()));
  return c;
}

template <class T>
void load_parameters(SegmentationModel<T>& model, const Container& c) {
  std::set<std::string> seen;
  for (auto* p : model.params()) {
    const NamedArray& a = c.array(p->name);
    if (a.values.size() != p->size() || a.shape != p->shape)
      throw IoError("checkpoint array '" + p->name + "' has the wrong shape");
    std::transform(a.values.begin(), a.values.end(), p->value.begin(),
                   [](double v) { return static_cast<T>(v); });
    seen.insert(p->name);
  }
  for (const auto& a : c.arrays)
    // Auxiliary arrays (optimizer state) are namespaced with '/'.
    if (a.name.find('/') == std::string::npos && !seen.count(a.name))
      throw IoError("checkpoint carries unknown parameter '" + a.name + "'");
}

template <class T>
std::unique_ptr<SegmentationModel<T>> model_from_container(const Container& c) {
  if (c.kind != "nerd-model" && c.kind != "nerd-train-state")
    throw IoError("container kind '" + c.kind + "' is not a model checkpoint");
  const ModelConfig config = model_config_from_json(c.meta.at("config"));
  auto model =
      std::make_unique<SegmentationModel<T>>(config, c.meta.at("seed").get<std::uint64_t>());
  load_parameters(*model, c);
  return model;
}

template <class T>
void save_model(SegmentationModel<T>& model, const std::filesystem::path& path) {
  write_container(path, model_to_container(model));
}

template <class T>
std::unique_ptr<SegmentationModel<T>> load_model(const std::filesystem::path& path) {
  return model_from_container<T>(read_container(path));
}

template <class T>
std::vector<std::vector<T>> snapshot(const ParamRefs<T>& params) {
  std::vector<std::vector<T>> out;
  out.reserve(params.size());
  for (const auto* p : params) out.push_back(p->value);
  return out;
}

template <class T>
void restore(const ParamRefs<T>& params, const std::vector<std::vector<T>>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

#define NERD_MODEL_INSTANTIATE(T)                                                          \
  template class SegmentationModel<T>;                                                     \
  template Container model_to_container<T>(SegmentationModel<T>&);                         \
  template void load_parameters<T>(SegmentationModel<T>&, const Container&);               \
  template std::unique_ptr<SegmentationModel<T>> model_from_container<T>(const Container&); \
  template void save_model<T>(SegmentationModel<T>&, const std::filesystem::path&);         \
  template std::unique_ptr<SegmentationModel<T>> load_model<T>(const std::filesystem::path&); \
  template std::vector<std::vector<T>> snapshot<T>(const ParamRefs<T>&);                   \
  template void restore<T>(const ParamRefs<T>&, const std::vector<std::vector<T>>&);

NERD_MODEL_INSTANTIATE(float)
NERD_MODEL_INSTANTIATE(double)

}  // namespace nerd
