#include "nerd/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

#include "nerd/error.hpp"
#include "nerd/io.hpp"
#include "nerd/json_util.hpp"
#include "nerd/metrics.hpp"
#include "nerd/rng.hpp"

namespace nerd {
namespace {

constexpr double kDiceSmooth = 1.0;
constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

struct Adam {
  std::vector<std::vector<float>> m, v;
  std::int64_t step = 0;

  explicit Adam(const ParamRefs<float>& params) {
    for (const auto* p : params) {
      m.emplace_back(p->size(), 0.0f);
      v.emplace_back(p->size(), 0.0f);
    }
  }

  void update(const ParamRefs<float>& params, double lr, double weight_decay) {
    ++step;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
    const float b1 = static_cast<float>(kBeta1), b2 = static_cast<float>(kBeta2);
    const float wd = static_cast<float>(weight_decay);
    const float step_size = static_cast<float>(lr / c1);
    const float inv_sqrt_c2 = static_cast<float>(1.0 / std::sqrt(c2));
    const float eps = static_cast<float>(kAdamEps);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = *params[i];
      auto& mi = m[i];
      auto& vi = v[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        const float g = p.grad[j] + wd * p.value[j];
        mi[j] = b1 * mi[j] + (1.0f - b1) * g;
        vi[j] = b2 * vi[j] + (1.0f - b2) * g * g;
        p.value[j] -= step_size * mi[j] / (std::sqrt(vi[j]) * inv_sqrt_c2 + eps);
      }
    }
  }
};

std::vector<std::uint8_t> batch_labels(const std::vector<const SliceSample*>& samples) {
  std::vector<std::uint8_t> out;
  for (const auto* s : samples) {
    if (s->label.size() != static_cast<std::size_t>(s->height) * s->width)
      throw InvalidArgument("sample " + s->volume_id + "/" + std::to_string(s->slice_index) + " has no label");
    out.insert(out.end(), s->label.begin(), s->label.end());
  }
  return out;
}

Container train_state(SegmentationModel<float>& model, const TrainConfig& config, const Adam& adam,
                      const TrainHistory& history, const std::vector<std::vector<float>>& best) {
  Container c = model_to_container(model);
  c.kind = "nerd-train-state";
  c.meta["train"] = to_json(config);
  c.meta["history"] = to_json(history);
  c.meta["epochs_done"] = history.epochs.size();
  c.meta["adam_step"] = adam.step;
  const auto params = model.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto* p = params[i];
    c.add("adam.m/" + p->name, p->shape, std::vector<double>(adam.m[i].begin(), adam.m[i].end()));
    c.add("adam.v/" + p->name, p->shape, std::vector<double>(adam.v[i].begin(), adam.v[i].end()));
    if (!best.empty()) c.add("best/" + p->name, p->shape, std::vector<double>(best[i].begin(), best[i].end()));
  }
  return c;
}

std::vector<float> to_float(const std::vector<double>& v) { return {v.begin(), v.end()}; }

}  // namespace

const char* loss_kind_name(LossKind k) noexcept {
  switch (k) {
    case LossKind::BceDice: return "bce_dice";
    case LossKind::Bce: return "bce";
    case LossKind::Dice: return "dice";
  }
  return "?";
}

LossKind parse_loss_kind(const std::string& name) {
  if (name == "bce_dice") return LossKind::BceDice;
  if (name == "bce") return LossKind::Bce;
  if (name == "dice") return LossKind::Dice;
  throw ConfigError("unknown loss \"" + name + "\" (expected bce_dice, bce or dice)");
}

void TrainConfig::validate() const {
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw ConfigError("train.base_lr must be positive");
  if (weight_decay < 0.0 || !std::isfinite(weight_decay)) throw ConfigError("train.weight_decay must be >= 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  double prev = 0.0;
  for (double m : lr_milestones) {
    if (!(m > prev && m < 1.0))
      throw ConfigError("train.lr_milestones must be strictly increasing within (0, 1)");
    prev = m;
  }
  if (!(lr_factor > 0.0 && lr_factor < 1.0)) throw ConfigError("train.lr_factor must lie in (0, 1)");
  if (device != "cpu") throw ConfigError("train.device \"" + device + "\" is not available; only \"cpu\" is supported");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("train.threshold must lie in (0, 1)");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"base_lr", c.base_lr},       {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size}, {"epochs", c.epochs},
          {"lr_milestones", c.lr_milestones}, {"lr_factor", c.lr_factor},
          {"loss", loss_kind_name(c.loss)}, {"seed", c.seed},
          {"device", c.device},         {"threshold", c.threshold}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  const std::string where = "train";
  require_keys(j, {"base_lr", "weight_decay", "batch_size", "epochs", "lr_milestones", "lr_factor", "loss",
                   "seed", "device", "threshold"},
               where);
  TrainConfig c;
  c.base_lr = get_or(j, "base_lr", c.base_lr, where);
  c.weight_decay = get_or(j, "weight_decay", c.weight_decay, where);
  c.batch_size = get_or(j, "batch_size", c.batch_size, where);
  c.epochs = get_or(j, "epochs", c.epochs, where);
  c.lr_milestones = get_or(j, "lr_milestones", c.lr_milestones, where);
  c.lr_factor = get_or(j, "lr_factor", c.lr_factor, where);
  c.loss = parse_loss_kind(get_or<std::string>(j, "loss", loss_kind_name(c.loss), where));
  c.seed = get_or(j, "seed", c.seed, where);
  c.device = get_or(j, "device", c.device, where);
  c.threshold = get_or(j, "threshold", c.threshold, where);
  c.validate();
  return c;
}

double lr_at(int epoch, const TrainConfig& config) {
  if (epoch < 0 || epoch >= config.epochs)
    throw InvalidArgument("epoch " + std::to_string(epoch) + " is outside [0, " + std::to_string(config.epochs) + ")");
  double lr = config.base_lr;
  for (double m : config.lr_milestones) {
    // The small offset keeps e.g. 0.7 * 90 at 63 despite binary rounding.
    const int milestone = static_cast<int>(std::floor(m * config.epochs + 1e-9));
    if (epoch >= milestone) lr *= config.lr_factor;
  }
  return lr;
}

template <class T>
LossValue compute_loss(const LogitMap<T>& logits, std::span<const std::uint8_t> target, LossKind kind,
                       LogitMap<T>* grad) {
  const std::size_t n = logits.size();
  if (logits.channels() != 1) throw ShapeError("logits must have one channel, got " + logits.shape_string());
  if (target.size() != n)
    throw ShapeError("target has " + std::to_string(target.size()) + " pixels, logits " + std::to_string(n));
  for (auto t : target)
    if (t > 1) throw InvalidArgument("target mask must be binary (0/1), found value " + std::to_string(t));
  if (n == 0) throw ShapeError("empty logit map");

  const T* s = logits.data();
  double bce = 0.0, inter = 0.0, psum = 0.0, gsum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = s[i];
    const double g = target[i];
    bce += softplus(x) - g * x;
    const double p = sigmoid(x);
    inter += p * g;
    psum += p;
    gsum += g;
  }
  LossValue out;
  out.bce = bce / static_cast<double>(n);
  const double denom = psum + gsum + kDiceSmooth;
  out.dice_loss = 1.0 - (2.0 * inter + kDiceSmooth) / denom;
  const bool use_bce = kind != LossKind::Dice;
  const bool use_dice = kind != LossKind::Bce;
  out.total = (use_bce ? out.bce : 0.0) + (use_dice ? out.dice_loss : 0.0);

  if (grad) {
    *grad = LogitMap<T>(1, logits.batch(), logits.height(), logits.width());
    T* d = grad->data();
    const double numer = 2.0 * inter + kDiceSmooth;
    for (std::size_t i = 0; i < n; ++i) {
      const double p = sigmoid(s[i]);
      const double g = target[i];
      double v = 0.0;
      if (use_bce) v += (p - g) / static_cast<double>(n);
      if (use_dice) v -= (2.0 * g * denom - numer) / (denom * denom) * p * (1.0 - p);
      d[i] = static_cast<T>(v);
    }
  }
  return out;
}

nlohmann::json to_json(const TrainHistory& h) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : h.epochs)
    epochs.push_back({{"epoch", e.epoch}, {"lr", e.lr}, {"train_loss", e.train_loss}, {"val_dice", e.val_dice}});
  return {{"epochs", epochs}, {"best_epoch", h.best_epoch}, {"best_val_dice", h.best_val_dice}};
}

TrainHistory train_history_from_json(const nlohmann::json& j) {
  TrainHistory h;
  for (const auto& e : j.at("epochs"))
    h.epochs.push_back({e.at("epoch").get<int>(), e.at("lr").get<double>(), e.at("train_loss").get<double>(),
                        e.at("val_dice").get<double>()});
  h.best_epoch = j.at("best_epoch").get<int>();
  h.best_val_dice = j.at("best_val_dice").get<double>();
  return h;
}

std::string history_csv(const TrainHistory& h) {
  std::ostringstream os;
  os << "epoch,lr,train_loss,val_dice\n";
  for (const auto& e : h.epochs)
    os << e.epoch << ',' << fmt(e.lr) << ',' << fmt(e.train_loss) << ',' << fmt(e.val_dice) << '\n';
  return os.str();
}

template <class T>
Tensor<T> batch_tensor(const std::vector<const SliceSample*>& samples) {
  if (samples.empty()) throw InvalidArgument("empty batch");
  const auto* f = samples.front();
  Tensor<T> t(f->channels, static_cast<int>(samples.size()), f->height, f->width);
  const std::size_t pix = t.pixels();
  for (std::size_t b = 0; b < samples.size(); ++b) {
    const auto* s = samples[b];
    if (s->channels != f->channels || s->height != f->height || s->width != f->width)
      throw ShapeError("batch mixes sample shapes");
    if (s->image.size() != pix * s->channels) throw ShapeError("sample image size does not match its shape");
    for (int c = 0; c < s->channels; ++c)
      std::transform(s->image.begin() + c * pix, s->image.begin() + (c + 1) * pix, t.plane(c, static_cast<int>(b)),
                     [](float v) { return static_cast<T>(v); });
  }
  return t;
}

template <class T>
std::vector<std::vector<T>> predict_logits(SegmentationModel<T>& model, const std::vector<const SliceSample*>& samples,
                                           int batch_size) {
  if (batch_size < 1) throw InvalidArgument("batch size must be >= 1");
  std::vector<std::vector<T>> out;
  out.reserve(samples.size());
  for (std::size_t b0 = 0; b0 < samples.size(); b0 += batch_size) {
    const std::size_t nb = std::min<std::size_t>(batch_size, samples.size() - b0);
    std::vector<const SliceSample*> chunk(samples.begin() + b0, samples.begin() + b0 + nb);
    const auto logits = model.forward(batch_tensor<T>(chunk));
    const std::size_t pix = logits.pixels();
    for (std::size_t i = 0; i < nb; ++i)
      out.emplace_back(logits.data() + i * pix, logits.data() + (i + 1) * pix);
  }
  return out;
}

template <class T>
std::vector<std::vector<std::uint8_t>> predict_masks(SegmentationModel<T>& model,
                                                     const std::vector<const SliceSample*>& samples,
                                                     double threshold, int batch_size) {
  const auto logits = predict_logits(model, samples, batch_size);
  std::vector<std::vector<std::uint8_t>> out;
  out.reserve(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    LogitMap<T> one(1, 1, samples[i]->height, samples[i]->width);
    std::copy(logits[i].begin(), logits[i].end(), one.data());
    out.push_back(segment(one, threshold));
  }
  return out;
}

template <class T>
double split_dice(SegmentationModel<T>& model, const Dataset& dataset, Split split, double threshold,
                  int batch_size) {
  const auto volumes = dataset.volumes_in(split);
  if (volumes.empty()) throw InvalidArgument(std::string("dataset has no ") + split_name(split) + " volumes");
  std::vector<const SliceSample*> all;
  for (const auto* v : volumes)
    for (const auto& s : v->slices) all.push_back(&s);
  const auto masks = predict_masks(model, all, threshold, batch_size);
  double sum = 0.0;
  std::size_t k = 0;
  for (const auto* v : volumes) {
    Mask3D pred{static_cast<int>(v->slices.size()), dataset.height, dataset.width, {}};
    Mask3D gt = pred;
    for (const auto& s : v->slices) {
      pred.voxels.insert(pred.voxels.end(), masks[k].begin(), masks[k].end());
      gt.voxels.insert(gt.voxels.end(), s.label.begin(), s.label.end());
      ++k;
    }
    sum += dice(pred, gt);
  }
  return sum / static_cast<double>(volumes.size());
}

TrainHistory train_model(SegmentationModel<float>& model, const Dataset& dataset, const TrainConfig& config,
                         const TrainOptions& options) {
  config.validate();
  dataset.validate();
  const auto train = dataset.slices(Split::Train);
  if (train.empty()) throw InvalidArgument("dataset has no training slices");
  if (dataset.volumes_in(Split::Val).empty()) throw InvalidArgument("dataset has no validation volumes");
  if (dataset.channels != model.config().backbone.in_channels)
    throw ShapeError("dataset has " + std::to_string(dataset.channels) + " channels, model expects " +
                     std::to_string(model.config().backbone.in_channels));

  const auto params = model.params();
  Adam adam(params);
  TrainHistory history;
  std::vector<std::vector<float>> best;

  std::filesystem::path ckpt_dir;
  if (options.run_dir) {
    ckpt_dir = *options.run_dir / "checkpoints";
    const auto last = ckpt_dir / "last.ckpt";
    if (options.resume && std::filesystem::exists(last)) {
      const Container c = read_container(last);
      if (c.kind != "nerd-train-state") throw IoError(last.string() + " is not a training state");
      if (c.meta.at("train") != to_json(config))
        throw ConfigError("cannot resume " + last.string() + ": training config differs");
      if (c.meta.at("config") != to_json(model.config()) || c.meta.at("seed").get<std::uint64_t>() != model.seed())
        throw ConfigError("cannot resume " + last.string() + ": model config or seed differs");
      load_parameters(model, c);
      adam.step = c.meta.at("adam_step").get<std::int64_t>();
      history = train_history_from_json(c.meta.at("history"));
      for (std::size_t i = 0; i < params.size(); ++i) {
        adam.m[i] = to_float(c.array("adam.m/" + params[i]->name).values);
        adam.v[i] = to_float(c.array("adam.v/" + params[i]->name).values);
        if (const auto* b = c.find("best/" + params[i]->name)) best.push_back(to_float(b->values));
      }
    }
  }

  std::vector<std::size_t> order(train.size());
  for (int epoch = static_cast<int>(history.epochs.size()); epoch < config.epochs; ++epoch) {
    if (options.stop_after_epoch >= 0 && epoch >= options.stop_after_epoch) return history;
    const double lr = lr_at(epoch, config);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(epoch) + 1));
    rng.shuffle(std::span<std::size_t>(order));

    double loss_sum = 0.0;
    int batch_index = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += config.batch_size, ++batch_index) {
      const std::size_t nb = std::min<std::size_t>(config.batch_size, order.size() - b0);
      std::vector<const SliceSample*> batch;
      for (std::size_t i = 0; i < nb; ++i) batch.push_back(train[order[b0 + i]]);
      const auto target = batch_labels(batch);
      zero_grads(params);
      const auto logits = model.forward(batch_tensor<float>(batch));
      LogitMap<float> grad;
      const LossValue loss = compute_loss(logits, target, config.loss, &grad);
      if (!std::isfinite(loss.total))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index));
      model.backward(grad);
      adam.update(params, lr, config.weight_decay);
      loss_sum += loss.total * static_cast<double>(nb);
    }

    EpochRecord rec{epoch, lr, loss_sum / static_cast<double>(order.size()),
                    split_dice(model, dataset, Split::Val, config.threshold, config.batch_size)};
    history.epochs.push_back(rec);
    const bool improved = history.best_epoch < 0 || rec.val_dice > history.best_val_dice;
    if (improved) {
      history.best_epoch = epoch;
      history.best_val_dice = rec.val_dice;
      best = snapshot(params);
    }
    if (options.run_dir) {
      if (improved) save_model(model, ckpt_dir / "best.ckpt");
      write_container(ckpt_dir / "last.ckpt", train_state(model, config, adam, history, best));
      write_text(*options.run_dir / "history.csv", history_csv(history));
    }
    if (options.on_epoch) options.on_epoch(rec);
  }

  if (!best.empty()) restore(params, best);
  if (options.run_dir) {
    const nlohmann::json result = {{"best_epoch", history.best_epoch},
                                   {"best_val_dice", history.best_val_dice},
                                   {"best_checkpoint", "checkpoints/best.ckpt"},
                                   {"epochs", history.epochs.size()}};
    write_text(*options.run_dir / "history.csv", history_csv(history));
    write_text(*options.run_dir / "train_result.json", result.dump(2) + "\n");
  }
  return history;
}

#define NERD_TRAIN_INSTANTIATE(T)                                                                               \
  template LossValue compute_loss<T>(const LogitMap<T>&, std::span<const std::uint8_t>, LossKind, LogitMap<T>*); \
  template Tensor<T> batch_tensor<T>(const std::vector<const SliceSample*>&);                                  \
  template std::vector<std::vector<T>> predict_logits<T>(SegmentationModel<T>&,                                 \
                                                         const std::vector<const SliceSample*>&, int);          \
  template std::vector<std::vector<std::uint8_t>> predict_masks<T>(                                             \
      SegmentationModel<T>&, const std::vector<const SliceSample*>&, double, int);                              \
  template double split_dice<T>(SegmentationModel<T>&, const Dataset&, Split, double, int);

NERD_TRAIN_INSTANTIATE(float)
NERD_TRAIN_INSTANTIATE(double)

}  // namespace nerd
