#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "nerd/data.hpp"
#include "nerd/model.hpp"

namespace nerd {

enum class LossKind { BceDice, Bce, Dice };
const char* loss_kind_name(LossKind k) noexcept;
LossKind parse_loss_kind(const std::string& name);

struct TrainConfig {
  double base_lr = 1e-3;
  double weight_decay = 1e-6;
  int batch_size = 14;
  int epochs = 90;
  std::vector<double> lr_milestones{0.5, 0.7, 0.9};
  double lr_factor = 0.5;
  LossKind loss = LossKind::BceDice;
  std::uint64_t seed = 0;
  std::string device = "cpu";
  /// Probability threshold for validation masks.
  double threshold = 0.5;

  /// Throws ConfigError on out-of-range fields.
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// base_lr * factor^(number of milestones m with epoch >= floor(m * epochs)).
double lr_at(int epoch, const TrainConfig& config);

struct LossValue {
  double total = 0.0;
  double bce = 0.0;        // mean binary cross-entropy
  double dice_loss = 0.0;  // 1 - soft Dice, pooled over the batch
};

/// Loss of `logits` against a binary target (B x H x W, row-major per
/// sample). When `grad` is non-null it receives d(total)/d(logits).
template <class T>
LossValue compute_loss(const LogitMap<T>& logits, std::span<const std::uint8_t> target, LossKind kind,
                       LogitMap<T>* grad = nullptr);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_dice = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  /// Epoch with the highest validation Dice (earliest on ties), -1 if none.
  int best_epoch = -1;
  double best_val_dice = 0.0;
};

nlohmann::json to_json(const TrainHistory& h);
TrainHistory train_history_from_json(const nlohmann::json& j);
std::string history_csv(const TrainHistory& h);

struct TrainOptions {
  /// When set: checkpoints/last.ckpt every epoch, checkpoints/best.ckpt on
  /// improvement, history.csv and train_result.json. An existing last.ckpt
  /// is resumed from.
  std::optional<std::filesystem::path> run_dir;
  bool resume = true;
  /// Return after this many completed epochs (simulates an interruption).
  int stop_after_epoch = -1;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Adam (beta 0.9/0.999, eps 1e-8) with L2 weight decay added to every
/// gradient. Batch order per epoch is a permutation drawn from
/// derive_seed(seed, epoch + 1). On return the model holds the parameters
/// of the best epoch.
TrainHistory train_model(SegmentationModel<float>& model, const Dataset& dataset,
                         const TrainConfig& config, const TrainOptions& options = {});

/// Stacks samples into a [C][B][H][W] tensor.
template <class T>
Tensor<T> batch_tensor(const std::vector<const SliceSample*>& samples);

/// Logits per sample, computed in batches of `batch_size`.
template <class T>
std::vector<std::vector<T>> predict_logits(SegmentationModel<T>& model,
                                           const std::vector<const SliceSample*>& samples,
                                           int batch_size = 14);

/// Binary masks per sample.
template <class T>
std::vector<std::vector<std::uint8_t>> predict_masks(SegmentationModel<T>& model,
                                                     const std::vector<const SliceSample*>& samples,
                                                     double threshold, int batch_size = 14);

/// Mean per-volume Dice of predicted masks over the given split.
template <class T>
double split_dice(SegmentationModel<T>& model, const Dataset& dataset, Split split, double threshold,
                  int batch_size = 14);

}  // namespace nerd
