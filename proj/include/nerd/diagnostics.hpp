#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "nerd/backbone.hpp"
#include "nerd/container.hpp"
#include "nerd/data.hpp"

namespace nerd {

/// Per-position, per-channel feature statistics, channel-major [C][H][W].
struct SpatialStats {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::uint64_t count = 0;  // samples seen at every position
  std::vector<double> mean;
  std::vector<double> m2;  // sum of squared deviations

  /// Population standard deviation map.
  std::vector<double> std_map() const;
  double variance_at(std::size_t i) const { return count ? m2[i] / static_cast<double>(count) : 0.0; }
};

/// Welford accumulation; partial accumulators combine with merge().
class StatsAccumulator {
 public:
  StatsAccumulator(int channels, int height, int width);

  /// One sample laid out [C][H][W].
  void add_sample(std::span<const double> chw);
  /// Every sample of a feature batch.
  template <class T>
  void add(const FeatureMap<T>& features);
  void merge(const StatsAccumulator& other);

  const SpatialStats& stats() const noexcept { return stats_; }

 private:
  SpatialStats stats_;
};

/// Runs the backbone over `samples` and accumulates its final feature maps.
/// Needs at least two samples of one size.
template <class T>
SpatialStats feature_stats(Backbone<T>& backbone, const std::vector<const SliceSample*>& samples,
                           int batch_size = 14);

/// True for positions within `band` pixels of an edge.
bool in_band(int y, int x, int height, int width, int band);

/// Mean over channels of |mean_A - mean_B| / (pooled std + 1e-8), where the
/// region means average mean_map and the pooled std is
/// sqrt((avg var_A + avg var_B) / 2). A = border band, B = interior.
double shift_score(const SpatialStats& stats, int band);
/// Same statistic between the left and right halves of the interior.
double control_score(const SpatialStats& stats, int band);

/// Writes mean_cXX.png and std_cXX.png per channel plus colorbar.json.
/// Returns the image paths written.
std::vector<std::filesystem::path> export_heatmaps(const SpatialStats& stats, const std::filesystem::path& dir,
                                                   const std::string& cmap = "viridis");

Container stats_to_container(const SpatialStats& stats);
SpatialStats stats_from_container(const Container& c);

}  // namespace nerd
