#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace nerd {

/// Binary mask over a D x H x W grid (D = 1 for a single 2D slice).
struct Mask3D {
  int depth = 1;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> voxels;

  std::size_t size() const noexcept { return voxels.size(); }
  bool same_dims(const Mask3D& o) const noexcept {
    return depth == o.depth && height == o.height && width == o.width;
  }
  std::size_t count() const noexcept;
};

/// 2|P n G| / (|P| + |G|); 1.0 when both masks are empty.
double dice(const Mask3D& pred, const Mask3D& gt);
/// |P n G| / |P u G|; 1.0 when both masks are empty.
double jaccard(const Mask3D& pred, const Mask3D& gt);

/// Connected components. Connectivity 4 or 8 links voxels within a slice
/// only; 6 or 26 also links across slices.
struct LesionSet {
  int depth = 1;
  int height = 0;
  int width = 0;
  int connectivity = 26;
  /// Ordered by smallest voxel index; each list is sorted ascending.
  std::vector<std::vector<std::size_t>> components;

  std::size_t count() const noexcept { return components.size(); }
};

LesionSet connected_components(const Mask3D& mask, int connectivity);

struct LesionCounts {
  int tp_gt = 0;    // GT lesions overlapping the prediction
  int tp_pred = 0;  // predicted lesions overlapping the GT
  int gl = 0;
  int pl = 0;
};

/// Overlap means at least one shared voxel.
LesionCounts lesion_counts(const LesionSet& pred, const LesionSet& gt);

struct LesionMetrics {
  std::optional<double> ldice;
  std::optional<double> ltpr;
  std::optional<double> lppv;
  std::optional<double> lfpr;
};

/// ldice = factor * tp_gt / (gl + pl) (1 when both are zero);
/// ltpr = tp_gt / gl; lppv = tp_pred / pl; lfpr = 1 - lppv.
/// Empty denominators leave the value missing.
LesionMetrics lesion_metrics(const LesionCounts& counts, int ldice_factor = 2);

struct SurfaceDistances {
  std::vector<double> pred_to_gt;  // one entry per boundary voxel of pred
  std::vector<double> gt_to_pred;
};

/// Boundary voxels are foreground voxels with a background face neighbour;
/// positions outside the grid count as background along axes of extent > 1.
std::vector<std::size_t> boundary_voxels(const Mask3D& mask);

/// Directed boundary-to-boundary distances in mm, computed with an exact
/// anisotropic Euclidean distance transform. nullopt when either mask is empty.
std::optional<SurfaceDistances> surface_distances(const Mask3D& pred, const Mask3D& gt,
                                                  const std::array<double, 3>& spacing);

double hd(const SurfaceDistances& d);
/// Max of the two directed 95th percentiles, nearest-rank (ceil(0.95 n)).
double hd95(const SurfaceDistances& d);
/// Mean over the union of both directed sets.
double asd(const SurfaceDistances& d);

struct EvalConventions {
  int connectivity = 26;
  int ldice_factor = 2;
  double threshold = 0.5;

  void validate() const;
};

nlohmann::json to_json(const EvalConventions& c);
EvalConventions eval_conventions_from_json(const nlohmann::json& j);

struct VolumeMetrics {
  std::string id;
  double dice = 0.0;
  double jaccard = 0.0;
  LesionCounts counts;
  LesionMetrics lesion;
  std::optional<double> hd;
  std::optional<double> hd95;
  std::optional<double> asd;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
};

VolumeMetrics evaluate_volume(const std::string& id, const Mask3D& pred, const Mask3D& gt,
                              const std::array<double, 3>& spacing,
                              const EvalConventions& conventions);

/// Metric names in report column order.
const std::vector<std::string>& metric_names();
/// Value of a named metric as reported: ratios in percent, distances in mm.
std::optional<double> reported_value(const VolumeMetrics& m, const std::string& name);

struct MetricSummary {
  std::string name;
  std::optional<double> mean;
  std::optional<double> std;  // population std over non-missing values
  int n = 0;
};

std::vector<MetricSummary> summarize(const std::vector<VolumeMetrics>& rows);
std::vector<MetricSummary> summarize_values(
    const std::vector<std::pair<std::string, std::vector<std::optional<double>>>>& columns);

/// Writes metrics.csv (per-volume rows, then "mean" and "std" rows) and
/// metrics.json (conventions block, per-volume and aggregate values).
void write_metrics_report(const std::filesystem::path& dir, const std::vector<VolumeMetrics>& rows,
                          const EvalConventions& conventions, const nlohmann::json& provenance);

std::string format_value(const std::optional<double>& v);

}  // namespace nerd
