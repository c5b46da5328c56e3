#include "nerd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "nerd/error.hpp"
#include "nerd/io.hpp"
#include "nerd/json_util.hpp"

namespace nerd {
namespace {

void check_pair(const Mask3D& a, const Mask3D& b) {
  auto check = [](const Mask3D& m) {
    if (m.depth < 1 || m.height < 1 || m.width < 1 ||
        m.voxels.size() != static_cast<std::size_t>(m.depth) * m.height * m.width)
      throw ShapeError("mask dimensions do not match its voxel count");
  };
  check(a);
  check(b);
  if (!a.same_dims(b))
    throw ShapeError("mask shapes differ: " + std::to_string(a.depth) + "x" + std::to_string(a.height) +
                     "x" + std::to_string(a.width) + " vs " + std::to_string(b.depth) + "x" +
                     std::to_string(b.height) + "x" + std::to_string(b.width));
}

struct Offset {
  int dz, dy, dx;
};

std::vector<Offset> neighbourhood(int connectivity) {
  std::vector<Offset> out;
  const bool cross_slice = connectivity == 6 || connectivity == 26;
  const bool full = connectivity == 8 || connectivity == 26;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (dz == 0 && dy == 0 && dx == 0) continue;
        if (!cross_slice && dz != 0) continue;
        const int manhattan = std::abs(dz) + std::abs(dy) + std::abs(dx);
        if (!full && manhattan != 1) continue;
        out.push_back({dz, dy, dx});
      }
  return out;
}

// Squared distance transform along one line (Felzenszwalb & Huttenlocher),
// sample positions q * step.
void edt_line(std::vector<double>& f, int n, double step, std::vector<double>& d,
              std::vector<int>& v, std::vector<double>& z) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  const double s2 = step * step;
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (!std::isfinite(f[q])) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      continue;
    }
    double s;
    for (;;) {
      const int p = v[k];
      s = ((f[q] + s2 * q * q) - (f[p] + s2 * p * p)) / (2.0 * s2 * (q - p));
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  if (k < 0) return;  // line has no sites; stays infinite
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double diff = (q - v[j]) * step;
    d[q] = diff * diff + f[v[j]];
  }
  for (int q = 0; q < n; ++q) f[q] = d[q];
}

// Squared distance in mm from every voxel to the nearest site.
std::vector<double> squared_edt(const std::vector<std::size_t>& sites, int depth, int height, int width,
                                const std::array<double, 3>& spacing) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  const std::size_t total = static_cast<std::size_t>(depth) * height * width;
  std::vector<double> g(total, inf);
  for (auto s : sites) g[s] = 0.0;

  const int longest = std::max({depth, height, width});
  std::vector<double> line(longest), d(longest), z(longest + 1);
  std::vector<int> v(longest);
  const std::size_t plane = static_cast<std::size_t>(height) * width;

  auto pass = [&](int n, double step, std::size_t stride, auto base_of, std::size_t lines) {
    for (std::size_t l = 0; l < lines; ++l) {
      const std::size_t base = base_of(l);
      for (int q = 0; q < n; ++q) line[q] = g[base + q * stride];
      edt_line(line, n, step, d, v, z);
      for (int q = 0; q < n; ++q) g[base + q * stride] = line[q];
    }
  };
  pass(width, spacing[2], 1, [&](std::size_t l) { return l * width; },
       static_cast<std::size_t>(depth) * height);
  pass(height, spacing[1], width,
       [&](std::size_t l) { return (l / width) * plane + l % width; },
       static_cast<std::size_t>(depth) * width);
  pass(depth, spacing[0], plane, [&](std::size_t l) { return l; }, plane);
  return g;
}

double nearest_rank(std::vector<double> values, double pct) {
  std::sort(values.begin(), values.end());
  const auto n = static_cast<double>(values.size());
  auto rank = static_cast<std::size_t>(std::ceil(pct * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

}  // namespace

std::size_t Mask3D::count() const noexcept {
  return static_cast<std::size_t>(std::count_if(voxels.begin(), voxels.end(), [](auto v) { return v != 0; }));
}

double dice(const Mask3D& pred, const Mask3D& gt) {
  check_pair(pred, gt);
  std::size_t inter = 0, p = 0, g = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred.voxels[i] != 0, b = gt.voxels[i] != 0;
    p += a;
    g += b;
    inter += a && b;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(p + g);
}

double jaccard(const Mask3D& pred, const Mask3D& gt) {
  check_pair(pred, gt);
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred.voxels[i] != 0, b = gt.voxels[i] != 0;
    inter += a && b;
    uni += a || b;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

LesionSet connected_components(const Mask3D& mask, int connectivity) {
  if (connectivity != 4 && connectivity != 8 && connectivity != 6 && connectivity != 26)
    throw InvalidArgument("connectivity must be 4, 8, 6 or 26, got " + std::to_string(connectivity));
  check_pair(mask, mask);
  LesionSet out;
  out.depth = mask.depth;
  out.height = mask.height;
  out.width = mask.width;
  out.connectivity = connectivity;

  const auto offsets = neighbourhood(connectivity);
  const int H = mask.height, W = mask.width, D = mask.depth;
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  std::vector<std::uint8_t> seen(mask.size(), 0);
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < mask.size(); ++start) {
    if (!mask.voxels[start] || seen[start]) continue;
    std::vector<std::size_t> comp;
    stack.push_back(start);
    seen[start] = 1;
    while (!stack.empty()) {
      const std::size_t idx = stack.back();
      stack.pop_back();
      comp.push_back(idx);
      const int z = static_cast<int>(idx / plane);
      const int y = static_cast<int>((idx % plane) / W);
      const int x = static_cast<int>(idx % W);
      for (const auto& o : offsets) {
        const int nz = z + o.dz, ny = y + o.dy, nx = x + o.dx;
        if (nz < 0 || nz >= D || ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
        const std::size_t n = static_cast<std::size_t>(nz) * plane + static_cast<std::size_t>(ny) * W + nx;
        if (mask.voxels[n] && !seen[n]) {
          seen[n] = 1;
          stack.push_back(n);
        }
      }
    }
    std::sort(comp.begin(), comp.end());
    out.components.push_back(std::move(comp));
  }
  return out;
}

LesionCounts lesion_counts(const LesionSet& pred, const LesionSet& gt) {
  if (pred.depth != gt.depth || pred.height != gt.height || pred.width != gt.width)
    throw ShapeError("lesion sets cover different grids");
  const std::size_t total = static_cast<std::size_t>(pred.depth) * pred.height * pred.width;
  std::vector<std::uint8_t> pred_fg(total, 0), gt_fg(total, 0);
  for (const auto& c : pred.components)
    for (auto i : c) pred_fg[i] = 1;
  for (const auto& c : gt.components)
    for (auto i : c) gt_fg[i] = 1;

  LesionCounts out;
  out.gl = static_cast<int>(gt.count());
  out.pl = static_cast<int>(pred.count());
  for (const auto& c : gt.components)
    if (std::any_of(c.begin(), c.end(), [&](auto i) { return pred_fg[i] != 0; })) ++out.tp_gt;
  for (const auto& c : pred.components)
    if (std::any_of(c.begin(), c.end(), [&](auto i) { return gt_fg[i] != 0; })) ++out.tp_pred;
  return out;
}

LesionMetrics lesion_metrics(const LesionCounts& c, int ldice_factor) {
  if (ldice_factor != 1 && ldice_factor != 2) throw InvalidArgument("ldice factor must be 1 or 2");
  LesionMetrics m;
  m.ldice = c.gl + c.pl == 0 ? 1.0 : static_cast<double>(ldice_factor) * c.tp_gt / (c.gl + c.pl);
  if (c.gl > 0) m.ltpr = static_cast<double>(c.tp_gt) / c.gl;
  if (c.pl > 0) {
    m.lppv = static_cast<double>(c.tp_pred) / c.pl;
    m.lfpr = 1.0 - *m.lppv;
  }
  return m;
}

std::vector<std::size_t> boundary_voxels(const Mask3D& mask) {
  check_pair(mask, mask);
  const int H = mask.height, W = mask.width, D = mask.depth;
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  std::vector<Offset> faces;
  if (D > 1) faces.insert(faces.end(), {{-1, 0, 0}, {1, 0, 0}});
  if (H > 1) faces.insert(faces.end(), {{0, -1, 0}, {0, 1, 0}});
  if (W > 1) faces.insert(faces.end(), {{0, 0, -1}, {0, 0, 1}});
  std::vector<std::size_t> out;
  for (std::size_t idx = 0; idx < mask.size(); ++idx) {
    if (!mask.voxels[idx]) continue;
    const int z = static_cast<int>(idx / plane);
    const int y = static_cast<int>((idx % plane) / W);
    const int x = static_cast<int>(idx % W);
    bool edge = faces.empty();  // a lone 1x1x1 grid
    for (const auto& o : faces) {
      const int nz = z + o.dz, ny = y + o.dy, nx = x + o.dx;
      if (nz < 0 || nz >= D || ny < 0 || ny >= H || nx < 0 || nx >= W ||
          !mask.voxels[static_cast<std::size_t>(nz) * plane + static_cast<std::size_t>(ny) * W + nx]) {
        edge = true;
        break;
      }
    }
    if (edge) out.push_back(idx);
  }
  return out;
}

std::optional<SurfaceDistances> surface_distances(const Mask3D& pred, const Mask3D& gt,
                                                  const std::array<double, 3>& spacing) {
  check_pair(pred, gt);
  for (double s : spacing)
    if (!(s > 0.0) || !std::isfinite(s)) throw InvalidArgument("voxel spacing must be positive");
  const auto bp = boundary_voxels(pred);
  const auto bg = boundary_voxels(gt);
  if (bp.empty() || bg.empty()) return std::nullopt;
  const auto to_gt = squared_edt(bg, gt.depth, gt.height, gt.width, spacing);
  const auto to_pred = squared_edt(bp, gt.depth, gt.height, gt.width, spacing);
  SurfaceDistances d;
  d.pred_to_gt.reserve(bp.size());
  d.gt_to_pred.reserve(bg.size());
  for (auto i : bp) d.pred_to_gt.push_back(std::sqrt(to_gt[i]));
  for (auto i : bg) d.gt_to_pred.push_back(std::sqrt(to_pred[i]));
  return d;
}

double hd(const SurfaceDistances& d) {
  return std::max(*std::max_element(d.pred_to_gt.begin(), d.pred_to_gt.end()),
                  *std::max_element(d.gt_to_pred.begin(), d.gt_to_pred.end()));
}

double hd95(const SurfaceDistances& d) {
  return std::max(nearest_rank(d.pred_to_gt, 0.95), nearest_rank(d.gt_to_pred, 0.95));
}

double asd(const SurfaceDistances& d) {
  double sum = 0.0;
  for (double v : d.pred_to_gt) sum += v;
  for (double v : d.gt_to_pred) sum += v;
  return sum / static_cast<double>(d.pred_to_gt.size() + d.gt_to_pred.size());
}

void EvalConventions::validate() const {
  if (connectivity != 4 && connectivity != 8 && connectivity != 6 && connectivity != 26)
    throw ConfigError("evaluation.connectivity must be 4, 8, 6 or 26");
  if (ldice_factor != 1 && ldice_factor != 2) throw ConfigError("evaluation.ldice_factor must be 1 or 2");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("evaluation.threshold must lie in (0, 1)");
}

nlohmann::json to_json(const EvalConventions& c) {
  return {{"connectivity", c.connectivity},
          {"ldice_factor", c.ldice_factor},
          {"threshold", c.threshold},
          {"overlap", "at least one shared voxel"},
          {"lfpr", "1 - lesion-wise precision"},
          {"hd95", "max of directed nearest-rank 95th percentiles"},
          {"boundary", "foreground voxels with a background face neighbour; outside the grid is background"},
          {"units", {{"ratios", "percent"}, {"distances", "mm"}}},
          {"aggregate_std", "population"},
          {"missing", "NA"}};
}

EvalConventions eval_conventions_from_json(const nlohmann::json& j) {
  const std::string where = "evaluation";
  // Descriptive keys written by to_json are accepted and ignored.
  require_keys(j,
               {"connectivity", "ldice_factor", "threshold", "mode", "overlap", "lfpr", "hd95", "boundary", "units",
                "aggregate_std", "missing"},
               where);
  EvalConventions c;
  if (j.contains("mode")) {
    const auto mode = get_or<std::string>(j, "mode", "volume", where);
    if (mode == "volume") c.connectivity = 26;
    else if (mode == "slice") c.connectivity = 8;
    else throw ConfigError("evaluation.mode must be \"volume\" or \"slice\", got \"" + mode + "\"");
  }
  c.connectivity = get_or<int>(j, "connectivity", c.connectivity, where);
  c.ldice_factor = get_or<int>(j, "ldice_factor", c.ldice_factor, where);
  c.threshold = get_or<double>(j, "threshold", c.threshold, where);
  c.validate();
  return c;
}

VolumeMetrics evaluate_volume(const std::string& id, const Mask3D& pred, const Mask3D& gt,
                              const std::array<double, 3>& spacing, const EvalConventions& conventions) {
  conventions.validate();
  VolumeMetrics m;
  m.id = id;
  m.spacing = spacing;
  m.dice = dice(pred, gt);
  m.jaccard = jaccard(pred, gt);
  m.counts = lesion_counts(connected_components(pred, conventions.connectivity),
                           connected_components(gt, conventions.connectivity));
  m.lesion = lesion_metrics(m.counts, conventions.ldice_factor);
  if (auto d = surface_distances(pred, gt, spacing)) {
    m.hd = hd(*d);
    m.hd95 = hd95(*d);
    m.asd = asd(*d);
  }
  return m;
}

const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names = {"dice", "jaccard", "ldice", "ltpr", "lppv",
                                                 "lfpr", "hd",      "hd95",  "asd"};
  return names;
}

std::optional<double> reported_value(const VolumeMetrics& m, const std::string& name) {
  auto pct = [](std::optional<double> v) -> std::optional<double> {
    if (v) return *v * 100.0;
    return std::nullopt;
  };
  if (name == "dice") return m.dice * 100.0;
  if (name == "jaccard") return m.jaccard * 100.0;
  if (name == "ldice") return pct(m.lesion.ldice);
  if (name == "ltpr") return pct(m.lesion.ltpr);
  if (name == "lppv") return pct(m.lesion.lppv);
  if (name == "lfpr") return pct(m.lesion.lfpr);
  if (name == "hd") return m.hd;
  if (name == "hd95") return m.hd95;
  if (name == "asd") return m.asd;
  throw InvalidArgument("unknown metric \"" + name + "\"");
}

std::vector<MetricSummary> summarize_values(
    const std::vector<std::pair<std::string, std::vector<std::optional<double>>>>& columns) {
  std::vector<MetricSummary> out;
  for (const auto& [name, values] : columns) {
    MetricSummary s;
    s.name = name;
    double sum = 0.0;
    for (const auto& v : values)
      if (v) {
        sum += *v;
        ++s.n;
      }
    if (s.n > 0) {
      const double mean = sum / s.n;
      double ss = 0.0;
      for (const auto& v : values)
        if (v) ss += (*v - mean) * (*v - mean);
      s.mean = mean;
      s.std = std::sqrt(ss / s.n);
    }
    out.push_back(s);
  }
  return out;
}

std::vector<MetricSummary> summarize(const std::vector<VolumeMetrics>& rows) {
  std::vector<std::pair<std::string, std::vector<std::optional<double>>>> columns;
  for (const auto& name : metric_names()) {
    std::vector<std::optional<double>> values;
    for (const auto& r : rows) values.push_back(reported_value(r, name));
    columns.emplace_back(name, std::move(values));
  }
  return summarize_values(columns);
}

std::string format_value(const std::optional<double>& v) {
  if (!v) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

void write_metrics_report(const std::filesystem::path& dir, const std::vector<VolumeMetrics>& rows,
                          const EvalConventions& conventions, const nlohmann::json& provenance) {
  const auto& names = metric_names();
  std::ostringstream csv;
  csv << "volume";
  for (const auto& n : names) csv << ',' << n;
  csv << ",tp_gt,tp_pred,gl,pl\n";
  for (const auto& r : rows) {
    csv << r.id;
    for (const auto& n : names) csv << ',' << format_value(reported_value(r, n));
    csv << ',' << r.counts.tp_gt << ',' << r.counts.tp_pred << ',' << r.counts.gl << ',' << r.counts.pl << '\n';
  }
  const auto summary = summarize(rows);
  csv << "mean";
  for (const auto& s : summary) csv << ',' << format_value(s.mean);
  csv << ",,,,\nstd";
  for (const auto& s : summary) csv << ',' << format_value(s.std);
  csv << ",,,,\n";
  write_text(dir / "metrics.csv", csv.str());

  auto jv = [](const std::optional<double>& v) -> nlohmann::json {
    if (v) return *v;
    return nullptr;
  };
  nlohmann::json volumes = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json e = {{"id", r.id},
                        {"spacing", r.spacing},
                        {"counts", {{"tp_gt", r.counts.tp_gt}, {"tp_pred", r.counts.tp_pred},
                                    {"gl", r.counts.gl}, {"pl", r.counts.pl}}}};
    for (const auto& n : names) e[n] = jv(reported_value(r, n));
    volumes.push_back(e);
  }
  nlohmann::json aggregate = nlohmann::json::object();
  for (const auto& s : summary) aggregate[s.name] = {{"mean", jv(s.mean)}, {"std", jv(s.std)}, {"n", s.n}};
  const nlohmann::json doc = {{"conventions", to_json(conventions)},
                              {"provenance", provenance},
                              {"volumes", volumes},
                              {"aggregate", aggregate}};
  write_text(dir / "metrics.json", doc.dump(2) + "\n");
}

}  // namespace nerd
