#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "nerd/nn.hpp"
#include "nerd/rng.hpp"
#include "nerd/tensor.hpp"

namespace test {

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("nerd_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

template <class T>
nerd::Tensor<T> random_tensor(int c, int b, int h, int w, nerd::Rng& rng, double lo = -1.0, double hi = 1.0) {
  nerd::Tensor<T> t(c, b, h, w);
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

inline std::vector<double> random_vector(std::size_t n, nerd::Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

/// ||a - n|| / max(||a|| + ||n||, tiny) between two gradient vectors.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& n) {
  double diff = 0, na = 0, nn = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - n[i]) * (a[i] - n[i]);
    na += a[i] * a[i];
    nn += n[i] * n[i];
  }
  const double denom = std::sqrt(na) + std::sqrt(nn);
  return denom < 1e-12 ? std::sqrt(diff) : std::sqrt(diff) / denom;
}

/// Central differences of `loss` w.r.t. every entry of `values` (restored after).
inline std::vector<double> numeric_gradient(std::vector<double>& values, const std::function<double()>& loss,
                                            double h = 1e-6) {
  std::vector<double> g(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double keep = values[i];
    values[i] = keep + h;
    const double up = loss();
    values[i] = keep - h;
    const double down = loss();
    values[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

/// Worst relative error over every parameter tensor for the scalar loss
/// sum(r * f(x)); `run` returns that loss and, when asked, backpropagates r.
inline double check_params(const nerd::ParamRefs<double>& params, const std::function<double(bool)>& run) {
  nerd::zero_grads(params);
  run(true);
  double worst = 0;
  for (auto* p : params) {
    std::vector<double> analytic(p->grad.begin(), p->grad.end());
    const auto numeric = numeric_gradient(p->value, [&] { return run(false); });
    worst = std::max(worst, relative_error(analytic, numeric));
  }
  return worst;
}

inline double dot(const nerd::Tensor<double>& a, const nerd::Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

}  // namespace test
