#include "doctest.h"
#include "nerd/model.hpp"
#include "nerd/nn.hpp"
#include "support.hpp"

using namespace nerd;

namespace {

// Loss r . layer(x); checks parameter and input gradients.
template <class Layer>
void check_layer(Layer& layer, Tensor<double> x, std::uint64_t seed) {
  Rng rng(seed);
  ParamRefs<double> params;
  layer.collect(params);
  const auto y0 = layer.forward(x);
  const auto r = test::random_tensor<double>(y0.channels(), y0.batch(), y0.height(), y0.width(), rng);

  auto run = [&](bool backward) {
    const auto y = layer.forward(x);
    if (backward) layer.backward(r);
    return test::dot(y, r);
  };
  CHECK(test::check_params(params, run) < 1e-6);

  layer.forward(x);
  const auto dx = layer.backward(r);
  std::vector<double> xs(x.values().begin(), x.values().end());
  auto loss = [&] {
    std::copy(xs.begin(), xs.end(), x.data());
    return test::dot(layer.forward(x), r);
  };
  const auto numeric = test::numeric_gradient(xs, loss);
  std::copy(xs.begin(), xs.end(), x.data());
  CHECK(test::relative_error({dx.values().begin(), dx.values().end()}, numeric) < 1e-6);
}

}  // namespace

TEST_SUITE("nn") {
  TEST_CASE("conv parameter counts") {
    Conv2d<float> conv("c", 16, 32, 3, true);
    CHECK(param_count(conv) == 4640);
    Conv2d<float> nobias("c", 16, 32, 3, false);
    CHECK(param_count(nobias) == 4608);
    CHECK(param_count(ParamRefs<float>{}) == 0);
  }

  TEST_CASE("3x3 conv matches a direct zero-padded loop") {
    Rng rng(1);
    Conv2d<double> conv("c", 2, 3, 3, true);
    conv.init(rng, true);
    ParamRefs<double> p;
    conv.collect(p);
    for (auto& v : p[1]->value) v = rng.uniform(-1, 1);
    const auto x = test::random_tensor<double>(2, 2, 5, 4, rng);
    const auto y = conv.forward(x);
    const auto& w = p[0]->value;
    for (int b = 0; b < 2; ++b)
      for (int o = 0; o < 3; ++o)
        for (int yy = 0; yy < 5; ++yy)
          for (int xx = 0; xx < 4; ++xx) {
            double s = p[1]->value[o];
            for (int i = 0; i < 2; ++i)
              for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                  const int sy = yy + ky - 1, sx = xx + kx - 1;
                  if (sy < 0 || sy >= 5 || sx < 0 || sx >= 4) continue;
                  s += w[(o * 2 + i) * 9 + ky * 3 + kx] * x.at(i, b, sy, sx);
                }
            CHECK(y.at(o, b, yy, xx) == doctest::Approx(s).epsilon(1e-12));
          }
  }

  TEST_CASE("layer gradients match finite differences") {
    Rng rng(3);
    SUBCASE("conv3x3 with bias") {
      Conv2d<double> conv("c", 3, 2, 3, true);
      conv.init(rng, true);
      check_layer(conv, test::random_tensor<double>(3, 2, 5, 6, rng), 11);
    }
    SUBCASE("conv1x1") {
      Conv2d<double> conv("c", 3, 4, 1, true);
      conv.init(rng, false);
      check_layer(conv, test::random_tensor<double>(3, 2, 4, 4, rng), 12);
    }
    SUBCASE("instance norm") {
      InstanceNorm<double> norm("n", 3);
      ParamRefs<double> p;
      norm.collect(p);
      for (auto* q : p)
        for (auto& v : q->value) v = rng.uniform(0.5, 1.5);
      check_layer(norm, test::random_tensor<double>(3, 2, 4, 5, rng), 13);
    }
    SUBCASE("conv unit and double conv") {
      DoubleConv<double> block("d", 2, 3, NormKind::Instance);
      block.init(rng);
      check_layer(block, test::random_tensor<double>(2, 2, 6, 6, rng), 14);
      DoubleConv<double> plain("p", 2, 3, NormKind::None);
      plain.init(rng);
      check_layer(plain, test::random_tensor<double>(2, 1, 6, 6, rng), 15);
    }
  }

  TEST_CASE("max pooling and nearest upsampling") {
    Tensor<double> x(1, 1, 2, 4);
    const double v[] = {1, 5, 2, 2, 3, 4, 2, 2};
    std::copy(std::begin(v), std::end(v), x.data());
    MaxPool2<double> pool;
    const auto y = pool.forward(x);
    CHECK(y.height() == 1);
    CHECK(y.width() == 2);
    CHECK(y.at(0, 0, 0, 0) == 5);
    CHECK(y.at(0, 0, 0, 1) == 2);
    Tensor<double> dy(1, 1, 1, 2);
    dy.at(0, 0, 0, 0) = 1;
    dy.at(0, 0, 0, 1) = 1;
    const auto dx = pool.backward(dy);
    // Ties route the gradient to the first element of the window.
    const double expect[] = {0, 1, 1, 0, 0, 0, 0, 0};
    for (int i = 0; i < 8; ++i) CHECK(dx.data()[i] == expect[i]);

    const auto up = upsample2(y);
    CHECK(up.height() == 2);
    CHECK(up.width() == 4);
    CHECK(up.at(0, 0, 1, 1) == 5);
    CHECK(up.at(0, 0, 0, 2) == 2);
    const auto back = upsample2_backward(up);
    CHECK(back.at(0, 0, 0, 0) == 20);
  }

  TEST_CASE("dense and mlp gradients") {
    Rng rng(5);
    Mlp<double> mlp("m", 4, {6, 5}, 3);
    mlp.init(rng);
    ParamRefs<double> params;
    mlp.collect(params);
    for (auto* p : params)
      for (auto& v : p->value) v = rng.uniform(-1, 1);
    const std::size_t rows = 7;
    const auto x = test::random_vector(rows * 4, rng);
    const auto r = test::random_vector(rows * 3, rng);
    auto run = [&](bool backward) {
      const auto y = mlp.forward(x, rows);
      if (backward) mlp.backward(r, rows);
      double s = 0;
      for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
      return s;
    };
    CHECK(test::check_params(params, run) < 1e-6);
    CHECK(param_count(mlp) == 4 * 6 + 6 + 6 * 5 + 5 + 5 * 3 + 3);
  }

  TEST_CASE("initialisation is deterministic and bounded") {
    Rng a(9), b(9);
    Conv2d<float> c1("c", 4, 8, 3, false), c2("c", 4, 8, 3, false);
    c1.init(a, true);
    c2.init(b, true);
    ParamRefs<float> p1, p2;
    c1.collect(p1);
    c2.collect(p2);
    CHECK(p1[0]->value == p2[0]->value);
    const double bound = std::sqrt(6.0 / 36.0);
    for (float v : p1[0]->value) CHECK(std::abs(v) <= bound);
  }
}
