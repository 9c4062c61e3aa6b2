#include <doctest.h>

#include <random>

#include "checks.hpp"
#include "dtae/nn/layers.hpp"

using namespace dtae;
using namespace dtae::nn;
using dtae::testing::fill_normal;

TEST_SUITE("layers") {
  TEST_CASE("every layer passes the finite-difference check") {
    for (const auto& [name, check] : testing::layer_gradient_checks(11)) {
      CAPTURE(name);
      CAPTURE(check.worst);
      CHECK(check.trials == testing::kTrials);
      CHECK(check.max_rel < testing::kGradTolerance);
    }
  }

  TEST_CASE("conv2d matches a direct loop") {
    std::mt19937_64 rng(3);
    Conv2d<double> conv(2, 3, 3);
    auto ps = conv.params();
    fill_normal(ps[0]->value.data, rng);
    fill_normal(ps[1]->value.data, rng);
    Tensord x({2, 4, 5, 2});
    fill_normal(x.data, rng);
    const auto y = conv.forward(x, false);
    REQUIRE(y.shape == Shape{2, 4, 5, 3});
    const auto& w = ps[0]->value;
    for (std::size_t n = 0; n < 2; ++n)
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 5; ++c)
          for (std::size_t o = 0; o < 3; ++o) {
            double s = ps[1]->value[o];
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx)
                for (std::size_t ch = 0; ch < 2; ++ch) {
                  const int iy = r + ky - 1, ix = c + kx - 1;
                  if (iy < 0 || iy >= 4 || ix < 0 || ix >= 5) continue;
                  s += x[((n * 4 + iy) * 5 + ix) * 2 + ch] * w.at((ky * 3 + kx) * 2 + ch, o);
                }
            CHECK(y[((n * 4 + r) * 5 + c) * 3 + o] == doctest::Approx(s).epsilon(1e-12));
          }
  }

  TEST_CASE("transposed convolution doubles the side and matches a scatter loop") {
    std::mt19937_64 rng(4);
    ConvTranspose2d<double> up(2, 3, 3, 2);
    auto ps = up.params();
    fill_normal(ps[0]->value.data, rng);
    fill_normal(ps[1]->value.data, rng);
    Tensord x({1, 3, 3, 2});
    fill_normal(x.data, rng);
    const auto y = up.forward(x, false);
    REQUIRE(y.shape == Shape{1, 6, 6, 3});
    Tensord expect({1, 6, 6, 3});
    for (std::size_t i = 0; i < 36; ++i)
      for (std::size_t o = 0; o < 3; ++o) expect[i * 3 + o] = ps[1]->value[o];
    for (std::size_t iy = 0; iy < 3; ++iy)
      for (std::size_t ix = 0; ix < 3; ++ix)
        for (std::size_t ky = 0; ky < 3; ++ky)
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const std::size_t oy = 2 * iy + ky, ox = 2 * ix + kx;
            if (oy >= 6 || ox >= 6) continue;
            for (std::size_t c = 0; c < 2; ++c)
              for (std::size_t o = 0; o < 3; ++o)
                expect[(oy * 6 + ox) * 3 + o] += x[(iy * 3 + ix) * 2 + c] * ps[0]->value.at(c, (ky * 3 + kx) * 3 + o);
          }
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(expect[i]).epsilon(1e-12));
  }

  TEST_CASE("max pooling: same padding, first maximum wins") {
    MaxPool2d<double> pool(3, 2);
    Tensord x({1, 4, 4, 1}, std::vector<double>{1, 2, 3, 4,  //
                                                5, 6, 7, 8,  //
                                                9, 9, 0, 0,  //
                                                0, 0, 0, 0});
    const auto y = pool.forward(x, true);
    REQUIRE(y.shape == Shape{1, 2, 2, 1});
    // Windows cover rows/cols [0,3) and [2,4): padding goes after the input.
    CHECK(y.data == std::vector<double>{9, 8, 9, 0});
    const auto dx = pool.backward(Tensord({1, 2, 2, 1}, std::vector<double>{1, 1, 1, 1}));
    // Both windows holding the tied 9s route to the earlier one.
    CHECK(dx[8] == 2.0);
    CHECK(dx[9] == 0.0);
    CHECK(dx[7] == 1.0);
    CHECK(dx[10] == 1.0);
    double total = 0;
    for (double v : dx.data) total += v;
    CHECK(total == 4.0);

    MaxPool2d<double> odd(3, 2);
    CHECK(odd.forward(Tensord({2, 5, 5, 3}), false).shape == Shape{2, 3, 3, 3});
  }

  TEST_CASE("batchnorm running statistics") {
    BatchNorm<double> bn(1);
    Tensord x({4, 1}, std::vector<double>{1, 2, 3, 6});
    const auto y = bn.forward(x, true);
    double mean = 0, sq = 0;
    for (double v : y.data) mean += v / 4;
    for (double v : y.data) sq += (v - mean) * (v - mean) / 4;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(sq == doctest::Approx(1.0).epsilon(1e-4));
    const auto bufs = bn.buffers();
    // Batch mean 3, unbiased variance 14/3; momentum 0.9 from (0, 1).
    CHECK((*bufs[0].tensor)[0] == doctest::Approx(0.3));
    CHECK((*bufs[1].tensor)[0] == doctest::Approx(0.9 + 0.1 * 14.0 / 3.0));
    const auto e = bn.forward(Tensord({1, 1}, std::vector<double>{0.3}), false);
    CHECK(e[0] == doctest::Approx(0.0));
  }

  TEST_CASE("dropout is inverted and identity at inference") {
    Dropout<double> d(0.2);
    d.reseed(5);
    Tensord x({1, 20000}, 1.0);
    const auto y = d.forward(x, true);
    std::size_t kept = 0;
    for (double v : y.data) {
      CHECK((v == 0.0 || v == doctest::Approx(5.0)));
      kept += v != 0.0;
    }
    CHECK(kept == doctest::Approx(4000).epsilon(0.05));
    CHECK(d.forward(x, false).data == x.data);
  }

  TEST_CASE("elementwise layers") {
    ReLU<double> relu;
    CHECK(relu.forward(Tensord({1, 3}, std::vector<double>{-1, 0, 2}), true).data == std::vector<double>{0, 0, 2});
    Sigmoid<double> sig;
    CHECK(sig.forward(Tensord({1, 1}, std::vector<double>{0}), true)[0] == 0.5);
    Reshape<double> rs({2, 2});
    CHECK(rs.forward(Tensord({3, 4}), true).shape == Shape{3, 2, 2});
    CHECK_THROWS_AS(rs.forward(Tensord({3, 5}), true), ShapeError);
  }

  TEST_CASE("backward before forward is an error") {
    ReLU<double> relu;
    CHECK_THROWS_AS(relu.backward(Tensord({1, 1})), DomainError);
    Sequential<double> s("s");
    s.emplace<Dense<double>>(2, 2);
    CHECK_THROWS_AS(s.backward(Tensord({1, 2})), DomainError);
  }

  TEST_CASE("shape mismatches are rejected") {
    Conv2d<double> conv(2, 3);
    CHECK_THROWS_AS(conv.forward(Tensord({1, 4, 4, 3}), true), ShapeError);
    Dense<double> dense(4, 2);
    CHECK_THROWS_AS(dense.forward(Tensord({2, 5}), true), ShapeError);
  }

  TEST_CASE("sequential names and initialization") {
    Sequential<float> s("enc");
    s.emplace<Dense<float>>(10, 4);
    s.emplace<BatchNorm<float>>(4);
    const auto ps = s.params();
    REQUIRE(ps.size() == 4);
    CHECK(ps[0]->name == "enc.0.weight");
    CHECK(ps[2]->name == "enc.1.gamma");
    CHECK(s.buffers()[0].name == "enc.1.running_mean");
    s.init(3);
    const auto w = ps[0]->value.data;
    double var = 0;
    for (float v : w) var += v * v / w.size();
    CHECK(var == doctest::Approx(2.0 / 10).epsilon(0.6));
    CHECK(ps[2]->value.data == std::vector<float>(4, 1.0f));
    Sequential<float> t("enc");
    t.emplace<Dense<float>>(10, 4);
    t.emplace<BatchNorm<float>>(4);
    t.init(3);
    CHECK(t.params()[0]->value.data == w);
  }
}
