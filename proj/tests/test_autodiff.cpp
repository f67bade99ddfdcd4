#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "test_util.hpp"
#include "velbuild/autodiff.hpp"

using namespace velbuild;
using namespace velbuild::ad;
using testutil::fd_check;
using testutil::probe_indices;

namespace {

constexpr double kFdTol = 1e-4;

Parameter<double> random_param(const std::string& name, std::vector<int> shape,
                               std::uint64_t seed, double scale = 1.0, double offset = 0.0) {
  Parameter<double> p(name, std::move(shape));
  Rng rng(seed);
  for (auto& v : p.value) v = offset + scale * rng.normal();
  return p;
}

/// Scalar probe loss: sum(out * fixed_weights), generic in every output entry.
template <typename MakeOut>
auto weighted_loss(MakeOut&& make, std::vector<double> weights) {
  return [make = std::forward<MakeOut>(make), weights](Tape<double>& t) {
    Var<double> out = make(t);
    const auto& shape = t.value(out).shape;
    return t.sum(t.mul(out, t.constant(shape, weights)));
  };
}

}  // namespace

TEST_SUITE("autodiff") {

TEST_CASE("mse of a tensor with itself is zero with zero gradient") {
  auto x = random_param("x", {4, 5}, 1);
  Tape<double> t;
  auto loss = t.mse(t.leaf(x), t.leaf(x));
  CHECK(t.value(loss).v[0] == 0.0);
  t.backward(loss);
  REQUIRE(x.grad.size() == x.value.size());
  for (double g : x.grad) CHECK(g == 0.0);
}

TEST_CASE("sum of squares has gradient 2x") {
  Parameter<double> x("x", {3});
  x.value = {1.0, 2.0, 3.0};
  Tape<double> t;
  auto lx = t.leaf(x);
  auto loss = t.sum(t.mul(lx, lx));
  CHECK(t.value(loss).v[0] == 14.0);
  t.backward(loss);
  CHECK(x.grad == std::vector<double>{2.0, 4.0, 6.0});
}

TEST_CASE("elementwise arithmetic gradients") {
  auto x = random_param("x", {4, 5}, 2);
  auto y = random_param("y", {4, 5}, 3);
  const auto w = testutil::random_normal_f64(20, 4);
  const auto probes = probe_indices(20, 6);

  SUBCASE("add") {
    auto build = weighted_loss([&](Tape<double>& t) { return t.add(t.leaf(x), t.leaf(y)); }, w);
    CHECK(fd_check(x, build, probes) < kFdTol);
    CHECK(fd_check(y, build, probes) < kFdTol);
  }
  SUBCASE("sub") {
    auto build = weighted_loss([&](Tape<double>& t) { return t.sub(t.leaf(x), t.leaf(y)); }, w);
    CHECK(fd_check(x, build, probes) < kFdTol);
    CHECK(fd_check(y, build, probes) < kFdTol);
  }
  SUBCASE("mul") {
    auto build = weighted_loss([&](Tape<double>& t) { return t.mul(t.leaf(x), t.leaf(y)); }, w);
    CHECK(fd_check(x, build, probes) < kFdTol);
    CHECK(fd_check(y, build, probes) < kFdTol);
  }
  SUBCASE("scalar_mul") {
    auto build =
        weighted_loss([&](Tape<double>& t) { return t.scalar_mul(t.leaf(x), -1.7); }, w);
    CHECK(fd_check(x, build, probes) < kFdTol);
  }
  SUBCASE("shape mismatch rejected") {
    Parameter<double> z("z", {5, 4});
    Tape<double> t;
    CHECK_THROWS_AS(t.add(t.leaf(x), t.leaf(z)), ConfigError);
  }
}

TEST_CASE("activation values and gradients") {
  SUBCASE("closed-form points") {
    Tape<double> t;
    auto v = t.constant({4}, {-1.0, 0.0, 2.0, 0.5});
    CHECK(t.value(t.relu(v)).v == std::vector<double>{0.0, 0.0, 2.0, 0.5});
    CHECK(t.value(t.sigmoid(v)).v[1] == 0.5);
    CHECK(t.value(t.tanh(v)).v[1] == 0.0);
    CHECK(t.value(t.gelu(v)).v[1] == 0.0);
    CHECK(t.value(t.tanh(v)).v[2] == doctest::Approx(std::tanh(2.0)).epsilon(1e-12));
  }
  SUBCASE("finite differences") {
    // keep probes away from the relu kink
    auto x = random_param("x", {4, 5}, 5, 1.0, 0.0);
    for (auto& v : x.value)
      if (std::abs(v) < 0.2) v = v < 0 ? v - 0.2 : v + 0.2;
    const auto w = testutil::random_normal_f64(20, 6);
    const auto probes = probe_indices(20, 6);

    auto relu_l = weighted_loss([&](Tape<double>& t) { return t.relu(t.leaf(x)); }, w);
    auto gelu_l = weighted_loss([&](Tape<double>& t) { return t.gelu(t.leaf(x)); }, w);
    auto sig_l = weighted_loss([&](Tape<double>& t) { return t.sigmoid(t.leaf(x)); }, w);
    auto tanh_l = weighted_loss([&](Tape<double>& t) { return t.tanh(t.leaf(x)); }, w);
    CHECK(fd_check(x, relu_l, probes) < kFdTol);
    CHECK(fd_check(x, gelu_l, probes) < kFdTol);
    CHECK(fd_check(x, sig_l, probes) < kFdTol);
    CHECK(fd_check(x, tanh_l, probes) < kFdTol);
  }
}

TEST_CASE("reduction gradients") {
  auto x = random_param("x", {4, 5}, 7);
  auto y = random_param("y", {4, 5}, 8);
  const auto probes = probe_indices(20, 6);

  SUBCASE("sum spreads ones") {
    Tape<double> t;
    auto loss = t.sum(t.leaf(x));
    t.backward(loss);
    for (double g : x.grad) CHECK(g == 1.0);
  }
  SUBCASE("mean spreads 1/n") {
    Tape<double> t;
    auto loss = t.mean(t.leaf(x));
    t.backward(loss);
    for (double g : x.grad) CHECK(g == doctest::Approx(1.0 / 20.0).epsilon(1e-15));
  }
  SUBCASE("mse finite differences") {
    auto build = [&](Tape<double>& t) { return t.mse(t.leaf(x), t.leaf(y)); };
    CHECK(fd_check(x, build, probes) < kFdTol);
    CHECK(fd_check(y, build, probes) < kFdTol);
  }
  SUBCASE("mse value") {
    Parameter<double> a("a", {2});
    a.value = {1.0, 3.0};
    Parameter<double> b("b", {2});
    b.value = {2.0, 5.0};
    Tape<double> t;
    CHECK(t.value(t.mse(t.leaf(a), t.leaf(b))).v[0] == doctest::Approx(2.5).epsilon(1e-15));
  }
}

TEST_CASE("matmul and linear") {
  SUBCASE("2x2 closed form") {
    Tape<double> t;
    auto a = t.constant({2, 2}, {1.0, 2.0, 3.0, 4.0});
    auto b = t.constant({2, 2}, {5.0, 6.0, 7.0, 8.0});
    auto c = t.matmul(a, b);
    CHECK(t.value(c).v == std::vector<double>{19.0, 22.0, 43.0, 50.0});
  }
  SUBCASE("finite differences") {
    auto a = random_param("a", {3, 4}, 9);
    auto b = random_param("b", {4, 5}, 10);
    const auto w = testutil::random_normal_f64(15, 11);
    auto build = weighted_loss([&](Tape<double>& t) { return t.matmul(t.leaf(a), t.leaf(b)); }, w);
    CHECK(fd_check(a, build, probe_indices(12, 6)) < kFdTol);
    CHECK(fd_check(b, build, probe_indices(20, 6)) < kFdTol);
  }
  SUBCASE("linear finite differences") {
    auto x = random_param("x", {3, 4}, 12);
    auto wgt = random_param("w", {5, 4}, 13);
    auto bias = random_param("b", {5}, 14);
    const auto w = testutil::random_normal_f64(15, 15);
    auto build = weighted_loss(
        [&](Tape<double>& t) { return t.linear(t.leaf(x), t.leaf(wgt), t.leaf(bias)); }, w);
    CHECK(fd_check(x, build, probe_indices(12, 6)) < kFdTol);
    CHECK(fd_check(wgt, build, probe_indices(20, 6)) < kFdTol);
    CHECK(fd_check(bias, build, {0, 1, 2, 3, 4}) < kFdTol);
  }
  SUBCASE("inner dim mismatch") {
    Tape<double> t;
    auto a = t.constant({2, 3}, std::vector<double>(6, 1.0));
    auto b = t.constant({2, 2}, std::vector<double>(4, 1.0));
    CHECK_THROWS_AS(t.matmul(a, b), ConfigError);
  }
}

TEST_CASE("conv2d semantics") {
  SUBCASE("1x1 unit kernel is the identity") {
    auto x = random_param("x", {2, 3, 4, 5}, 16);
    Parameter<double> k("k", {3, 3, 1, 1});
    for (int o = 0; o < 3; ++o)
      for (int c = 0; c < 3; ++c) k.value[static_cast<std::size_t>(o) * 3 + c] = (o == c) ? 1.0 : 0.0;
    Tape<double> t;
    auto out = t.conv2d(t.leaf(x), t.leaf(k));
    CHECK(t.value(out).v == x.value);
  }
  SUBCASE("delta input stamps the rotated kernel") {
    Parameter<double> x("x", {1, 1, 5, 5});
    x.value[2 * 5 + 2] = 1.0;
    Parameter<double> k("k", {1, 1, 3, 3});
    for (int i = 0; i < 9; ++i) k.value[i] = i + 1.0;
    Tape<double> t;
    auto out = t.conv2d(t.leaf(x), t.leaf(k));
    const auto& o = t.value(out).v;
    for (int a = -1; a <= 1; ++a)
      for (int b = -1; b <= 1; ++b)
        CHECK(o[static_cast<std::size_t>(2 + a) * 5 + (2 + b)] ==
              k.value[static_cast<std::size_t>(1 - a) * 3 + (1 - b)]);
    CHECK(o[0] == 0.0);
    CHECK(o[4] == 0.0);
  }
  SUBCASE("finite differences") {
    auto x = random_param("x", {2, 2, 4, 5}, 17);
    auto k = random_param("k", {3, 2, 3, 3}, 18, 0.5);
    const auto w = testutil::random_normal_f64(2 * 3 * 4 * 5, 19);
    auto build = weighted_loss([&](Tape<double>& t) { return t.conv2d(t.leaf(x), t.leaf(k)); }, w);
    CHECK(fd_check(x, build, probe_indices(x.numel(), 6)) < kFdTol);
    CHECK(fd_check(k, build, probe_indices(k.numel(), 6)) < kFdTol);
  }
  SUBCASE("shape guards") {
    Tape<double> t;
    auto x = t.constant({1, 2, 4, 4}, std::vector<double>(32, 0.0));
    CHECK_THROWS_AS(t.conv2d(x, t.constant({1, 3, 3, 3}, std::vector<double>(27, 0.0))),
                    ConfigError);
    CHECK_THROWS_AS(t.conv2d(x, t.constant({1, 2, 2, 2}, std::vector<double>(8, 0.0))),
                    ConfigError);
  }
}

TEST_CASE("pooling and upsampling") {
  SUBCASE("avgpool2 averages disjoint quads") {
    Parameter<double> x("x", {1, 1, 4, 4});
    x.value[0] = 4.0;  // quad (0,0): 4,0,0,0 -> 1
    Tape<double> t;
    auto out = t.avgpool2(t.leaf(x));
    CHECK(t.value(out).shape == std::vector<int>{1, 1, 2, 2});
    CHECK(t.value(out).v[0] == 1.0);
    CHECK(t.value(out).v[3] == 0.0);
  }
  SUBCASE("avgpool2 rejects odd dims") {
    Tape<double> t;
    CHECK_THROWS_AS(t.avgpool2(t.constant({1, 1, 3, 4}, std::vector<double>(12, 0.0))),
                    ConfigError);
  }
  SUBCASE("nearest upsample copies blocks") {
    Parameter<double> x("x", {1, 1, 2, 2});
    x.value = {1.0, 2.0, 3.0, 4.0};
    Tape<double> t;
    auto out = t.upsample_nearest2(t.leaf(x));
    CHECK(t.value(out).shape == std::vector<int>{1, 1, 4, 4});
    const auto& o = t.value(out).v;
    CHECK(o[0] == 1.0);
    CHECK(o[1] == 1.0);
    CHECK(o[4] == 1.0);
    CHECK(o[5] == 1.0);
    CHECK(o[2] == 2.0);
    CHECK(o[15] == 4.0);
  }
  SUBCASE("bilinear upsample preserves constants") {
    Tape<double> t;
    auto out = t.upsample_bilinear2(t.constant({1, 2, 3, 4}, std::vector<double>(24, 2.5)));
    CHECK(t.value(out).shape == std::vector<int>{1, 2, 6, 8});
    for (double v : t.value(out).v) CHECK(v == doctest::Approx(2.5).epsilon(1e-12));
  }
  SUBCASE("finite differences") {
    auto x = random_param("x", {2, 2, 4, 6}, 20);
    const auto wp = testutil::random_normal_f64(2 * 2 * 2 * 3, 21);
    const auto wn = testutil::random_normal_f64(2 * 2 * 8 * 12, 22);
    auto pool_l = weighted_loss([&](Tape<double>& t) { return t.avgpool2(t.leaf(x)); }, wp);
    auto near_l =
        weighted_loss([&](Tape<double>& t) { return t.upsample_nearest2(t.leaf(x)); }, wn);
    auto bil_l =
        weighted_loss([&](Tape<double>& t) { return t.upsample_bilinear2(t.leaf(x)); }, wn);
    const auto probes = probe_indices(x.numel(), 6);
    CHECK(fd_check(x, pool_l, probes) < kFdTol);
    CHECK(fd_check(x, near_l, probes) < kFdTol);
    CHECK(fd_check(x, bil_l, probes) < kFdTol);
  }
}

TEST_CASE("instance norm") {
  SUBCASE("normalizes each channel") {
    auto x = random_param("x", {2, 3, 4, 5}, 23, 3.0, 7.0);
    Tape<double> t;
    auto out = t.instance_norm(t.leaf(x));
    const auto& o = t.value(out).v;
    for (int b = 0; b < 2; ++b)
      for (int c = 0; c < 3; ++c) {
        double mu = 0, var = 0;
        const std::size_t off = (static_cast<std::size_t>(b) * 3 + c) * 20;
        for (int i = 0; i < 20; ++i) mu += o[off + i];
        mu /= 20;
        for (int i = 0; i < 20; ++i) var += (o[off + i] - mu) * (o[off + i] - mu);
        var /= 20;
        CHECK(std::abs(mu) < 1e-10);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-4));  // eps shifts it slightly
      }
  }
  SUBCASE("constant channel maps to zero") {
    Tape<double> t;
    auto out = t.instance_norm(t.constant({1, 1, 4, 4}, std::vector<double>(16, 5.0)));
    for (double v : t.value(out).v) CHECK(std::abs(v) < 1e-8);
  }
  SUBCASE("finite differences") {
    auto x = random_param("x", {2, 2, 4, 5}, 24, 2.0);
    const auto w = testutil::random_normal_f64(x.numel(), 25);
    auto build = weighted_loss([&](Tape<double>& t) { return t.instance_norm(t.leaf(x)); }, w);
    CHECK(fd_check(x, build, probe_indices(x.numel(), 6)) < kFdTol);
  }
}

TEST_CASE("channel concatenation") {
  SUBCASE("layout") {
    Tape<double> t;
    auto a = t.constant({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
    auto b = t.constant({1, 2, 2, 2}, {5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0});
    auto c = t.concat_channels(a, b);
    CHECK(t.value(c).shape == std::vector<int>{1, 3, 2, 2});
    CHECK(t.value(c).v == std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
  }
  SUBCASE("gradients split between independent subgraphs") {
    auto x = random_param("x", {1, 2, 3, 4}, 26);
    auto y = random_param("y", {1, 1, 3, 4}, 27);
    const auto w = testutil::random_normal_f64(36, 28);
    auto build = weighted_loss(
        [&](Tape<double>& t) { return t.concat_channels(t.leaf(x), t.leaf(y)); }, w);
    CHECK(fd_check(x, build, probe_indices(x.numel(), 6)) < kFdTol);
    CHECK(fd_check(y, build, probe_indices(y.numel(), 6)) < kFdTol);

    // the two branches do not contaminate each other
    x.zero_grad();
    y.zero_grad();
    Tape<double> t;
    auto out = t.concat_channels(t.leaf(x), t.leaf(y));
    auto loss = t.sum(t.mul(out, t.constant({1, 3, 3, 4}, w)));
    t.backward(loss);
    for (std::size_t i = 0; i < x.grad.size(); ++i) CHECK(x.grad[i] == w[i]);
    for (std::size_t i = 0; i < y.grad.size(); ++i) CHECK(y.grad[i] == w[24 + i]);
  }
  SUBCASE("spatial mismatch rejected") {
    Tape<double> t;
    auto a = t.constant({1, 1, 2, 2}, std::vector<double>(4, 0.0));
    auto b = t.constant({1, 1, 3, 2}, std::vector<double>(6, 0.0));
    CHECK_THROWS_AS(t.concat_channels(a, b), ConfigError);
  }
}

TEST_CASE("attention pooling reductions") {
  SUBCASE("global_avg_pool values") {
    Parameter<double> x("x", {2, 2, 2, 2});
    for (std::size_t i = 0; i < x.value.size(); ++i) x.value[i] = static_cast<double>(i);
    Tape<double> t;
    auto out = t.global_avg_pool(t.leaf(x));
    CHECK(t.value(out).shape == std::vector<int>{2, 2});
    CHECK(t.value(out).v[0] == 1.5);   // mean of 0..3
    CHECK(t.value(out).v[1] == 5.5);   // mean of 4..7
    CHECK(t.value(out).v[3] == 13.5);  // mean of 12..15
  }
  SUBCASE("channel_pool_meanmax values") {
    Tape<double> t;
    auto x = t.constant({1, 2, 1, 2}, {1.0, 5.0, 3.0, 1.0});
    auto out = t.channel_pool_meanmax(x);
    CHECK(t.value(out).shape == std::vector<int>{1, 2, 1, 2});
    CHECK(t.value(out).v[0] == 2.0);  // mean(1,3)
    CHECK(t.value(out).v[1] == 3.0);  // mean(5,1)
    CHECK(t.value(out).v[2] == 3.0);  // max(1,3)
    CHECK(t.value(out).v[3] == 5.0);  // max(5,1)
  }
  SUBCASE("finite differences") {
    auto x = random_param("x", {2, 3, 2, 3}, 29);
    const auto wg = testutil::random_normal_f64(6, 30);
    const auto wm = testutil::random_normal_f64(2 * 2 * 2 * 3, 31);
    auto gap_l = weighted_loss([&](Tape<double>& t) { return t.global_avg_pool(t.leaf(x)); }, wg);
    auto mm_l =
        weighted_loss([&](Tape<double>& t) { return t.channel_pool_meanmax(t.leaf(x)); }, wm);
    CHECK(fd_check(x, gap_l, probe_indices(x.numel(), 6)) < kFdTol);
    CHECK(fd_check(x, mm_l, probe_indices(x.numel(), 6)) < kFdTol);
  }
}

TEST_CASE("channel and spatial affine broadcasting") {
  auto x = random_param("x", {2, 3, 2, 3}, 32);
  const auto w = testutil::random_normal_f64(x.numel(), 33);
  const auto probes = probe_indices(x.numel(), 6);

  SUBCASE("scale_channels shared over batch") {
    auto s = random_param("s", {3}, 34);
    auto build = weighted_loss(
        [&](Tape<double>& t) { return t.scale_channels(t.leaf(x), t.leaf(s)); }, w);
    CHECK(fd_check(x, build, probes) < kFdTol);
    CHECK(fd_check(s, build, {0, 1, 2}) < kFdTol);
  }
  SUBCASE("scale_channels per sample") {
    auto s = random_param("s", {2, 3}, 35);
    auto build = weighted_loss(
        [&](Tape<double>& t) { return t.scale_channels(t.leaf(x), t.leaf(s)); }, w);
    CHECK(fd_check(x, build, probes) < kFdTol);
    CHECK(fd_check(s, build, {0, 1, 2, 3, 4, 5}) < kFdTol);
  }
  SUBCASE("bias_channels value semantics") {
    Parameter<double> b("b", {3});
    b.value = {10.0, 20.0, 30.0};
    Tape<double> t;
    auto out = t.bias_channels(t.leaf(x), t.leaf(b));
    const auto& o = t.value(out).v;
    for (int c = 0; c < 3; ++c)
      CHECK(o[static_cast<std::size_t>(c) * 6] ==
            doctest::Approx(x.value[static_cast<std::size_t>(c) * 6] + b.value[c]).epsilon(1e-15));
    auto build =
        weighted_loss([&](Tape<double>& t2) { return t2.bias_channels(t2.leaf(x), t2.leaf(b)); }, w);
    CHECK(fd_check(b, build, {0, 1, 2}) < kFdTol);
  }
  SUBCASE("scale_spatial") {
    auto s = random_param("s", {2, 1, 2, 3}, 36);
    auto build = weighted_loss(
        [&](Tape<double>& t) { return t.scale_spatial(t.leaf(x), t.leaf(s)); }, w);
    CHECK(fd_check(x, build, probes) < kFdTol);
    CHECK(fd_check(s, build, probe_indices(s.numel(), 6)) < kFdTol);
  }
}

TEST_CASE("spectral multiply") {
  SUBCASE("full-band identity weights pass the signal through") {
    const int H = 8, W = 8, C = 2;
    Parameter<float> w("w", {C, C, H / 2 + 1, W / 2 + 1, 2});
    for (int o = 0; o < C; ++o)
      for (int c = 0; c < C; ++c)
        if (o == c)
          for (int kz = 0; kz <= H / 2; ++kz)
            for (int kx = 0; kx <= W / 2; ++kx) {
              const std::size_t off =
                  (((static_cast<std::size_t>(o) * C + c) * (H / 2 + 1) + kz) * (W / 2 + 1) + kx) *
                  2;
              w.value[off] = 1.0f;
            }
    Parameter<float> x("x", {1, C, H, W});
    Rng rng(37);
    for (auto& v : x.value) v = static_cast<float>(rng.normal());

    Tape<float> t(false);
    auto out = t.spectral_multiply(t.leaf(x), t.leaf(w));
    const auto& o = t.value(out).v;
    double peak = 0, worst = 0;
    for (std::size_t i = 0; i < o.size(); ++i) {
      peak = std::max(peak, std::abs(static_cast<double>(x.value[i])));
      worst = std::max(worst, std::abs(static_cast<double>(o[i]) - x.value[i]));
    }
    CHECK(worst <= 1e-5 * peak);
  }
  SUBCASE("a kept mode is an eigenfunction") {
    const int H = 8, W = 12;
    Parameter<double> w("w", {1, 1, 4, 5, 2});
    // weight 2 at |kz|=2, kx=3; everything else zero
    w.value[((2 * 5) + 3) * 2] = 2.0;
    Parameter<double> x("x", {1, 1, H, W});
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j)
        x.value[static_cast<std::size_t>(i) * W + j] =
            std::cos(2.0 * std::numbers::pi * (2.0 * i / H + 3.0 * j / W));
    Tape<double> t;
    auto out = t.spectral_multiply(t.leaf(x), t.leaf(w));
    const auto& o = t.value(out).v;
    for (std::size_t i = 0; i < o.size(); ++i)
      CHECK(o[i] == doctest::Approx(2.0 * x.value[i]).epsilon(1e-9));
  }
  SUBCASE("dropped modes vanish") {
    const int H = 8, W = 12;
    Parameter<double> w("w", {1, 1, 2, 2, 2});
    w.value[0] = 1.0;  // only the dc mode kept
    Parameter<double> x("x", {1, 1, H, W});
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j)
        x.value[static_cast<std::size_t>(i) * W + j] =
            3.0 + std::cos(2.0 * std::numbers::pi * 3.0 * i / H);
    Tape<double> t;
    auto out = t.spectral_multiply(t.leaf(x), t.leaf(w));
    for (double v : t.value(out).v) CHECK(v == doctest::Approx(3.0).epsilon(1e-9));
  }
  SUBCASE("finite differences") {
    auto x = random_param("x", {1, 2, 6, 8}, 38);
    auto w = random_param("w", {2, 2, 3, 3, 2}, 39, 0.3);
    const auto lw = testutil::random_normal_f64(2 * 2 * 6 * 8 / 2, 40);  // [1,2,6,8] weights
    auto build = weighted_loss(
        [&](Tape<double>& t) { return t.spectral_multiply(t.leaf(x), t.leaf(w)); },
        testutil::random_normal_f64(96, 41));
    CHECK(fd_check(x, build, probe_indices(x.numel(), 8)) < kFdTol);
    CHECK(fd_check(w, build, probe_indices(w.numel(), 8)) < kFdTol);
    (void)lw;
  }
  SUBCASE("mode counts beyond nyquist are rejected") {
    Tape<double> t;
    auto x = t.constant({1, 1, 8, 8}, std::vector<double>(64, 0.0));
    auto w = t.constant({1, 1, 6, 3, 2}, std::vector<double>(36, 0.0));
    CHECK_THROWS_AS(t.spectral_multiply(x, w), ConfigError);
  }
}

TEST_CASE("tape discipline") {
  SUBCASE("one backward per recording") {
    auto x = random_param("x", {3}, 42);
    Tape<double> t;
    auto loss = t.sum(t.leaf(x));
    t.backward(loss);
    CHECK_THROWS_AS(t.backward(loss), ConfigError);
    t.reset();
    auto loss2 = t.sum(t.leaf(x));
    CHECK_NOTHROW(t.backward(loss2));
  }
  SUBCASE("loss must be scalar") {
    auto x = random_param("x", {3}, 43);
    Tape<double> t;
    auto v = t.leaf(x);
    CHECK_THROWS_AS(t.backward(v), ConfigError);
  }
  SUBCASE("non-recording tape refuses backward and skips grads") {
    auto x = random_param("x", {3}, 44);
    Tape<double> t(false);
    auto loss = t.sum(t.leaf(x));
    CHECK_THROWS_AS(t.backward(loss), ConfigError);
  }
  SUBCASE("gradient accumulation doubles exactly") {
    auto x = random_param("x", {4}, 45);
    auto run = [&] {
      Tape<double> t;
      auto lx = t.leaf(x);
      t.backward(t.sum(t.mul(lx, lx)));
    };
    x.zero_grad();
    run();
    const auto once = x.grad;
    run();
    for (std::size_t i = 0; i < once.size(); ++i) CHECK(x.grad[i] == 2.0 * once[i]);
  }
  SUBCASE("requires_grad=false leaves stay untouched") {
    auto x = random_param("x", {4}, 46);
    x.requires_grad = false;
    Tape<double> t;
    t.backward(t.sum(t.leaf(x)));
    CHECK(x.grad.empty());
  }
  SUBCASE("vars are tape-bound") {
    Tape<double> t1, t2;
    auto a = t1.constant({2}, {1.0, 2.0});
    CHECK_THROWS_AS(t2.sum(a), ConfigError);
  }
  SUBCASE("debug checks flag non-finite values") {
    Tape<double> t;
    t.set_debug_checks(true);
    CHECK_THROWS_AS(t.constant({1}, {std::numeric_limits<double>::quiet_NaN()}), NumericError);
  }
}

}  // TEST_SUITE
