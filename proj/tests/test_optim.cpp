#include <doctest.h>

#include <cmath>
#include <vector>

#include "test_util.hpp"
#include "velbuild/autodiff.hpp"
#include "velbuild/optim.hpp"

using namespace velbuild;
using namespace velbuild::ad;

TEST_SUITE("optim") {

TEST_CASE("first adam step moves by roughly lr against the gradient") {
  Parameter<double> x("x", {3});
  x.value = {1.0, -2.0, 0.5};
  x.grad = {0.3, -4.0, 1e-6};
  const auto before = x.value;
  Adam<double> opt({&x});
  opt.step(0.01);
  for (int i = 0; i < 3; ++i) {
    const double delta = x.value[i] - before[i];
    // bias-corrected first step: delta = -lr * g / (|g| + eps')
    CHECK(std::abs(delta) <= 0.01 * (1.0 + 1e-6));
    if (std::abs(x.grad[i]) > 1e-3) {
      CHECK(delta * x.grad[i] < 0.0);
      CHECK(std::abs(delta) == doctest::Approx(0.01).epsilon(1e-4));
    }
  }
  CHECK(opt.step_count() == 1);
}

TEST_CASE("adam minimizes a quadratic bowl") {
  Parameter<double> x("x", {2});
  x.value = {3.0, -2.0};
  Adam<double> opt({&x});
  for (int it = 0; it < 200; ++it) {
    x.zero_grad();
    Tape<double> t;
    auto lx = t.leaf(x);
    t.backward(t.sum(t.mul(lx, lx)));
    opt.step(0.1);
  }
  CHECK(std::abs(x.value[0]) < 1e-2);
  CHECK(std::abs(x.value[1]) < 1e-2);
  CHECK(opt.step_count() == 200);
}

TEST_CASE("scheduled_lr decays in stairs") {
  CHECK(scheduled_lr(0.01, 0.8, 100, 0) == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(scheduled_lr(0.01, 0.8, 100, 99) == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(scheduled_lr(0.01, 0.8, 100, 100) == doctest::Approx(0.008).epsilon(1e-12));
  CHECK(scheduled_lr(0.01, 0.8, 100, 250) == doctest::Approx(0.0064).epsilon(1e-12));
}

TEST_CASE("missing gradient is a configuration error naming the parameter") {
  Parameter<double> ok("ok", {2});
  ok.grad = {1.0, 1.0};
  Parameter<double> bad("conv3.w", {2});
  Adam<double> opt({&ok, &bad});
  CHECK_THROWS_WITH_AS(opt.step(0.01), doctest::Contains("conv3.w"), ConfigError);
}

TEST_CASE("reset_moments clears optimizer state") {
  Parameter<double> x("x", {2});
  x.value = {1.0, 1.0};
  x.grad = {0.5, -0.5};
  Adam<double> opt({&x});
  opt.step(0.01);
  opt.reset_moments();
  CHECK(opt.step_count() == 0);
  for (double m : opt.first_moments()[0]) CHECK(m == 0.0);
  for (double v : opt.second_moments()[0]) CHECK(v == 0.0);

  // after the reset the next step behaves like a first step again
  const auto before = x.value;
  x.grad = {2.0, -2.0};
  opt.step(0.01);
  for (int i = 0; i < 2; ++i)
    CHECK(std::abs(x.value[i] - before[i]) == doctest::Approx(0.01).epsilon(1e-4));
}

TEST_CASE("step counter can be restored for resume") {
  Parameter<double> x("x", {1});
  x.value = {1.0};
  Adam<double> opt({&x});
  opt.set_step_count(41);
  x.grad = {1.0};
  opt.step(0.01);
  CHECK(opt.step_count() == 42);
}

TEST_CASE("float instantiation works with parameter float storage") {
  Parameter<float> x("x", {2});
  x.value = {1.0f, -1.0f};
  x.grad = {1.0f, -1.0f};
  Adam<float> opt({&x});
  opt.step(0.1f);
  CHECK(x.value[0] < 1.0f);
  CHECK(x.value[1] > -1.0f);
}

}  // TEST_SUITE
