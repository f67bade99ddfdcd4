#include <benchmark/benchmark.h>

#include <vector>

#include "velbuild/autodiff.hpp"
#include "velbuild/ddpm.hpp"
#include "velbuild/neural_op.hpp"
#include "velbuild/nn_blocks.hpp"
#include "velbuild/optim.hpp"
#include "velbuild/rng.hpp"
#include "velbuild/wavesim.hpp"

namespace {

using namespace velbuild;

Grid2D desk_grid() { return {64, 128, 10.0, 10.0}; }

VelocityField two_layer(const Grid2D& g) {
  VelocityField v(g, 2000.0f);
  for (int iz = g.nz / 2; iz < g.nz; ++iz)
    for (int ix = 0; ix < g.nx; ++ix) v.at(iz, ix) = 3000.0f;
  return v;
}

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

void bm_wave_shot(benchmark::State& state) {
  const Grid2D g = desk_grid();
  const VelocityField v = two_layer(g);
  const auto geom = AcquisitionGeometry::surface_even(g, 8, 64);
  sim::SimConfig cfg;
  cfg.nt = static_cast<int>(state.range(0));
  cfg.dt = 0.001;
  sim::LagAxis lag{3, 8 * cfg.dt};
  for (auto _ : state) {
    auto res = sim::simulate_shot(v, geom, 0, cfg, lag, false);
    benchmark::DoNotOptimize(res.gather.traces.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(bm_wave_shot)->Arg(300)->Arg(1200)->Unit(benchmark::kMillisecond);

void bm_migrate_shot(benchmark::State& state) {
  const Grid2D g = desk_grid();
  const VelocityField v = two_layer(g);
  const auto geom = AcquisitionGeometry::surface_even(g, 8, 64);
  sim::SimConfig cfg;
  cfg.nt = 600;
  cfg.dt = 0.001;
  sim::LagAxis lag{3, 8 * cfg.dt};
  auto fwd = sim::simulate_shot(v, geom, 0, cfg, lag, true);
  for (auto _ : state) {
    auto img = sim::migrate_shot(v, fwd.gather, geom, fwd.snapshots, lag, cfg);
    benchmark::DoNotOptimize(img.values.data());
  }
}
BENCHMARK(bm_migrate_shot)->Unit(benchmark::kMillisecond);

void bm_conv2d_fwd_bwd(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  ad::Parameter<float> k("k", {c, c, 3, 3});
  Rng rng(3);
  for (auto& w : k.value) w = static_cast<float>(0.05 * rng.normal());
  const std::vector<float> x = random_vec(static_cast<std::size_t>(c) * 64 * 128, 5);
  for (auto _ : state) {
    ad::Tape<float> t;
    auto in = t.constant({1, c, 64, 128}, x);
    auto out = t.conv2d(in, t.leaf(k));
    auto loss = t.mean(out);
    t.backward(loss);
    benchmark::DoNotOptimize(k.grad.data());
    k.zero_grad();
  }
}
BENCHMARK(bm_conv2d_fwd_bwd)->Arg(16)->Arg(48)->Unit(benchmark::kMillisecond);

void bm_spectral_layer(benchmark::State& state) {
  nn::ParamSet<float> ps;
  Rng rng(7);
  nn::FnoLayer<float> fno(ps, "fno", 16, 16, 16, 16, rng);
  const std::vector<float> x = random_vec(16u * 64 * 128, 9);
  for (auto _ : state) {
    ad::Tape<float> t(false);
    auto out = fno(t, t.constant({1, 16, 64, 128}, x));
    benchmark::DoNotOptimize(t.value(out).v.data());
  }
}
BENCHMARK(bm_spectral_layer)->Unit(benchmark::kMillisecond);

void bm_operator_forward(benchmark::State& state) {
  op::OperatorArch arch;
  auto model = op::build_model(arch, 21);
  const Grid2D g = desk_grid();
  const std::vector<float> ct = random_vec(g.cells(), 11);
  const std::vector<float> cm = random_vec(g.cells(), 13);
  for (auto _ : state) {
    auto img = op::forward(model, g, ct, cm, 0.008);
    benchmark::DoNotOptimize(img.values.data());
  }
}
BENCHMARK(bm_operator_forward)->Unit(benchmark::kMillisecond);

void bm_operator_train_step(benchmark::State& state) {
  op::OperatorArch arch;
  auto model = op::build_model(arch, 21);
  const Grid2D g = desk_grid();
  ad::Adam<float> opt(model.params.all());
  const std::vector<float> ct = random_vec(g.cells(), 11);
  const std::vector<float> cm = random_vec(g.cells(), 13);
  std::vector<float> input(2 * g.cells());
  std::copy(ct.begin(), ct.end(), input.begin());
  std::copy(cm.begin(), cm.end(), input.begin() + g.cells());
  const std::vector<float> label = random_vec(3 * g.cells(), 15);
  for (auto _ : state) {
    ad::Tape<float> t;
    auto out = model.forward_graph(t, t.constant({1, 2, g.nz, g.nx}, input));
    auto loss = t.mse(out, t.constant({1, 3, g.nz, g.nx}, label));
    model.params.zero_grad_all();
    t.backward(loss);
    opt.step(1e-3);
    benchmark::DoNotOptimize(model.params.all().front()->value.data());
  }
}
BENCHMARK(bm_operator_train_step)->Unit(benchmark::kMillisecond);

void bm_denoiser_step(benchmark::State& state) {
  ddpm::DenoiserArch arch;
  auto model = ddpm::build_denoiser(arch, 23);
  const Grid2D g = desk_grid();
  const std::vector<float> v = random_vec(g.cells(), 17);
  for (auto _ : state) {
    auto eps = ddpm::predict_noise(model, g, v, 500);
    benchmark::DoNotOptimize(eps.data());
  }
}
BENCHMARK(bm_denoiser_step)->Unit(benchmark::kMillisecond);

void bm_adam_step(benchmark::State& state) {
  ad::Parameter<float> p("p", {1024, 1024});
  p.grad = random_vec(p.numel(), 19);
  ad::Adam<float> opt({&p});
  for (auto _ : state) {
    opt.step(1e-3);
    benchmark::DoNotOptimize(p.value.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(p.numel()));
}
BENCHMARK(bm_adam_step);

}  // namespace

BENCHMARK_MAIN();
