#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <vector>

#include "test_util.hpp"
#include "velbuild/spectrum.hpp"
#include "velbuild/velb_io.hpp"
#include "velbuild/velgen.hpp"

using namespace velbuild;
using namespace velbuild::velgen;

namespace {

ModelGenConfig desk_cfg(int nz = 64, int nx = 128) {
  ModelGenConfig cfg;
  cfg.grid = {nz, nx, 10.0, 10.0};
  return cfg;
}

std::vector<char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_SUITE("velgen") {

TEST_CASE("config validation") {
  NormalizationSpec norm;
  ModelGenConfig cfg = desk_cfg();
  CHECK_NOTHROW(cfg.validate(norm));

  ModelGenConfig bad = cfg;
  bad.layers_min = 5;
  bad.layers_max = 4;
  CHECK_THROWS_AS(bad.validate(norm), ConfigError);

  ModelGenConfig hot = cfg;
  hot.v_ceil = 5000.0;  // above norm.v_max
  CHECK_THROWS_AS(hot.validate(norm), ConfigError);

  ModelGenConfig prob = cfg;
  prob.salt_prob = 1.5;
  CHECK_THROWS_AS(prob.validate(norm), ConfigError);

  CHECK(desk_cfg(128, 128).sigma_or_default() == doctest::Approx(15.0));
  CHECK(desk_cfg(64, 128).sigma_or_default() == doctest::Approx(7.5));
  ModelGenConfig fixed = cfg;
  fixed.smooth_sigma = 4.0;
  CHECK(fixed.sigma_or_default() == 4.0);
}

TEST_CASE("degenerate generator paints flat layers") {
  ModelGenConfig cfg = desk_cfg();
  cfg.fold_amp_min = cfg.fold_amp_max = 0.0;
  cfg.fault_prob = 0.0;
  cfg.salt_prob = 0.0;
  auto v = sample_model(cfg, 5);

  for (int iz = 0; iz < cfg.grid.nz; ++iz)
    for (int ix = 1; ix < cfg.grid.nx; ++ix) CHECK(v.at(iz, ix) == v.at(iz, 0));

  // more than one distinct layer
  bool any_change = false;
  for (int iz = 1; iz < cfg.grid.nz; ++iz) any_change |= (v.at(iz, 0) != v.at(iz - 1, 0));
  CHECK(any_change);
  CHECK(v.min_value() >= 1450.0f);
  CHECK(v.max_value() <= 4800.0f);
}

TEST_CASE("same seed reproduces the model bitwise") {
  ModelGenConfig cfg = desk_cfg();
  auto a = sample_model(cfg, 77);
  auto b = sample_model(cfg, 77);
  auto c = sample_model(cfg, 78);
  CHECK(a.values == b.values);
  CHECK(a.values != c.values);
}

TEST_CASE("velocity trends upward with depth across the population") {
  ModelGenConfig cfg = desk_cfg();
  double top = 0.0, bottom = 0.0;
  const int n = 1000;
  for (int s = 0; s < n; ++s) {
    auto v = sample_model(cfg, 1000 + s);
    for (int ix = 0; ix < cfg.grid.nx; ++ix) {
      top += v.at(0, ix);
      bottom += v.at(cfg.grid.nz - 1, ix);
    }
  }
  CHECK(bottom > top);
  // bounds hold over the population too
  for (int s = 0; s < 50; ++s) {
    auto v = sample_model(cfg, 5000 + s);
    CHECK(v.min_value() >= 1450.0f);
    CHECK(v.max_value() <= 4800.0f);
  }
}

TEST_CASE("smoothing leaves constants alone") {
  Grid2D g{64, 32, 10.0, 10.0};
  VelocityField v(g, 2345.0f);
  auto s = gaussian_smooth(v, 15.0);
  for (float x : s.values) CHECK(x == doctest::Approx(2345.0f).epsilon(1e-6));
  CHECK_THROWS_AS(gaussian_smooth(v, 0.0), ConfigError);
}

TEST_CASE("smoothing flattens a step by the expected factor") {
  Grid2D g{128, 16, 10.0, 10.0};
  VelocityField v(g, 2000.0f);
  for (int iz = 64; iz < g.nz; ++iz)
    for (int ix = 0; ix < g.nx; ++ix) v.at(iz, ix) = 3000.0f;

  auto s = gaussian_smooth(v, 15.0);

  auto max_dz = [&](const VelocityField& f) {
    double m = 0.0;
    for (int iz = 0; iz + 1 < f.grid.nz; ++iz)
      for (int ix = 0; ix < f.grid.nx; ++ix)
        m = std::max(m, std::abs(static_cast<double>(f.at(iz + 1, ix)) - f.at(iz, ix)));
    return m;
  };
  CHECK(max_dz(v) >= 5.0 * max_dz(s));
  // ramp is monotone in depth
  for (int iz = 0; iz + 1 < g.nz; ++iz) CHECK(s.at(iz + 1, 4) >= s.at(iz, 4) - 1e-3f);
}

TEST_CASE("smoothing matches the gaussian transfer function on mid bins") {
  const int nz = 256;
  Grid2D g{nz, 8, 10.0, 10.0};
  const double sigma = 8.0;
  for (int k : {2, 4, 6}) {
    VelocityField v(g, 0.0f);
    for (int iz = 0; iz < nz; ++iz)
      for (int ix = 0; ix < 8; ++ix)
        v.at(iz, ix) = static_cast<float>(
            2500.0 + 100.0 * std::cos(2.0 * std::numbers::pi * k * iz / nz));
    auto s = gaussian_smooth(v, sigma);

    auto before = vertical_profile_spectrum(v, 4);
    auto after = vertical_profile_spectrum(s, 4);
    const double ratio = after.amplitude[k] / before.amplitude[k];
    const double expect =
        std::exp(-2.0 * std::numbers::pi * std::numbers::pi * sigma * sigma * k * k / (nz * nz));
    CHECK_MESSAGE(std::abs(ratio - expect) <= 0.1 * expect, "k=", k, " ratio=", ratio,
                  " expect=", expect);
  }
}

TEST_CASE("smoothing preserves the mean and contracts variation") {
  Grid2D g{64, 48, 10.0, 10.0};
  VelocityField v(g, 0.0f);
  Rng rng(9);
  for (auto& x : v.values) x = static_cast<float>(rng.uniform(1500.0, 4500.0));

  auto s = gaussian_smooth(v, 5.0);
  double mean_in = 0.0, mean_out = 0.0;
  for (std::size_t i = 0; i < v.values.size(); ++i) {
    mean_in += v.values[i];
    mean_out += s.values[i];
  }
  CHECK(std::abs(mean_out - mean_in) <= 0.005 * std::abs(mean_in));
  CHECK(testutil::total_variation(s) <= testutil::total_variation(v));

  // smoothing a generated model contracts variation too
  auto m = sample_model(desk_cfg(), 31);
  auto ms = gaussian_smooth(m, 7.5);
  CHECK(testutil::total_variation(ms) <= testutil::total_variation(m));
}

TEST_CASE("manifest round trips through disk") {
  testutil::TempDir tmp("manifest");
  DatasetManifest m;
  m.grid = {32, 64, 10.0, 10.0};
  m.lag = {3, 0.004};
  m.norm.image_scale = 2.5f;
  m.n_train = 2;
  m.n_val = 1;
  m.generator_note = "layered+fold";
  m.skipped_indices = {7};
  m.records.push_back({0, "s0_true.velb", "s0_mig.velb", "s0_label.velb", 1234});
  m.records.push_back({1, "s1_true.velb", "s1_mig.velb", "s1_label.velb", 1235});
  m.records.push_back({2, "s2_true.velb", "s2_mig.velb", "s2_label.velb", 1236});

  const auto path = tmp.file("manifest.txt");
  m.save(path);
  auto back = DatasetManifest::load(path);

  CHECK(back.grid.nz == 32);
  CHECK(back.grid.nx == 64);
  CHECK(back.grid.dz == 10.0);
  CHECK(back.lag.n_lag == 3);
  CHECK(back.lag.d_tau == 0.004);
  CHECK(back.norm.v_min == 1450.0f);
  CHECK(back.norm.image_scale == 2.5f);
  CHECK(back.n_train == 2);
  CHECK(back.n_val == 1);
  CHECK(back.skipped_indices == std::vector<int>{7});
  REQUIRE(back.records.size() == 3);
  CHECK(back.records[1].v_mig_path == "s1_mig.velb");
  CHECK(back.records[2].seed == 1236);
  CHECK(back.base_dir == tmp.str());
  CHECK(back.train_records().size() == 2);
  CHECK(back.val_records().size() == 1);
  CHECK(back.val_records()[0].idx == 2);
}

TEST_CASE("manifest parse failures are loud") {
  testutil::TempDir tmp("manifest_bad");
  CHECK_THROWS_AS(DatasetManifest::load(tmp.file("absent.txt")), IoError);

  {
    std::ofstream f(tmp.file("no_table.txt"));
    f << "# velbuild dataset v1\n# grid nz=32 nx=64 dz=10 dx=10\n";
  }
  CHECK_THROWS_AS(DatasetManifest::load(tmp.file("no_table.txt")), ConfigError);

  {
    std::ofstream f(tmp.file("bad_row.txt"));
    f << "# velbuild dataset v1\n";
    f << "# grid nz=32 nx=64 dz=10 dx=10\n";
    f << "# lag n_lag=3 d_tau=0.004\n";
    f << "# norm v_min=1450 v_max=4800 image_scale=1\n";
    f << "# counts n_train=1 n_val=0\n";
    f << "idx,v_true_path,v_mig_path,label_path,seed\n";
    f << "0,only,two\n";
  }
  CHECK_THROWS_AS(DatasetManifest::load(tmp.file("bad_row.txt")), ConfigError);
}

TEST_CASE("dataset build writes loadable reproducible triplets") {
  testutil::TempDir tmp("dataset");
  ModelGenConfig cfg = desk_cfg(32, 64);
  cfg.salt_prob = 0.0;  // keep v_max moderate so the quick sim config is stable
  cfg.v_ceil = 3500.0;
  cfg.seed = 400;
  auto geom = AcquisitionGeometry::surface_even(cfg.grid, 2, 16, 2);
  sim::LagAxis lag{3, 0.004};
  sim::SimConfig sim_cfg;
  sim_cfg.nt = 300;
  sim_cfg.dt = 0.001;
  sim_cfg.f_peak = 30.0;  // sharper wavelet so reflectivity localizes

  auto manifest = build_dataset(cfg, 2, 1, geom, lag, sim_cfg, tmp.file("d1"));
  CHECK(manifest.n_train == 2);
  CHECK(manifest.n_val == 1);
  CHECK(manifest.skipped_indices.empty());
  CHECK(manifest.norm.image_scale > 0.0f);
  REQUIRE(manifest.records.size() == 3);
  CHECK(std::filesystem::exists(tmp.file("d1/manifest.txt")));
  for (const auto& rec : manifest.records) {
    CHECK(std::filesystem::exists(std::filesystem::path(manifest.base_dir) / rec.v_true_path));
    CHECK(std::filesystem::exists(std::filesystem::path(manifest.base_dir) / rec.v_mig_path));
    CHECK(std::filesystem::exists(std::filesystem::path(manifest.base_dir) / rec.label_path));
  }

  // reload finds the same metadata
  auto loaded = DatasetManifest::load(tmp.file("d1/manifest.txt"));
  CHECK(loaded.records.size() == 3);
  CHECK(loaded.norm.image_scale == manifest.norm.image_scale);

  // per-sample seeds follow the master seed
  CHECK(manifest.records[0].seed == 400);
  CHECK(manifest.records[1].seed == 401);

  // label reproducibility from the stored fields
  auto sample = load_sample(loaded, loaded.records[0]);
  CHECK(sample.v_true.grid.nz == 32);
  auto relabel = sim::model_and_migrate(sample.v_true, sample.v_mig, geom, lag, sim_cfg);
  double peak = 0.0, worst = 0.0;
  for (std::size_t i = 0; i < relabel.values.size(); ++i) {
    peak = std::max(peak, std::abs(static_cast<double>(relabel.values[i])));
    worst = std::max(worst,
                     std::abs(static_cast<double>(relabel.values[i]) - sample.label.values[i]));
  }
  CHECK(worst <= 1e-6 * peak);

  // second build under the same master seed is bit-identical on disk
  auto manifest2 = build_dataset(cfg, 2, 1, geom, lag, sim_cfg, tmp.file("d2"));
  for (std::size_t r = 0; r < manifest.records.size(); ++r) {
    auto a = slurp((std::filesystem::path(manifest.base_dir) / manifest.records[r].label_path).string());
    auto b = slurp((std::filesystem::path(manifest2.base_dir) / manifest2.records[r].label_path).string());
    CHECK(a == b);
    auto at = slurp((std::filesystem::path(manifest.base_dir) / manifest.records[r].v_true_path).string());
    auto bt = slurp((std::filesystem::path(manifest2.base_dir) / manifest2.records[r].v_true_path).string());
    CHECK(at == bt);
  }

  // labels are nontrivial and finite
  double label_peak = 0.0;
  for (float x : sample.label.values) {
    CHECK(std::isfinite(x));
    label_peak = std::max(label_peak, std::abs(static_cast<double>(x)));
  }
  CHECK(label_peak > 0.0);

  CHECK_THROWS_AS(build_dataset(cfg, 0, 1, geom, lag, sim_cfg, tmp.file("d3")), ConfigError);
}

}  // TEST_SUITE
