#include "velbuild/velgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "velbuild/rng.hpp"
#include "velbuild/velb_io.hpp"

namespace fs = std::filesystem;

namespace velbuild::velgen {

namespace {

constexpr std::uint64_t kModelStream = 0x6d6f64656cull;  // generator stream tag

float abs_percentile(std::vector<float> mags, double q) {
  if (mags.empty()) return 1.0f;
  const std::size_t k = static_cast<std::size_t>(q * (mags.size() - 1));
  std::nth_element(mags.begin(), mags.begin() + k, mags.end());
  return mags[k];
}

std::string tagged_path(int idx, const char* tag) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "sample_%04d_%s.velb", idx, tag);
  return buf;
}

}  // namespace

void ModelGenConfig::validate(const NormalizationSpec& norm) const {
  grid.validate();
  norm.validate();
  if (layers_min < 1 || layers_max < layers_min)
    throw ConfigError("ModelGenConfig: layer count range empty");
  if (v_top_max < v_top_min || v_step_max < v_step_min || v_ceil < v_floor ||
      fold_amp_max < fold_amp_min || fold_wavelength_max < fold_wavelength_min ||
      salt_radius_max < salt_radius_min)
    throw ConfigError("ModelGenConfig: empty range");
  if (fold_wavelength_min <= 0.0) throw ConfigError("ModelGenConfig: fold wavelength must be > 0");
  if (fault_prob < 0.0 || fault_prob > 1.0 || salt_prob < 0.0 || salt_prob > 1.0)
    throw ConfigError("ModelGenConfig: probabilities must be in [0, 1]");
  if (fault_max_throw < 0) throw ConfigError("ModelGenConfig: fault throw must be >= 0");
  const double lo = std::min({v_top_min, v_floor, salt_velocity});
  const double hi = std::max({v_ceil, v_top_max, salt_velocity});
  if (lo < norm.v_min || hi > norm.v_max)
    throw ConfigError("ModelGenConfig: velocity ranges exceed normalization bounds");
}

VelocityField sample_model(const ModelGenConfig& cfg, std::uint64_t seed) {
  const int nz = cfg.grid.nz, nx = cfg.grid.nx;
  Rng rng = Rng::derive(seed, kModelStream);

  const int n_layers = rng.uniform_int(cfg.layers_min, cfg.layers_max);

  // layer velocities: top value plus jittered increments, clamped
  std::vector<float> layer_v(n_layers);
  double v = rng.uniform(cfg.v_top_min, cfg.v_top_max);
  layer_v[0] = static_cast<float>(v);
  for (int k = 1; k < n_layers; ++k) {
    v = std::clamp(v + rng.uniform(cfg.v_step_min, cfg.v_step_max), cfg.v_floor, cfg.v_ceil);
    layer_v[k] = static_cast<float>(v);
  }

  // interfaces: jittered even spacing, each with its own fold sinusoid
  const int n_ifc = n_layers - 1;
  std::vector<double> base_depth(n_ifc), amp(n_ifc), wavelength(n_ifc), phase(n_ifc);
  for (int k = 0; k < n_ifc; ++k) {
    const double even = static_cast<double>(k + 1) * nz / n_layers;
    base_depth[k] = even + rng.uniform(-0.25, 0.25) * nz / n_layers;
    amp[k] = rng.uniform(cfg.fold_amp_min, cfg.fold_amp_max);
    wavelength[k] = rng.uniform(cfg.fold_wavelength_min, cfg.fold_wavelength_max);
    phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  std::sort(base_depth.begin(), base_depth.end());

  // optional fault: columns on the downthrown side of a dipping trace sample
  // the geology shallower, which displaces every interface at once
  bool has_fault = rng.bernoulli(cfg.fault_prob) && cfg.fault_max_throw > 0;
  double fault_x0 = 0.0, fault_dip = 0.0;
  int throw_cells = 0;
  if (has_fault) {
    fault_x0 = rng.uniform(0.25 * nx, 0.75 * nx);
    fault_dip = rng.uniform(-1.0, 1.0);
    throw_cells = rng.uniform_int(2, cfg.fault_max_throw);
  }

  bool has_salt = rng.bernoulli(cfg.salt_prob);
  double salt_cz = 0.0, salt_cx = 0.0, salt_rz = 0.0, salt_rx = 0.0;
  if (has_salt) {
    salt_cz = rng.uniform(0.35 * nz, 0.75 * nz);
    salt_cx = rng.uniform(0.2 * nx, 0.8 * nx);
    salt_rx = rng.uniform(cfg.salt_radius_min, cfg.salt_radius_max);
    salt_rz = salt_rx * rng.uniform(0.35, 0.7);
  }

  VelocityField field(cfg.grid, layer_v[0]);
  for (int ix = 0; ix < nx; ++ix) {
    for (int iz = 0; iz < nz; ++iz) {
      double shift = 0.0;
      if (has_fault && ix > fault_x0 + fault_dip * iz) shift = throw_cells;
      const double z_eff = iz + shift;
      int layer = 0;
      for (int k = 0; k < n_ifc; ++k) {
        const double d = base_depth[k] +
                         amp[k] * std::sin(2.0 * std::numbers::pi * ix / wavelength[k] + phase[k]);
        if (z_eff >= d) layer = k + 1;
      }
      field.at(iz, ix) = layer_v[layer];
    }
  }

  if (has_salt) {
    for (int iz = 0; iz < nz; ++iz)
      for (int ix = 0; ix < nx; ++ix) {
        const double ez = (iz - salt_cz) / salt_rz, ex = (ix - salt_cx) / salt_rx;
        if (ez * ez + ex * ex <= 1.0) field.at(iz, ix) = static_cast<float>(cfg.salt_velocity);
      }
  }
  return field;
}

VelocityField gaussian_smooth(const VelocityField& v, double sigma) {
  if (sigma <= 0.0) throw ConfigError("gaussian_smooth: sigma must be > 0");
  const int radius = static_cast<int>(std::ceil(4.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double ksum = 0.0;
  for (int j = -radius; j <= radius; ++j) {
    kernel[j + radius] = std::exp(-0.5 * j * j / (sigma * sigma));
    ksum += kernel[j + radius];
  }
  for (double& k : kernel) k /= ksum;

  const int nz = v.grid.nz, nx = v.grid.nx;
  std::vector<double> rows(v.grid.cells());
  // along x, replicate edges
  for (int iz = 0; iz < nz; ++iz)
    for (int ix = 0; ix < nx; ++ix) {
      double acc = 0.0;
      for (int j = -radius; j <= radius; ++j)
        acc += kernel[j + radius] * v.at(iz, std::clamp(ix + j, 0, nx - 1));
      rows[static_cast<std::size_t>(iz) * nx + ix] = acc;
    }
  // along z
  VelocityField out(v.grid, 0.0f);
  for (int ix = 0; ix < nx; ++ix)
    for (int iz = 0; iz < nz; ++iz) {
      double acc = 0.0;
      for (int j = -radius; j <= radius; ++j)
        acc += kernel[j + radius] * rows[static_cast<std::size_t>(std::clamp(iz + j, 0, nz - 1)) * nx + ix];
      out.at(iz, ix) = static_cast<float>(acc);
    }
  return out;
}

std::vector<ManifestRecord> DatasetManifest::train_records() const {
  std::vector<ManifestRecord> out;
  for (const auto& r : records)
    if (r.idx < n_train) out.push_back(r);
  return out;
}

std::vector<ManifestRecord> DatasetManifest::val_records() const {
  std::vector<ManifestRecord> out;
  for (const auto& r : records)
    if (r.idx >= n_train) out.push_back(r);
  return out;
}

void DatasetManifest::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw IoError(IoError::Kind::write_failed, "cannot open manifest for writing: " + path);
  f.precision(std::numeric_limits<double>::max_digits10);  // values must survive reload bitwise
  f << "# velbuild dataset v1\n";
  f << "# grid nz=" << grid.nz << " nx=" << grid.nx << " dz=" << grid.dz << " dx=" << grid.dx
    << "\n";
  f << "# lag n_lag=" << lag.n_lag << " d_tau=" << lag.d_tau << "\n";
  f << "# norm v_min=" << norm.v_min << " v_max=" << norm.v_max
    << " image_scale=" << norm.image_scale << "\n";
  f << "# counts n_train=" << n_train << " n_val=" << n_val << "\n";
  if (!generator_note.empty()) f << "# generator " << generator_note << "\n";
  if (!skipped_indices.empty()) {
    f << "# skipped";
    for (int s : skipped_indices) f << ' ' << s;
    f << "\n";
  }
  f << "idx,v_true_path,v_mig_path,label_path,seed\n";
  for (const auto& r : records)
    f << r.idx << ',' << r.v_true_path << ',' << r.v_mig_path << ',' << r.label_path << ','
      << r.seed << "\n";
  if (!f) throw IoError(IoError::Kind::write_failed, "manifest write failed: " + path);
}

DatasetManifest DatasetManifest::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError(IoError::Kind::open_failed, "cannot open manifest: " + path);
  DatasetManifest m;
  m.base_dir = fs::path(path).parent_path().string();

  auto parse_kv = [](const std::string& line, const std::string& key) -> std::string {
    const auto pos = line.find(key + "=");
    if (pos == std::string::npos)
      throw ConfigError("manifest: missing field '" + key + "' in: " + line);
    const auto start = pos + key.size() + 1;
    const auto end = line.find(' ', start);
    return line.substr(start, end == std::string::npos ? std::string::npos : end - start);
  };

  std::string line;
  bool saw_columns = false;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.rfind("# grid ", 0) == 0) {
        m.grid.nz = std::stoi(parse_kv(line, "nz"));
        m.grid.nx = std::stoi(parse_kv(line, "nx"));
        m.grid.dz = std::stod(parse_kv(line, "dz"));
        m.grid.dx = std::stod(parse_kv(line, "dx"));
      } else if (line.rfind("# lag ", 0) == 0) {
        m.lag.n_lag = std::stoi(parse_kv(line, "n_lag"));
        m.lag.d_tau = std::stod(parse_kv(line, "d_tau"));
      } else if (line.rfind("# norm ", 0) == 0) {
        m.norm.v_min = std::stof(parse_kv(line, "v_min"));
        m.norm.v_max = std::stof(parse_kv(line, "v_max"));
        m.norm.image_scale = std::stof(parse_kv(line, "image_scale"));
      } else if (line.rfind("# counts ", 0) == 0) {
        m.n_train = std::stoi(parse_kv(line, "n_train"));
        m.n_val = std::stoi(parse_kv(line, "n_val"));
      } else if (line.rfind("# generator ", 0) == 0) {
        m.generator_note = line.substr(12);
      } else if (line.rfind("# skipped", 0) == 0) {
        std::istringstream ss(line.substr(9));
        int idx;
        while (ss >> idx) m.skipped_indices.push_back(idx);
      }
      continue;
    }
    if (!saw_columns) {
      if (line != "idx,v_true_path,v_mig_path,label_path,seed")
        throw ConfigError("manifest: unexpected column header: " + line);
      saw_columns = true;
      continue;
    }
    ManifestRecord rec;
    std::istringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    rec.idx = std::stoi(cell);
    std::getline(ss, rec.v_true_path, ',');
    std::getline(ss, rec.v_mig_path, ',');
    std::getline(ss, rec.label_path, ',');
    std::getline(ss, cell, ',');
    rec.seed = std::stoull(cell);
    if (rec.v_true_path.empty() || rec.v_mig_path.empty() || rec.label_path.empty())
      throw ConfigError("manifest: malformed record: " + line);
    m.records.push_back(std::move(rec));
  }
  if (!saw_columns) throw ConfigError("manifest: no record table found in " + path);
  m.grid.validate();
  return m;
}

DatasetManifest build_dataset(const ModelGenConfig& cfg, int n_train, int n_val,
                              const AcquisitionGeometry& geom, const sim::LagAxis& lag,
                              const sim::SimConfig& sim_cfg, const std::string& out_dir,
                              int jobs) {
  NormalizationSpec norm;
  cfg.validate(norm);
  if (n_train < 1 || n_val < 0) throw ConfigError("build_dataset: need n_train >= 1, n_val >= 0");
  fs::create_directories(out_dir);

  DatasetManifest manifest;
  manifest.grid = cfg.grid;
  manifest.lag = lag;
  manifest.norm = norm;
  manifest.n_train = n_train;
  manifest.n_val = n_val;
  manifest.generator_note =
      "parametric layered+fold+fault+salt (no well-log trends); sigma=" +
      std::to_string(cfg.sigma_or_default());
  manifest.base_dir = out_dir;

  std::vector<float> label_mags;
  const int total = n_train + n_val;
  for (int idx = 0; idx < total; ++idx) {
    const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(idx);
    VelocityField v_true = sample_model(cfg, seed);
    VelocityField v_mig = gaussian_smooth(v_true, cfg.sigma_or_default());
    ExtendedImageVolume label;
    try {
      label = sim::model_and_migrate(v_true, v_mig, geom, lag, sim_cfg, jobs);
    } catch (const NumericError& e) {
      std::fprintf(stderr, "build_dataset: skipping sample %d (seed %llu): %s\n", idx,
                   static_cast<unsigned long long>(seed), e.what());
      manifest.skipped_indices.push_back(idx);
      continue;
    }

    ManifestRecord rec;
    rec.idx = idx;
    rec.seed = seed;
    rec.v_true_path = tagged_path(idx, "vtrue");
    rec.v_mig_path = tagged_path(idx, "vmig");
    rec.label_path = tagged_path(idx, "label");
    io::write_grid(fs::path(out_dir) / rec.v_true_path, v_true);
    io::write_grid(fs::path(out_dir) / rec.v_mig_path, v_mig);
    io::write_grid(fs::path(out_dir) / rec.label_path, label);
    manifest.records.push_back(std::move(rec));

    for (float x : label.values) label_mags.push_back(std::abs(x));
  }

  manifest.norm.image_scale = abs_percentile(std::move(label_mags), 0.99);
  manifest.save((fs::path(out_dir) / "manifest.txt").string());
  return manifest;
}

DatasetSample load_sample(const DatasetManifest& manifest, const ManifestRecord& rec) {
  const fs::path base(manifest.base_dir);
  DatasetSample s;
  s.v_true = io::read_velocity(base / rec.v_true_path, manifest.grid.dz, manifest.grid.dx);
  s.v_mig = io::read_velocity(base / rec.v_mig_path, manifest.grid.dz, manifest.grid.dx);
  s.label = io::read_image(base / rec.label_path, manifest.grid.dz, manifest.grid.dx,
                           manifest.lag.d_tau);
  return s;
}

}  // namespace velbuild::velgen
