#include "velbuild/inversion.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <thread>

#include "velbuild/optim.hpp"
#include "velbuild/spectrum.hpp"

namespace velbuild::inversion {

namespace {

void clamp_box(std::vector<float>& v, float lo, float hi) {
  for (float& x : v) x = std::clamp(x, lo, hi);
}

struct FrozenParams {
  nn::ParamSet<float>& ps;
  explicit FrozenParams(nn::ParamSet<float>& p) : ps(p) { ps.set_requires_grad(false); }
  ~FrozenParams() { ps.set_requires_grad(true); }
};

/// Core loop shared by the NO-only and diffusion-regularized paths. Assumes
/// the operator parameters are already flagged non-differentiable. denoiser
/// == nullptr or diffuse_every == 0 disables refinement entirely.
InversionResult run_inversion(const op::HybridOperatorModel& model, const ddpm::DenoiserFn* denoiser,
                              const ddpm::NoiseSchedule* sched, const VelocityField& v_mig,
                              const ExtendedImageVolume& i_obs, const NormalizationSpec& norm,
                              const InversionConfig& cfg) {
  cfg.validate();
  norm.validate();
  const Grid2D g = v_mig.grid;
  if (!i_obs.grid.same_shape(g)) throw ConfigError("inversion: image grid differs from velocity");
  if (i_obs.n_lag != model.arch.n_lag)
    throw ConfigError("inversion: image lag count differs from the operator");
  const bool diffusing = denoiser != nullptr && sched != nullptr && cfg.diffuse_every > 0;

  const std::vector<float> m_mig = normalize_velocity(v_mig, norm);
  std::vector<float> target = i_obs.values;
  const float inv_scale = 1.0f / norm.image_scale;
  for (float& v : target) v *= inv_scale;

  ad::Parameter<float> vel("v", {1, 1, g.nz, g.nx});
  vel.value = m_mig;
  std::vector<ad::Parameter<float>*> vel_only{&vel};
  ad::Adam<float> opt(vel_only);

  std::ofstream csv;
  if (!cfg.loss_csv.empty()) {
    csv.open(cfg.loss_csv, std::ios::trunc);
    if (!csv) throw IoError(IoError::Kind::open_failed, "inversion: cannot open " + cfg.loss_csv);
    csv << "iter,loss,lr,refined\n";
  }

  auto refine = [&](std::uint64_t event_seed) {
    ddpm::RefineConfig rc;
    rc.s_cond = cfg.s_cond;
    rc.k_steps = 1;
    rc.seed = event_seed;
    vel.value = ddpm::refine_conditioned(*denoiser, vel.value, rc, *sched);
    clamp_box(vel.value, cfg.v_lo, cfg.v_hi);
    opt.reset_moments();
  };

  InversionResult res;
  res.refined.assign(cfg.iterations, 0);
  for (int it = 0; it < cfg.iterations; ++it) {
    const double lr = ad::scheduled_lr(cfg.lr, cfg.lr_decay, cfg.decay_every, it);
    ad::Tape<float> t;
    auto input = t.concat_channels(t.leaf(vel), t.constant({1, 1, g.nz, g.nx}, m_mig));
    auto out = model.forward_graph(t, input);
    auto loss = t.mse(out, t.constant({1, i_obs.n_lag, g.nz, g.nx}, target));
    const double loss_val = static_cast<double>(t.value(loss).v[0]);
    if (!std::isfinite(loss_val))
      throw NumericError("inversion: non-finite loss at iteration " + std::to_string(it));
    vel.zero_grad();
    t.backward(loss);
    opt.step(lr);
    clamp_box(vel.value, cfg.v_lo, cfg.v_hi);
    res.loss.push_back(loss_val);

    if (diffusing && (it + 1) % cfg.diffuse_every == 0 && it + 1 < cfg.iterations) {
      refine(cfg.seed + static_cast<std::uint64_t>(it) + 1);
      res.refined[it] = 1;
    }
    if (csv)
      csv << it << ',' << loss_val << ',' << lr << ',' << int(res.refined[it]) << '\n';
  }
  if (diffusing && cfg.iterations > 0) {
    refine(cfg.seed + static_cast<std::uint64_t>(cfg.iterations) + 1);
    res.refined.back() = 1;
    if (csv) {
      csv.seekp(0, std::ios::end);
      csv << "# final refinement applied\n";
    }
  }

  res.v_inverted = denormalize_velocity(g, vel.value, norm);
  return res;
}

std::vector<int> tile_starts(int total, int patch, double overlap) {
  const int stride = std::max(1, static_cast<int>(std::lround(patch * (1.0 - overlap))));
  std::vector<int> starts;
  for (int z = 0;; z += stride) {
    if (z + patch >= total) {
      starts.push_back(total - patch);
      break;
    }
    starts.push_back(z);
  }
  return starts;
}

/// Flat-topped cosine window: ramps of length (patch - stride) at both ends,
/// matching the overlap with an interior neighbor.
std::vector<double> taper_window(int patch, int stride) {
  std::vector<double> w(patch, 1.0);
  const int r = patch - stride;
  for (int i = 0; i < r; ++i) {
    const double c = 0.5 - 0.5 * std::cos(std::numbers::pi * (i + 0.5) / r);
    w[i] *= c;
    w[patch - 1 - i] *= c;
  }
  return w;
}

VelocityField extract_velocity(const VelocityField& big, const Patch& p, int pnz, int pnx) {
  Grid2D g{pnz, pnx, big.grid.dz, big.grid.dx};
  VelocityField out(g, 0.0f);
  for (int iz = 0; iz < pnz; ++iz) {
    const float* src = big.values.data() + static_cast<std::size_t>(p.z0 + iz) * big.grid.nx + p.x0;
    std::copy(src, src + pnx, out.values.begin() + static_cast<std::size_t>(iz) * pnx);
  }
  return out;
}

ExtendedImageVolume extract_image(const ExtendedImageVolume& big, const Patch& p, int pnz,
                                  int pnx) {
  Grid2D g{pnz, pnx, big.grid.dz, big.grid.dx};
  ExtendedImageVolume out(g, big.n_lag, big.d_tau);
  for (int l = 0; l < big.n_lag; ++l)
    for (int iz = 0; iz < pnz; ++iz) {
      const float* src = big.values.data() +
                         (static_cast<std::size_t>(l) * big.grid.nz + p.z0 + iz) * big.grid.nx +
                         p.x0;
      std::copy(src, src + pnx,
                out.values.begin() + (static_cast<std::size_t>(l) * pnz + iz) * pnx);
    }
  return out;
}

}  // namespace

void InversionConfig::validate() const {
  if (iterations < 1) throw ConfigError("InversionConfig: iterations must be >= 1");
  if (lr <= 0.0) throw ConfigError("InversionConfig: lr must be positive");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0))
    throw ConfigError("InversionConfig: need 0 < lr_decay <= 1");
  if (decay_every < 1) throw ConfigError("InversionConfig: decay_every must be >= 1");
  if (diffuse_every < 0) throw ConfigError("InversionConfig: diffuse_every must be >= 0");
  if (!(v_hi > v_lo)) throw ConfigError("InversionConfig: empty velocity box");
}

InversionResult invert_no(op::HybridOperatorModel& model, const VelocityField& v_mig,
                          const ExtendedImageVolume& i_obs, const NormalizationSpec& norm,
                          const InversionConfig& cfg) {
  FrozenParams freeze(model.params);
  return run_inversion(model, nullptr, nullptr, v_mig, i_obs, norm, cfg);
}

InversionResult invert_no_ddpm(op::HybridOperatorModel& model, const ddpm::DenoiserFn& denoiser,
                               const ddpm::NoiseSchedule& sched, const VelocityField& v_mig,
                               const ExtendedImageVolume& i_obs, const NormalizationSpec& norm,
                               const InversionConfig& cfg) {
  FrozenParams freeze(model.params);
  return run_inversion(model, &denoiser, &sched, v_mig, i_obs, norm, cfg);
}

AblationReport zero_lag_ablation(op::HybridOperatorModel& model_time,
                                 op::HybridOperatorModel& model_zero, const VelocityField& v_mig,
                                 const ExtendedImageVolume& i_obs, const NormalizationSpec& norm,
                                 const InversionConfig& cfg, int x_index,
                                 const std::string& csv_path) {
  if (model_zero.arch.n_lag != 1)
    throw ConfigError("zero_lag_ablation: single-lag operator expected");
  if (x_index < 0 || x_index >= v_mig.grid.nx)
    throw ConfigError("zero_lag_ablation: profile column outside the grid");

  InversionResult time_run = invert_no(model_time, v_mig, i_obs, norm, cfg);
  InversionResult zero_run = invert_no(model_zero, v_mig, central_lags(i_obs, 1), norm, cfg);

  AblationReport rep;
  rep.v_time = std::move(time_run.v_inverted);
  rep.v_zero = std::move(zero_run.v_inverted);
  rep.loss_time = std::move(time_run.loss);
  rep.loss_zero = std::move(zero_run.loss);

  const ProfileSpectrum init = vertical_profile_spectrum(v_mig, x_index);
  const ProfileSpectrum zero = vertical_profile_spectrum(rep.v_zero, x_index);
  const ProfileSpectrum time = vertical_profile_spectrum(rep.v_time, x_index);
  rep.wavenumber = init.wavenumber;
  rep.initial = init.amplitude;
  rep.zero_lag = zero.amplitude;
  rep.time_lag = time.amplitude;

  if (!csv_path.empty()) {
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw IoError(IoError::Kind::open_failed, "zero_lag_ablation: cannot open " + csv_path);
    csv << "wavenumber,initial,zero_lag,time_lag\n";
    for (std::size_t k = 0; k < rep.wavenumber.size(); ++k)
      csv << rep.wavenumber[k] << ',' << rep.initial[k] << ',' << rep.zero_lag[k] << ','
          << rep.time_lag[k] << '\n';
  }
  return rep;
}

void PatchPlan::validate() const {
  if (pnz < 1 || pnx < 1 || patches.empty()) throw ConfigError("PatchPlan: empty plan");
  if (weights.size() != patches.size()) throw ConfigError("PatchPlan: weights/patches mismatch");
  const std::size_t cells = static_cast<std::size_t>(pnz) * pnx;
  for (std::size_t p = 0; p < patches.size(); ++p) {
    if (weights[p].size() != cells) throw ConfigError("PatchPlan: weight map size mismatch");
    if (patches[p].z0 < 0 || patches[p].x0 < 0 || patches[p].z0 + pnz > big.nz ||
        patches[p].x0 + pnx > big.nx)
      throw ConfigError("PatchPlan: patch outside the grid");
  }
}

PatchPlan make_patch_plan(const Grid2D& big, int pnz, int pnx, double overlap) {
  big.validate();
  if (pnz < 1 || pnx < 1 || pnz > big.nz || pnx > big.nx)
    throw ConfigError("make_patch_plan: patch must fit inside the grid");
  if (!(overlap >= 0.0 && overlap < 1.0))
    throw ConfigError("make_patch_plan: overlap must be in [0, 1)");

  PatchPlan plan;
  plan.big = big;
  plan.pnz = pnz;
  plan.pnx = pnx;
  const std::vector<int> zs = tile_starts(big.nz, pnz, overlap);
  const std::vector<int> xs = tile_starts(big.nx, pnx, overlap);
  for (int z0 : zs)
    for (int x0 : xs) plan.patches.push_back({z0, x0});

  const std::vector<double> wz =
      taper_window(pnz, std::max(1, static_cast<int>(std::lround(pnz * (1.0 - overlap)))));
  const std::vector<double> wx =
      taper_window(pnx, std::max(1, static_cast<int>(std::lround(pnx * (1.0 - overlap)))));

  std::vector<double> total(big.cells(), 0.0);
  std::vector<std::vector<double>> raw(plan.patches.size());
  for (std::size_t p = 0; p < plan.patches.size(); ++p) {
    raw[p].resize(static_cast<std::size_t>(pnz) * pnx);
    for (int iz = 0; iz < pnz; ++iz)
      for (int ix = 0; ix < pnx; ++ix) {
        const double w = wz[iz] * wx[ix];
        raw[p][static_cast<std::size_t>(iz) * pnx + ix] = w;
        total[static_cast<std::size_t>(plan.patches[p].z0 + iz) * big.nx + plan.patches[p].x0 +
              ix] += w;
      }
  }
  plan.weights.resize(plan.patches.size());
  for (std::size_t p = 0; p < plan.patches.size(); ++p) {
    plan.weights[p].resize(raw[p].size());
    for (int iz = 0; iz < pnz; ++iz)
      for (int ix = 0; ix < pnx; ++ix) {
        const std::size_t local = static_cast<std::size_t>(iz) * pnx + ix;
        const std::size_t global =
            static_cast<std::size_t>(plan.patches[p].z0 + iz) * big.nx + plan.patches[p].x0 + ix;
        plan.weights[p][local] = static_cast<float>(raw[p][local] / total[global]);
      }
  }
  return plan;
}

VelocityField patch_invert(op::HybridOperatorModel& model, const ddpm::DenoiserModel* denoiser,
                           const ddpm::NoiseSchedule* sched, const VelocityField& v_mig,
                           const ExtendedImageVolume& i_obs, const PatchPlan& plan,
                           const NormalizationSpec& norm, const InversionConfig& cfg, int jobs) {
  plan.validate();
  if (!v_mig.grid.same_shape(plan.big))
    throw ConfigError("patch_invert: velocity grid differs from the plan");
  if (!i_obs.grid.same_shape(plan.big))
    throw ConfigError("patch_invert: image grid differs from the plan");
  if (denoiser && !sched) throw ConfigError("patch_invert: denoiser given without a schedule");
  if (jobs < 1) throw ConfigError("patch_invert: jobs must be >= 1");

  FrozenParams freeze(model.params);
  const std::size_t n_patches = plan.patches.size();
  std::vector<VelocityField> inverted(n_patches);

  auto run_patch = [&](std::size_t p) {
    const VelocityField mig_p = extract_velocity(v_mig, plan.patches[p], plan.pnz, plan.pnx);
    const ExtendedImageVolume obs_p = extract_image(i_obs, plan.patches[p], plan.pnz, plan.pnx);
    InversionConfig cfg_p = cfg;
    cfg_p.seed = cfg.seed + p;
    cfg_p.loss_csv.clear();
    if (denoiser) {
      const ddpm::DenoiserFn fn = ddpm::denoiser_fn(*denoiser, mig_p.grid);
      inverted[p] = run_inversion(model, &fn, sched, mig_p, obs_p, norm, cfg_p).v_inverted;
    } else {
      inverted[p] = run_inversion(model, nullptr, nullptr, mig_p, obs_p, norm, cfg_p).v_inverted;
    }
  };

  if (jobs == 1 || n_patches == 1) {
    for (std::size_t p = 0; p < n_patches; ++p) run_patch(p);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const std::size_t n_threads = std::min<std::size_t>(jobs, n_patches);
    for (std::size_t w = 0; w < n_threads; ++w)
      pool.emplace_back([&] {
        for (std::size_t p = next.fetch_add(1); p < n_patches; p = next.fetch_add(1))
          run_patch(p);
      });
    for (auto& th : pool) th.join();
  }

  std::vector<double> acc(plan.big.cells(), 0.0);
  for (std::size_t p = 0; p < n_patches; ++p)
    for (int iz = 0; iz < plan.pnz; ++iz)
      for (int ix = 0; ix < plan.pnx; ++ix) {
        const std::size_t local = static_cast<std::size_t>(iz) * plan.pnx + ix;
        acc[static_cast<std::size_t>(plan.patches[p].z0 + iz) * plan.big.nx + plan.patches[p].x0 +
            ix] += static_cast<double>(plan.weights[p][local]) * inverted[p].values[local];
      }
  VelocityField out(plan.big, 0.0f);
  for (std::size_t i = 0; i < acc.size(); ++i) out.values[i] = static_cast<float>(acc[i]);
  return out;
}

}  // namespace velbuild::inversion
