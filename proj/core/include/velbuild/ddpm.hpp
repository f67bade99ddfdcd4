#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "velbuild/grid.hpp"
#include "velbuild/nn_blocks.hpp"

namespace velbuild::ddpm {

/// Precomputed diffusion schedule. Steps are 1-based in the public API
/// (s = 1..steps); the arrays are 0-based with alpha_bar[i] = prod of
/// alpha[0..i].
struct NoiseSchedule {
  int steps = 0;
  std::vector<double> beta, alpha, alpha_bar, sigma;

  double beta_at(int s) const { return beta[check(s)]; }
  double alpha_at(int s) const { return alpha[check(s)]; }
  double alpha_bar_at(int s) const { return alpha_bar[check(s)]; }
  double sigma_at(int s) const { return sigma[check(s)]; }

 private:
  std::size_t check(int s) const;
};

NoiseSchedule make_linear_schedule(int steps, double beta_start, double beta_end);

/// v_s = sqrt(abar_s) v0 + sqrt(1 - abar_s) eps.
std::vector<float> q_sample(const std::vector<float>& v0, int s, const std::vector<float>& noise,
                            const NoiseSchedule& sched);

struct DenoiserArch {
  std::array<int, 4> enc_widths{8, 16, 24, 32};
  std::array<int, 4> dec_widths{8, 12, 16, 24};
  int emb_dim = 32;
  void validate() const;
};

/// Four-stage U-Net noise predictor over single-channel normalized velocity
/// grids. The diffusion step enters through a sinusoidal embedding, one
/// shared Dense trunk, and per-block channel biases. The output conv starts
/// at zero so an untrained model predicts exactly zero noise.
struct DenoiserModel {
  DenoiserArch arch;
  nn::ParamSet<float> params;

  nn::Conv<float> lift;
  nn::Dense<float> emb_fc;
  std::vector<nn::ResidualBlock<float>> enc;  // stages 0..3, full res -> /8
  nn::ResidualBlock<float> bottleneck;
  std::vector<nn::ResidualBlock<float>> dec;  // stored for stages 3,2,1,0
  nn::Conv<float> out;

  /// x: [B,1,H,W] (H, W divisible by 16), emb: [B, emb_dim]. Returns the
  /// predicted noise, [B,1,H,W].
  ad::Var<float> forward_graph(ad::Tape<float>& t, ad::Var<float> x, ad::Var<float> emb) const;
};

DenoiserModel build_denoiser(const DenoiserArch& arch, std::uint64_t seed);

/// Gradient-free epsilon prediction for a single image at step s.
std::vector<float> predict_noise(const DenoiserModel& model, const Grid2D& grid,
                                 const std::vector<float>& v_s, int s);

/// Noise predictor as a plain function so the reverse-process code can be
/// exercised with analytic oracles.
using DenoiserFn = std::function<std::vector<float>(const std::vector<float>&, int)>;
DenoiserFn denoiser_fn(const DenoiserModel& model, const Grid2D& grid);

/// One reverse update:
///   v_{s-1} = (v_s - ((1-a_s)/sqrt(1-abar_s)) eps(v_s,s)) / sqrt(a_s) + sigma_s z.
/// z == nullptr means z = 0 (deterministic step).
std::vector<float> reverse_step(const std::vector<float>& v_s, int s, const DenoiserFn& eps,
                                const std::vector<float>* z, const NoiseSchedule& sched);

/// Full ancestral chain from pure noise at s = steps down to s = 1; the last
/// step is deterministic.
std::vector<float> sample_model(const DenoiserModel& model, const Grid2D& grid,
                                const NoiseSchedule& sched, std::uint64_t seed);

struct RefineConfig {
  int s_cond = 50;
  int k_steps = 1;
  std::uint64_t seed = 0;
  void validate(const NoiseSchedule& sched) const;
};

/// Conditioned refinement: diffuse the guess to s_cond with fresh noise, then
/// apply k_steps reverse updates (s_cond, s_cond-1, ...). The final update is
/// deterministic; earlier ones draw z from cfg.seed. seed_noise, when given,
/// overrides the diffusion noise.
std::vector<float> refine_conditioned(const DenoiserFn& eps, const std::vector<float>& v_guess,
                                      const RefineConfig& cfg, const NoiseSchedule& sched,
                                      const std::vector<float>* seed_noise = nullptr);

struct CorpusSample {
  std::vector<float> v0;   // normalized
  std::uint64_t seed = 0;  // drives this sample's (s, eps) draws
};

struct DdpmTrainConfig {
  int epochs = 200;
  int batch = 8;
  double lr = 1e-4;
  std::uint64_t seed = 11;
  int checkpoint_every = 25;
  std::string out_dir;
  std::string resume_from;
  void validate() const;
};

struct DdpmTrainResult {
  std::vector<double> epoch_loss;
  std::string last_checkpoint;
};

/// Noise-prediction training. Each sample's step and noise draw at epoch e
/// come from Rng::derive(sample.seed, e), so the pairing survives reordering
/// of the corpus. Logs epoch,loss,lr to out_dir/train_ddpm_log.csv.
DdpmTrainResult train_ddpm(DenoiserModel& model, const Grid2D& grid,
                           const std::vector<CorpusSample>& corpus, const NoiseSchedule& sched,
                           const DdpmTrainConfig& cfg);

}  // namespace velbuild::ddpm
