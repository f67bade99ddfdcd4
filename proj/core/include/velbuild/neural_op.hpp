#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "velbuild/grid.hpp"
#include "velbuild/nn_blocks.hpp"
#include "velbuild/velgen.hpp"

namespace velbuild::op {

/// Hybrid FNO + U-Net surrogate: lift conv, spectral layer, four residual
/// encoder stages, four attention-gated decoder stages, a second spectral
/// layer, and a 1x1 projection to the lag channels. Input is always two
/// channels. Spatial dims must be divisible by 16 (four 2x2 pools).
///
/// Parameter count follows from the shapes:
///   lift: 2*lift_width*9 + lift_width
///   fno (C ch): C*C*mz*mx*2 spectral + C*C + C pointwise
///   residual block (ci->co): 9*ci*co + co + 9*co*co + co (+ ci*co + co proj)
///   attention (cs skip, cg gate, h = max(cg/4,4)): cg*h+h + h*cs+cs + 2*49+1
///   decoder stage (cin cat -> co): 9*cin*co + co + 2*(9*co*co + co)
///   projection: dec_widths[0]*n_lag + n_lag
struct OperatorArch {
  int modes_z = 16;
  int modes_x = 16;
  int lift_width = 16;
  std::array<int, 4> enc_widths{16, 32, 48, 64};
  std::array<int, 4> dec_widths{16, 24, 32, 48};  // indexed by stage, 0 = full res
  int blocks_per_stage = 2;
  std::array<bool, 4> attention{true, true, true, true};
  int n_lag = 3;
  std::string backbone = "mini";

  void validate() const;
};

struct HybridOperatorModel {
  OperatorArch arch;
  nn::ParamSet<float> params;

  nn::Conv<float> lift;
  nn::FnoLayer<float> fno_in, fno_out;
  std::vector<nn::ResidualBlock<float>> enc;  // 4 * blocks_per_stage, stage-major
  nn::ResidualBlock<float> bottleneck;
  std::array<nn::AttentionGate<float>, 4> att;
  std::vector<nn::Conv<float>> dec;  // 4 stages x 3 convs, stage-major
  nn::Conv<float> proj;

  bool fno_identity = false;  // ablation hook: both spectral layers pass through

  /// Record the full forward graph; input [B,2,H,W] -> [B,n_lag,H,W].
  ad::Var<float> forward_graph(ad::Tape<float>& t, ad::Var<float> input) const;
};

/// Deterministic init per (arch, seed).
HybridOperatorModel build_model(const OperatorArch& arch, std::uint64_t seed);

/// Gradient-free evaluation on one sample. Channels are normalized [0,1]
/// fields on the grid; the result carries normalized amplitudes.
ExtendedImageVolume forward(const HybridOperatorModel& model, const Grid2D& grid,
                            const std::vector<float>& ch_true, const std::vector<float>& ch_mig,
                            double d_tau);

/// Dataset pulled into memory in network units: velocity channels mapped to
/// [0,1], labels divided by norm.image_scale.
struct LoadedDataset {
  Grid2D grid;
  int n_lag = 0;
  double d_tau = 0.0;
  NormalizationSpec norm;
  std::vector<std::vector<float>> ch_true, ch_mig, labels;
  std::vector<int> train_idx, val_idx;  // positions into the per-sample vectors
};

LoadedDataset load_dataset(const velgen::DatasetManifest& manifest);

struct TrainConfig {
  int epochs = 60;
  int batch = 4;
  double lr = 1e-3;
  double lr_decay = 1.0;  // factor applied every decay_every epochs
  int decay_every = 100;
  std::uint64_t seed = 7;
  int checkpoint_every = 10;
  std::string out_dir;
  std::string resume_from;  // optional checkpoint to continue from

  void validate() const;
};

struct TrainResult {
  std::vector<double> train_loss;  // per epoch
  std::vector<double> val_loss;
  double best_val = 0.0;
  int best_epoch = -1;
  std::string best_checkpoint;  // path
  std::string last_checkpoint;
};

/// Minimize MSE(forward(v_true, v_mig), label) over shuffled minibatches.
/// Writes `epoch,train_loss,val_loss,lr` rows to out_dir/train_op_log.csv,
/// keeps the best-validation checkpoint, and aborts on non-finite loss.
/// When arch.n_lag is smaller than the dataset lag count, labels are the
/// centered lag slice (n_lag = 1 trains on the zero-lag panel alone).
TrainResult train_operator(HybridOperatorModel& model, const LoadedDataset& ds,
                           const TrainConfig& cfg);

/// Mean over the validation split of |pred - label|^2 / |label|^2.
double held_out_nmse(const HybridOperatorModel& model, const LoadedDataset& ds);

/// Mean MSE loss over a set of samples (no parameter updates).
double evaluate_loss(const HybridOperatorModel& model, const LoadedDataset& ds,
                     const std::vector<int>& idx);

}  // namespace velbuild::op
