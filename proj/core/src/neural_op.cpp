#include "velbuild/neural_op.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "velbuild/checkpoint.hpp"
#include "velbuild/optim.hpp"
#include "velbuild/rng.hpp"

namespace fs = std::filesystem;

namespace velbuild::op {

namespace {

constexpr std::uint64_t kInitStream = 0x6f706572ull;
constexpr std::uint64_t kShuffleStream = 0x73687566ull;

std::string stage_name(const char* prefix, int i) {
  return std::string(prefix) + std::to_string(i);
}

/// Pack samples ds[idx[first..last)] into [B,2,H,W] input and [B,n_lag,H,W]
/// label tensors. Labels take the centered lag slice when the model is
/// narrower than the dataset.
void pack_batch(const LoadedDataset& ds, const std::vector<int>& order, std::size_t first,
                std::size_t last, int model_lags, std::vector<float>& input,
                std::vector<float>& label) {
  const std::size_t cells = ds.grid.cells();
  const std::size_t b_count = last - first;
  input.resize(b_count * 2 * cells);
  label.resize(b_count * static_cast<std::size_t>(model_lags) * cells);
  const int lag_first = (ds.n_lag - 1) / 2 - (model_lags - 1) / 2;
  for (std::size_t b = 0; b < b_count; ++b) {
    const int s = order[first + b];
    std::copy(ds.ch_true[s].begin(), ds.ch_true[s].end(), input.begin() + (b * 2) * cells);
    std::copy(ds.ch_mig[s].begin(), ds.ch_mig[s].end(), input.begin() + (b * 2 + 1) * cells);
    for (int l = 0; l < model_lags; ++l)
      std::copy(ds.labels[s].begin() + static_cast<std::ptrdiff_t>(lag_first + l) * cells,
                ds.labels[s].begin() + static_cast<std::ptrdiff_t>(lag_first + l + 1) * cells,
                label.begin() + (b * model_lags + l) * cells);
  }
}

}  // namespace

void OperatorArch::validate() const {
  if (modes_z < 1 || modes_x < 1) throw ConfigError("OperatorArch: mode counts must be >= 1");
  if (lift_width < 1) throw ConfigError("OperatorArch: lift width must be >= 1");
  for (int w : enc_widths)
    if (w < 1) throw ConfigError("OperatorArch: encoder widths must be >= 1");
  for (int w : dec_widths)
    if (w < 1) throw ConfigError("OperatorArch: decoder widths must be >= 1");
  if (blocks_per_stage < 1) throw ConfigError("OperatorArch: need >= 1 residual block per stage");
  if (n_lag < 1 || n_lag % 2 == 0) throw ConfigError("OperatorArch: n_lag must be odd and >= 1");
  if (backbone != "mini") throw ConfigError("OperatorArch: unknown backbone '" + backbone + "'");
}

HybridOperatorModel build_model(const OperatorArch& arch, std::uint64_t seed) {
  arch.validate();
  HybridOperatorModel m;
  m.arch = arch;
  Rng rng = Rng::derive(seed, kInitStream);

  const int W0 = arch.lift_width;
  m.lift = nn::Conv<float>(m.params, "lift", 2, W0, 3, rng);
  m.fno_in = nn::FnoLayer<float>(m.params, "fno_in", W0, W0, arch.modes_z, arch.modes_x, rng);

  int cur = W0;
  for (int i = 0; i < 4; ++i) {
    for (int b = 0; b < arch.blocks_per_stage; ++b) {
      const int c_in = (b == 0) ? cur : arch.enc_widths[i];
      m.enc.emplace_back(m.params, stage_name("enc", i) + ".b" + std::to_string(b), c_in,
                         arch.enc_widths[i], rng);
    }
    cur = arch.enc_widths[i];
  }
  m.bottleneck =
      nn::ResidualBlock<float>(m.params, "bottleneck", arch.enc_widths[3], arch.enc_widths[3], rng);

  for (int i = 3; i >= 0; --i) {
    const int c_gate = (i == 3) ? arch.enc_widths[3] : arch.dec_widths[i + 1];
    if (arch.attention[i])
      m.att[i] = nn::AttentionGate<float>(m.params, stage_name("att", i), arch.enc_widths[i],
                                          c_gate, rng);
    const int c_cat = c_gate + arch.enc_widths[i];
    m.dec.emplace_back(m.params, stage_name("dec", i) + ".c0", c_cat, arch.dec_widths[i], 3, rng);
    m.dec.emplace_back(m.params, stage_name("dec", i) + ".c1", arch.dec_widths[i],
                       arch.dec_widths[i], 3, rng);
    m.dec.emplace_back(m.params, stage_name("dec", i) + ".c2", arch.dec_widths[i],
                       arch.dec_widths[i], 3, rng);
  }
  m.fno_out = nn::FnoLayer<float>(m.params, "fno_out", arch.dec_widths[0], arch.dec_widths[0],
                                  arch.modes_z, arch.modes_x, rng);
  m.proj = nn::Conv<float>(m.params, "proj", arch.dec_widths[0], arch.n_lag, 1, rng);
  return m;
}

ad::Var<float> HybridOperatorModel::forward_graph(ad::Tape<float>& t, ad::Var<float> input) const {
  const auto& shape = t.value(input).shape;
  if (shape.size() != 4 || shape[1] != 2)
    throw ConfigError("operator forward: input must be [B,2,H,W]");
  if (shape[2] % 16 || shape[3] % 16)
    throw ConfigError("operator forward: spatial dims must be divisible by 16");

  auto cur = fno_in(t, lift(t, input), fno_identity);
  std::array<ad::Var<float>, 4> skips;
  for (int i = 0; i < 4; ++i) {
    for (int b = 0; b < arch.blocks_per_stage; ++b)
      cur = enc[static_cast<std::size_t>(i) * arch.blocks_per_stage + b](t, cur);
    skips[i] = cur;
    cur = t.avgpool2(cur);
  }
  cur = bottleneck(t, cur);
  for (int i = 3; i >= 0; --i) {
    auto up = t.upsample_bilinear2(cur);
    auto skip = arch.attention[i] ? att[i](t, skips[i], up) : skips[i];
    cur = t.concat_channels(up, skip);
    const std::size_t base = static_cast<std::size_t>(3 - i) * 3;
    cur = t.gelu(t.instance_norm(dec[base](t, cur)));
    cur = t.gelu(t.instance_norm(dec[base + 1](t, cur)));
    cur = t.gelu(t.instance_norm(dec[base + 2](t, cur)));
  }
  cur = fno_out(t, cur, fno_identity);
  return proj(t, cur);
}

ExtendedImageVolume forward(const HybridOperatorModel& model, const Grid2D& grid,
                            const std::vector<float>& ch_true, const std::vector<float>& ch_mig,
                            double d_tau) {
  if (ch_true.size() != grid.cells() || ch_mig.size() != grid.cells())
    throw ConfigError("operator forward: channel size does not match grid");
  ad::Tape<float> t(false);
  std::vector<float> input(2 * grid.cells());
  std::copy(ch_true.begin(), ch_true.end(), input.begin());
  std::copy(ch_mig.begin(), ch_mig.end(), input.begin() + static_cast<std::ptrdiff_t>(grid.cells()));
  auto out = model.forward_graph(t, t.constant({1, 2, grid.nz, grid.nx}, std::move(input)));
  ExtendedImageVolume img(grid, model.arch.n_lag, d_tau);
  img.values = t.value(out).v;
  return img;
}

LoadedDataset load_dataset(const velgen::DatasetManifest& manifest) {
  LoadedDataset ds;
  ds.grid = manifest.grid;
  ds.n_lag = manifest.lag.n_lag;
  ds.d_tau = manifest.lag.d_tau;
  ds.norm = manifest.norm;
  ds.norm.validate();
  const float inv_scale = 1.0f / manifest.norm.image_scale;
  for (const auto& rec : manifest.records) {
    velgen::DatasetSample s = velgen::load_sample(manifest, rec);
    ds.ch_true.push_back(normalize_velocity(s.v_true, ds.norm));
    ds.ch_mig.push_back(normalize_velocity(s.v_mig, ds.norm));
    std::vector<float> label = s.label.values;
    for (float& v : label) v *= inv_scale;
    ds.labels.push_back(std::move(label));
    const int pos = static_cast<int>(ds.labels.size()) - 1;
    (rec.idx < manifest.n_train ? ds.train_idx : ds.val_idx).push_back(pos);
  }
  if (ds.train_idx.empty()) throw ConfigError("load_dataset: no training samples in manifest");
  return ds;
}

void TrainConfig::validate() const {
  if (epochs < 1 || batch < 1) throw ConfigError("TrainConfig: epochs and batch must be >= 1");
  if (lr <= 0.0 || lr_decay <= 0.0 || lr_decay > 1.0)
    throw ConfigError("TrainConfig: need lr > 0 and 0 < lr_decay <= 1");
  if (decay_every < 1 || checkpoint_every < 1)
    throw ConfigError("TrainConfig: cadences must be >= 1");
  if (out_dir.empty()) throw ConfigError("TrainConfig: out_dir is required");
}

double evaluate_loss(const HybridOperatorModel& model, const LoadedDataset& ds,
                     const std::vector<int>& idx) {
  if (idx.empty()) return 0.0;
  const std::size_t cells = ds.grid.cells();
  const int lags = model.arch.n_lag;
  if (lags > ds.n_lag) throw ConfigError("evaluate_loss: model has more lags than the dataset");
  double acc = 0.0;
  std::vector<float> input, label;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    pack_batch(ds, idx, i, i + 1, lags, input, label);
    ad::Tape<float> t(false);
    auto out = model.forward_graph(t, t.constant({1, 2, ds.grid.nz, ds.grid.nx}, input));
    const auto& pred = t.value(out).v;
    double se = 0.0;
    for (std::size_t j = 0; j < pred.size(); ++j) {
      const double d = static_cast<double>(pred[j]) - label[j];
      se += d * d;
    }
    acc += se / static_cast<double>(lags * cells);
  }
  return acc / static_cast<double>(idx.size());
}

double held_out_nmse(const HybridOperatorModel& model, const LoadedDataset& ds) {
  if (ds.val_idx.empty()) throw ConfigError("held_out_nmse: dataset has no validation split");
  const int lags = model.arch.n_lag;
  std::vector<float> input, label;
  double acc = 0.0;
  for (std::size_t i = 0; i < ds.val_idx.size(); ++i) {
    pack_batch(ds, ds.val_idx, i, i + 1, lags, input, label);
    ad::Tape<float> t(false);
    auto out = model.forward_graph(t, t.constant({1, 2, ds.grid.nz, ds.grid.nx}, input));
    const auto& pred = t.value(out).v;
    double se = 0.0, ref = 0.0;
    for (std::size_t j = 0; j < pred.size(); ++j) {
      const double d = static_cast<double>(pred[j]) - label[j];
      se += d * d;
      ref += static_cast<double>(label[j]) * label[j];
    }
    acc += se / ref;
  }
  return acc / static_cast<double>(ds.val_idx.size());
}

TrainResult train_operator(HybridOperatorModel& model, const LoadedDataset& ds,
                           const TrainConfig& cfg) {
  cfg.validate();
  model.arch.validate();
  if (model.arch.n_lag > ds.n_lag)
    throw ConfigError("train_operator: model lag count exceeds dataset lag count");
  fs::create_directories(cfg.out_dir);

  auto params = model.params.all();
  ad::Adam<float> opt(params);
  model.params.zero_grad_all();

  int start_epoch = 0;
  if (!cfg.resume_from.empty()) {
    io::Checkpoint ckpt = io::read_checkpoint(cfg.resume_from);
    io::unpack_state(ckpt, params, &opt);
    start_epoch = static_cast<int>(ckpt.epoch) + 1;
  }

  const std::string log_path = (fs::path(cfg.out_dir) / "train_op_log.csv").string();
  std::ofstream log(log_path, start_epoch == 0 ? std::ios::trunc : std::ios::app);
  if (!log) throw IoError(IoError::Kind::open_failed, "train_operator: cannot open " + log_path);
  if (start_epoch == 0) log << "epoch,train_loss,val_loss,lr\n";

  TrainResult result;
  result.best_val = std::numeric_limits<double>::infinity();
  result.best_checkpoint = (fs::path(cfg.out_dir) / "op_best.velc").string();
  result.last_checkpoint = (fs::path(cfg.out_dir) / "op_last.velc").string();

  const int lags = model.arch.n_lag;
  const std::size_t n_train = ds.train_idx.size();
  std::vector<float> input, label;

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order = ds.train_idx;
    Rng shuffle_rng = Rng::derive(cfg.seed + kShuffleStream, static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(order.begin(), order.end());

    const double lr = ad::scheduled_lr(cfg.lr, cfg.lr_decay, cfg.decay_every, epoch);
    double epoch_loss = 0.0;
    int batch_index = 0;
    for (std::size_t first = 0; first < n_train; first += cfg.batch, ++batch_index) {
      const std::size_t last = std::min(first + cfg.batch, n_train);
      pack_batch(ds, order, first, last, lags, input, label);
      const int B = static_cast<int>(last - first);

      ad::Tape<float> t;
      auto out = model.forward_graph(t, t.constant({B, 2, ds.grid.nz, ds.grid.nx}, input));
      auto loss = t.mse(out, t.constant({B, lags, ds.grid.nz, ds.grid.nx}, label));
      const double loss_val = static_cast<double>(t.value(loss).v[0]);
      if (!std::isfinite(loss_val)) {
        std::ostringstream msg;
        msg << "train_operator: non-finite loss at epoch " << epoch << " batch " << batch_index
            << " (lr=" << lr << ")";
        throw NumericError(msg.str());
      }
      model.params.zero_grad_all();
      t.backward(loss);
      opt.step(lr);
      epoch_loss += loss_val * B;
    }
    epoch_loss /= static_cast<double>(n_train);

    const double val = evaluate_loss(model, ds, ds.val_idx);
    result.train_loss.push_back(epoch_loss);
    result.val_loss.push_back(val);
    log << epoch << ',' << epoch_loss << ',' << val << ',' << lr << '\n';
    log.flush();

    if (val < result.best_val) {
      result.best_val = val;
      result.best_epoch = epoch;
      io::write_checkpoint(result.best_checkpoint,
                           io::pack_state(params, nullptr, static_cast<std::uint32_t>(epoch)));
    }
    if ((epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == cfg.epochs)
      io::write_checkpoint(result.last_checkpoint,
                           io::pack_state(params, &opt, static_cast<std::uint32_t>(epoch)));
  }
  return result;
}

}  // namespace velbuild::op
