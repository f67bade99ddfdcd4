#include "velbuild/ddpm.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "velbuild/checkpoint.hpp"
#include "velbuild/optim.hpp"
#include "velbuild/rng.hpp"

namespace fs = std::filesystem;

namespace velbuild::ddpm {

namespace {

constexpr std::uint64_t kInitStream = 0x64656e6full;
constexpr std::uint64_t kSampleStream = 0x73616d70ull;
constexpr std::uint64_t kRefineStream = 0x72656669ull;
constexpr std::uint64_t kShuffleStream = 0x64647368ull;

std::vector<float> draw_normal(Rng& rng, std::size_t n) {
  std::vector<float> out(n);
  for (float& v : out) v = static_cast<float>(rng.normal());
  return out;
}

}  // namespace

std::size_t NoiseSchedule::check(int s) const {
  if (s < 1 || s > steps) {
    std::ostringstream msg;
    msg << "diffusion step " << s << " outside [1, " << steps << "]";
    throw ConfigError(msg.str());
  }
  return static_cast<std::size_t>(s - 1);
}

NoiseSchedule make_linear_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ConfigError("make_linear_schedule: steps must be >= 1");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
    throw ConfigError("make_linear_schedule: need 0 < beta_start <= beta_end < 1");
  NoiseSchedule sched;
  sched.steps = steps;
  sched.beta.resize(steps);
  sched.alpha.resize(steps);
  sched.alpha_bar.resize(steps);
  sched.sigma.resize(steps);
  double prod = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double f = steps > 1 ? static_cast<double>(i) / (steps - 1) : 0.0;
    sched.beta[i] = beta_start + (beta_end - beta_start) * f;
    sched.alpha[i] = 1.0 - sched.beta[i];
    prod *= sched.alpha[i];
    sched.alpha_bar[i] = prod;
    sched.sigma[i] = std::sqrt(sched.beta[i]);
  }
  return sched;
}

std::vector<float> q_sample(const std::vector<float>& v0, int s, const std::vector<float>& noise,
                            const NoiseSchedule& sched) {
  if (noise.size() != v0.size()) throw ConfigError("q_sample: noise shape differs from v0");
  const double abar = sched.alpha_bar_at(s);
  const double a = std::sqrt(abar), b = std::sqrt(1.0 - abar);
  std::vector<float> out(v0.size());
  for (std::size_t i = 0; i < v0.size(); ++i)
    out[i] = static_cast<float>(a * v0[i] + b * noise[i]);
  return out;
}

void DenoiserArch::validate() const {
  for (int w : enc_widths)
    if (w < 1) throw ConfigError("DenoiserArch: encoder widths must be >= 1");
  for (int w : dec_widths)
    if (w < 1) throw ConfigError("DenoiserArch: decoder widths must be >= 1");
  if (emb_dim < 2 || emb_dim % 2) throw ConfigError("DenoiserArch: emb_dim must be even and >= 2");
}

DenoiserModel build_denoiser(const DenoiserArch& arch, std::uint64_t seed) {
  arch.validate();
  DenoiserModel m;
  m.arch = arch;
  Rng rng = Rng::derive(seed, kInitStream);

  m.lift = nn::Conv<float>(m.params, "lift", 1, arch.enc_widths[0], 3, rng);
  m.emb_fc = nn::Dense<float>(m.params, "emb_fc", arch.emb_dim, arch.emb_dim, rng);
  for (int i = 0; i < 4; ++i) {
    const int c_in = i == 0 ? arch.enc_widths[0] : arch.enc_widths[i - 1];
    m.enc.emplace_back(m.params, "enc" + std::to_string(i), c_in, arch.enc_widths[i], rng,
                       arch.emb_dim);
  }
  m.bottleneck = nn::ResidualBlock<float>(m.params, "bottleneck", arch.enc_widths[3],
                                          arch.enc_widths[3], rng, arch.emb_dim);
  for (int i = 3; i >= 0; --i) {
    const int c_up = i == 3 ? arch.enc_widths[3] : arch.dec_widths[i + 1];
    m.dec.emplace_back(m.params, "dec" + std::to_string(i), c_up + arch.enc_widths[i],
                       arch.dec_widths[i], rng, arch.emb_dim);
  }
  m.out = nn::Conv<float>(m.params, "out", arch.dec_widths[0], 1, 3, rng);
  std::fill(m.out.w->value.begin(), m.out.w->value.end(), 0.0f);
  std::fill(m.out.b->value.begin(), m.out.b->value.end(), 0.0f);
  return m;
}

ad::Var<float> DenoiserModel::forward_graph(ad::Tape<float>& t, ad::Var<float> x,
                                            ad::Var<float> emb) const {
  const auto& shape = t.value(x).shape;
  if (shape.size() != 4 || shape[1] != 1)
    throw ConfigError("denoiser forward: input must be [B,1,H,W]");
  if (shape[2] % 16 || shape[3] % 16)
    throw ConfigError("denoiser forward: spatial dims must be divisible by 16");

  auto e = t.gelu(emb_fc(t, emb));
  auto cur = lift(t, x);
  std::array<ad::Var<float>, 4> skips;
  for (int i = 0; i < 4; ++i) {
    cur = enc[i](t, cur, e);
    skips[i] = cur;
    cur = t.avgpool2(cur);
  }
  cur = bottleneck(t, cur, e);
  for (int i = 3; i >= 0; --i) {
    auto up = t.upsample_nearest2(cur);
    cur = dec[3 - i](t, t.concat_channels(up, skips[i]), e);
  }
  return out(t, cur);
}

std::vector<float> predict_noise(const DenoiserModel& model, const Grid2D& grid,
                                 const std::vector<float>& v_s, int s) {
  if (v_s.size() != grid.cells()) throw ConfigError("predict_noise: field size differs from grid");
  ad::Tape<float> t(false);
  auto x = t.constant({1, 1, grid.nz, grid.nx}, v_s);
  auto emb = t.constant({1, model.arch.emb_dim},
                        nn::sinusoidal_embedding<float>(s, model.arch.emb_dim));
  auto out = model.forward_graph(t, x, emb);
  return t.value(out).v;
}

DenoiserFn denoiser_fn(const DenoiserModel& model, const Grid2D& grid) {
  return [&model, grid](const std::vector<float>& v_s, int s) {
    return predict_noise(model, grid, v_s, s);
  };
}

std::vector<float> reverse_step(const std::vector<float>& v_s, int s, const DenoiserFn& eps,
                                const std::vector<float>* z, const NoiseSchedule& sched) {
  const double alpha = sched.alpha_at(s);
  const double abar = sched.alpha_bar_at(s);
  const double sigma = sched.sigma_at(s);
  const double coef = (1.0 - alpha) / std::sqrt(1.0 - abar);
  const double inv = 1.0 / std::sqrt(alpha);
  std::vector<float> e = eps(v_s, s);
  if (e.size() != v_s.size()) throw ConfigError("reverse_step: denoiser output shape differs");
  if (z && z->size() != v_s.size()) throw ConfigError("reverse_step: z shape differs");
  std::vector<float> out(v_s.size());
  for (std::size_t i = 0; i < v_s.size(); ++i) {
    double v = inv * (static_cast<double>(v_s[i]) - coef * e[i]);
    if (z) v += sigma * (*z)[i];
    out[i] = static_cast<float>(v);
  }
  return out;
}

std::vector<float> sample_model(const DenoiserModel& model, const Grid2D& grid,
                                const NoiseSchedule& sched, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, kSampleStream);
  DenoiserFn eps = denoiser_fn(model, grid);
  std::vector<float> v = draw_normal(rng, grid.cells());
  for (int s = sched.steps; s >= 2; --s) {
    std::vector<float> z = draw_normal(rng, grid.cells());
    v = reverse_step(v, s, eps, &z, sched);
  }
  return reverse_step(v, 1, eps, nullptr, sched);
}

void RefineConfig::validate(const NoiseSchedule& sched) const {
  if (s_cond < 1 || s_cond > sched.steps)
    throw ConfigError("RefineConfig: s_cond outside the schedule");
  if (k_steps < 1 || k_steps > s_cond)
    throw ConfigError("RefineConfig: need 1 <= k_steps <= s_cond");
}

std::vector<float> refine_conditioned(const DenoiserFn& eps, const std::vector<float>& v_guess,
                                      const RefineConfig& cfg, const NoiseSchedule& sched,
                                      const std::vector<float>* seed_noise) {
  cfg.validate(sched);
  Rng rng = Rng::derive(cfg.seed, kRefineStream);
  std::vector<float> noise;
  if (seed_noise) {
    if (seed_noise->size() != v_guess.size())
      throw ConfigError("refine_conditioned: seed noise shape differs from guess");
    noise = *seed_noise;
  } else {
    noise = draw_normal(rng, v_guess.size());
  }
  std::vector<float> v = q_sample(v_guess, cfg.s_cond, noise, sched);
  for (int j = 0; j < cfg.k_steps; ++j) {
    const int s = cfg.s_cond - j;
    if (j + 1 == cfg.k_steps) {
      v = reverse_step(v, s, eps, nullptr, sched);
    } else {
      std::vector<float> z = draw_normal(rng, v.size());
      v = reverse_step(v, s, eps, &z, sched);
    }
  }
  return v;
}

void DdpmTrainConfig::validate() const {
  if (epochs < 1 || batch < 1) throw ConfigError("DdpmTrainConfig: epochs and batch must be >= 1");
  if (lr <= 0.0) throw ConfigError("DdpmTrainConfig: lr must be positive");
  if (checkpoint_every < 1) throw ConfigError("DdpmTrainConfig: checkpoint cadence must be >= 1");
  if (out_dir.empty()) throw ConfigError("DdpmTrainConfig: out_dir is required");
}

DdpmTrainResult train_ddpm(DenoiserModel& model, const Grid2D& grid,
                           const std::vector<CorpusSample>& corpus, const NoiseSchedule& sched,
                           const DdpmTrainConfig& cfg) {
  cfg.validate();
  model.arch.validate();
  if (corpus.empty()) throw ConfigError("train_ddpm: empty corpus");
  const std::size_t cells = grid.cells();
  for (const auto& s : corpus) {
    if (s.v0.size() != cells) throw ConfigError("train_ddpm: corpus sample size differs from grid");
    for (float v : s.v0)
      if (!(v >= 0.0f && v <= 1.0f))
        throw ConfigError("train_ddpm: corpus must be normalized to [0,1]");
  }
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

  const std::string log_path = (fs::path(cfg.out_dir) / "train_ddpm_log.csv").string();
  std::ofstream log(log_path, start_epoch == 0 ? std::ios::trunc : std::ios::app);
  if (!log) throw IoError(IoError::Kind::open_failed, "train_ddpm: cannot open " + log_path);
  if (start_epoch == 0) log << "epoch,loss,lr\n";

  DdpmTrainResult result;
  result.last_checkpoint = (fs::path(cfg.out_dir) / "ddpm_last.velc").string();

  const int emb_dim = model.arch.emb_dim;
  const std::size_t n = corpus.size();

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    // fresh identity order each epoch so a resumed run shuffles identically
    std::vector<int> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
    Rng shuffle_rng = Rng::derive(cfg.seed + kShuffleStream, static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(order.begin(), order.end());

    double epoch_loss = 0.0;
    int batch_index = 0;
    for (std::size_t first = 0; first < n; first += cfg.batch, ++batch_index) {
      const std::size_t last = std::min(first + cfg.batch, n);
      const int B = static_cast<int>(last - first);
      std::vector<float> input(B * cells), target(B * cells),
          emb(static_cast<std::size_t>(B) * emb_dim);
      for (int b = 0; b < B; ++b) {
        const auto& sample = corpus[order[first + b]];
        Rng draw = Rng::derive(sample.seed, static_cast<std::uint64_t>(epoch));
        const int s = draw.uniform_int(1, sched.steps);
        std::vector<float> noise = draw_normal(draw, cells);
        std::vector<float> v_s = q_sample(sample.v0, s, noise, sched);
        std::copy(v_s.begin(), v_s.end(), input.begin() + b * cells);
        std::copy(noise.begin(), noise.end(), target.begin() + b * cells);
        const auto row = nn::sinusoidal_embedding<float>(s, emb_dim);
        std::copy(row.begin(), row.end(), emb.begin() + static_cast<std::size_t>(b) * emb_dim);
      }

      ad::Tape<float> t;
      auto out = model.forward_graph(t, t.constant({B, 1, grid.nz, grid.nx}, std::move(input)),
                                     t.constant({B, emb_dim}, std::move(emb)));
      auto loss = t.mse(out, t.constant({B, 1, grid.nz, grid.nx}, std::move(target)));
      const double loss_val = static_cast<double>(t.value(loss).v[0]);
      if (!std::isfinite(loss_val)) {
        std::ostringstream msg;
        msg << "train_ddpm: non-finite loss at epoch " << epoch << " batch " << batch_index;
        throw NumericError(msg.str());
      }
      model.params.zero_grad_all();
      t.backward(loss);
      opt.step(cfg.lr);
      epoch_loss += loss_val * B;
    }
    epoch_loss /= static_cast<double>(n);
    result.epoch_loss.push_back(epoch_loss);
    log << epoch << ',' << epoch_loss << ',' << cfg.lr << '\n';
    log.flush();

    if ((epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == cfg.epochs)
      io::write_checkpoint(result.last_checkpoint,
                           io::pack_state(params, &opt, static_cast<std::uint32_t>(epoch)));
  }
  return result;
}

}  // namespace velbuild::ddpm
