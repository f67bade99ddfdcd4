#pragma once

#include <cmath>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "velbuild/autodiff.hpp"
#include "velbuild/rng.hpp"

namespace velbuild::nn {

/// Owning, name-addressable parameter collection. Blocks keep raw pointers
/// into the deque, so the set must outlive them and is not copyable.
template <typename T>
class ParamSet {
public:
  ParamSet() = default;
  ParamSet(const ParamSet&) = delete;
  ParamSet& operator=(const ParamSet&) = delete;
  ParamSet(ParamSet&&) = default;
  ParamSet& operator=(ParamSet&&) = default;

  ad::Parameter<T>& add(std::string name, std::vector<int> shape) {
    if (find(name)) throw ConfigError("ParamSet: duplicate parameter '" + name + "'");
    store_.emplace_back(std::move(name), std::move(shape));
    return store_.back();
  }

  ad::Parameter<T>* find(const std::string& name) {
    for (auto& p : store_)
      if (p.name == name) return &p;
    return nullptr;
  }

  std::vector<ad::Parameter<T>*> all() {
    std::vector<ad::Parameter<T>*> out;
    out.reserve(store_.size());
    for (auto& p : store_) out.push_back(&p);
    return out;
  }

  std::size_t total_count() const {
    std::size_t n = 0;
    for (const auto& p : store_) n += p.numel();
    return n;
  }

  void set_requires_grad(bool on) {
    for (auto& p : store_) p.requires_grad = on;
  }

  void zero_grad_all() {
    for (auto& p : store_) p.zero_grad();
  }

private:
  std::deque<ad::Parameter<T>> store_;
};

/// He fan-in init: N(0, sqrt(2/fan_in)); used for conv kernels and dense
/// weights (biases start at zero).
template <typename T>
void kaiming_init(ad::Parameter<T>& p, Rng& rng, std::size_t fan_in) {
  const double s = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : p.value) v = static_cast<T>(s * rng.normal());
}

/// Complex mode weights, uniform in a disk-ish box scaled by the given factor.
template <typename T>
void spectral_init(ad::Parameter<T>& p, Rng& rng, double scale) {
  for (auto& v : p.value) v = static_cast<T>(scale * rng.uniform(-1.0, 1.0));
}

template <typename T>
struct Conv {
  ad::Parameter<T>* w = nullptr;
  ad::Parameter<T>* b = nullptr;

  Conv() = default;
  Conv(ParamSet<T>& ps, const std::string& name, int c_in, int c_out, int k, Rng& rng) {
    w = &ps.add(name + ".w", {c_out, c_in, k, k});
    b = &ps.add(name + ".b", {c_out});
    kaiming_init(*w, rng, static_cast<std::size_t>(c_in) * k * k);
  }

  ad::Var<T> operator()(ad::Tape<T>& t, ad::Var<T> x) const {
    return t.bias_channels(t.conv2d(x, t.leaf(*w)), t.leaf(*b));
  }
};

template <typename T>
struct Dense {
  ad::Parameter<T>* w = nullptr;
  ad::Parameter<T>* b = nullptr;

  Dense() = default;
  Dense(ParamSet<T>& ps, const std::string& name, int n_in, int n_out, Rng& rng) {
    w = &ps.add(name + ".w", {n_out, n_in});
    b = &ps.add(name + ".b", {n_out});
    kaiming_init(*w, rng, static_cast<std::size_t>(n_in));
  }

  ad::Var<T> operator()(ad::Tape<T>& t, ad::Var<T> x) const {
    return t.linear(x, t.leaf(*w), t.leaf(*b));
  }
};

/// Spectral mixing + pointwise bypass, the standard FNO layer:
///   y = gelu(spectral(x, w) + conv1x1(x)).
template <typename T>
struct FnoLayer {
  ad::Parameter<T>* w = nullptr;  // [O,C,mz,mx,2]
  Conv<T> bypass;

  FnoLayer() = default;
  FnoLayer(ParamSet<T>& ps, const std::string& name, int c_in, int c_out, int mz, int mx,
           Rng& rng)
      : bypass(ps, name + ".pw", c_in, c_out, 1, rng) {
    w = &ps.add(name + ".spec", {c_out, c_in, mz, mx, 2});
    spectral_init(*w, rng, 1.0 / (static_cast<double>(c_in) * mz * mx));
  }

  /// identity=true bypasses the layer entirely (ablation hook); only valid
  /// when c_in == c_out.
  ad::Var<T> operator()(ad::Tape<T>& t, ad::Var<T> x, bool identity = false) const {
    if (identity) return x;
    return t.gelu(t.add(t.spectral_multiply(x, t.leaf(*w)), bypass(t, x)));
  }
};

/// Two 3x3 convs with instance norm, GELU, and an additive shortcut
/// (1x1-projected when widths differ). The optional embedding hook adds a
/// learned per-channel bias after the first norm — the denoiser's step
/// conditioning.
template <typename T>
struct ResidualBlock {
  Conv<T> conv1, conv2;
  Conv<T> proj;  // only allocated when c_in != c_out
  Dense<T> emb;  // only allocated when emb_dim > 0
  bool has_proj = false;
  bool has_emb = false;

  ResidualBlock() = default;
  ResidualBlock(ParamSet<T>& ps, const std::string& name, int c_in, int c_out, Rng& rng,
                int emb_dim = 0)
      : conv1(ps, name + ".c1", c_in, c_out, 3, rng),
        conv2(ps, name + ".c2", c_out, c_out, 3, rng) {
    if (c_in != c_out) {
      proj = Conv<T>(ps, name + ".proj", c_in, c_out, 1, rng);
      has_proj = true;
    }
    if (emb_dim > 0) {
      emb = Dense<T>(ps, name + ".emb", emb_dim, c_out, rng);
      has_emb = true;
    }
  }

  ad::Var<T> operator()(ad::Tape<T>& t, ad::Var<T> x,
                        std::optional<ad::Var<T>> emb_vec = std::nullopt) const {
    auto h = t.instance_norm(conv1(t, x));
    if (has_emb) {
      if (!emb_vec) throw ConfigError("ResidualBlock: embedding expected but not provided");
      h = t.bias_channels(h, emb(t, *emb_vec));
    }
    h = t.gelu(h);
    h = t.instance_norm(conv2(t, h));
    auto s = has_proj ? proj(t, x) : x;
    return t.gelu(t.add(h, s));
  }
};

/// Channel-then-spatial attention computed from the gating features and
/// applied to the skip features. Both scales pass through a sigmoid, so the
/// gated output is elementwise no larger in magnitude than the input.
template <typename T>
struct AttentionGate {
  Dense<T> fc1, fc2;
  Conv<T> spatial;

  AttentionGate() = default;
  AttentionGate(ParamSet<T>& ps, const std::string& name, int c_skip, int c_gate, Rng& rng)
      : fc1(ps, name + ".fc1", c_gate, std::max(c_gate / 4, 4), rng),
        fc2(ps, name + ".fc2", std::max(c_gate / 4, 4), c_skip, rng),
        spatial(ps, name + ".sp", 2, 1, 7, rng) {}

  ad::Var<T> operator()(ad::Tape<T>& t, ad::Var<T> skip, ad::Var<T> gate) const {
    auto ca = t.sigmoid(fc2(t, t.relu(fc1(t, t.global_avg_pool(gate)))));
    auto x1 = t.scale_channels(skip, ca);
    auto sa = t.sigmoid(spatial(t, t.channel_pool_meanmax(gate)));
    return t.scale_spatial(x1, sa);
  }
};

/// Sinusoidal position encoding of a diffusion step index.
template <typename T>
std::vector<T> sinusoidal_embedding(int step, int dim) {
  if (dim < 2 || dim % 2) throw ConfigError("sinusoidal_embedding: dim must be even and >= 2");
  std::vector<T> out(static_cast<std::size_t>(dim));
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    out[2 * i] = static_cast<T>(std::sin(step * freq));
    out[2 * i + 1] = static_cast<T>(std::cos(step * freq));
  }
  return out;
}

}  // namespace velbuild::nn
