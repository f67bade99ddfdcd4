#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "velbuild/error.hpp"
#include "velbuild/fft.hpp"

namespace velbuild::ad {

/// Plain value container. Row-major; conv tensors are [B,C,H,W].
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), v(count(shape), T(0)) {}
  Tensor(std::vector<int> s, std::vector<T> data) : shape(std::move(s)), v(std::move(data)) {
    if (v.size() != count(shape)) throw ConfigError("Tensor: data size does not match shape");
  }

  static std::size_t count(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) {
      if (d <= 0) throw ConfigError("Tensor: non-positive dimension");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  std::size_t numel() const { return v.size(); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(shape.size()); }
};

template <typename T>
std::string shape_str(const Tensor<T>& t) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < t.shape.size(); ++i) os << (i ? "," : "") << t.shape[i];
  os << ']';
  return os.str();
}

/// Persistent trainable leaf. Lives outside any tape; gradients accumulate
/// across backward passes until zero_grad. grad stays unallocated until the
/// parameter takes part in a backward pass (or zero_grad is called).
template <typename T>
struct Parameter {
  std::string name;
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = true;

  Parameter() = default;
  Parameter(std::string n, std::vector<int> s)
      : name(std::move(n)), shape(std::move(s)), value(Tensor<T>::count(shape), T(0)) {}

  std::size_t numel() const { return value.size(); }

  void zero_grad() { grad.assign(value.size(), T(0)); }
};

template <typename T>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid until the tape resets.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;
};

/// Define-by-run reverse-mode tape. Records one forward execution; backward
/// walks the nodes once in reverse creation order. Construct with
/// recording=false for gradient-free evaluation (no backward closures, no
/// grad buffers).
template <typename T>
class Tape {
public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  /// Drop all nodes so the tape can record a fresh graph.
  void reset() {
    nodes_.clear();
    backward_done_ = false;
  }

  /// When set, every op scans its output for non-finite values.
  void set_debug_checks(bool on) { debug_checks_ = on; }

  // ---- leaves ----

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, nullptr); }

  Var<T> constant(std::vector<int> shape, std::vector<T> data) {
    return constant(Tensor<T>(std::move(shape), std::move(data)));
  }

  /// Leaf whose gradient accumulates into the parameter (when recording and
  /// the parameter wants gradients). The value is copied onto the tape.
  Var<T> leaf(Parameter<T>& p) {
    const bool wants = recording_ && p.requires_grad;
    Tensor<T> val(p.shape, p.value);
    if (!wants) return push(std::move(val), false, nullptr);
    Parameter<T>* pp = &p;
    Var<T> out = push(std::move(val), true, nullptr);
    const int oid = out.id;
    nodes_[oid].backward = [this, oid, pp] {
      if (pp->grad.empty()) pp->grad.assign(pp->value.size(), T(0));
      const std::vector<T>& g = nodes_[oid].grad;
      for (std::size_t i = 0; i < g.size(); ++i) pp->grad[i] += g[i];
    };
    return out;
  }

  const Tensor<T>& value(Var<T> x) const { return nodes_[check(x)].value; }

  /// Gradient buffer of a node after backward; empty if nothing flowed there.
  const std::vector<T>& grad(Var<T> x) const { return nodes_[check(x)].grad; }

  /// Reverse sweep from a scalar loss. Each tape supports one sweep; record a
  /// fresh graph (reset + forward) for the next one.
  void backward(Var<T> loss) {
    const int lid = check(loss);
    if (!recording_) throw ConfigError("backward: tape was created non-recording");
    if (backward_done_)
      throw ConfigError("backward: tape already consumed; re-record the graph first");
    if (nodes_[lid].value.numel() != 1) throw ConfigError("backward: loss must be a scalar");
    backward_done_ = true;
    grad_of(lid).assign(1, T(1));
    for (int i = lid; i >= 0; --i) {
      if (nodes_[i].backward && !nodes_[i].grad.empty()) nodes_[i].backward();
    }
  }

  // ---- elementwise and scalar ----

  Var<T> add(Var<T> a, Var<T> b) { return binary_same("add", a, b, [](T x, T y) { return x + y; },
                                                      T(1), T(1)); }
  Var<T> sub(Var<T> a, Var<T> b) { return binary_same("sub", a, b, [](T x, T y) { return x - y; },
                                                      T(1), T(-1)); }

  Var<T> mul(Var<T> a, Var<T> b) {
    require_same_shape("mul", a, b);
    const int aid = check(a), bid = check(b);
    Tensor<T> out(nodes_[aid].value.shape);
    const auto& av = nodes_[aid].value.v;
    const auto& bv = nodes_[bid].value.v;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = av[i] * bv[i];
    return record(std::move(out), {aid, bid}, [this, aid, bid](int oid) {
      const std::vector<T>& g = nodes_[oid].grad;
      if (wants(aid)) {
        std::vector<T>& ga = grad_of(aid);
        const auto& bvv = nodes_[bid].value.v;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bvv[i];
      }
      if (wants(bid)) {
        std::vector<T>& gb = grad_of(bid);
        const auto& avv = nodes_[aid].value.v;
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * avv[i];
      }
    });
  }

  Var<T> scalar_mul(Var<T> a, T s) {
    const int aid = check(a);
    Tensor<T> out(nodes_[aid].value.shape);
    const auto& av = nodes_[aid].value.v;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = s * av[i];
    return record(std::move(out), {aid}, [this, aid, s](int oid) {
      const std::vector<T>& g = nodes_[oid].grad;
      std::vector<T>& ga = grad_of(aid);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    });
  }

  Var<T> relu(Var<T> a) {
    return unary("relu", a, [](T x) { return x > T(0) ? x : T(0); },
                 [](T x, T) { return x > T(0) ? T(1) : T(0); });
  }

  Var<T> gelu(Var<T> a) {
    // exact form, 0.5 x (1 + erf(x / sqrt(2)))
    const T inv_sqrt2 = T(1) / std::sqrt(T(2));
    const T inv_sqrt2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    return unary(
        "gelu", a,
        [inv_sqrt2](T x) { return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2)); },
        [inv_sqrt2, inv_sqrt2pi](T x, T) {
          return T(0.5) * (T(1) + std::erf(x * inv_sqrt2)) +
                 x * inv_sqrt2pi * std::exp(T(-0.5) * x * x);
        });
  }

  Var<T> sigmoid(Var<T> a) {
    return unary("sigmoid", a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
                 [](T, T y) { return y * (T(1) - y); });
  }

  Var<T> tanh(Var<T> a) {
    return unary("tanh", a, [](T x) { return std::tanh(x); },
                 [](T, T y) { return T(1) - y * y; });
  }

  // ---- reductions ----

  Var<T> sum(Var<T> a) {
    const int aid = check(a);
    T acc = T(0);
    for (T x : nodes_[aid].value.v) acc += x;
    Tensor<T> out({1});
    out.v[0] = acc;
    return record(std::move(out), {aid}, [this, aid](int oid) {
      const T g = nodes_[oid].grad[0];
      std::vector<T>& ga = grad_of(aid);
      for (T& x : ga) x += g;
    });
  }

  Var<T> mean(Var<T> a) {
    const int aid = check(a);
    const T scale = T(1) / static_cast<T>(nodes_[aid].value.numel());
    return scalar_mul(sum(a), scale);
  }

  Var<T> mse(Var<T> a, Var<T> b) {
    require_same_shape("mse", a, b);
    const int aid = check(a), bid = check(b);
    const std::size_t n = nodes_[aid].value.numel();
    T acc = T(0);
    {
      const auto& av = nodes_[aid].value.v;
      const auto& bv = nodes_[bid].value.v;
      for (std::size_t i = 0; i < n; ++i) {
        const T d = av[i] - bv[i];
        acc += d * d;
      }
    }
    Tensor<T> out({1});
    out.v[0] = acc / static_cast<T>(n);
    return record(std::move(out), {aid, bid}, [this, aid, bid, n](int oid) {
      const T g = nodes_[oid].grad[0] * T(2) / static_cast<T>(n);
      const auto& av = nodes_[aid].value.v;
      const auto& bv = nodes_[bid].value.v;
      if (wants(aid)) {
        std::vector<T>& ga = grad_of(aid);
        for (std::size_t i = 0; i < n; ++i) ga[i] += g * (av[i] - bv[i]);
      }
      if (wants(bid)) {
        std::vector<T>& gb = grad_of(bid);
        for (std::size_t i = 0; i < n; ++i) gb[i] -= g * (av[i] - bv[i]);
      }
    });
  }

  // ---- linear algebra ----

  /// a [M,K] x b [K,N] -> [M,N]
  Var<T> matmul(Var<T> a, Var<T> b) {
    const int aid = check(a), bid = check(b);
    const Tensor<T>& av = nodes_[aid].value;
    const Tensor<T>& bv = nodes_[bid].value;
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
      throw ConfigError("matmul: incompatible shapes " + shape_str(av) + " x " + shape_str(bv));
    const int M = av.dim(0), K = av.dim(1), N = bv.dim(1);
    Tensor<T> out({M, N});
    for (int i = 0; i < M; ++i)
      for (int k = 0; k < K; ++k) {
        const T aa = av.v[static_cast<std::size_t>(i) * K + k];
        const T* brow = &bv.v[static_cast<std::size_t>(k) * N];
        T* orow = &out.v[static_cast<std::size_t>(i) * N];
        for (int j = 0; j < N; ++j) orow[j] += aa * brow[j];
      }
    return record(std::move(out), {aid, bid}, [this, aid, bid, M, K, N](int oid) {
      const std::vector<T>& g = nodes_[oid].grad;
      const auto& avv = nodes_[aid].value.v;
      const auto& bvv = nodes_[bid].value.v;
      if (wants(aid)) {
        std::vector<T>& ga = grad_of(aid);
        for (int i = 0; i < M; ++i)
          for (int j = 0; j < N; ++j) {
            const T gg = g[static_cast<std::size_t>(i) * N + j];
            const T* brow = &bvv[0] + j;
            for (int k = 0; k < K; ++k)
              ga[static_cast<std::size_t>(i) * K + k] += gg * brow[static_cast<std::size_t>(k) * N];
          }
      }
      if (wants(bid)) {
        std::vector<T>& gb = grad_of(bid);
        for (int i = 0; i < M; ++i)
          for (int k = 0; k < K; ++k) {
            const T aa = avv[static_cast<std::size_t>(i) * K + k];
            const T* grow = &g[static_cast<std::size_t>(i) * N];
            T* gbrow = &gb[static_cast<std::size_t>(k) * N];
            for (int j = 0; j < N; ++j) gbrow[j] += aa * grow[j];
          }
      }
    });
  }

  /// x [B,N] * w [M,N]^T + b [M] -> [B,M]
  Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
    const int xid = check(x), wid = check(w), bid = check(b);
    const Tensor<T>& xv = nodes_[xid].value;
    const Tensor<T>& wv = nodes_[wid].value;
    const Tensor<T>& bv = nodes_[bid].value;
    if (xv.rank() != 2 || wv.rank() != 2 || bv.rank() != 1 || xv.dim(1) != wv.dim(1) ||
        bv.dim(0) != wv.dim(0))
      throw ConfigError("linear: incompatible shapes " + shape_str(xv) + ", " + shape_str(wv) +
                        ", " + shape_str(bv));
    const int B = xv.dim(0), N = xv.dim(1), M = wv.dim(0);
    Tensor<T> out({B, M});
    for (int i = 0; i < B; ++i)
      for (int m = 0; m < M; ++m) {
        T acc = bv.v[m];
        const T* xrow = &xv.v[static_cast<std::size_t>(i) * N];
        const T* wrow = &wv.v[static_cast<std::size_t>(m) * N];
        for (int k = 0; k < N; ++k) acc += xrow[k] * wrow[k];
        out.v[static_cast<std::size_t>(i) * M + m] = acc;
      }
    return record(std::move(out), {xid, wid, bid}, [this, xid, wid, bid, B, N, M](int oid) {
      const std::vector<T>& g = nodes_[oid].grad;
      const auto& xvv = nodes_[xid].value.v;
      const auto& wvv = nodes_[wid].value.v;
      if (wants(xid)) {
        std::vector<T>& gx = grad_of(xid);
        for (int i = 0; i < B; ++i)
          for (int m = 0; m < M; ++m) {
            const T gg = g[static_cast<std::size_t>(i) * M + m];
            const T* wrow = &wvv[static_cast<std::size_t>(m) * N];
            T* gxrow = &gx[static_cast<std::size_t>(i) * N];
            for (int k = 0; k < N; ++k) gxrow[k] += gg * wrow[k];
          }
      }
      if (wants(wid)) {
        std::vector<T>& gw = grad_of(wid);
        for (int i = 0; i < B; ++i)
          for (int m = 0; m < M; ++m) {
            const T gg = g[static_cast<std::size_t>(i) * M + m];
            const T* xrow = &xvv[static_cast<std::size_t>(i) * N];
            T* gwrow = &gw[static_cast<std::size_t>(m) * N];
            for (int k = 0; k < N; ++k) gwrow[k] += gg * xrow[k];
          }
      }
      if (wants(bid)) {
        std::vector<T>& gb = grad_of(bid);
        for (int i = 0; i < B; ++i)
          for (int m = 0; m < M; ++m) gb[m] += g[static_cast<std::size_t>(i) * M + m];
      }
    });
  }

  // ---- convolution ----

  /// Same-padded cross-correlation: x [B,C,H,W], k [O,C,kh,kw] (odd kh,kw)
  /// -> [B,O,H,W]. The inner loops run as shifted-plane AXPYs so they stay
  /// contiguous.
  Var<T> conv2d(Var<T> x, Var<T> k) {
    const int xid = check(x), kid = check(k);
    const Tensor<T>& xv = nodes_[xid].value;
    const Tensor<T>& kv = nodes_[kid].value;
    if (xv.rank() != 4 || kv.rank() != 4 || xv.dim(1) != kv.dim(1))
      throw ConfigError("conv2d: incompatible shapes " + shape_str(xv) + ", " + shape_str(kv));
    if (kv.dim(2) % 2 == 0 || kv.dim(3) % 2 == 0)
      throw ConfigError("conv2d: kernel dims must be odd, got " + shape_str(kv));
    const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int O = kv.dim(0), kh = kv.dim(2), kw = kv.dim(3);
    const int ph = kh / 2, pw = kw / 2;
    const std::size_t plane = static_cast<std::size_t>(H) * W;

    Tensor<T> out({B, O, H, W});
    for (int b = 0; b < B; ++b)
      for (int o = 0; o < O; ++o) {
        T* op = &out.v[(static_cast<std::size_t>(b) * O + o) * plane];
        for (int c = 0; c < C; ++c) {
          const T* ip = &xv.v[(static_cast<std::size_t>(b) * C + c) * plane];
          const T* kp = &kv.v[(static_cast<std::size_t>(o) * C + c) * kh * kw];
          for (int dy = 0; dy < kh; ++dy)
            for (int dx = 0; dx < kw; ++dx) {
              const T wgt = kp[dy * kw + dx];
              const int sy = dy - ph, sx = dx - pw;
              const int y0 = std::max(0, -sy), y1 = std::min(H, H - sy);
              const int x0 = std::max(0, -sx), x1 = std::min(W, W - sx);
              for (int y = y0; y < y1; ++y) {
                const T* src = ip + static_cast<std::size_t>(y + sy) * W + (x0 + sx);
                T* dst = op + static_cast<std::size_t>(y) * W + x0;
                for (int i = 0; i < x1 - x0; ++i) dst[i] += wgt * src[i];
              }
            }
        }
      }
    return record(std::move(out), {xid, kid},
                  [this, xid, kid, B, C, H, W, O, kh, kw, ph, pw, plane](int oid) {
      const std::vector<T>& g = nodes_[oid].grad;
      const auto& xvv = nodes_[xid].value.v;
      const auto& kvv = nodes_[kid].value.v;
      if (wants(xid)) {
        std::vector<T>& gx = grad_of(xid);
        for (int b = 0; b < B; ++b)
          for (int o = 0; o < O; ++o) {
            const T* gp = &g[(static_cast<std::size_t>(b) * O + o) * plane];
            for (int c = 0; c < C; ++c) {
              T* gip = &gx[(static_cast<std::size_t>(b) * C + c) * plane];
              const T* kp = &kvv[(static_cast<std::size_t>(o) * C + c) * kh * kw];
              for (int dy = 0; dy < kh; ++dy)
                for (int dx = 0; dx < kw; ++dx) {
                  const T wgt = kp[dy * kw + dx];
                  const int sy = dy - ph, sx = dx - pw;
                  const int y0 = std::max(0, -sy), y1 = std::min(H, H - sy);
                  const int x0 = std::max(0, -sx), x1 = std::min(W, W - sx);
                  for (int y = y0; y < y1; ++y) {
                    T* dst = gip + static_cast<std::size_t>(y + sy) * W + (x0 + sx);
                    const T* src = gp + static_cast<std::size_t>(y) * W + x0;
                    for (int i = 0; i < x1 - x0; ++i) dst[i] += wgt * src[i];
                  }
                }
            }
          }
      }
      if (wants(kid)) {
        std::vector<T>& gk = grad_of(kid);
        for (int b = 0; b < B; ++b)
          for (int o = 0; o < O; ++o) {
            const T* gp = &g[(static_cast<std::size_t>(b) * O + o) * plane];
            for (int c = 0; c < C; ++c) {
              const T* ip = &xvv[(static_cast<std::size_t>(b) * C + c) * plane];
              T* gkp = &gk[(static_cast<std::size_t>(o) * C + c) * kh * kw];
              for (int dy = 0; dy < kh; ++dy)
                for (int dx = 0; dx < kw; ++dx) {
                  const int sy = dy - ph, sx = dx - pw;
                  const int y0 = std::max(0, -sy), y1 = std::min(H, H - sy);
                  const int x0 = std::max(0, -sx), x1 = std::min(W, W - sx);
                  T acc = T(0);
                  for (int y = y0; y < y1; ++y) {
                    const T* src = ip + static_cast<std::size_t>(y + sy) * W + (x0 + sx);
                    const T* gg = gp + static_cast<std::size_t>(y) * W + x0;
                    for (int i = 0; i < x1 - x0; ++i) acc += gg[i] * src[i];
                  }
                  gkp[dy * kw + dx] += acc;
                }
            }
          }
      }
    });
  }

  // ---- channel/spatial broadcast helpers ----

  /// x [B,C,H,W] scaled per channel. s is [C] (shared) or [B,C] (per sample).
  Var<T> scale_channels(Var<T> x, Var<T> s) { return channel_affine(x, s, /*is_scale=*/true); }

  /// x [B,C,H,W] plus per-channel bias b of shape [C] or [B,C].
  Var<T> bias_channels(Var<T> x, Var<T> b) { return channel_affine(x, b, /*is_scale=*/false); }

  /// x [B,C,H,W] scaled by a per-pixel map s [B,1,H,W].
  Var<T> scale_spatial(Var<T> x, Var<T> s) {
    const int xid = check(x), sid = check(s);
    const Tensor<T>& xv = nodes_[xid].value;
    const Tensor<T>& sv = nodes_[sid].value;
    if (xv.rank() != 4 || sv.rank() != 4 || sv.dim(0) != xv.dim(0) || sv.dim(1) != 1 ||
        sv.dim(2) != xv.dim(2) || sv.dim(3) != xv.dim(3))
      throw ConfigError("scale_spatial: incompatible shapes " + shape_str(xv) + ", " +
                        shape_str(sv));
    const int B = xv.dim(0), C = xv.dim(1);
    const std::size_t plane = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
    Tensor<T> out(xv.shape);
    for (int b = 0; b < B; ++b) {
      const T* sp = &sv.v[static_cast<std::size_t>(b) * plane];
      for (int c = 0; c < C; ++c) {
        const T* xp = &xv.v[(static_cast<std::size_t>(b) * C + c) * plane];
        T* op = &out.v[(static_cast<std::size_t>(b) * C + c) * plane];
        for (std::size_t i = 0; i < plane; ++i) op[i] = xp[i] * sp[i];
      }
    }
    return record(std::move(out), {xid, sid}, [this, xid, sid, B, C, plane](int oid) {
      const std::vector<T>& g = nodes_[oid].grad;
      const auto& xvv = nodes_[xid].value.v;
      const auto& svv = nodes_[sid].value.v;
      if (wants(xid)) {
        std::vector<T>& gx = grad_of(xid);
        for (int b = 0; b < B; ++b) {
          const T* sp = &svv[static_cast<std::size_t>(b) * plane];
          for (int c = 0; c < C; ++c) {
            const std::size_t off = (static_cast<std::size_t>(b) * C + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) gx[off + i] += g[off + i] * sp[i];
          }
        }
      }
      if (wants(sid)) {
        std::vector<T>& gs = grad_of(sid);
        for (int b = 0; b < B; ++b) {
          T* gsp = &gs[static_cast<std::size_t>(b) * plane];
          for (int c = 0; c < C; ++c) {
            const std::size_t off = (static_cast<std::size_t>(b) * C + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) gsp[i] += g[off + i] * xvv[off + i];
          }
        }
      }
    });
  }

  // ---- normalization ----

  /// Per-(sample, channel) standardization over the spatial plane.
  Var<T> instance_norm(Var<T> x, T eps = T(1e-5)) {
    const int xid = check(x);
    const Tensor<T>& xv = nodes_[xid].value;
    if (xv.rank() != 4) throw ConfigError("instance_norm: need [B,C,H,W], got " + shape_str(xv));
    const int B = xv.dim(0), C = xv.dim(1);
    const std::size_t plane = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
    Tensor<T> out(xv.shape);
    std::vector<T> inv_std(static_cast<std::size_t>(B) * C);
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c) {
        const std::size_t off = (static_cast<std::size_t>(b) * C + c) * plane;
        T mu = T(0);
        for (std::size_t i = 0; i < plane; ++i) mu += xv.v[off + i];
        mu /= static_cast<T>(plane);
        T var = T(0);
        for (std::size_t i = 0; i < plane; ++i) {
          const T d = xv.v[off + i] - mu;
          var += d * d;
        }
        var /= static_cast<T>(plane);
        const T inv = T(1) / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(b) * C + c] = inv;
        for (std::size_t i = 0; i < plane; ++i) out.v[off + i] = (xv.v[off + i] - mu) * inv;
      }
    return record(std::move(out), {xid},
                  [this, xid, B, C, plane, inv_std = std::move(inv_std)](int oid) {
      const std::vector<T>& g = nodes_[oid].grad;
      const auto& yv = nodes_[oid].value.v;  // normalized values
      std::vector<T>& gx = grad_of(xid);
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
          const std::size_t off = (static_cast<std::size_t>(b) * C + c) * plane;
          const T inv = inv_std[static_cast<std::size_t>(b) * C + c];
          T gsum = T(0), gysum = T(0);
          for (std::size_t i = 0; i < plane; ++i) {
            gsum += g[off + i];
            gysum += g[off + i] * yv[off + i];
          }
          const T n = static_cast<T>(plane);
          for (std::size_t i = 0; i < plane; ++i)
            gx[off + i] += inv * (g[off + i] - gsum / n - yv[off + i] * gysum / n);
        }
    });
  }

  // ---- resampling ----

  /// 2x2 average pool; spatial dims must be even. [B,C,H,W] -> [B,C,H/2,W/2]
  Var<T> avgpool2(Var<T> x) {
    const int xid = check(x);
    const Tensor<T>& xv = nodes_[xid].value;
    if (xv.rank() != 4) throw ConfigError("avgpool2: need [B,C,H,W], got " + shape_str(xv));
    const int H = xv.dim(2), W = xv.dim(3);
    if (H % 2 || W % 2)
      throw ConfigError("avgpool2: spatial dims must be even, got " + shape_str(xv));
    const int BC = xv.dim(0) * xv.dim(1), Ho = H / 2, Wo = W / 2;
    Tensor<T> out({xv.dim(0), xv.dim(1), Ho, Wo});
    for (int p = 0; p < BC; ++p) {
      const T* ip = &xv.v[static_cast<std::size_t>(p) * H * W];
      T* op = &out.v[static_cast<std::size_t>(p) * Ho * Wo];
      for (int y = 0; y < Ho; ++y)
        for (int x2 = 0; x2 < Wo; ++x2) {
          const T* r0 = ip + static_cast<std::size_t>(2 * y) * W + 2 * x2;
          const T* r1 = r0 + W;
          op[static_cast<std::size_t>(y) * Wo + x2] =
              T(0.25) * (r0[0] + r0[1] + r1[0] + r1[1]);
        }
    }
    return record(std::move(out), {xid}, [this, xid, BC, H, W, Ho, Wo](int oid) {
      const std::vector<T>& g = nodes_[oid].grad;
      std::vector<T>& gx = grad_of(xid);
      for (int p = 0; p < BC; ++p) {
        T* gip = &gx[static_cast<std::size_t>(p) * H * W];
        const T* gp = &g[static_cast<std::size_t>(p) * Ho * Wo];
        for (int y = 0; y < Ho; ++y)
          for (int x2 = 0; x2 < Wo; ++x2) {
            const T q = T(0.25) * gp[static_cast<std::size_t>(y) * Wo + x2];
            T* r0 = gip + static_cast<std::size_t>(2 * y) * W + 2 * x2;
            T* r1 = r0 + W;
            r0[0] += q;
            r0[1] += q;
            r1[0] += q;
            r1[1] += q;
          }
      }
    });
  }

  /// 2x nearest-neighbor upsample. [B,C,H,W] -> [B,C,2H,2W]
  Var<T> upsample_nearest2(Var<T> x) {
    const int xid = check(x);
    const Tensor<T>& xv = nodes_[xid].value;
    if (xv.rank() != 4)
      throw ConfigError("upsample_nearest2: need [B,C,H,W], got " + shape_str(xv));
    const int BC = xv.dim(0) * xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    Tensor<T> out({xv.dim(0), xv.dim(1), 2 * H, 2 * W});
    for (int p = 0; p < BC; ++p) {
      const T* ip = &xv.v[static_cast<std::size_t>(p) * H * W];
      T* op = &out.v[static_cast<std::size_t>(p) * 4 * H * W];
      for (int y = 0; y < 2 * H; ++y)
        for (int x2 = 0; x2 < 2 * W; ++x2)
          op[static_cast<std::size_t>(y) * 2 * W + x2] =
              ip[static_cast<std::size_t>(y / 2) * W + x2 / 2];
    }
    return record(std::move(out), {xid}, [this, xid, BC, H, W](int oid) {
      const std::vector<T>& g = nodes_[oid].grad;
      std::vector<T>& gx = grad_of(xid);
      for (int p = 0; p < BC; ++p) {
        T* gip = &gx[static_cast<std::size_t>(p) * H * W];
        const T* gp = &g[static_cast<std::size_t>(p) * 4 * H * W];
        for (int y = 0; y < 2 * H; ++y)
          for (int x2 = 0; x2 < 2 * W; ++x2)
            gip[static_cast<std::size_t>(y / 2) * W + x2 / 2] +=
                gp[static_cast<std::size_t>(y) * 2 * W + x2];
      }
    });
  }

  /// 2x bilinear upsample (half-pixel centers). [B,C,H,W] -> [B,C,2H,2W]
  Var<T> upsample_bilinear2(Var<T> x) {
    const int xid = check(x);
    const Tensor<T>& xv = nodes_[xid].value;
    if (xv.rank() != 4)
      throw ConfigError("upsample_bilinear2: need [B,C,H,W], got " + shape_str(xv));
    const int BC = xv.dim(0) * xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    // output sample 2i sits at source i - 0.25, sample 2i+1 at i + 0.25
    auto taps = [](int oi, int n, int& lo, int& hi, T& wlo) {
      const int i = oi / 2;
      if (oi % 2 == 0) {
        lo = std::max(0, i - 1);
        hi = i;
        wlo = (i == 0) ? T(0) : T(0.25);
      } else {
        lo = i;
        hi = std::min(n - 1, i + 1);
        wlo = (i == n - 1) ? T(1) : T(0.75);
      }
    };
    Tensor<T> out({xv.dim(0), xv.dim(1), 2 * H, 2 * W});
    for (int p = 0; p < BC; ++p) {
      const T* ip = &xv.v[static_cast<std::size_t>(p) * H * W];
      T* op = &out.v[static_cast<std::size_t>(p) * 4 * H * W];
      for (int y = 0; y < 2 * H; ++y) {
        int ylo, yhi;
        T wy;
        taps(y, H, ylo, yhi, wy);
        for (int x2 = 0; x2 < 2 * W; ++x2) {
          int xlo, xhi;
          T wx;
          taps(x2, W, xlo, xhi, wx);
          const T v00 = ip[static_cast<std::size_t>(ylo) * W + xlo];
          const T v01 = ip[static_cast<std::size_t>(ylo) * W + xhi];
          const T v10 = ip[static_cast<std::size_t>(yhi) * W + xlo];
          const T v11 = ip[static_cast<std::size_t>(yhi) * W + xhi];
          op[static_cast<std::size_t>(y) * 2 * W + x2] =
              wy * (wx * v00 + (T(1) - wx) * v01) + (T(1) - wy) * (wx * v10 + (T(1) - wx) * v11);
        }
      }
    }
    return record(std::move(out), {xid}, [this, xid, BC, H, W, taps](int oid) {
      const std::vector<T>& g = nodes_[oid].grad;
      std::vector<T>& gx = grad_of(xid);
      for (int p = 0; p < BC; ++p) {
        T* gip = &gx[static_cast<std::size_t>(p) * H * W];
        const T* gp = &g[static_cast<std::size_t>(p) * 4 * H * W];
        for (int y = 0; y < 2 * H; ++y) {
          int ylo, yhi;
          T wy;
          taps(y, H, ylo, yhi, wy);
          for (int x2 = 0; x2 < 2 * W; ++x2) {
            int xlo, xhi;
            T wx;
            taps(x2, W, xlo, xhi, wx);
            const T gg = gp[static_cast<std::size_t>(y) * 2 * W + x2];
            gip[static_cast<std::size_t>(ylo) * W + xlo] += gg * wy * wx;
            gip[static_cast<std::size_t>(ylo) * W + xhi] += gg * wy * (T(1) - wx);
            gip[static_cast<std::size_t>(yhi) * W + xlo] += gg * (T(1) - wy) * wx;
            gip[static_cast<std::size_t>(yhi) * W + xhi] += gg * (T(1) - wy) * (T(1) - wx);
          }
        }
      }
    });
  }

  /// Concatenate along the channel axis.
  Var<T> concat_channels(Var<T> a, Var<T> b) {
    const int aid = check(a), bid = check(b);
    const Tensor<T>& av = nodes_[aid].value;
    const Tensor<T>& bv = nodes_[bid].value;
    if (av.rank() != 4 || bv.rank() != 4 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) ||
        av.dim(3) != bv.dim(3))
      throw ConfigError("concat_channels: incompatible shapes " + shape_str(av) + ", " +
                        shape_str(bv));
    const int B = av.dim(0), Ca = av.dim(1), Cb = bv.dim(1);
    const std::size_t plane = static_cast<std::size_t>(av.dim(2)) * av.dim(3);
    Tensor<T> out({B, Ca + Cb, av.dim(2), av.dim(3)});
    for (int bb = 0; bb < B; ++bb) {
      std::copy(av.v.begin() + static_cast<std::ptrdiff_t>(bb) * Ca * plane,
                av.v.begin() + static_cast<std::ptrdiff_t>(bb + 1) * Ca * plane,
                out.v.begin() + static_cast<std::ptrdiff_t>(bb) * (Ca + Cb) * plane);
      std::copy(bv.v.begin() + static_cast<std::ptrdiff_t>(bb) * Cb * plane,
                bv.v.begin() + static_cast<std::ptrdiff_t>(bb + 1) * Cb * plane,
                out.v.begin() + static_cast<std::ptrdiff_t>(bb) * (Ca + Cb) * plane + Ca * plane);
    }
    return record(std::move(out), {aid, bid}, [this, aid, bid, B, Ca, Cb, plane](int oid) {
      const std::vector<T>& g = nodes_[oid].grad;
      if (wants(aid)) {
        std::vector<T>& ga = grad_of(aid);
        for (int bb = 0; bb < B; ++bb)
          for (std::size_t i = 0; i < Ca * plane; ++i)
            ga[static_cast<std::size_t>(bb) * Ca * plane + i] +=
                g[static_cast<std::size_t>(bb) * (Ca + Cb) * plane + i];
      }
      if (wants(bid)) {
        std::vector<T>& gb = grad_of(bid);
        for (int bb = 0; bb < B; ++bb)
          for (std::size_t i = 0; i < Cb * plane; ++i)
            gb[static_cast<std::size_t>(bb) * Cb * plane + i] +=
                g[static_cast<std::size_t>(bb) * (Ca + Cb) * plane + Ca * plane + i];
      }
    });
  }

  // ---- pooling reductions for attention ----

  /// [B,C,H,W] -> [B,C] spatial mean.
  Var<T> global_avg_pool(Var<T> x) {
    const int xid = check(x);
    const Tensor<T>& xv = nodes_[xid].value;
    if (xv.rank() != 4)
      throw ConfigError("global_avg_pool: need [B,C,H,W], got " + shape_str(xv));
    const int B = xv.dim(0), C = xv.dim(1);
    const std::size_t plane = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
    Tensor<T> out({B, C});
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c) {
        const std::size_t off = (static_cast<std::size_t>(b) * C + c) * plane;
        T acc = T(0);
        for (std::size_t i = 0; i < plane; ++i) acc += xv.v[off + i];
        out.v[static_cast<std::size_t>(b) * C + c] = acc / static_cast<T>(plane);
      }
    return record(std::move(out), {xid}, [this, xid, B, C, plane](int oid) {
      const std::vector<T>& g = nodes_[oid].grad;
      std::vector<T>& gx = grad_of(xid);
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
          const T q = g[static_cast<std::size_t>(b) * C + c] / static_cast<T>(plane);
          const std::size_t off = (static_cast<std::size_t>(b) * C + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) gx[off + i] += q;
        }
    });
  }

  /// [B,C,H,W] -> [B,2,H,W]: channel 0 = mean over C, channel 1 = max over C.
  Var<T> channel_pool_meanmax(Var<T> x) {
    const int xid = check(x);
    const Tensor<T>& xv = nodes_[xid].value;
    if (xv.rank() != 4)
      throw ConfigError("channel_pool_meanmax: need [B,C,H,W], got " + shape_str(xv));
    const int B = xv.dim(0), C = xv.dim(1);
    const std::size_t plane = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
    Tensor<T> out({B, 2, xv.dim(2), xv.dim(3)});
    std::vector<int> argmax(static_cast<std::size_t>(B) * plane);
    for (int b = 0; b < B; ++b)
      for (std::size_t i = 0; i < plane; ++i) {
        T acc = T(0), best = xv.v[(static_cast<std::size_t>(b) * C) * plane + i];
        int besti = 0;
        for (int c = 0; c < C; ++c) {
          const T val = xv.v[(static_cast<std::size_t>(b) * C + c) * plane + i];
          acc += val;
          if (val > best) {
            best = val;
            besti = c;
          }
        }
        out.v[(static_cast<std::size_t>(b) * 2) * plane + i] = acc / static_cast<T>(C);
        out.v[(static_cast<std::size_t>(b) * 2 + 1) * plane + i] = best;
        argmax[static_cast<std::size_t>(b) * plane + i] = besti;
      }
    return record(std::move(out), {xid},
                  [this, xid, B, C, plane, argmax = std::move(argmax)](int oid) {
      const std::vector<T>& g = nodes_[oid].grad;
      std::vector<T>& gx = grad_of(xid);
      for (int b = 0; b < B; ++b)
        for (std::size_t i = 0; i < plane; ++i) {
          const T gm = g[(static_cast<std::size_t>(b) * 2) * plane + i] / static_cast<T>(C);
          for (int c = 0; c < C; ++c) gx[(static_cast<std::size_t>(b) * C + c) * plane + i] += gm;
          const int bc = argmax[static_cast<std::size_t>(b) * plane + i];
          gx[(static_cast<std::size_t>(b) * C + bc) * plane + i] +=
              g[(static_cast<std::size_t>(b) * 2 + 1) * plane + i];
        }
    });
  }

  // ---- spectral mixing ----

  /// FNO-style spectral mixing. x [B,C,H,W]; w is real-paired complex weights
  /// [O,C,mz,mx,2] indexed by (|kz|, kx) and applied conjugated on negative
  /// kz rows, which keeps the output spectrum Hermitian (so the inverse
  /// transform is real). Requires mz <= H/2+1, mx <= W/2+1.
  Var<T> spectral_multiply(Var<T> x, Var<T> w) {
    const int xid = check(x), wid = check(w);
    const Tensor<T>& xv = nodes_[xid].value;
    const Tensor<T>& wv = nodes_[wid].value;
    if (xv.rank() != 4 || wv.rank() != 5 || wv.dim(4) != 2 || wv.dim(1) != xv.dim(1))
      throw ConfigError("spectral_multiply: incompatible shapes " + shape_str(xv) + ", " +
                        shape_str(wv));
    const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int O = wv.dim(0), mz = wv.dim(2), mx = wv.dim(3);
    if (mz > H / 2 + 1 || mx > W / 2 + 1)
      throw ConfigError("spectral_multiply: mode counts exceed grid Nyquist");

    // rows carrying |kz| < mz, low block then the mirrored high block
    std::vector<int> rows;
    for (int r = 0; r < mz; ++r) rows.push_back(r);
    for (int r = H - mz + 1; r < H; ++r)
      if (r > mz - 1) rows.push_back(r);

    const std::size_t plane = static_cast<std::size_t>(H) * W;
    using Cx = std::complex<T>;

    std::vector<Cx> X(static_cast<std::size_t>(B) * C * plane);
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        fft2_forward(&xv.v[(static_cast<std::size_t>(b) * C + c) * plane],
                     &X[(static_cast<std::size_t>(b) * C + c) * plane], H, W);

    std::vector<Cx> Y(static_cast<std::size_t>(B) * O * plane, Cx(0, 0));
    auto weight = [&](int o, int c, int kz_abs, int kx) {
      const std::size_t off =
          (((static_cast<std::size_t>(o) * C + c) * mz + kz_abs) * mx + kx) * 2;
      return Cx(wv.v[off], wv.v[off + 1]);
    };
    for (int b = 0; b < B; ++b)
      for (int o = 0; o < O; ++o) {
        Cx* Yp = &Y[(static_cast<std::size_t>(b) * O + o) * plane];
        for (int r : rows) {
          const bool neg = r > H / 2;
          const int kz_abs = neg ? H - r : r;
          for (int kx = 0; kx < mx; ++kx) {
            Cx acc(0, 0);
            for (int c = 0; c < C; ++c) {
              Cx wgt = weight(o, c, kz_abs, kx);
              if (neg) wgt = std::conj(wgt);
              acc += wgt * X[(static_cast<std::size_t>(b) * C + c) * plane +
                             static_cast<std::size_t>(r) * W + kx];
            }
            Yp[static_cast<std::size_t>(r) * W + kx] = acc;
            if (kx != 0 && 2 * kx != W)
              Yp[static_cast<std::size_t>((H - r) % H) * W + (W - kx)] = std::conj(acc);
          }
        }
      }

    Tensor<T> out({B, O, H, W});
    for (int b = 0; b < B; ++b)
      for (int o = 0; o < O; ++o)
        fft2_inverse_real(&Y[(static_cast<std::size_t>(b) * O + o) * plane],
                          &out.v[(static_cast<std::size_t>(b) * O + o) * plane], H, W,
                          /*normalize=*/true);

    return record(std::move(out), {xid, wid},
                  [this, xid, wid, B, C, H, W, O, mz, mx, rows, X = std::move(X)](int oid) {
      const std::size_t plane = static_cast<std::size_t>(H) * W;
      const std::vector<T>& g = nodes_[oid].grad;
      const Tensor<T>& wv = nodes_[wid].value;
      const T invN = T(1) / static_cast<T>(plane);
      auto weight = [&](int o, int c, int kz_abs, int kx) {
        const std::size_t off =
            (((static_cast<std::size_t>(o) * C + c) * mz + kz_abs) * mx + kx) * 2;
        return Cx(wv.v[off], wv.v[off + 1]);
      };
      const bool want_x = wants(xid), want_w = wants(wid);
      std::vector<Cx> GX;
      if (want_x) GX.assign(static_cast<std::size_t>(B) * C * plane, Cx(0, 0));
      std::vector<T>* gw = want_w ? &grad_of(wid) : nullptr;
      std::vector<Cx> GY(plane);
      for (int b = 0; b < B; ++b)
        for (int o = 0; o < O; ++o) {
          fft2_forward(&g[(static_cast<std::size_t>(b) * O + o) * plane], GY.data(), H, W);
          for (Cx& z : GY) z *= invN;
          for (int r : rows) {
            const bool neg = r > H / 2;
            const int kz_abs = neg ? H - r : r;
            for (int kx = 0; kx < mx; ++kx) {
              // fold the Hermitian mirror cell into the direct one
              Cx geff = GY[static_cast<std::size_t>(r) * W + kx];
              if (kx != 0 && 2 * kx != W)
                geff += std::conj(GY[static_cast<std::size_t>((H - r) % H) * W + (W - kx)]);
              for (int c = 0; c < C; ++c) {
                const Cx xval = X[(static_cast<std::size_t>(b) * C + c) * plane +
                                  static_cast<std::size_t>(r) * W + kx];
                if (want_w) {
                  const Cx gwv = neg ? xval * std::conj(geff) : std::conj(xval) * geff;
                  const std::size_t off =
                      (((static_cast<std::size_t>(o) * C + c) * mz + kz_abs) * mx + kx) * 2;
                  (*gw)[off] += gwv.real();
                  (*gw)[off + 1] += gwv.imag();
                }
                if (want_x) {
                  Cx wgt = weight(o, c, kz_abs, kx);
                  if (neg) wgt = std::conj(wgt);
                  GX[(static_cast<std::size_t>(b) * C + c) * plane +
                     static_cast<std::size_t>(r) * W + kx] += std::conj(wgt) * geff;
                }
              }
            }
          }
        }
      if (want_x) {
        std::vector<T>& gx = grad_of(xid);
        std::vector<T> buf(plane);
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c) {
            fft2_inverse_real(&GX[(static_cast<std::size_t>(b) * C + c) * plane], buf.data(), H,
                              W, /*normalize=*/false);
            const std::size_t off = (static_cast<std::size_t>(b) * C + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) gx[off + i] += buf[i];
          }
      }
    });
  }

private:
  using Cx = std::complex<T>;

  struct Node {
    Tensor<T> value;
    std::vector<T> grad;  // allocated on first write during backward
    std::function<void()> backward;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  bool recording_;
  bool backward_done_ = false;
  bool debug_checks_ = false;

  int check(Var<T> x) const {
    if (x.tape != this || x.id < 0 || x.id >= static_cast<int>(nodes_.size()))
      throw ConfigError("Var does not belong to this tape");
    return x.id;
  }

  bool wants(int id) const { return nodes_[id].requires_grad; }

  std::vector<T>& grad_of(int id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.numel(), T(0));
    return n.grad;
  }

  Var<T> push(Tensor<T> value, bool requires_grad, std::function<void()> bw) {
    if (debug_checks_)
      for (T x : value.v)
        if (!std::isfinite(x)) throw NumericError("tape: non-finite value produced");
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
  }

  /// Register an op node: output requires grad iff any parent does, and the
  /// backward closure runs only in that case.
  template <typename F>
  Var<T> record(Tensor<T> value, std::initializer_list<int> parents, F&& bw) {
    bool req = false;
    if (recording_)
      for (int p : parents) req = req || nodes_[p].requires_grad;
    if (!req) return push(std::move(value), false, nullptr);
    Var<T> out = push(std::move(value), true, nullptr);
    const int oid = out.id;
    nodes_[oid].backward = [f = std::forward<F>(bw), oid] { f(oid); };
    return out;
  }

  void require_same_shape(const char* op, Var<T> a, Var<T> b) {
    const Tensor<T>& av = nodes_[check(a)].value;
    const Tensor<T>& bv = nodes_[check(b)].value;
    if (av.shape != bv.shape)
      throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(av) + " vs " +
                        shape_str(bv));
  }

  template <typename FwdF>
  Var<T> binary_same(const char* op, Var<T> a, Var<T> b, FwdF&& f, T da, T db) {
    require_same_shape(op, a, b);
    const int aid = check(a), bid = check(b);
    Tensor<T> out(nodes_[aid].value.shape);
    const auto& av = nodes_[aid].value.v;
    const auto& bv = nodes_[bid].value.v;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = f(av[i], bv[i]);
    return record(std::move(out), {aid, bid}, [this, aid, bid, da, db](int oid) {
      const std::vector<T>& g = nodes_[oid].grad;
      if (wants(aid)) {
        std::vector<T>& ga = grad_of(aid);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += da * g[i];
      }
      if (wants(bid)) {
        std::vector<T>& gb = grad_of(bid);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += db * g[i];
      }
    });
  }

  /// Elementwise op with derivative expressed from (input, output).
  template <typename FwdF, typename DerF>
  Var<T> unary(const char*, Var<T> a, FwdF&& f, DerF&& d) {
    const int aid = check(a);
    Tensor<T> out(nodes_[aid].value.shape);
    const auto& av = nodes_[aid].value.v;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = f(av[i]);
    return record(std::move(out), {aid}, [this, aid, d](int oid) {
      const std::vector<T>& g = nodes_[oid].grad;
      const auto& av = nodes_[aid].value.v;
      const auto& ov = nodes_[oid].value.v;
      std::vector<T>& ga = grad_of(aid);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += d(av[i], ov[i]) * g[i];
    });
  }

  /// Shared body of scale_channels / bias_channels; s is [C] or [B,C].
  Var<T> channel_affine(Var<T> x, Var<T> s, bool is_scale) {
    const char* op = is_scale ? "scale_channels" : "bias_channels";
    const int xid = check(x), sid = check(s);
    const Tensor<T>& xv = nodes_[xid].value;
    const Tensor<T>& sv = nodes_[sid].value;
    if (xv.rank() != 4) throw ConfigError(std::string(op) + ": need [B,C,H,W] input");
    const int B = xv.dim(0), C = xv.dim(1);
    const bool per_sample = sv.rank() == 2;
    if (per_sample ? (sv.dim(0) != B || sv.dim(1) != C) : (sv.rank() != 1 || sv.dim(0) != C))
      throw ConfigError(std::string(op) + ": incompatible shapes " + shape_str(xv) + ", " +
                        shape_str(sv));
    const std::size_t plane = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
    Tensor<T> out(xv.shape);
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c) {
        const T sc = sv.v[per_sample ? static_cast<std::size_t>(b) * C + c
                                     : static_cast<std::size_t>(c)];
        const std::size_t off = (static_cast<std::size_t>(b) * C + c) * plane;
        if (is_scale)
          for (std::size_t i = 0; i < plane; ++i) out.v[off + i] = xv.v[off + i] * sc;
        else
          for (std::size_t i = 0; i < plane; ++i) out.v[off + i] = xv.v[off + i] + sc;
      }
    return record(std::move(out), {xid, sid},
                  [this, xid, sid, B, C, plane, per_sample, is_scale](int oid) {
      const std::vector<T>& g = nodes_[oid].grad;
      const auto& xvv = nodes_[xid].value.v;
      const auto& svv = nodes_[sid].value.v;
      if (wants(xid)) {
        std::vector<T>& gx = grad_of(xid);
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c) {
            const std::size_t off = (static_cast<std::size_t>(b) * C + c) * plane;
            if (is_scale) {
              const T sc = svv[per_sample ? static_cast<std::size_t>(b) * C + c
                                          : static_cast<std::size_t>(c)];
              for (std::size_t i = 0; i < plane; ++i) gx[off + i] += g[off + i] * sc;
            } else {
              for (std::size_t i = 0; i < plane; ++i) gx[off + i] += g[off + i];
            }
          }
      }
      if (wants(sid)) {
        std::vector<T>& gs = grad_of(sid);
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c) {
            const std::size_t off = (static_cast<std::size_t>(b) * C + c) * plane;
            T acc = T(0);
            if (is_scale)
              for (std::size_t i = 0; i < plane; ++i) acc += g[off + i] * xvv[off + i];
            else
              for (std::size_t i = 0; i < plane; ++i) acc += g[off + i];
            gs[per_sample ? static_cast<std::size_t>(b) * C + c : static_cast<std::size_t>(c)] +=
                acc;
          }
      }
    });
  }

  // 2D DFT helpers over row-major H x W planes; rows first, then columns.
  static void fft2_forward(const T* src, Cx* dst, int H, int W) {
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        dst[static_cast<std::size_t>(y) * W + x] = Cx(src[static_cast<std::size_t>(y) * W + x], 0);
    for (int y = 0; y < H; ++y) fft::forward(dst + static_cast<std::size_t>(y) * W, W);
    std::vector<Cx> col(H);
    for (int x = 0; x < W; ++x) {
      for (int y = 0; y < H; ++y) col[y] = dst[static_cast<std::size_t>(y) * W + x];
      fft::forward(col.data(), H);
      for (int y = 0; y < H; ++y) dst[static_cast<std::size_t>(y) * W + x] = col[y];
    }
  }

  /// Real part of the inverse 2D DFT; normalize divides by H*W.
  static void fft2_inverse_real(const Cx* src, T* dst, int H, int W, bool normalize) {
    std::vector<Cx> work(src, src + static_cast<std::size_t>(H) * W);
    for (int y = 0; y < H; ++y) fft::inverse_unnormalized(work.data() + static_cast<std::size_t>(y) * W, W);
    std::vector<Cx> col(H);
    const T scale = normalize ? T(1) / static_cast<T>(static_cast<std::size_t>(H) * W) : T(1);
    for (int x = 0; x < W; ++x) {
      for (int y = 0; y < H; ++y) col[y] = work[static_cast<std::size_t>(y) * W + x];
      fft::inverse_unnormalized(col.data(), H);
      for (int y = 0; y < H; ++y)
        dst[static_cast<std::size_t>(y) * W + x] = col[y].real() * scale;
    }
  }
};

// Var arithmetic sugar for the common elementwise cases.
template <typename T>
Var<T> operator+(Var<T> a, Var<T> b) { return a.tape->add(a, b); }
template <typename T>
Var<T> operator-(Var<T> a, Var<T> b) { return a.tape->sub(a, b); }
template <typename T>
Var<T> operator*(Var<T> a, Var<T> b) { return a.tape->mul(a, b); }
template <typename T>
Var<T> operator*(T s, Var<T> a) { return a.tape->scalar_mul(a, s); }

}  // namespace velbuild::ad
