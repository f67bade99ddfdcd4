#pragma once

#include <complex>
#include <numbers>
#include <vector>

#include "velbuild/error.hpp"

namespace velbuild::fft {

// In-place complex FFT: iterative radix-2 for power-of-two lengths, Bluestein
// chirp-z otherwise. Templated on the scalar so the autodiff f64 verification
// mode runs the same code path as f32 compute.

namespace detail {

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

template <typename T>
void fft_radix2(std::complex<T>* a, std::size_t n, bool inverse) {
  // bit reversal permutation
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u(a[i + k]);
        std::complex<double> v = std::complex<double>(a[i + k + len / 2]) * w;
        a[i + k] = std::complex<T>(static_cast<T>((u + v).real()), static_cast<T>((u + v).imag()));
        a[i + k + len / 2] =
            std::complex<T>(static_cast<T>((u - v).real()), static_cast<T>((u - v).imag()));
        w *= wl;
      }
    }
  }
}

template <typename T>
void fft_bluestein(std::complex<T>* a, std::size_t n, bool inverse) {
  // chirp-z: x_k * w^(k^2/2) convolved with w^(-k^2/2), via pow2 FFTs
  std::size_t m = 1;
  while (m < 2 * n + 1) m <<= 1;
  const double sign = inverse ? 1.0 : -1.0;
  std::vector<std::complex<double>> chirp(n);
  for (std::size_t k = 0; k < n; ++k) {
    // k^2 mod 2n avoids precision loss for large k
    const std::size_t k2 = (k * k) % (2 * n);
    const double ang = sign * std::numbers::pi * static_cast<double>(k2) / static_cast<double>(n);
    chirp[k] = {std::cos(ang), std::sin(ang)};
  }
  std::vector<std::complex<double>> fa(m), fb(m);
  for (std::size_t k = 0; k < n; ++k) fa[k] = std::complex<double>(a[k]) * chirp[k];
  fb[0] = std::conj(chirp[0]);
  for (std::size_t k = 1; k < n; ++k) fb[k] = fb[m - k] = std::conj(chirp[k]);
  fft_radix2(fa.data(), m, false);
  fft_radix2(fb.data(), m, false);
  for (std::size_t k = 0; k < m; ++k) fa[k] *= fb[k];
  fft_radix2(fa.data(), m, true);
  const double scale = 1.0 / static_cast<double>(m);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> v = fa[k] * chirp[k] * scale;
    a[k] = std::complex<T>(static_cast<T>(v.real()), static_cast<T>(v.imag()));
  }
}

}  // namespace detail

/// In-place forward DFT, unnormalized: X_k = sum_j x_j e^{-2*pi*i*jk/n}.
template <typename T>
void forward(std::complex<T>* a, std::size_t n) {
  if (n <= 1) return;
  if (detail::is_pow2(n))
    detail::fft_radix2(a, n, false);
  else
    detail::fft_bluestein(a, n, false);
}

/// In-place inverse DFT including the 1/n factor.
template <typename T>
void inverse(std::complex<T>* a, std::size_t n) {
  if (n <= 1) return;
  if (detail::is_pow2(n))
    detail::fft_radix2(a, n, true);
  else
    detail::fft_bluestein(a, n, true);
  const T scale = static_cast<T>(1.0 / static_cast<double>(n));
  for (std::size_t k = 0; k < n; ++k) a[k] *= scale;
}

/// Unnormalized inverse (plus-sign exponent, no 1/n); the adjoint of forward.
template <typename T>
void inverse_unnormalized(std::complex<T>* a, std::size_t n) {
  if (n <= 1) return;
  if (detail::is_pow2(n))
    detail::fft_radix2(a, n, true);
  else {
    detail::fft_bluestein(a, n, true);
    // bluestein path applies no scaling; both paths are unnormalized already
  }
}

/// Forward DFT of a real sequence; returns the full complex spectrum.
template <typename T>
std::vector<std::complex<T>> forward_real(const T* x, std::size_t n) {
  std::vector<std::complex<T>> a(n);
  for (std::size_t i = 0; i < n; ++i) a[i] = {x[i], T(0)};
  forward(a.data(), n);
  return a;
}

}  // namespace velbuild::fft
