#pragma once

#include <complex>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace chirptrack {

using cdouble = std::complex<double>;

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// In-place iterative radix-2 DIT transform. Size must be a power of two.
// sign = -1 gives the forward DFT, +1 the inverse (unscaled).
inline void fft_radix2(std::vector<cdouble>& x, int sign) {
  const std::size_t n = x.size();
  if (n == 0 || (n & (n - 1)) != 0)
    throw std::invalid_argument("fft_radix2: size must be a power of two");
  // bit reversal
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i], x[j]);
  }
  const double pi = 3.14159265358979323846;
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = sign * 2.0 * pi / static_cast<double>(len);
    const cdouble wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      cdouble w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const cdouble u = x[i + k];
        const cdouble v = x[i + k + len / 2] * w;
        x[i + k] = u + v;
        x[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

inline void fft(std::vector<cdouble>& x) { fft_radix2(x, -1); }

inline void ifft(std::vector<cdouble>& x) {
  fft_radix2(x, +1);
  const double s = 1.0 / static_cast<double>(x.size());
  for (auto& v : x) v *= s;
}

// Forward DFT of an arbitrary-length input zero-padded to n_fft (power of two).
inline std::vector<cdouble> fft_padded(const std::vector<cdouble>& in, std::size_t n_fft) {
  if (n_fft < in.size()) throw std::invalid_argument("fft_padded: n_fft < input size");
  std::vector<cdouble> x(in);
  x.resize(n_fft, cdouble(0.0, 0.0));
  fft(x);
  return x;
}

}  // namespace chirptrack
