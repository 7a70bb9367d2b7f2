#pragma once

#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

namespace chirptrack {

// Zeroth-order modified Bessel function of the first kind (series expansion).
inline double bessel_i0(double x) {
  double sum = 1.0, term = 1.0;
  const double half_x = x / 2.0;
  for (int k = 1; k < 64; ++k) {
    term *= (half_x / k) * (half_x / k);
    sum += term;
    if (term < 1e-18 * sum) break;
  }
  return sum;
}

// Kaiser-windowed-sinc lowpass. cutoff is normalized to the sample rate
// (passband edge as a fraction of fs, 0 < cutoff < 0.5). Odd tap count gives
// a symmetric zero-phase kernel when applied centered. beta ~ 12 puts the
// stopband around -120 dB with a very flat passband, which keeps the filter
// from imprinting phase structure on swept signals.
inline std::vector<double> lowpass_fir(std::size_t taps, double cutoff, double beta = 12.0) {
  if (taps % 2 == 0 || taps < 3) throw std::invalid_argument("lowpass_fir: taps must be odd and >= 3");
  if (cutoff <= 0.0 || cutoff >= 0.5) throw std::invalid_argument("lowpass_fir: cutoff out of (0, 0.5)");
  const double pi = 3.14159265358979323846;
  const std::size_t half = taps / 2;
  std::vector<double> h(taps);
  const double i0b = bessel_i0(beta);
  double sum = 0.0;
  for (std::size_t i = 0; i < taps; ++i) {
    const double m = static_cast<double>(i) - static_cast<double>(half);
    const double sinc = (m == 0.0) ? 2.0 * cutoff : std::sin(2.0 * pi * cutoff * m) / (pi * m);
    const double r = m / static_cast<double>(half);
    const double w = bessel_i0(beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0b;
    h[i] = sinc * w;
    sum += h[i];
  }
  for (auto& v : h) v /= sum;  // unity DC gain
  return h;
}

// Complex frequency response at normalized frequency f (cycles/sample),
// evaluated for the centered (zero-phase) alignment.
inline std::complex<double> fir_response(const std::vector<double>& h, double f) {
  const double pi = 3.14159265358979323846;
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(h.size() / 2);
  std::complex<double> acc(0.0, 0.0);
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double m = static_cast<double>(static_cast<std::ptrdiff_t>(i) - half);
    acc += h[i] * std::exp(std::complex<double>(0.0, -2.0 * pi * f * m));
  }
  return acc;
}

}  // namespace chirptrack
