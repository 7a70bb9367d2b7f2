#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <vector>

namespace chirptrack {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kSpeedOfLight = 299792458.0;

// One linear chirp at complex baseband. All frequencies are offsets from the
// configured carrier; times are in seconds.
struct ChirpParams {
  double start_freq = 0.0;  // Hz
  double slope = 0.0;       // Hz/s
  double duration = 0.0;    // s
  double phase = 0.0;       // rad, [0, 2*pi)
  double start_time = 0.0;  // s after frame start
};

// Transmit weighting for one chirp: a one-hot antenna selection plus a PSK
// code phase folded into the chirp.
struct TxWeights {
  std::size_t antenna_index = 0;
  double code_phase = 0.0;  // rad
};

struct FrameConfig {
  std::vector<std::pair<ChirpParams, TxWeights>> chirps;
  double frame_interval = 0.0;  // s
  double frame_offset = 0.0;    // s
  std::size_t n_tx = 1;
  std::size_t n_rx = 1;

  void validate() const {
    if (chirps.empty()) throw std::invalid_argument("FrameConfig: no chirps");
    double prev_end = -1.0;
    double prev_start = -1.0;
    for (const auto& [c, w] : chirps) {
      if (c.duration <= 0.0) throw std::invalid_argument("FrameConfig: chirp duration must be > 0");
      if (c.start_time <= prev_start) throw std::invalid_argument("FrameConfig: chirp start times must be strictly increasing");
      if (c.start_time < prev_end) throw std::invalid_argument("FrameConfig: chirps overlap");
      if (c.start_time + c.duration > frame_interval)
        throw std::invalid_argument("FrameConfig: chirp extends past frame interval");
      if (w.antenna_index >= n_tx) throw std::invalid_argument("FrameConfig: antenna index out of range");
      prev_start = c.start_time;
      prev_end = c.start_time + c.duration;
    }
  }
};

// Uniform linear array. Spacing is in carrier wavelengths.
struct ArrayConfig {
  std::size_t n_elements = 1;
  double element_spacing = 0.5;
  std::function<double(double)> gain_pattern;  // angle (rad) -> linear power gain; empty = isotropic

  double gain(double angle) const { return gain_pattern ? gain_pattern(angle) : 1.0; }
};

// c(t) = exp(j2pi(f t + b t^2/2) + j phi) on [0, T), zero elsewhere.
inline std::complex<double> chirp_waveform(const ChirpParams& c, double t) {
  if (t < 0.0 || t >= c.duration) return {0.0, 0.0};
  const double ph = 2.0 * kPi * (c.start_freq * t + 0.5 * c.slope * t * t) + c.phase;
  return {std::cos(ph), std::sin(ph)};
}

// Instantaneous frequency inside the chirp support.
inline double chirp_instantaneous_freq(const ChirpParams& c, double t) {
  return c.start_freq + c.slope * t;
}

// Per-TX-antenna signal at time t within the frame (t measured from frame start).
inline std::vector<std::complex<double>> transmit_signal(const FrameConfig& frame, double t) {
  std::vector<std::complex<double>> out(frame.n_tx, {0.0, 0.0});
  for (const auto& [c, w] : frame.chirps) {
    const auto v = chirp_waveform(c, t - c.start_time);
    if (v != std::complex<double>(0.0, 0.0)) {
      const std::complex<double> code(std::cos(w.code_phase), std::sin(w.code_phase));
      out[w.antenna_index] += code * v;
    }
  }
  return out;
}

// Element m has phase 2*pi*m*spacing*sin(angle); element 0 is the reference.
inline std::vector<std::complex<double>> steering_vector(const ArrayConfig& array, double angle) {
  if (!(std::abs(angle) < kPi / 2.0)) throw std::domain_error("steering_vector: |angle| must be < pi/2");
  std::vector<std::complex<double>> a(array.n_elements);
  const double u = array.element_spacing * std::sin(angle);
  for (std::size_t m = 0; m < array.n_elements; ++m) {
    const double ph = 2.0 * kPi * static_cast<double>(m) * u;
    a[m] = {std::cos(ph), std::sin(ph)};
  }
  return a;
}

// Single-element steering phase, for one-hot transmit paths.
inline std::complex<double> steering_phase(const ArrayConfig& array, double angle, std::size_t element) {
  if (!(std::abs(angle) < kPi / 2.0)) throw std::domain_error("steering_phase: |angle| must be < pi/2");
  const double ph = 2.0 * kPi * static_cast<double>(element) * array.element_spacing * std::sin(angle);
  return {std::cos(ph), std::sin(ph)};
}

}  // namespace chirptrack
