#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "chirptrack/channel.hpp"
#include "chirptrack/fft.hpp"

namespace chirptrack {

// Complex samples indexed by (rx antenna, fast-time sample, chirp).
struct DataCube {
  std::vector<cdouble> data;  // [a][n][k] with k fastest
  std::size_t n_rx = 0;
  std::size_t n_sample = 0;
  std::size_t n_chirp = 0;
  std::vector<double> chirp_times;
  double sample_period = 0.0;

  cdouble& at(std::size_t a, std::size_t n, std::size_t k) { return data[(a * n_sample + n) * n_chirp + k]; }
  const cdouble& at(std::size_t a, std::size_t n, std::size_t k) const { return data[(a * n_sample + n) * n_chirp + k]; }
};

inline DataCube build_cube(const std::vector<SampleCapture>& per_chirp) {
  if (per_chirp.empty()) throw std::invalid_argument("build_cube: no captures");
  DataCube cube;
  cube.n_rx = per_chirp.front().n_rx();
  cube.n_sample = per_chirp.front().n_samples();
  cube.n_chirp = per_chirp.size();
  cube.sample_period = per_chirp.front().sample_period;
  cube.data.assign(cube.n_rx * cube.n_sample * cube.n_chirp, cdouble(0.0, 0.0));
  for (std::size_t k = 0; k < cube.n_chirp; ++k) {
    const auto& cap = per_chirp[k];
    if (cap.n_rx() != cube.n_rx || cap.n_samples() != cube.n_sample)
      throw std::invalid_argument("build_cube: mismatched capture dimensions");
    cube.chirp_times.push_back(cap.start_time);
    for (std::size_t a = 0; a < cube.n_rx; ++a)
      for (std::size_t n = 0; n < cube.n_sample; ++n) cube.at(a, n, k) = cap.samples[a][n];
  }
  return cube;
}

struct ProcessedCube {
  std::vector<cdouble> data;  // [b][n][d] with d fastest
  std::size_t n_beam = 0;
  std::size_t n_range = 0;
  std::size_t n_doppler = 0;
  double sample_period = 0.0;
  double chirp_interval = 0.0;

  const cdouble& at(std::size_t b, std::size_t n, std::size_t d) const { return data[(b * n_range + n) * n_doppler + d]; }
  cdouble& at(std::size_t b, std::size_t n, std::size_t d) { return data[(b * n_range + n) * n_doppler + d]; }
};

struct CubePeak {
  std::size_t beam = 0;
  std::size_t range = 0;
  std::size_t doppler = 0;
};

// Beam, range, and Doppler FFTs (zero-padded to powers of two) plus the
// power-maximizing bin triple. Tie-break is lexicographic (b, n, d).
inline std::pair<ProcessedCube, CubePeak> process_cube(const DataCube& cube, std::size_t beam_os, std::size_t range_os,
                                                       std::size_t doppler_os) {
  if (cube.n_chirp == 0) throw std::invalid_argument("process_cube: empty cube");
  ProcessedCube out;
  out.n_beam = next_pow2(std::max<std::size_t>(1, beam_os) * cube.n_rx);
  out.n_range = next_pow2(std::max<std::size_t>(1, range_os) * cube.n_sample);
  out.n_doppler = next_pow2(std::max<std::size_t>(1, doppler_os) * cube.n_chirp);
  out.sample_period = cube.sample_period;
  out.chirp_interval = (cube.n_chirp > 1)
                           ? (cube.chirp_times.back() - cube.chirp_times.front()) / static_cast<double>(cube.n_chirp - 1)
                           : 0.0;
  out.data.assign(out.n_beam * out.n_range * out.n_doppler, cdouble(0.0, 0.0));

  // antenna FFT, then range FFT, accumulated into [b][n][k]
  std::vector<cdouble> buf;
  for (std::size_t k = 0; k < cube.n_chirp; ++k) {
    std::vector<std::vector<cdouble>> beam_range(out.n_beam);
    for (std::size_t n = 0; n < cube.n_sample; ++n) {
      buf.assign(out.n_beam, cdouble(0.0, 0.0));
      for (std::size_t a = 0; a < cube.n_rx; ++a) buf[a] = cube.at(a, n, k);
      fft(buf);
      for (std::size_t b = 0; b < out.n_beam; ++b) {
        if (beam_range[b].empty()) beam_range[b].assign(cube.n_sample, cdouble(0.0, 0.0));
        beam_range[b][n] = buf[b];
      }
    }
    for (std::size_t b = 0; b < out.n_beam; ++b) {
      auto col = fft_padded(beam_range[b], out.n_range);
      for (std::size_t n = 0; n < out.n_range; ++n) out.at(b, n, k) = col[n];
    }
  }
  // Doppler FFT in place over the chirp dimension
  std::vector<cdouble> dop(out.n_doppler);
  for (std::size_t b = 0; b < out.n_beam; ++b)
    for (std::size_t n = 0; n < out.n_range; ++n) {
      std::fill(dop.begin(), dop.end(), cdouble(0.0, 0.0));
      for (std::size_t k = 0; k < cube.n_chirp; ++k) dop[k] = out.at(b, n, k);
      fft(dop);
      for (std::size_t d = 0; d < out.n_doppler; ++d) out.at(b, n, d) = dop[d];
    }

  CubePeak peak;
  double best = -1.0;
  for (std::size_t b = 0; b < out.n_beam; ++b)
    for (std::size_t n = 0; n < out.n_range; ++n)
      for (std::size_t d = 0; d < out.n_doppler; ++d) {
        const double p = std::norm(out.at(b, n, d));
        if (p > best) {
          best = p;
          peak = {b, n, d};
        }
      }
  return {out, peak};
}

inline double wrap_bin_freq(std::size_t bin, std::size_t n_fft, double resolution) {
  double f = static_cast<double>(bin) * resolution;
  const double span = static_cast<double>(n_fft) * resolution;
  if (f >= span / 2.0) f -= span;  // the +Nyquist boundary wraps negative
  return f;
}

struct PhysicalPeak {
  double angle = 0.0;    // rad
  double delay = 0.0;    // s
  double doppler = 0.0;  // Hz
};

inline PhysicalPeak bins_to_physical(const CubePeak& peak, const ProcessedCube& cube, double slope,
                                     double element_spacing = 0.5) {
  PhysicalPeak out;
  const double beat = wrap_bin_freq(peak.range, cube.n_range, 1.0 / (static_cast<double>(cube.n_range) * cube.sample_period));
  // a signal that starts later than the mixer reference beats low: positive
  // delay therefore corresponds to a negative beat frequency
  out.delay = -beat / slope;
  if (cube.chirp_interval > 0.0)
    out.doppler = wrap_bin_freq(peak.doppler, cube.n_doppler,
                                1.0 / (static_cast<double>(cube.n_doppler) * cube.chirp_interval));
  double u = static_cast<double>(peak.beam) / static_cast<double>(cube.n_beam);
  if (u >= 0.5) u -= 1.0;
  const double s = u / element_spacing;
  out.angle = std::asin(std::clamp(s, -1.0, 1.0));
  return out;
}

struct TrackerState {
  double desired_delay = 0.0;    // s
  double desired_doppler = 0.0;  // Hz
  double gain_delay = 0.5;
  double gain_doppler = 0.5;
  double correction_delay = 0.0;
  double correction_freq = 0.0;
};

inline void tracker_update(TrackerState& state, double measured_delay, double measured_doppler) {
  state.correction_delay += state.gain_delay * (measured_delay - state.desired_delay);
  state.correction_freq += state.gain_doppler * (measured_doppler - state.desired_doppler);
}

// Beamformed row b of the antenna FFT for chirp k: z[n] = sum_a Y[a][n][k] W^(a*b).
inline std::vector<cdouble> beam_row(const DataCube& cube, std::size_t beam, std::size_t n_beam, std::size_t k) {
  std::vector<cdouble> z(cube.n_sample, cdouble(0.0, 0.0));
  for (std::size_t a = 0; a < cube.n_rx; ++a) {
    const double ph = -2.0 * kPi * static_cast<double>(a * beam) / static_cast<double>(n_beam);
    const cdouble w(std::cos(ph), std::sin(ph));
    for (std::size_t n = 0; n < cube.n_sample; ++n) z[n] += cube.at(a, n, k) * w;
  }
  return z;
}

struct RangeAlignment {
  std::vector<double> corrections;    // delta t_k - mean, per chirp
  std::vector<cdouble> peak_values;   // p_k, for phase estimation
  std::vector<std::size_t> peak_bins;
};

// Per-chirp range FFT in the peak beam; converts each chirp's peak bin into a
// timing correction with the common mean removed.
inline RangeAlignment per_chirp_range_align(const DataCube& cube, std::size_t beam, std::size_t n_beam,
                                            std::size_t n_range, const std::vector<double>& slopes) {
  if (slopes.size() != cube.n_chirp) throw std::invalid_argument("per_chirp_range_align: slope count mismatch");
  RangeAlignment out;
  const double res = 1.0 / (static_cast<double>(n_range) * cube.sample_period);
  std::vector<double> delays(cube.n_chirp);
  for (std::size_t k = 0; k < cube.n_chirp; ++k) {
    const auto z = beam_row(cube, beam, n_beam, k);
    const auto zr = fft_padded(z, n_range);
    std::size_t best_n = 0;
    double best = -1.0;
    for (std::size_t n = 0; n < n_range; ++n) {
      const double p = std::norm(zr[n]);
      if (p > best) {
        best = p;
        best_n = n;
      }
    }
    out.peak_bins.push_back(best_n);
    out.peak_values.push_back(zr[best_n]);
    // parabolic interpolation: one-bin quantization here turns into beat-phase
    // noise (2 pi f0 dt per chirp), which smears the Doppler spectrum
    const double pm = std::norm(zr[(best_n + n_range - 1) % n_range]);
    const double pp = std::norm(zr[(best_n + 1) % n_range]);
    const double denom = pm - 2.0 * best + pp;
    const double frac = (denom < 0.0) ? 0.5 * (pm - pp) / denom : 0.0;
    delays[k] = -(wrap_bin_freq(best_n, n_range, res) + frac * res) / slopes[k];
  }
  double mean = 0.0;
  for (double d : delays) mean += d;
  mean /= static_cast<double>(cube.n_chirp);
  out.corrections.resize(cube.n_chirp);
  for (std::size_t k = 0; k < cube.n_chirp; ++k) out.corrections[k] = delays[k] - mean;
  return out;
}

// Residual-slope search: mix with exp(j pi b (Ts n)^2) and keep the trial that
// maximizes the range-FFT peak. Ties go to the smallest |b|.
inline double refine_chirp_slope(const std::vector<cdouble>& z, const std::vector<double>& slope_grid, double t_s,
                                 std::size_t n_range) {
  if (slope_grid.empty()) throw std::invalid_argument("refine_chirp_slope: empty grid");
  double best_beta = slope_grid.front();
  double best_power = -1.0;
  std::vector<cdouble> mixed(z.size());
  for (double beta : slope_grid) {
    for (std::size_t n = 0; n < z.size(); ++n) {
      const double tau = t_s * static_cast<double>(n);
      const double ph = kPi * beta * tau * tau;
      mixed[n] = z[n] * cdouble(std::cos(ph), std::sin(ph));
    }
    const auto zr = fft_padded(mixed, n_range);
    double peak = 0.0;
    for (const auto& v : zr) peak = std::max(peak, std::norm(v));
    if (peak > best_power || (peak == best_power && std::abs(beta) < std::abs(best_beta))) {
      best_power = peak;
      best_beta = beta;
    }
  }
  return best_beta;
}

inline std::vector<double> make_slope_grid(double center, double half_span, std::size_t points) {
  std::vector<double> grid(points);
  for (std::size_t i = 0; i < points; ++i)
    grid[i] = center - half_span + 2.0 * half_span * static_cast<double>(i) / static_cast<double>(points - 1);
  return grid;
}

struct PhaseCodeEstimate {
  double residual_doppler = 0.0;  // Hz
  double residual_phase = 0.0;    // rad
  std::vector<double> decoded;    // rad, one per chirp
  std::size_t mod_order = 2;
  bool reliable = true;
};

// Viterbi & Viterbi phase-code estimation: raise each per-chirp peak value to
// the modulation order to strip the PSK code, estimate the residual Doppler
// and phase from the FFT peak, de-rotate, and quantize to the constellation.
inline PhaseCodeEstimate vv_phase_estimate(const std::vector<cdouble>& p, std::size_t mod_order, double chirp_interval) {
  if (p.empty()) throw std::invalid_argument("vv_phase_estimate: empty input");
  if (mod_order == 0 || (mod_order & (mod_order - 1)) != 0)
    throw std::invalid_argument("vv_phase_estimate: mod_order must be a power of 2");
  PhaseCodeEstimate out;
  out.mod_order = mod_order;
  const std::size_t k_count = p.size();
  std::vector<cdouble> pv(k_count);
  for (std::size_t k = 0; k < k_count; ++k) {
    cdouble v(1.0, 0.0);
    for (std::size_t m = 0; m < mod_order; ++m) v *= p[k];
    pv[k] = v;
  }
  const std::size_t n_fft = next_pow2(4 * k_count);
  auto spec = fft_padded(pv, n_fft);
  std::size_t best = 0;
  double best_p = -1.0;
  for (std::size_t i = 0; i < n_fft; ++i) {
    const double pw = std::norm(spec[i]);
    if (pw > best_p) {
      best_p = pw;
      best = i;
    }
  }
  const double res = 1.0 / (static_cast<double>(n_fft) * chirp_interval);
  const double f_raw = wrap_bin_freq(best, n_fft, res);
  out.residual_doppler = f_raw / static_cast<double>(mod_order);
  out.residual_phase = std::arg(spec[best]) / static_cast<double>(mod_order);
  const double ambiguity = 1.0 / (2.0 * static_cast<double>(mod_order) * chirp_interval);
  out.reliable = std::abs(out.residual_doppler) < 0.95 * ambiguity;

  const double step = 2.0 * kPi / static_cast<double>(mod_order);
  out.decoded.resize(k_count);
  for (std::size_t k = 0; k < k_count; ++k) {
    const double ph = 2.0 * kPi * out.residual_doppler * chirp_interval * static_cast<double>(k) + out.residual_phase;
    const cdouble corr = p[k] * std::conj(cdouble(std::cos(ph), std::sin(ph)));
    long m = std::lround(std::arg(corr) / step);
    m = ((m % static_cast<long>(mod_order)) + static_cast<long>(mod_order)) % static_cast<long>(mod_order);
    out.decoded[k] = static_cast<double>(m) * step;
  }
  return out;
}

// Smallest interval grown outward from the peak containing more than half the
// profile's total power. Returns the width in bins.
inline std::size_t power_width_bins(const std::vector<double>& profile, std::size_t peak, bool circular) {
  const std::size_t n = profile.size();
  if (n == 0) throw std::invalid_argument("power_width_bins: empty profile");
  double total = 0.0;
  for (double v : profile) total += v;
  if (total <= 0.0) return n;
  long lo = static_cast<long>(peak), hi = static_cast<long>(peak);
  double cum = profile[peak];
  std::size_t width = 1;
  while (cum <= 0.5 * total && width < n) {
    const long next_lo = lo - 1;
    const long next_hi = hi + 1;
    const auto fetch = [&](long i) -> double {
      if (circular) return profile[static_cast<std::size_t>(((i % static_cast<long>(n)) + static_cast<long>(n)) % static_cast<long>(n))];
      if (i < 0 || i >= static_cast<long>(n)) return -1.0;  // unavailable
      return profile[static_cast<std::size_t>(i)];
    };
    const double vlo = fetch(next_lo);
    const double vhi = fetch(next_hi);
    if (vlo < 0.0 && vhi < 0.0) break;
    if (vhi >= vlo) {
      cum += vhi;
      hi = next_hi;
    } else {
      cum += vlo;
      lo = next_lo;
    }
    ++width;
  }
  return width;
}

inline std::vector<double> range_profile(const ProcessedCube& cube, std::size_t beam, std::size_t doppler) {
  std::vector<double> out(cube.n_range);
  for (std::size_t n = 0; n < cube.n_range; ++n) out[n] = std::norm(cube.at(beam, n, doppler));
  return out;
}

inline std::vector<double> doppler_profile(const ProcessedCube& cube, std::size_t beam, std::size_t range) {
  std::vector<double> out(cube.n_doppler);
  for (std::size_t d = 0; d < cube.n_doppler; ++d) out[d] = std::norm(cube.at(beam, range, d));
  return out;
}

struct FrameMetrics {
  double range_width_m = 0.0;
  double doppler_width_hz = 0.0;
  double slope_rmse = 0.0;  // Hz/s
};

// Width metrics on the 1-D profiles through the peak. range_two_way selects
// the radar-display convention c*dt/2 (default) versus one-way c*dt.
inline FrameMetrics cube_metrics(const ProcessedCube& cube, const CubePeak& peak, double slope,
                                 const std::vector<double>& est_slopes, const std::vector<double>& true_slopes,
                                 bool range_two_way = true) {
  FrameMetrics m;
  const auto rp = range_profile(cube, peak.beam, peak.doppler);
  const auto dp = doppler_profile(cube, peak.beam, peak.range);
  const std::size_t rw = power_width_bins(rp, peak.range, false);
  const std::size_t dw = power_width_bins(dp, peak.doppler, true);
  const double beat_bin = 1.0 / (static_cast<double>(cube.n_range) * cube.sample_period);
  const double delay_bin = beat_bin / std::abs(slope);
  const double range_bin = (range_two_way ? 0.5 : 1.0) * kSpeedOfLight * delay_bin;
  m.range_width_m = static_cast<double>(rw) * range_bin;
  const double dop_bin = (cube.chirp_interval > 0.0)
                             ? 1.0 / (static_cast<double>(cube.n_doppler) * cube.chirp_interval)
                             : 0.0;
  m.doppler_width_hz = static_cast<double>(dw) * dop_bin;
  if (!est_slopes.empty() && est_slopes.size() == true_slopes.size()) {
    double acc = 0.0;
    for (std::size_t k = 0; k < est_slopes.size(); ++k) {
      const double e = est_slopes[k] - true_slopes[k];
      acc += e * e;
    }
    m.slope_rmse = std::sqrt(acc / static_cast<double>(est_slopes.size()));
  }
  return m;
}

}  // namespace chirptrack
