#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "chirptrack/channel.hpp"
#include "chirptrack/fft.hpp"

namespace chirptrack {

struct BeamformedCapture {
  std::vector<std::vector<cdouble>> samples;  // [n_beams][n_samples]
  std::size_t oversampling = 1;
  std::vector<double> beam_angles;  // rad per bin, NAN where the bin maps outside visible space
  double start_time = 0.0;
  double sample_period = 0.0;
};

struct Detection {
  double time = 0.0;  // s
  double freq = 0.0;  // Hz, the mixer frequency at detection
  std::size_t beam = 0;
};

using DetectionSet = std::vector<Detection>;

struct CfarConfig {
  std::size_t n_train = 16;
  std::size_t n_guard = 4;
  double pfa = 1e-3;
  std::size_t consolidation_gap = 24;

  void validate() const {
    if (!(pfa > 0.0 && pfa < 1.0)) throw std::invalid_argument("CfarConfig: pfa out of (0,1)");
    if (n_train < 4) throw std::invalid_argument("CfarConfig: n_train must be >= 4");
  }
};

// FFT across the antenna dimension per sample, zero-padded to n_os * n_rx.
inline BeamformedCapture beamform(const SampleCapture& cap, std::size_t n_os, double element_spacing = 0.5) {
  const std::size_t n_rx = cap.n_rx();
  if (n_rx == 0) throw std::invalid_argument("beamform: empty capture");
  const std::size_t n_beams = next_pow2(n_os * n_rx);
  const std::size_t n = cap.n_samples();

  BeamformedCapture bf;
  bf.oversampling = n_os;
  bf.start_time = cap.start_time;
  bf.sample_period = cap.sample_period;
  bf.samples.assign(n_beams, std::vector<cdouble>(n));
  std::vector<cdouble> col(n_beams);
  for (std::size_t s = 0; s < n; ++s) {
    std::fill(col.begin(), col.end(), cdouble(0.0, 0.0));
    for (std::size_t a = 0; a < n_rx; ++a) col[a] = cap.samples[a][s];
    fft(col);
    for (std::size_t b = 0; b < n_beams; ++b) bf.samples[b][s] = col[b];
  }
  bf.beam_angles.resize(n_beams);
  for (std::size_t b = 0; b < n_beams; ++b) {
    double u = static_cast<double>(b) / static_cast<double>(n_beams);
    if (u >= 0.5) u -= 1.0;
    const double s = u / element_spacing;
    bf.beam_angles[b] = (std::abs(s) <= 1.0) ? std::asin(s) : std::nan("");
  }
  return bf;
}

// Argmax over |.|^2; ties go to the lowest sample index, then lowest beam.
inline std::pair<std::size_t, std::size_t> max_power_bin(const BeamformedCapture& bf) {
  if (bf.samples.empty() || bf.samples.front().empty()) throw std::invalid_argument("max_power_bin: empty input");
  std::size_t best_n = 0, best_b = 0;
  double best = -1.0;
  for (std::size_t s = 0; s < bf.samples.front().size(); ++s)
    for (std::size_t b = 0; b < bf.samples.size(); ++b) {
      const double p = std::norm(bf.samples[b][s]);
      if (p > best) {
        best = p;
        best_n = s;
        best_b = b;
      }
    }
  return {best_n, best_b};
}

// Cell-averaging CFAR on one beam row. Threshold factor alpha is the standard
// CA-CFAR value for the configured false-alarm probability; edge cells shrink
// the training window one-sidedly.
inline std::vector<std::size_t> cfar_detect(const std::vector<cdouble>& series, const CfarConfig& cfg) {
  cfg.validate();
  const std::size_t n = series.size();
  if (n <= 2 * (cfg.n_train + cfg.n_guard) + 1) throw std::invalid_argument("cfar_detect: series too short");

  std::vector<double> power(n);
  for (std::size_t i = 0; i < n; ++i) power[i] = std::norm(series[i]);

  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + power[i];
  const auto range_sum = [&](std::size_t lo, std::size_t hi) {  // [lo, hi)
    return prefix[hi] - prefix[lo];
  };

  std::vector<std::size_t> hits;
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    std::size_t count = 0;
    if (i >= cfg.n_guard + 1) {
      const std::size_t hi = i - cfg.n_guard;
      const std::size_t lo = (hi >= cfg.n_train) ? hi - cfg.n_train : 0;
      sum += range_sum(lo, hi);
      count += hi - lo;
    }
    if (i + cfg.n_guard + 1 < n) {
      const std::size_t lo = i + cfg.n_guard + 1;
      const std::size_t hi = std::min(n, lo + cfg.n_train);
      sum += range_sum(lo, hi);
      count += hi - lo;
    }
    if (count == 0) continue;
    const double nn = static_cast<double>(count);
    const double alpha = nn * (std::pow(cfg.pfa, -1.0 / nn) - 1.0);
    const double threshold = alpha * (sum / nn);
    if (power[i] > threshold && power[i] > 0.0) hits.push_back(i);
  }
  return hits;
}

// Groups neighboring indices (spacing <= gap) into one detection at the
// center sample of each group.
inline DetectionSet consolidate(const std::vector<std::size_t>& indices, std::size_t gap, double t_s, double f_tone,
                                double start_time = 0.0, std::size_t beam = 0) {
  DetectionSet out;
  if (indices.empty()) return out;
  std::size_t group_lo = indices.front();
  std::size_t group_hi = indices.front();
  const auto emit = [&]() {
    const std::size_t center = (group_lo + group_hi) / 2;
    out.push_back({start_time + static_cast<double>(center) * t_s, f_tone, beam});
  };
  for (std::size_t i = 1; i < indices.size(); ++i) {
    if (indices[i] < indices[i - 1]) throw std::invalid_argument("consolidate: indices must be sorted");
    if (indices[i] - group_hi <= gap) {
      group_hi = indices[i];
    } else {
      emit();
      group_lo = group_hi = indices[i];
    }
  }
  emit();
  return out;
}

}  // namespace chirptrack
