#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "chirptrack/detect.hpp"

namespace chirptrack {

struct IdentificationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct KernelConfig {
  double sigma = 0.0;        // s, coarse (frame-scale)
  double sigma_ref = 0.0;    // s, refined (chirp-scale)
  double sigma_chirp = 0.0;  // s, chirp matching threshold
  double lag_min = 0.0;      // s, coarse lag grid
  double lag_max = 0.0;
  double lag_step = 0.0;

  void validate() const {
    if (!(sigma > 0.0 && sigma_ref > 0.0 && sigma_chirp > 0.0)) throw std::invalid_argument("KernelConfig: sigmas must be > 0");
    if (sigma_ref >= sigma) throw std::invalid_argument("KernelConfig: sigma_ref must be < sigma");
    if (!(lag_step > 0.0 && lag_max > lag_min)) throw std::invalid_argument("KernelConfig: bad lag grid");
  }
};

struct ChirpEstimate {
  double slope = 0.0;       // Hz/s
  double reg_offset = 0.0;  // Hz, regression intercept at t = 0
  double start_time = 0.0;  // s within the frame
  double start_freq = 0.0;  // Hz
  double duration = 0.0;    // s
  std::vector<double> matched_times;
  std::vector<double> matched_freqs;
  std::array<double, 4> covariance{0.0, 0.0, 0.0, 0.0};  // row-major 2x2
  bool resolved = false;
};

struct SignalEstimate {
  double frame_interval = 0.0;
  double frame_offset = 0.0;
  std::vector<ChirpEstimate> chirps;
  std::vector<double> phase_codes;  // rad, filled by tracking
};

inline double kernel(double t1, double t2, double sigma) {
  const double d = t1 - t2;
  return std::exp(-(d * d) / (sigma * sigma));
}

inline double sum_kernel_likelihood(const DetectionSet& d1, const DetectionSet& d2, double sigma, double lag) {
  if (d1.empty() || d2.empty()) throw std::invalid_argument("sum_kernel_likelihood: empty detection set");
  double acc = 0.0;
  for (const auto& a : d1)
    for (const auto& b : d2) acc += kernel(a.time, b.time - lag, sigma);
  return acc;
}

// Peaks of d(l) on the lag grid are spaced by the frame interval; the median
// spacing between qualifying maxima is the estimate.
inline double estimate_frame_interval(const DetectionSet& d1, const DetectionSet& d2, const KernelConfig& cfg) {
  cfg.validate();
  std::vector<double> lags, vals;
  for (double l = cfg.lag_min; l <= cfg.lag_max + 1e-15; l += cfg.lag_step) {
    lags.push_back(l);
    vals.push_back(sum_kernel_likelihood(d1, d2, cfg.sigma, l));
  }
  const double vmax = *std::max_element(vals.begin(), vals.end());
  std::vector<double> peaks;
  for (std::size_t i = 1; i + 1 < vals.size(); ++i)
    // 0.25 threshold: with two consecutive captures the pair count behind
    // each peak grows with the lag, so early peaks carry less mass
    if (vals[i] > vals[i - 1] && vals[i] >= vals[i + 1] && vals[i] > 0.25 * vmax) peaks.push_back(lags[i]);
  if (peaks.size() < 2) throw IdentificationError("estimate_frame_interval: fewer than 2 qualifying peaks");
  std::vector<double> spacing;
  for (std::size_t i = 1; i < peaks.size(); ++i) spacing.push_back(peaks[i] - peaks[i - 1]);
  std::sort(spacing.begin(), spacing.end());
  const std::size_t m = spacing.size();
  return (m % 2 == 1) ? spacing[m / 2] : 0.5 * (spacing[m / 2 - 1] + spacing[m / 2]);
}

inline double positive_mod(double x, double m) {
  double r = std::fmod(x, m);
  if (r < 0.0) r += m;
  return r;
}

// Grid search over [0, T) for the offset placing detections nearest to the
// frame center in the mean-squared sense.
inline double estimate_frame_offset(const DetectionSet& d, double frame_interval, double grid_step) {
  if (d.empty()) throw std::invalid_argument("estimate_frame_offset: empty detection set");
  if (!(grid_step > 0.0)) throw std::invalid_argument("estimate_frame_offset: grid_step must be > 0");
  double best_obj = std::numeric_limits<double>::infinity();
  double best_dt = 0.0;
  for (double dt = 0.0; dt < frame_interval; dt += grid_step) {
    double obj = 0.0;
    for (const auto& det : d) {
      const double e = positive_mod(det.time - dt, frame_interval) - frame_interval / 2.0;
      obj += e * e;
    }
    if (obj < best_obj) {
      best_obj = obj;
      best_dt = dt;
    }
  }
  return best_dt;
}

namespace detail {

inline double refined_likelihood(const DetectionSet& d, double frame_offset, double interval_base, double l,
                                 double sigma_ref) {
  const double m = interval_base - l;
  double acc = 0.0;
  std::vector<double> g(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) g[i] = positive_mod(d[i].time - frame_offset, m);
  for (double gi : g)
    for (double gj : g) acc += kernel(gi, gj, sigma_ref);
  return acc;
}

}  // namespace detail

struct FrameRefinement {
  double l_max = 0.0;            // estimated error in the coarse interval
  double frame_interval = 0.0;   // adjusted interval
  DetectionSet frame_detections; // detections remapped into one frame
};

// Maximizes the refined kernel likelihood over the interval-error lag. The
// search zooms in over several stages so the final resolution is set by the
// detection jitter rather than the initial grid.
inline FrameRefinement refine_frame_interval(const DetectionSet& d, double frame_offset, double frame_interval,
                                             const KernelConfig& cfg, int zoom_stages = 4) {
  cfg.validate();
  if (d.empty()) throw std::invalid_argument("refine_frame_interval: empty detection set");
  double lo = -cfg.sigma, hi = cfg.sigma;
  double step = cfg.sigma_ref / 10.0;
  double best_l = 0.0;
  for (int stage = 0; stage <= zoom_stages; ++stage) {
    double best_val = -1.0;
    for (double l = lo; l <= hi + step * 1e-9; l += step) {
      const double v = detail::refined_likelihood(d, frame_offset, frame_interval, l, cfg.sigma_ref);
      if (v > best_val) {
        best_val = v;
        best_l = l;
      }
    }
    lo = best_l - 2.0 * step;
    hi = best_l + 2.0 * step;
    step /= 10.0;
  }
  FrameRefinement out;
  out.l_max = best_l;
  out.frame_interval = frame_interval - best_l;
  out.frame_detections = d;
  for (auto& det : out.frame_detections) det.time = positive_mod(det.time - frame_offset, out.frame_interval);
  return out;
}

// Remap absolute detection times into the refined frame.
inline DetectionSet remap_to_frame(const DetectionSet& d, double frame_offset, double frame_interval) {
  DetectionSet out = d;
  for (auto& det : out) det.time = positive_mod(det.time - frame_offset, frame_interval);
  return out;
}

struct ChirpCluster {
  double mean_time = 0.0;
  DetectionSet members;
};

// Single-linkage clustering with (t1 - t2)^2 < sigma_chirp^2 (strict). In one
// dimension this reduces to linking consecutive sorted detections.
inline std::vector<ChirpCluster> match_chirps(const DetectionSet& d_frame, double sigma_chirp) {
  std::vector<ChirpCluster> out;
  if (d_frame.empty()) return out;
  DetectionSet sorted = d_frame;
  std::sort(sorted.begin(), sorted.end(), [](const Detection& a, const Detection& b) { return a.time < b.time; });
  ChirpCluster cur;
  cur.members.push_back(sorted.front());
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    const double gap = sorted[i].time - cur.members.back().time;
    if (gap * gap < sigma_chirp * sigma_chirp) {
      cur.members.push_back(sorted[i]);
    } else {
      out.push_back(std::move(cur));
      cur = ChirpCluster{};
      cur.members.push_back(sorted[i]);
    }
  }
  out.push_back(std::move(cur));
  for (auto& c : out) {
    double acc = 0.0;
    for (const auto& m : c.members) acc += m.time;
    c.mean_time = acc / static_cast<double>(c.members.size());
  }
  return out;
}

inline std::vector<double> plan_frequency_search(double band_lo, double band_hi, std::size_t m_search) {
  if (m_search == 0) throw std::invalid_argument("plan_frequency_search: m_search must be >= 1");
  if (m_search == 1) return {0.5 * (band_lo + band_hi)};
  std::vector<double> tones(m_search);
  for (std::size_t m = 0; m < m_search; ++m)
    tones[m] = band_lo + (band_hi - band_lo) * static_cast<double>(m) / static_cast<double>(m_search - 1);
  return tones;
}

namespace detail {

// Least-squares line fit f = beta*t + f0. Solved in time-centered
// coordinates: raw normal equations are badly conditioned when t is measured
// in seconds but spreads only microseconds.
struct LineFit {
  double beta = 0.0;
  double f0 = 0.0;
  std::array<double, 4> xtx_inv{0.0, 0.0, 0.0, 0.0};
};

inline LineFit fit_line(const std::vector<double>& t, const std::vector<double>& f) {
  const double n = static_cast<double>(t.size());
  double tbar = 0.0;
  for (double v : t) tbar += v;
  tbar /= n;
  double suu = 0.0, sf = 0.0, suf = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double u = t[i] - tbar;
    suu += u * u;
    sf += f[i];
    suf += u * f[i];
  }
  LineFit out;
  const double inv_suu = (suu > 0.0) ? 1.0 / suu : 0.0;  // coincident times: slope unobservable
  out.beta = suf * inv_suu;
  out.f0 = sf / n - out.beta * tbar;
  // covariance of (beta, f0) mapped back from the centered basis
  out.xtx_inv = {inv_suu, -tbar * inv_suu, -tbar * inv_suu, 1.0 / n + tbar * tbar * inv_suu};
  return out;
}

}  // namespace detail

// Iterative chirp parameter estimation: seed with the detection nearest the
// chirp's coarse time, then sweep outward, gating each candidate on its
// frequency innovation and refitting the line after every acceptance. The
// first rejection terminates the sweep.
inline ChirpEstimate estimate_chirp_params(double delta_t_k, const DetectionSet& d_search, double sigma_freq_sq) {
  ChirpEstimate est;
  est.start_time = delta_t_k;
  if (d_search.empty()) return est;

  DetectionSet sorted = d_search;
  std::sort(sorted.begin(), sorted.end(), [&](const Detection& a, const Detection& b) {
    const double da = std::abs(a.time - delta_t_k);
    const double db = std::abs(b.time - delta_t_k);
    if (da != db) return da < db;
    return a.time < b.time;
  });

  est.matched_times.push_back(sorted.front().time);
  est.matched_freqs.push_back(sorted.front().freq);
  bool have_fit = false;
  detail::LineFit fit;

  for (std::size_t i = 1; i < sorted.size(); ++i) {
    const double t = sorted[i].time;
    const double f = sorted[i].freq;
    if (have_fit) {
      const double pred = fit.beta * t + fit.f0;
      // innovation variance x K x^T + sigma^2 with x = [t 1]
      const double xkx = sigma_freq_sq * (fit.xtx_inv[0] * t * t + 2.0 * fit.xtx_inv[1] * t + fit.xtx_inv[3]);
      const double gate_sigma = std::sqrt(std::max(0.0, xkx) + sigma_freq_sq);
      if (std::abs(f - pred) / gate_sigma >= 2.0) break;
    }
    est.matched_times.push_back(t);
    est.matched_freqs.push_back(f);
    fit = detail::fit_line(est.matched_times, est.matched_freqs);
    have_fit = true;
  }

  if (est.matched_times.size() < 2) return est;  // slope undefined, unresolved
  est.slope = fit.beta;
  est.reg_offset = fit.f0;
  for (int i = 0; i < 4; ++i) est.covariance[static_cast<std::size_t>(i)] = sigma_freq_sq * fit.xtx_inv[static_cast<std::size_t>(i)];
  est.resolved = true;
  return est;
}

// Converts a fitted chirp into the start-time/start-frequency/duration
// anchors. tone_spacing extends the observed frequency span to cover the
// un-probed margin at the sweep edges.
inline void derive_chirp_anchors(ChirpEstimate& est, double tone_spacing) {
  if (est.matched_times.size() < 2) throw IdentificationError("derive_chirp_anchors: need >= 2 matches");
  if (est.slope == 0.0) {
    est.resolved = false;
    throw IdentificationError("derive_chirp_anchors: zero slope");
  }
  std::size_t n_start = 0;
  for (std::size_t i = 1; i < est.matched_times.size(); ++i)
    if (est.matched_times[i] < est.matched_times[n_start]) n_start = i;
  est.start_freq = est.matched_freqs[n_start];
  est.start_time = (est.start_freq - est.reg_offset) / est.slope;
  const auto [fmin, fmax] = std::minmax_element(est.matched_freqs.begin(), est.matched_freqs.end());
  est.duration = (*fmax - *fmin) / std::abs(est.slope) + tone_spacing / std::abs(est.slope);
}

}  // namespace chirptrack
