#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "chirptrack/fir.hpp"
#include "chirptrack/waveform.hpp"

namespace chirptrack {

using cdouble = std::complex<double>;

struct PropagationPath {
  double delay = 0.0;      // s
  double doppler = 0.0;    // Hz
  double amplitude = 0.0;  // linear
  double aoa = 0.0;        // rad, at the receiver
  double aod = 0.0;        // rad, at the transmitter
};

struct LinkBudget {
  double tx_power = 1.0;   // W
  double path_loss = 1.0;  // linear, >= 1 for real links
  double rcs = 1.0;        // m^2 (1 for direct paths)
  double tx_gain = 1.0;
  double rx_gain = 1.0;
};

inline double received_amplitude(const LinkBudget& b) {
  if (b.tx_power <= 0.0 || b.path_loss <= 0.0 || b.rcs <= 0.0 || b.tx_gain <= 0.0 || b.rx_gain <= 0.0)
    throw std::invalid_argument("received_amplitude: LinkBudget fields must be > 0");
  return std::sqrt(b.tx_power * b.rx_gain * b.tx_gain * b.rcs / b.path_loss);
}

inline double free_space_path_loss(double distance, double wavelength) {
  const double x = 4.0 * kPi * distance / wavelength;
  return x * x;
}

// Two-state oscillator model: white frequency noise (h0) plus random-walk
// frequency noise (h_minus2). State is (bias [s], drift [s/s]).
struct ClockModel {
  double h0 = 0.0;        // s
  double h_minus2 = 0.0;  // 1/s
  double bias = 0.0;      // s
  double drift = 0.0;     // s/s

  // Advances the state over dt and returns the perceived time increment.
  double advance(double dt, std::mt19937_64& rng) {
    if (dt <= 0.0) throw std::invalid_argument("ClockModel::advance: dt must be > 0");
    const double sf = h0 / 2.0;
    const double sg = 2.0 * kPi * kPi * h_minus2;
    const double q11 = sf * dt + sg * dt * dt * dt / 3.0;
    const double q12 = sg * dt * dt / 2.0;
    const double q22 = sg * dt;
    double wf = 0.0, wg = 0.0;
    if (q11 > 0.0 || q22 > 0.0) {
      std::normal_distribution<double> gauss(0.0, 1.0);
      const double z1 = gauss(rng), z2 = gauss(rng);
      const double l11 = std::sqrt(q11);
      const double l21 = (l11 > 0.0) ? q12 / l11 : 0.0;
      const double l22 = std::sqrt(std::max(0.0, q22 - l21 * l21));
      wf = l11 * z1;
      wg = l21 * z1 + l22 * z2;
    }
    const double bias_before = bias;
    bias += drift * dt + wf;
    drift += wg;
    return dt + (bias - bias_before);
  }
};

struct SamplingConfig {
  double sample_period = 1e-7;  // s
  double if_bandwidth = 10e6;   // Hz, complex (two-sided)
  std::size_t filter_taps = 193;
  double noise_psd = 0.0;           // W/Hz
  std::size_t sim_oversample = 8;   // internal synthesis rate multiplier

  void validate() const {
    if (sample_period <= 0.0) throw std::invalid_argument("SamplingConfig: sample_period must be > 0");
    if (1.0 / sample_period < if_bandwidth) throw std::invalid_argument("SamplingConfig: sample rate below IF bandwidth");
    if (filter_taps % 2 == 0) throw std::invalid_argument("SamplingConfig: filter_taps must be odd");
    if (sim_oversample < 2) throw std::invalid_argument("SamplingConfig: sim_oversample must be >= 2");
  }
};

struct SampleCapture {
  std::vector<std::vector<cdouble>> samples;  // [n_rx][n_samples]
  double start_time = 0.0;
  double sample_period = 0.0;
  std::string mixer_descriptor;

  std::size_t n_rx() const { return samples.size(); }
  std::size_t n_samples() const { return samples.empty() ? 0 : samples.front().size(); }
};

// The target radar's emission as seen on the common timeline. time_offset is
// the target clock bias; freq_offset is the carrier offset drift * f_c.
struct TargetEmission {
  FrameConfig frame;
  ArrayConfig tx_array;
  double time_offset = 0.0;
  double freq_offset = 0.0;
};

// The spoofer's mixing signal: a constant tone during identification, or the
// estimated frame during tracking.
struct Mixer {
  enum class Kind { Tone, Frame } kind = Kind::Tone;
  double tone_freq = 0.0;  // Hz offset from carrier
  FrameConfig frame;       // used when kind == Frame
  double time_offset = 0.0;
  double freq_offset = 0.0;

  static Mixer tone(double freq) {
    Mixer m;
    m.kind = Kind::Tone;
    m.tone_freq = freq;
    return m;
  }
  static Mixer from_frame(FrameConfig f) {
    Mixer m;
    m.kind = Kind::Frame;
    m.frame = std::move(f);
    return m;
  }
};

// Closed-form parameters of c_tx(t - delay) * conj(c_mix(t)) * exp(j2pi fD t),
// with both chirps referenced to t = 0. The result is again a linear chirp.
inline ChirpParams mixed_chirp_oracle(const ChirpParams& tx, const ChirpParams& mix, const PropagationPath& path) {
  ChirpParams m;
  m.slope = tx.slope - mix.slope;
  m.start_freq = tx.start_freq - mix.start_freq - tx.slope * path.delay + path.doppler;
  m.phase = -2.0 * kPi * tx.start_freq * path.delay + kPi * tx.slope * path.delay * path.delay + tx.phase - mix.phase;
  m.duration = tx.duration;
  return m;
}

namespace detail {

struct MixSegment {
  double start;      // absolute s (ignored for tones)
  double end;
  double freq;       // Hz at segment start
  double slope;      // Hz/s
  double phase;      // rad
  bool unbounded;    // tone: active for all time
};

inline void collect_mixer_segments(const Mixer& mixer, double lo, double hi, std::vector<MixSegment>& out) {
  if (mixer.kind == Mixer::Kind::Tone) {
    out.push_back({lo, hi, mixer.tone_freq + mixer.freq_offset, 0.0, 0.0, true});
    return;
  }
  const FrameConfig& f = mixer.frame;
  const double t0 = f.frame_offset + mixer.time_offset;
  const double ti = f.frame_interval;
  const long j_lo = static_cast<long>(std::floor((lo - t0 - ti) / ti));
  const long j_hi = static_cast<long>(std::ceil((hi - t0) / ti));
  for (long j = j_lo; j <= j_hi; ++j) {
    for (const auto& [c, w] : f.chirps) {
      const double s = t0 + static_cast<double>(j) * ti + c.start_time;
      if (s + c.duration <= lo || s >= hi) continue;
      out.push_back({s, s + c.duration, c.start_freq + mixer.freq_offset, c.slope, c.phase + w.code_phase, false});
    }
  }
}

}  // namespace detail

// Synthesizes the spoofer's received, mixed, filtered, and sampled signal.
// The mixed product is evaluated analytically per (path, chirp, mixer
// segment) only where its instantaneous frequency is near the IF band, at an
// oversampled internal rate; the anti-aliasing FIR is applied centered (zero
// phase) and decimated onto the output grid.
inline SampleCapture simulate_capture(const TargetEmission& target, const Mixer& mixer, const ArrayConfig& rx_array,
                                      const std::vector<PropagationPath>& paths, const SamplingConfig& sampling,
                                      double start_time, std::size_t n_samples, std::mt19937_64* noise_rng = nullptr) {
  sampling.validate();
  target.frame.validate();
  if (mixer.kind == Mixer::Kind::Frame) mixer.frame.validate();

  SampleCapture cap;
  cap.start_time = start_time;
  cap.sample_period = sampling.sample_period;
  cap.mixer_descriptor = (mixer.kind == Mixer::Kind::Tone) ? "tone" : "frame";
  cap.samples.assign(rx_array.n_elements, std::vector<cdouble>(n_samples, cdouble(0.0, 0.0)));

  const double ts = sampling.sample_period;
  const std::size_t ratio = sampling.sim_oversample;
  const double t_sim = ts / static_cast<double>(ratio);
  const double f_lim = 0.8 * 0.5 / t_sim;  // keep evaluated content inside the internal Nyquist band
  const double cutoff_norm = (sampling.if_bandwidth / 2.0) * t_sim;
  const std::vector<double> h = lowpass_fir(sampling.filter_taps, cutoff_norm);
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(sampling.filter_taps / 2);

  const double cap_lo = start_time;
  const double cap_hi = start_time + static_cast<double>(n_samples) * ts;
  const double pad = static_cast<double>(half + 1) * t_sim;

  std::vector<detail::MixSegment> segments;
  detail::collect_mixer_segments(mixer, cap_lo - pad - 1e-3, cap_hi + pad + 1e-3, segments);

  const FrameConfig& tf = target.frame;
  double max_delay = 0.0;
  for (const auto& p : paths) max_delay = std::max(max_delay, p.delay);

  std::vector<cdouble> window;   // oversampled mixed product
  std::vector<cdouble> rx_gain;  // per-antenna steering factor

  for (const auto& path : paths) {
    const auto a_rx = steering_vector(rx_array, path.aoa);
    rx_gain.assign(rx_array.n_elements, cdouble(0.0, 0.0));
    for (std::size_t a = 0; a < rx_array.n_elements; ++a)
      rx_gain[a] = path.amplitude * std::sqrt(rx_array.gain(path.aoa)) * a_rx[a];

    const double t0 = tf.frame_offset + target.time_offset + path.delay;
    const long j_lo = static_cast<long>(std::floor((cap_lo - pad - t0 - tf.frame_interval) / tf.frame_interval));
    const long j_hi = static_cast<long>(std::ceil((cap_hi + pad - t0) / tf.frame_interval));
    for (long j = j_lo; j <= j_hi; ++j) {
      for (const auto& [c, w] : tf.chirps) {
        const double s0 = t0 + static_cast<double>(j) * tf.frame_interval + c.start_time;
        const double s1 = s0 + c.duration;
        if (s1 <= cap_lo - pad || s0 >= cap_hi + pad) continue;
        const cdouble a_tx = std::sqrt(target.tx_array.gain(path.aod)) *
                             steering_phase(target.tx_array, path.aod, w.antenna_index);
        const double f_tx0 = c.start_freq + target.freq_offset;
        const double phi_tx = c.phase + w.code_phase;

        for (const auto& seg : segments) {
          double lo = std::max({s0, seg.unbounded ? s0 : seg.start, cap_lo - pad});
          double hi = std::min({s1, seg.unbounded ? s1 : seg.end, cap_hi + pad});
          if (hi <= lo) continue;

          // instantaneous mixed frequency g(t) = g0 + dslope * t
          const double dslope = c.slope - seg.slope;
          const double g0 = f_tx0 + path.doppler - seg.freq - c.slope * s0 + seg.slope * (seg.unbounded ? 0.0 : seg.start);
          if (std::abs(dslope) < 1.0) {
            const double g_mid = g0 + dslope * 0.5 * (lo + hi);
            if (std::abs(g_mid) > f_lim) continue;
          } else {
            const double ta = (-f_lim - g0) / dslope;
            const double tb = (f_lim - g0) / dslope;
            lo = std::max(lo, std::min(ta, tb));
            hi = std::min(hi, std::max(ta, tb));
            if (hi <= lo) continue;
          }

          // taper the window edges so the out-of-band cut does not ring a
          // full-amplitude step through the anti-aliasing filter; unity well
          // inside the IF band, cosine roll-off from f_lim/2 out to f_lim
          const double f_taper = 0.5 * f_lim;
          const auto edge_weight = [&](double g) {
            const double ag = std::abs(g);
            if (ag <= f_taper) return 1.0;
            if (ag >= f_lim) return 0.0;
            const double x = (ag - f_taper) / (f_lim - f_taper);
            return 0.5 * (1.0 + std::cos(kPi * x));
          };

          // oversampled grid indices relative to capture start
          const long q_lo = static_cast<long>(std::floor((lo - start_time) / t_sim));
          const long q_hi = static_cast<long>(std::ceil((hi - start_time) / t_sim));
          const long q0 = q_lo - half;
          const long q1 = q_hi + half;
          window.assign(static_cast<std::size_t>(q1 - q0 + 1), cdouble(0.0, 0.0));
          for (long q = q0; q <= q1; ++q) {
            const double t = start_time + static_cast<double>(q) * t_sim;
            if (t < s0 || t >= s1) continue;
            if (!seg.unbounded && (t < seg.start || t >= seg.end)) continue;
            const double tt = t - s0;
            const double tm = seg.unbounded ? t : t - seg.start;
            const double ph = 2.0 * kPi * (f_tx0 * tt + 0.5 * c.slope * tt * tt + path.doppler * t -
                                           seg.freq * tm - 0.5 * seg.slope * tm * tm) +
                              phi_tx - seg.phase;
            const double wt = edge_weight(g0 + dslope * t);
            if (wt == 0.0) continue;
            window[static_cast<std::size_t>(q - q0)] = wt * cdouble(std::cos(ph), std::sin(ph));
          }

          // filter at the internal rate, decimate onto the output grid
          const long r = static_cast<long>(ratio);
          const auto floor_div = [](long a, long b) { return (a >= 0) ? a / b : -((-a + b - 1) / b); };
          long n_first = std::max<long>(floor_div(q0 - half, r), 0);
          long n_last = std::min<long>(floor_div(q1 + half, r) + 1, static_cast<long>(n_samples) - 1);
          for (long n = n_first; n <= n_last; ++n) {
            const long qc = n * r;
            cdouble acc(0.0, 0.0);
            bool any = false;
            for (std::ptrdiff_t m = -half; m <= half; ++m) {
              const long q = qc - m;
              if (q < q0 || q > q1) continue;
              const cdouble v = window[static_cast<std::size_t>(q - q0)];
              if (v == cdouble(0.0, 0.0)) continue;
              acc += h[static_cast<std::size_t>(m + half)] * v;
              any = true;
            }
            if (!any) continue;
            for (std::size_t a = 0; a < rx_array.n_elements; ++a)
              cap.samples[a][static_cast<std::size_t>(n)] += rx_gain[a] * a_tx * acc;
          }
        }
      }
    }
  }

  if (noise_rng != nullptr && sampling.noise_psd > 0.0) {
    const double sigma = std::sqrt(sampling.noise_psd / ts / 2.0);
    std::normal_distribution<double> gauss(0.0, sigma);
    for (std::size_t a = 0; a < rx_array.n_elements; ++a)
      for (std::size_t n = 0; n < n_samples; ++n) {
        const double re = gauss(*noise_rng);
        const double im = gauss(*noise_rng);
        cap.samples[a][n] += cdouble(re, im);
      }
  }
  return cap;
}

// Stream-split helper: one independent generator per stochastic consumer.
inline std::mt19937_64 derive_rng(std::uint64_t master_seed, std::uint64_t stream_id) {
  std::uint64_t z = master_seed + 0x9e3779b97f4a7c15ULL * (stream_id + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  z = z ^ (z >> 31);
  return std::mt19937_64(z);
}

}  // namespace chirptrack
