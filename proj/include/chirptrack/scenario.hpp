#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "chirptrack/channel.hpp"
#include "chirptrack/detect.hpp"
#include "chirptrack/identify.hpp"
#include "chirptrack/io.hpp"
#include "chirptrack/track.hpp"

namespace chirptrack {

inline constexpr double kBoltzmannT0 = 1.380649e-23 * 290.0;  // W/Hz at 290 K

struct ScenarioError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TargetConfig {
  std::array<double, 2> position{0.0, 0.0};
  std::array<double, 2> velocity{0.0, 0.0};
  std::size_t n_tx = 1, n_rx = 1;
  double tx_spacing_wl = 2.0, rx_spacing_wl = 0.5;
  double tx_power_w = 0.0158;  // 12 dBm
  double antenna_gain = 31.6;  // 15 dBi
  ClockModel clock;
  double frame_interval = 0.0, frame_offset = 0.0;
  std::size_t n_chirps = 0;
  double chirp_spacing = 0.0, chirp_duration = 0.0;
  double chirp_start_freq = 0.0, chirp_slope = 0.0;
  std::vector<double> phase_code;  // rad per chirp
};

struct SpooferConfig {
  std::array<double, 2> position{0.0, 0.0};
  std::array<double, 2> velocity{0.0, 0.0};
  std::size_t n_rx = 1;
  double rx_spacing_wl = 0.5;
  double antenna_gain = 31.6;
  ClockModel clock;
  SamplingConfig sampling;
};

struct ReflectorConfig {
  bool present = false;
  std::array<double, 2> offset{0.0, 0.0};  // relative to the target radar
  double rcs = 10.0;                       // m^2
};

struct IdentSettings {
  double tone_freq = 0.0;
  double expected_frame_min = 0.0, expected_frame_max = 0.0;
  double expected_chirp_interval = 0.0;  // longest plausible inter-chirp time
  double expected_chirp_duration = 0.0;  // shortest plausible chirp duration
  double expected_min_interchirp = 0.0;
  std::size_t m_search = 32;
  double band_lo = 0.0, band_hi = 0.0;
  double sigma_freq = 2e6;  // Hz, detection frequency prior std
  CfarConfig cfar;
  std::size_t beam_os = 4;
};

struct TrackSettings {
  std::size_t n_frames = 24;
  double desired_range_m = 30.0;
  bool range_two_way = true;
  double desired_doppler = 0.0;
  double gain_delay = 0.5, gain_doppler = 0.5;
  std::size_t timing_refine_from_frame = 2;
  std::size_t slope_refine_from_frame = 2;
  std::size_t phase_apply_frame = 12;
  std::size_t mod_order = 2;
  std::size_t beam_os = 2, range_os = 2, doppler_os = 2;
  double slope_search_frac = 0.05;
  std::size_t slope_coarse_points = 101, slope_fine_points = 21;
  double slope_gain = 0.5;  // damps the per-chirp update so grid noise does not ring
};

struct Scenario {
  double carrier = 76.25e9;
  TargetConfig target;
  SpooferConfig spoofer;
  ReflectorConfig reflector;
  IdentSettings ident;
  TrackSettings track;
  std::uint64_t seed = 1;

  double wavelength() const { return kSpeedOfLight / carrier; }
  double t_capture() const { return 2.5 * ident.expected_frame_max; }

  FrameConfig target_frame() const {
    FrameConfig f;
    f.frame_interval = target.frame_interval;
    f.frame_offset = target.frame_offset;
    f.n_tx = target.n_tx;
    f.n_rx = target.n_rx;
    for (std::size_t k = 0; k < target.n_chirps; ++k) {
      ChirpParams c;
      c.start_freq = target.chirp_start_freq;
      c.slope = target.chirp_slope;
      c.duration = target.chirp_duration;
      c.start_time = static_cast<double>(k) * target.chirp_spacing;
      c.phase = 0.0;
      TxWeights w;
      w.antenna_index = k % target.n_tx;
      w.code_phase = (k < target.phase_code.size()) ? target.phase_code[k] : 0.0;
      f.chirps.emplace_back(c, w);
    }
    f.validate();
    return f;
  }

  ArrayConfig target_tx_array() const { return ArrayConfig{target.n_tx, target.tx_spacing_wl, nullptr}; }
  ArrayConfig spoofer_rx_array() const { return ArrayConfig{spoofer.n_rx, spoofer.rx_spacing_wl, nullptr}; }

  KernelConfig kernel_config() const {
    KernelConfig k;
    k.sigma = 2.0 * ident.expected_chirp_interval;
    k.sigma_ref = ident.expected_chirp_duration / 4.0;
    k.sigma_chirp = ident.expected_min_interchirp / 4.0;
    k.lag_min = 0.5 * ident.expected_frame_min;
    k.lag_max = 1.5 * ident.expected_frame_max;
    k.lag_step = k.sigma / 10.0;
    return k;
  }
};

// --- geometry ---------------------------------------------------------------

namespace detail {

inline std::array<double, 2> at_time(const std::array<double, 2>& p, const std::array<double, 2>& v, double t) {
  return {p[0] + v[0] * t, p[1] + v[1] * t};
}

inline double dist(const std::array<double, 2>& a, const std::array<double, 2>& b) {
  return std::hypot(a[0] - b[0], a[1] - b[1]);
}

// rate of change of |a - b| for points moving at va, vb
inline double range_rate(const std::array<double, 2>& a, const std::array<double, 2>& va,
                         const std::array<double, 2>& b, const std::array<double, 2>& vb) {
  const double dx = a[0] - b[0], dy = a[1] - b[1];
  const double d = std::hypot(dx, dy);
  if (d == 0.0) return 0.0;
  return (dx * (va[0] - vb[0]) + dy * (va[1] - vb[1])) / d;
}

// signed azimuth of direction u relative to boresight b
inline double signed_angle(const std::array<double, 2>& boresight, const std::array<double, 2>& u) {
  const double dot = boresight[0] * u[0] + boresight[1] * u[1];
  const double cross = boresight[0] * u[1] - boresight[1] * u[0];
  return std::atan2(cross, dot);
}

inline std::array<double, 2> unit_towards(const std::array<double, 2>& from, const std::array<double, 2>& to) {
  const double dx = to[0] - from[0], dy = to[1] - from[1];
  const double d = std::hypot(dx, dy);
  if (d == 0.0) return {1.0, 0.0};
  return {dx / d, dy / d};
}

}  // namespace detail

// Direct target->spoofer path plus the optional reflector bounce, evaluated
// from the straight-line kinematics at time t. Boresights point at the other
// radar's initial position.
inline std::vector<PropagationPath> derive_paths(const Scenario& s, double t) {
  const auto pt = detail::at_time(s.target.position, s.target.velocity, t);
  const auto ps = detail::at_time(s.spoofer.position, s.spoofer.velocity, t);
  const auto target_boresight = detail::unit_towards(s.target.position, s.spoofer.position);
  const auto spoofer_boresight = detail::unit_towards(s.spoofer.position, s.target.position);
  const double lambda = s.wavelength();

  std::vector<PropagationPath> paths;
  {
    PropagationPath p;
    const double d = detail::dist(pt, ps);
    p.delay = d / kSpeedOfLight;
    p.doppler = -s.carrier * detail::range_rate(pt, s.target.velocity, ps, s.spoofer.velocity) / kSpeedOfLight;
    p.aod = detail::signed_angle(target_boresight, detail::unit_towards(pt, ps));
    p.aoa = detail::signed_angle(spoofer_boresight, detail::unit_towards(ps, pt));
    LinkBudget b;
    b.tx_power = s.target.tx_power_w;
    b.tx_gain = s.target.antenna_gain;
    b.rx_gain = s.spoofer.antenna_gain;
    b.rcs = 1.0;
    b.path_loss = free_space_path_loss(d, lambda);
    p.amplitude = received_amplitude(b);
    paths.push_back(p);
  }
  if (s.reflector.present) {
    PropagationPath p;
    const std::array<double, 2> pr{pt[0] + s.reflector.offset[0], pt[1] + s.reflector.offset[1]};
    const double d1 = detail::dist(pt, pr);
    const double d2 = detail::dist(pr, ps);
    p.delay = (d1 + d2) / kSpeedOfLight;
    // the reflector rides with the target, so only the reflector->spoofer leg moves
    p.doppler = -s.carrier * detail::range_rate(pr, s.target.velocity, ps, s.spoofer.velocity) / kSpeedOfLight;
    p.aod = detail::signed_angle(target_boresight, detail::unit_towards(pt, pr));
    p.aoa = detail::signed_angle(spoofer_boresight, detail::unit_towards(ps, pr));
    LinkBudget b;
    b.tx_power = s.target.tx_power_w;
    b.tx_gain = s.target.antenna_gain;
    b.rx_gain = s.spoofer.antenna_gain;
    b.rcs = s.reflector.rcs;
    const double d1_eff = std::max(d1, 0.1);
    b.path_loss = std::pow(4.0 * kPi, 3) * d1_eff * d1_eff * d2 * d2 / (lambda * lambda);
    p.amplitude = received_amplitude(b);
    paths.push_back(p);
  }
  return paths;
}

// --- scenario file ----------------------------------------------------------

namespace detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& ctx) {
  for (const auto& [key, val] : j.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) {
        ok = true;
        break;
      }
    if (!ok) throw ScenarioError("unknown key '" + key + "' in " + ctx);
  }
}

inline const json& req(const json& j, const char* key, const std::string& ctx) {
  auto it = j.find(key);
  if (it == j.end()) throw ScenarioError("missing key '" + std::string(key) + "' in " + ctx);
  return *it;
}

inline double req_num(const json& j, const char* key, const std::string& ctx) {
  const json& v = req(j, key, ctx);
  if (!v.is_number()) throw ScenarioError("key '" + std::string(key) + "' in " + ctx + " must be a number");
  return v.get<double>();
}

inline double opt_num(const json& j, const char* key, double def) {
  auto it = j.find(key);
  return (it == j.end()) ? def : it->get<double>();
}

inline std::array<double, 2> req_vec2(const json& j, const char* key, const std::string& ctx) {
  const json& v = req(j, key, ctx);
  if (!v.is_array() || v.size() != 2) throw ScenarioError("key '" + std::string(key) + "' in " + ctx + " must be [x, y]");
  return {v[0].get<double>(), v[1].get<double>()};
}

inline ClockModel parse_clock(const json& j, const std::string& ctx) {
  check_keys(j, {"h0_s", "h_minus2_per_s", "initial_bias_s", "initial_drift"}, ctx);
  ClockModel c;
  c.h0 = opt_num(j, "h0_s", 2e-19);
  c.h_minus2 = opt_num(j, "h_minus2_per_s", 2e-20);
  c.bias = opt_num(j, "initial_bias_s", 0.0);
  c.drift = opt_num(j, "initial_drift", 0.0);
  return c;
}

inline double dbm_to_watt(double dbm) { return 1e-3 * std::pow(10.0, dbm / 10.0); }
inline double dbi_to_linear(double dbi) { return std::pow(10.0, dbi / 10.0); }

}  // namespace detail

inline Scenario scenario_from_json(const json& j) {
  using namespace detail;
  Scenario s;
  check_keys(j, {"carrier_ghz", "seed", "target", "spoofer", "reflector", "identification", "tracking"}, "scenario");
  s.carrier = req_num(j, "carrier_ghz", "scenario") * 1e9;
  s.seed = req(j, "seed", "scenario").get<std::uint64_t>();

  {
    const json& t = req(j, "target", "scenario");
    check_keys(t,
               {"position_m", "velocity_mps", "n_tx", "n_rx", "tx_spacing_wavelengths", "rx_spacing_wavelengths",
                "tx_power_dbm", "antenna_gain_dbi", "clock", "frame"},
               "target");
    s.target.position = req_vec2(t, "position_m", "target");
    s.target.velocity = req_vec2(t, "velocity_mps", "target");
    s.target.n_tx = req(t, "n_tx", "target").get<std::size_t>();
    s.target.n_rx = req(t, "n_rx", "target").get<std::size_t>();
    s.target.tx_spacing_wl = opt_num(t, "tx_spacing_wavelengths", 2.0);
    s.target.rx_spacing_wl = opt_num(t, "rx_spacing_wavelengths", 0.5);
    s.target.tx_power_w = dbm_to_watt(opt_num(t, "tx_power_dbm", 12.0));
    s.target.antenna_gain = dbi_to_linear(opt_num(t, "antenna_gain_dbi", 15.0));
    if (t.contains("clock")) s.target.clock = parse_clock(t.at("clock"), "target.clock");

    const json& f = req(t, "frame", "target");
    check_keys(f,
               {"frame_interval_ms", "frame_offset_ms", "n_chirps", "chirp_spacing_us", "chirp_duration_us",
                "chirp_start_freq_mhz", "chirp_slope_mhz_per_us", "phase_code", "phase_code_deg"},
               "target.frame");
    s.target.frame_interval = req_num(f, "frame_interval_ms", "target.frame") * 1e-3;
    s.target.frame_offset = req_num(f, "frame_offset_ms", "target.frame") * 1e-3;
    s.target.n_chirps = req(f, "n_chirps", "target.frame").get<std::size_t>();
    s.target.chirp_spacing = req_num(f, "chirp_spacing_us", "target.frame") * 1e-6;
    s.target.chirp_duration = req_num(f, "chirp_duration_us", "target.frame") * 1e-6;
    s.target.chirp_start_freq = req_num(f, "chirp_start_freq_mhz", "target.frame") * 1e6;
    s.target.chirp_slope = req_num(f, "chirp_slope_mhz_per_us", "target.frame") * 1e12;
    if (f.contains("phase_code_deg")) {
      for (const auto& v : f.at("phase_code_deg")) s.target.phase_code.push_back(v.get<double>() * kPi / 180.0);
      if (s.target.phase_code.size() != s.target.n_chirps)
        throw ScenarioError("phase_code_deg length must equal n_chirps");
    } else if (f.contains("phase_code")) {
      const std::string mode = f.at("phase_code").get<std::string>();
      if (mode == "random_bpsk") {
        // filled from the master seed in finalize below
      } else if (mode != "none") {
        throw ScenarioError("phase_code must be 'random_bpsk', 'none', or use phase_code_deg");
      }
      if (mode == "random_bpsk") {
        auto rng = derive_rng(0, 0);  // placeholder, replaced after seed is known
        (void)rng;
        s.target.phase_code.assign(s.target.n_chirps, std::nan(""));
      }
    }
  }

  {
    const json& sp = req(j, "spoofer", "scenario");
    check_keys(sp,
               {"position_m", "velocity_mps", "n_rx", "rx_spacing_wavelengths", "antenna_gain_dbi", "clock", "sampling"},
               "spoofer");
    s.spoofer.position = req_vec2(sp, "position_m", "spoofer");
    s.spoofer.velocity = req_vec2(sp, "velocity_mps", "spoofer");
    s.spoofer.n_rx = req(sp, "n_rx", "spoofer").get<std::size_t>();
    s.spoofer.rx_spacing_wl = opt_num(sp, "rx_spacing_wavelengths", 0.5);
    s.spoofer.antenna_gain = dbi_to_linear(opt_num(sp, "antenna_gain_dbi", 15.0));
    if (sp.contains("clock")) s.spoofer.clock = parse_clock(sp.at("clock"), "spoofer.clock");

    const json& sa = req(sp, "sampling", "spoofer");
    check_keys(sa, {"sample_rate_mhz", "if_bandwidth_mhz", "filter_taps", "noise_figure_db", "sim_oversample"},
               "spoofer.sampling");
    s.spoofer.sampling.sample_period = 1.0 / (req_num(sa, "sample_rate_mhz", "spoofer.sampling") * 1e6);
    s.spoofer.sampling.if_bandwidth = req_num(sa, "if_bandwidth_mhz", "spoofer.sampling") * 1e6;
    s.spoofer.sampling.filter_taps = static_cast<std::size_t>(opt_num(sa, "filter_taps", 193));
    s.spoofer.sampling.noise_psd = kBoltzmannT0 * std::pow(10.0, opt_num(sa, "noise_figure_db", 15.0) / 10.0);
    s.spoofer.sampling.sim_oversample = static_cast<std::size_t>(opt_num(sa, "sim_oversample", 8));
    s.spoofer.sampling.validate();
  }

  if (j.contains("reflector") && !j.at("reflector").is_null()) {
    const json& r = j.at("reflector");
    check_keys(r, {"offset_from_target_m", "rcs_m2"}, "reflector");
    s.reflector.present = true;
    s.reflector.offset = req_vec2(r, "offset_from_target_m", "reflector");
    s.reflector.rcs = req_num(r, "rcs_m2", "reflector");
  }

  {
    const json& id = req(j, "identification", "scenario");
    check_keys(id,
               {"tone_offset_mhz", "expected_frame_interval_ms", "expected_chirp_interval_us",
                "expected_chirp_duration_us", "expected_min_interchirp_us", "m_search", "search_band_mhz",
                "sigma_freq_khz", "cfar", "beam_oversampling"},
               "identification");
    s.ident.tone_freq = req_num(id, "tone_offset_mhz", "identification") * 1e6;
    const json& ef = req(id, "expected_frame_interval_ms", "identification");
    if (!ef.is_array() || ef.size() != 2) throw ScenarioError("expected_frame_interval_ms must be [min, max]");
    s.ident.expected_frame_min = ef[0].get<double>() * 1e-3;
    s.ident.expected_frame_max = ef[1].get<double>() * 1e-3;
    s.ident.expected_chirp_interval = req_num(id, "expected_chirp_interval_us", "identification") * 1e-6;
    s.ident.expected_chirp_duration = req_num(id, "expected_chirp_duration_us", "identification") * 1e-6;
    s.ident.expected_min_interchirp = req_num(id, "expected_min_interchirp_us", "identification") * 1e-6;
    s.ident.m_search = req(id, "m_search", "identification").get<std::size_t>();
    const json& band = req(id, "search_band_mhz", "identification");
    if (!band.is_array() || band.size() != 2) throw ScenarioError("search_band_mhz must be [lo, hi]");
    s.ident.band_lo = band[0].get<double>() * 1e6;
    s.ident.band_hi = band[1].get<double>() * 1e6;
    s.ident.sigma_freq = opt_num(id, "sigma_freq_khz", 2000.0) * 1e3;
    s.ident.beam_os = static_cast<std::size_t>(opt_num(id, "beam_oversampling", 4));
    if (id.contains("cfar")) {
      const json& c = id.at("cfar");
      check_keys(c, {"n_train", "n_guard", "pfa", "consolidation_gap"}, "identification.cfar");
      s.ident.cfar.n_train = static_cast<std::size_t>(opt_num(c, "n_train", 16));
      s.ident.cfar.n_guard = static_cast<std::size_t>(opt_num(c, "n_guard", 4));
      s.ident.cfar.pfa = opt_num(c, "pfa", 1e-3);
      s.ident.cfar.consolidation_gap = static_cast<std::size_t>(opt_num(c, "consolidation_gap", 24));
    }
    s.ident.cfar.validate();
  }

  {
    const json& tr = req(j, "tracking", "scenario");
    check_keys(tr,
               {"n_frames", "desired_range_m", "range_convention", "desired_doppler_hz", "gain_delay", "gain_doppler",
                "timing_refine_from_frame", "slope_refine_from_frame", "phase_apply_frame", "mod_order",
                "beam_fft_oversampling", "range_fft_oversampling", "doppler_fft_oversampling", "slope_search_frac",
                "slope_gain"},
               "tracking");
    s.track.n_frames = req(tr, "n_frames", "tracking").get<std::size_t>();
    s.track.desired_range_m = req_num(tr, "desired_range_m", "tracking");
    if (tr.contains("range_convention")) {
      const std::string conv = tr.at("range_convention").get<std::string>();
      if (conv == "two_way")
        s.track.range_two_way = true;
      else if (conv == "one_way")
        s.track.range_two_way = false;
      else
        throw ScenarioError("range_convention must be 'one_way' or 'two_way'");
    }
    s.track.desired_doppler = opt_num(tr, "desired_doppler_hz", 0.0);
    s.track.gain_delay = opt_num(tr, "gain_delay", 0.5);
    s.track.gain_doppler = opt_num(tr, "gain_doppler", 0.5);
    s.track.timing_refine_from_frame = static_cast<std::size_t>(opt_num(tr, "timing_refine_from_frame", 2));
    s.track.slope_refine_from_frame = static_cast<std::size_t>(opt_num(tr, "slope_refine_from_frame", 2));
    s.track.phase_apply_frame = static_cast<std::size_t>(opt_num(tr, "phase_apply_frame", 12));
    s.track.mod_order = static_cast<std::size_t>(opt_num(tr, "mod_order", 2));
    s.track.beam_os = static_cast<std::size_t>(opt_num(tr, "beam_fft_oversampling", 2));
    s.track.range_os = static_cast<std::size_t>(opt_num(tr, "range_fft_oversampling", 2));
    s.track.doppler_os = static_cast<std::size_t>(opt_num(tr, "doppler_fft_oversampling", 2));
    s.track.slope_search_frac = opt_num(tr, "slope_search_frac", 0.05);
    s.track.slope_gain = opt_num(tr, "slope_gain", 0.5);
  }

  // resolve the random phase code now that the seed is known
  if (!s.target.phase_code.empty() && std::isnan(s.target.phase_code.front())) {
    auto rng = derive_rng(s.seed, 4);
    for (auto& p : s.target.phase_code) p = (rng() & 1u) ? kPi : 0.0;
  }
  return s;
}

inline Scenario load_scenario(const std::string& path) {
  return scenario_from_json(parse_strict_json(read_file(path)));
}

// --- identification stage ---------------------------------------------------

struct IdentificationResult {
  SignalEstimate estimate;
  DetectionSet d1, d2, d_search;
  std::vector<ChirpCluster> clusters;
  double coarse_interval = 0.0;
  double interval_error = 0.0;  // l_max from refinement
  double end_time = 0.0;        // absolute time when the stage finished
  std::vector<double> tones;
};

namespace detail {

template <typename T>
inline void shuffle_deterministic(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t k = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[k]);
  }
}

struct ClockDriver {
  ClockModel target, spoofer;
  std::mt19937_64 rng_target, rng_spoofer;
  double now = 0.0;

  void advance_to(double t) {
    if (t <= now) return;
    target.advance(t - now, rng_target);
    spoofer.advance(t - now, rng_spoofer);
    now = t;
  }
};

struct CaptureOutcome {
  DetectionSet detections;
  SampleCapture capture;
};

// One tone-mixed capture: simulate, beamform, pick the peak beam, CFAR,
// consolidate. Detection times are absolute.
inline DetectionSet tone_capture_detections(const Scenario& s, const ClockDriver& clocks, double tone, double start,
                                            std::size_t n, std::mt19937_64& noise_rng) {
  TargetEmission emission{s.target_frame(), s.target_tx_array(),
                          clocks.target.bias - clocks.spoofer.bias,
                          (clocks.target.drift - clocks.spoofer.drift) * s.carrier};
  const auto paths = derive_paths(s, start);
  const auto cap = simulate_capture(emission, Mixer::tone(tone), s.spoofer_rx_array(), paths, s.spoofer.sampling,
                                    start, n, &noise_rng);
  const auto bf = beamform(cap, s.ident.beam_os, s.spoofer.rx_spacing_wl);
  const auto [n_max, b_max] = max_power_bin(bf);
  (void)n_max;
  const auto hits = cfar_detect(bf.samples[b_max], s.ident.cfar);
  return consolidate(hits, s.ident.cfar.consolidation_gap, cap.sample_period, tone, start, b_max);
}

}  // namespace detail

inline IdentificationResult run_identification(const Scenario& s) {
  IdentificationResult out;
  const KernelConfig kcfg = s.kernel_config();
  auto noise_rng = derive_rng(s.seed, 0);
  detail::ClockDriver clocks{s.target.clock, s.spoofer.clock, derive_rng(s.seed, 1), derive_rng(s.seed, 2), 0.0};

  const double t_cap = s.t_capture();
  const std::size_t n_cap = static_cast<std::size_t>(std::llround(t_cap / s.spoofer.sampling.sample_period));

  out.d1 = detail::tone_capture_detections(s, clocks, s.ident.tone_freq, 0.0, n_cap, noise_rng);
  clocks.advance_to(t_cap);
  out.d2 = detail::tone_capture_detections(s, clocks, s.ident.tone_freq, t_cap, n_cap, noise_rng);
  clocks.advance_to(2.0 * t_cap);

  out.coarse_interval = estimate_frame_interval(out.d1, out.d2, kcfg);
  DetectionSet all = out.d1;
  all.insert(all.end(), out.d2.begin(), out.d2.end());
  const double frame_offset = estimate_frame_offset(all, out.coarse_interval, kcfg.sigma_ref / 4.0);
  const auto refinement = refine_frame_interval(all, frame_offset, out.coarse_interval, kcfg);
  out.interval_error = refinement.l_max;
  const double frame_interval = refinement.frame_interval;

  // a real chirp recurs in most of the captured frames; isolated clusters are
  // CFAR false alarms
  const auto all_clusters = match_chirps(refinement.frame_detections, kcfg.sigma_chirp);
  const std::size_t repetitions = static_cast<std::size_t>(std::floor(2.0 * t_cap / frame_interval));
  const std::size_t min_members = std::max<std::size_t>(3, repetitions / 2);
  for (const auto& c : all_clusters) {
    if (c.members.size() < min_members) continue;
    // single-linkage can chain a stray false alarm onto a real cluster; keep
    // only members near the median and recenter
    ChirpCluster trimmed;
    std::vector<double> times;
    times.reserve(c.members.size());
    for (const auto& m : c.members) times.push_back(m.time);
    std::sort(times.begin(), times.end());
    const double median = times[times.size() / 2];
    for (const auto& m : c.members)
      if (std::abs(m.time - median) <= kcfg.sigma_ref / 2.0) trimmed.members.push_back(m);
    if (trimmed.members.size() < min_members) continue;
    for (const auto& m : trimmed.members) trimmed.mean_time += m.time;
    trimmed.mean_time /= static_cast<double>(trimmed.members.size());
    out.clusters.push_back(std::move(trimmed));
  }

  // frequency search: one tone per frame, shuffled order
  out.tones = plan_frequency_search(s.ident.band_lo, s.ident.band_hi, s.ident.m_search);
  {
    auto rng = derive_rng(s.seed, 3);
    detail::shuffle_deterministic(out.tones, rng);
  }
  const double tone_spacing = (s.ident.m_search > 1)
                                  ? (s.ident.band_hi - s.ident.band_lo) / static_cast<double>(s.ident.m_search - 1)
                                  : (s.ident.band_hi - s.ident.band_lo);
  const std::size_t n_frame = static_cast<std::size_t>(std::floor(frame_interval / s.spoofer.sampling.sample_period));
  long j0 = static_cast<long>(std::ceil((2.0 * t_cap - frame_offset) / frame_interval));
  for (std::size_t m = 0; m < s.ident.m_search; ++m) {
    const double start = frame_offset + static_cast<double>(j0 + static_cast<long>(m)) * frame_interval;
    clocks.advance_to(start);
    auto det = detail::tone_capture_detections(s, clocks, out.tones[m], start, n_frame, noise_rng);
    for (auto& d : det) d.time = positive_mod(d.time - frame_offset, frame_interval);
    out.d_search.insert(out.d_search.end(), det.begin(), det.end());
  }
  out.end_time = frame_offset + static_cast<double>(j0 + static_cast<long>(s.ident.m_search)) * frame_interval;

  out.estimate.frame_interval = frame_interval;
  out.estimate.frame_offset = frame_offset;
  const double sf2 = s.ident.sigma_freq * s.ident.sigma_freq;
  for (const auto& cluster : out.clusters) {
    ChirpEstimate est = estimate_chirp_params(cluster.mean_time, out.d_search, sf2);
    if (est.resolved && est.slope != 0.0 && est.matched_times.size() >= 4) {
      derive_chirp_anchors(est, tone_spacing);
      out.estimate.chirps.push_back(std::move(est));
    }
  }
  std::sort(out.estimate.chirps.begin(), out.estimate.chirps.end(),
            [](const ChirpEstimate& a, const ChirpEstimate& b) { return a.start_time < b.start_time; });
  if (out.estimate.chirps.empty()) throw IdentificationError("identification: no chirps resolved");
  return out;
}

// --- tracking stage ---------------------------------------------------------

struct TrackResult {
  std::vector<MetricsRow> rows;
  SignalEstimate refined;
  TrackerState tracker;
};

using FrameHook = std::function<void(std::size_t frame_no, const ProcessedCube&, const CubePeak&)>;

inline TrackResult run_tracking(const Scenario& s, const SignalEstimate& est0, double start_time,
                                const FrameHook& hook = {}) {
  if (est0.chirps.empty()) throw ScenarioError("run_tracking: estimate has no chirps");
  TrackResult out;
  out.refined = est0;
  auto& est = out.refined;

  auto noise_rng = derive_rng(s.seed, 10);
  detail::ClockDriver clocks{s.target.clock, s.spoofer.clock, derive_rng(s.seed, 11), derive_rng(s.seed, 12), 0.0};
  clocks.advance_to(std::max(start_time, 1e-9));

  TrackerState tracker;
  tracker.desired_delay = (s.track.range_two_way ? 2.0 : 1.0) * s.track.desired_range_m / kSpeedOfLight;
  tracker.desired_doppler = s.track.desired_doppler;
  tracker.gain_delay = s.track.gain_delay;
  tracker.gain_doppler = s.track.gain_doppler;

  const double ts = s.spoofer.sampling.sample_period;
  double min_dur = est.chirps.front().duration;
  for (const auto& c : est.chirps) min_dur = std::min(min_dur, c.duration);
  const std::size_t n_sample = static_cast<std::size_t>(std::floor(min_dur / ts));
  if (n_sample < 8) throw ScenarioError("run_tracking: estimated chirps too short to sample");
  const double chirp_dur = static_cast<double>(n_sample) * ts;

  const double t_frame = est.frame_interval;
  const long j0 = static_cast<long>(std::ceil((start_time - est.frame_offset) / t_frame));
  const std::size_t k_count = est.chirps.size();
  std::vector<double> true_slopes(k_count, s.target.chirp_slope);
  bool phase_applied = false;

  for (std::size_t f = 0; f < s.track.n_frames; ++f) {
    const std::size_t frame_no = f + 1;
    const double frame_start = est.frame_offset + static_cast<double>(j0 + static_cast<long>(f)) * t_frame;
    clocks.advance_to(frame_start);
    const auto paths = derive_paths(s, frame_start);
    TargetEmission emission{s.target_frame(), s.target_tx_array(),
                            clocks.target.bias - clocks.spoofer.bias,
                            (clocks.target.drift - clocks.spoofer.drift) * s.carrier};

    // mixer frame from the current working estimate plus tracker corrections
    FrameConfig mixer_frame;
    mixer_frame.frame_interval = t_frame;
    mixer_frame.frame_offset = est.frame_offset;
    mixer_frame.n_tx = 1;
    mixer_frame.n_rx = s.spoofer.n_rx;
    for (std::size_t k = 0; k < k_count; ++k) {
      ChirpParams c;
      c.start_time = est.chirps[k].start_time + tracker.correction_delay;
      c.start_freq = est.chirps[k].start_freq + tracker.correction_freq;
      c.slope = est.chirps[k].slope;
      c.duration = chirp_dur;
      c.phase = 2.0 * kPi * tracker.correction_freq * c.start_time;
      if (phase_applied && k < est.phase_codes.size()) c.phase += est.phase_codes[k];
      c.phase = std::fmod(c.phase, 2.0 * kPi);
      mixer_frame.chirps.emplace_back(c, TxWeights{0, 0.0});
    }
    Mixer mixer = Mixer::from_frame(mixer_frame);

    std::vector<SampleCapture> chirp_caps;
    chirp_caps.reserve(k_count);
    for (std::size_t k = 0; k < k_count; ++k) {
      const double start = frame_start + mixer_frame.chirps[k].first.start_time;
      chirp_caps.push_back(simulate_capture(emission, mixer, s.spoofer_rx_array(), paths, s.spoofer.sampling, start,
                                            n_sample, &noise_rng));
    }
    const DataCube cube = build_cube(chirp_caps);
    auto [pc, peak] = process_cube(cube, s.track.beam_os, s.track.range_os, s.track.doppler_os);

    std::vector<double> working_slopes(k_count);
    for (std::size_t k = 0; k < k_count; ++k) working_slopes[k] = est.chirps[k].slope;
    double mean_slope = 0.0;
    for (double b : working_slopes) mean_slope += b;
    mean_slope /= static_cast<double>(k_count);

    const auto phys = bins_to_physical(peak, pc, mean_slope, s.spoofer.rx_spacing_wl);
    const auto fm = cube_metrics(pc, peak, mean_slope, working_slopes, true_slopes, s.track.range_two_way);
    out.rows.push_back({frame_no, fm.range_width_m, fm.doppler_width_hz, fm.slope_rmse});
    if (hook) hook(frame_no, pc, peak);

    // until the phase code is compensated the Doppler spectrum is code-spread
    // and its peak bin carries no information; chasing it would mis-lock the
    // loop right when the code estimator needs a small residual
    tracker_update(tracker, phys.delay, phase_applied ? phys.doppler : tracker.desired_doppler);

    // refinements computed at the end of frame N-1 take effect from frame N
    const bool do_timing = frame_no + 1 >= s.track.timing_refine_from_frame;
    const bool do_slope = frame_no + 1 >= s.track.slope_refine_from_frame;
    const bool do_phase = !phase_applied && frame_no + 1 >= s.track.phase_apply_frame;

    RangeAlignment align;
    if (do_timing || do_phase) {
      align = per_chirp_range_align(cube, peak.beam, pc.n_beam, pc.n_range, working_slopes);
      if (do_timing)
        for (std::size_t k = 0; k < k_count; ++k) est.chirps[k].start_time += align.corrections[k];
    }
    if (do_slope) {
      for (std::size_t k = 0; k < k_count; ++k) {
        const auto z = beam_row(cube, peak.beam, pc.n_beam, k);
        const double half_span = s.track.slope_search_frac * std::abs(est.chirps[k].slope);
        const double coarse_step = 2.0 * half_span / static_cast<double>(s.track.slope_coarse_points - 1);
        const double d1 = refine_chirp_slope(z, make_slope_grid(0.0, half_span, s.track.slope_coarse_points), ts,
                                             pc.n_range);
        const double d2 = refine_chirp_slope(z, make_slope_grid(d1, coarse_step, s.track.slope_fine_points), ts,
                                             pc.n_range);
        est.chirps[k].slope -= s.track.slope_gain * d2;
      }
    }
    if (do_phase) {
      const double t_c = (k_count > 1)
                             ? (cube.chirp_times.back() - cube.chirp_times.front()) / static_cast<double>(k_count - 1)
                             : chirp_dur;
      const auto code = vv_phase_estimate(align.peak_values, s.track.mod_order, t_c);
      est.phase_codes = code.decoded;
      phase_applied = true;
    }
  }
  out.tracker = tracker;
  return out;
}

}  // namespace chirptrack
