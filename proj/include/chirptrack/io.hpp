#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "chirptrack/detect.hpp"
#include "chirptrack/identify.hpp"
#include "chirptrack/track.hpp"

namespace chirptrack {

using nlohmann::json;

namespace detail {

// DOM-building SAX handler that rejects duplicate object keys.
struct StrictSax {
  json root;
  std::vector<json*> stack;
  std::vector<std::set<std::string>> key_sets;
  std::string cur_key;

  json* place(json v) {
    if (stack.empty()) {
      root = std::move(v);
      return &root;
    }
    json* top = stack.back();
    if (top->is_object()) {
      (*top)[cur_key] = std::move(v);
      return &(*top)[cur_key];
    }
    top->push_back(std::move(v));
    return &top->back();
  }

  bool null() { place(json(nullptr)); return true; }
  bool boolean(bool v) { place(json(v)); return true; }
  bool number_integer(std::int64_t v) { place(json(v)); return true; }
  bool number_unsigned(std::uint64_t v) { place(json(v)); return true; }
  bool number_float(double v, const std::string&) { place(json(v)); return true; }
  bool string(std::string& v) { place(json(v)); return true; }
  bool binary(json::binary_t& v) { place(json(v)); return true; }
  bool start_object(std::size_t) {
    stack.push_back(place(json::object()));
    key_sets.emplace_back();
    return true;
  }
  bool key(std::string& k) {
    if (!key_sets.back().insert(k).second) throw std::runtime_error("duplicate key '" + k + "' in configuration");
    cur_key = k;
    return true;
  }
  bool end_object() {
    stack.pop_back();
    key_sets.pop_back();
    return true;
  }
  bool start_array(std::size_t) {
    stack.push_back(place(json::array()));
    return true;
  }
  bool end_array() {
    stack.pop_back();
    return true;
  }
  bool parse_error(std::size_t pos, const std::string&, const json::exception& ex) {
    throw std::runtime_error("parse error at byte " + std::to_string(pos) + ": " + ex.what());
  }
};

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

// Parses JSON text, rejecting duplicate keys.
inline json parse_strict_json(const std::string& text) {
  detail::StrictSax sax;
  json::sax_parse(text, &sax);
  return sax.root;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

// --- detections CSV ---------------------------------------------------------

inline std::string detections_to_csv(const DetectionSet& d) {
  std::ostringstream ss;
  ss << "time_s,freq_hz,beam\n";
  for (const auto& det : d)
    ss << detail::fmt_double(det.time) << "," << detail::fmt_double(det.freq) << "," << det.beam << "\n";
  return ss.str();
}

inline DetectionSet detections_from_csv(const std::string& text) {
  DetectionSet out;
  std::istringstream ss(text);
  std::string line;
  if (!std::getline(ss, line)) return out;  // header
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    Detection d;
    std::size_t c1 = line.find(',');
    std::size_t c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) throw std::runtime_error("bad detections CSV row: " + line);
    d.time = std::stod(line.substr(0, c1));
    d.freq = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
    d.beam = static_cast<std::size_t>(std::stoul(line.substr(c2 + 1)));
    out.push_back(d);
  }
  return out;
}

// --- per-frame metrics CSV --------------------------------------------------

struct MetricsRow {
  std::size_t frame_index = 0;
  double range_width_m = 0.0;
  double doppler_width_hz = 0.0;
  double slope_rmse_hz_per_s = 0.0;
};

inline std::string metrics_to_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream ss;
  ss << "frame_index,range_width_m,doppler_width_hz,slope_rmse_hz_per_s\n";
  for (const auto& r : rows)
    ss << r.frame_index << "," << detail::fmt_double(r.range_width_m) << "," << detail::fmt_double(r.doppler_width_hz)
       << "," << detail::fmt_double(r.slope_rmse_hz_per_s) << "\n";
  return ss.str();
}

inline std::vector<MetricsRow> metrics_from_csv(const std::string& text) {
  std::vector<MetricsRow> out;
  std::istringstream ss(text);
  std::string line;
  if (!std::getline(ss, line)) return out;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    MetricsRow r;
    std::istringstream ls(line);
    std::string field;
    std::getline(ls, field, ',');
    r.frame_index = static_cast<std::size_t>(std::stoul(field));
    std::getline(ls, field, ',');
    r.range_width_m = std::stod(field);
    std::getline(ls, field, ',');
    r.doppler_width_hz = std::stod(field);
    std::getline(ls, field, ',');
    r.slope_rmse_hz_per_s = std::stod(field);
    out.push_back(r);
  }
  return out;
}

// --- capture binary dump ----------------------------------------------------
// Header: u32 n_rx, u64 n_samples, f64 sample_period, f64 start_time, then
// interleaved little-endian float32 (re, im) pairs, antenna-major.

inline void dump_capture(const SampleCapture& cap, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  const std::uint32_t n_rx = static_cast<std::uint32_t>(cap.n_rx());
  const std::uint64_t n = cap.n_samples();
  out.write(reinterpret_cast<const char*>(&n_rx), 4);
  out.write(reinterpret_cast<const char*>(&n), 8);
  out.write(reinterpret_cast<const char*>(&cap.sample_period), 8);
  out.write(reinterpret_cast<const char*>(&cap.start_time), 8);
  for (const auto& row : cap.samples)
    for (const auto& v : row) {
      const float re = static_cast<float>(v.real());
      const float im = static_cast<float>(v.imag());
      out.write(reinterpret_cast<const char*>(&re), 4);
      out.write(reinterpret_cast<const char*>(&im), 4);
    }
}

inline SampleCapture load_capture(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::uint32_t n_rx = 0;
  std::uint64_t n = 0;
  SampleCapture cap;
  in.read(reinterpret_cast<char*>(&n_rx), 4);
  in.read(reinterpret_cast<char*>(&n), 8);
  in.read(reinterpret_cast<char*>(&cap.sample_period), 8);
  in.read(reinterpret_cast<char*>(&cap.start_time), 8);
  cap.samples.assign(n_rx, std::vector<cdouble>(n));
  for (auto& row : cap.samples)
    for (auto& v : row) {
      float re = 0.0f, im = 0.0f;
      in.read(reinterpret_cast<char*>(&re), 4);
      in.read(reinterpret_cast<char*>(&im), 4);
      v = cdouble(re, im);
    }
  if (!in) throw std::runtime_error("truncated capture file " + path);
  return cap;
}

// CSV form for small captures: one row per sample, one re/im column pair per
// antenna.
inline std::string capture_to_csv(const SampleCapture& cap) {
  std::ostringstream ss;
  ss << "sample";
  for (std::size_t a = 0; a < cap.n_rx(); ++a) ss << ",rx" << a << "_re,rx" << a << "_im";
  ss << "\n";
  for (std::size_t n = 0; n < cap.n_samples(); ++n) {
    ss << n;
    for (std::size_t a = 0; a < cap.n_rx(); ++a)
      ss << "," << detail::fmt_double(cap.samples[a][n].real()) << "," << detail::fmt_double(cap.samples[a][n].imag());
    ss << "\n";
  }
  return ss.str();
}

// --- range-Doppler magnitude dump -------------------------------------------

inline void dump_cube_magnitude(const ProcessedCube& cube, std::size_t beam, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  const std::uint64_t nr = cube.n_range, nd = cube.n_doppler;
  out.write(reinterpret_cast<const char*>(&nr), 8);
  out.write(reinterpret_cast<const char*>(&nd), 8);
  for (std::size_t n = 0; n < cube.n_range; ++n)
    for (std::size_t d = 0; d < cube.n_doppler; ++d) {
      const float m = static_cast<float>(std::abs(cube.at(beam, n, d)));
      out.write(reinterpret_cast<const char*>(&m), 4);
    }
}

// --- signal estimate --------------------------------------------------------
// Stable hand-written formatting so that load + save round-trips to
// byte-identical text.

inline std::string estimate_to_text(const SignalEstimate& est) {
  std::ostringstream ss;
  ss << "{\n";
  ss << "  \"frame_interval_s\": " << detail::fmt_double(est.frame_interval) << ",\n";
  ss << "  \"frame_offset_s\": " << detail::fmt_double(est.frame_offset) << ",\n";
  ss << "  \"chirps\": [\n";
  for (std::size_t k = 0; k < est.chirps.size(); ++k) {
    const auto& c = est.chirps[k];
    ss << "    {\"start_time_s\": " << detail::fmt_double(c.start_time)
       << ", \"start_freq_hz\": " << detail::fmt_double(c.start_freq)
       << ", \"slope_hz_per_s\": " << detail::fmt_double(c.slope)
       << ", \"duration_s\": " << detail::fmt_double(c.duration)
       << ", \"reg_offset_hz\": " << detail::fmt_double(c.reg_offset)
       << ", \"resolved\": " << (c.resolved ? "true" : "false") << "}";
    ss << (k + 1 < est.chirps.size() ? ",\n" : "\n");
  }
  ss << "  ],\n";
  ss << "  \"phase_codes_rad\": [";
  for (std::size_t k = 0; k < est.phase_codes.size(); ++k)
    ss << detail::fmt_double(est.phase_codes[k]) << (k + 1 < est.phase_codes.size() ? ", " : "");
  ss << "]\n";
  ss << "}\n";
  return ss.str();
}

inline SignalEstimate estimate_from_text(const std::string& text) {
  const json j = parse_strict_json(text);
  SignalEstimate est;
  est.frame_interval = j.at("frame_interval_s").get<double>();
  est.frame_offset = j.at("frame_offset_s").get<double>();
  for (const auto& jc : j.at("chirps")) {
    ChirpEstimate c;
    c.start_time = jc.at("start_time_s").get<double>();
    c.start_freq = jc.at("start_freq_hz").get<double>();
    c.slope = jc.at("slope_hz_per_s").get<double>();
    c.duration = jc.at("duration_s").get<double>();
    c.reg_offset = jc.at("reg_offset_hz").get<double>();
    c.resolved = jc.at("resolved").get<bool>();
    est.chirps.push_back(std::move(c));
  }
  for (const auto& v : j.at("phase_codes_rad")) est.phase_codes.push_back(v.get<double>());
  return est;
}

}  // namespace chirptrack
