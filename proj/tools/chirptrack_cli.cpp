// Command-line front end: signal identification, mixer tracking, end-to-end
// runs, and metrics reporting.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "chirptrack/scenario.hpp"

namespace {

using namespace chirptrack;

struct CommonOpts {
  std::string scenario_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
};

Scenario load(const CommonOpts& c) {
  Scenario s = load_scenario(c.scenario_path);
  if (c.seed) s.seed = *c.seed;
  std::filesystem::create_directories(c.out_dir);
  return s;
}

IdentificationResult do_identify(const Scenario& s, const std::string& out_dir) {
  IdentificationResult res = run_identification(s);
  DetectionSet all = res.d1;
  all.insert(all.end(), res.d2.begin(), res.d2.end());
  all.insert(all.end(), res.d_search.begin(), res.d_search.end());
  write_file(out_dir + "/detections.csv", detections_to_csv(all));
  write_file(out_dir + "/estimate.cfg", estimate_to_text(res.estimate));
  std::printf("identify: %zu chirps resolved, frame interval %.9f ms, offset %.9f ms\n", res.estimate.chirps.size(),
              res.estimate.frame_interval * 1e3, res.estimate.frame_offset * 1e3);
  return res;
}

struct TrackOutcome {
  TrackResult result;
  double doppler_bin_hz = 0.0;
};

TrackOutcome do_track(const Scenario& s, const SignalEstimate& est, double start_time, const std::string& out_dir,
                      const std::string& metrics_path, bool dump_cubes) {
  TrackOutcome out;
  FrameHook hook = [&](std::size_t frame_no, const ProcessedCube& pc, const CubePeak& peak) {
    if (pc.chirp_interval > 0.0) out.doppler_bin_hz = 1.0 / (static_cast<double>(pc.n_doppler) * pc.chirp_interval);
    if (dump_cubes)
      dump_cube_magnitude(pc, peak.beam, out_dir + "/cube_frame_" + std::to_string(frame_no) + ".bin");
  };
  out.result = run_tracking(s, est, start_time, hook);
  write_file(metrics_path, metrics_to_csv(out.result.rows));
  write_file(out_dir + "/estimate_refined.cfg", estimate_to_text(out.result.refined));
  const auto& last = out.result.rows.back();
  std::printf("track: %zu frames, final range width %.3f m, Doppler width %.1f Hz, slope RMSE %.3e Hz/s\n",
              out.result.rows.size(), last.range_width_m, last.doppler_width_hz, last.slope_rmse_hz_per_s);
  return out;
}

// --check gate: the tracked endpoint must reach the documented convergence
// targets (range width <= 1 m, Doppler width <= 2 Doppler bins).
int check_outcome(const TrackOutcome& out) {
  const auto& last = out.result.rows.back();
  bool ok = true;
  if (last.range_width_m > 1.0) {
    std::fprintf(stderr, "check failed: final range width %.3f m > 1.0 m\n", last.range_width_m);
    ok = false;
  }
  if (out.doppler_bin_hz > 0.0 && last.doppler_width_hz > 2.0 * out.doppler_bin_hz) {
    std::fprintf(stderr, "check failed: final Doppler width %.1f Hz > %.1f Hz\n", last.doppler_width_hz,
                 2.0 * out.doppler_bin_hz);
    ok = false;
  }
  return ok ? 0 : 1;
}

void do_report(const std::string& metrics_path) {
  const auto rows = metrics_from_csv(read_file(metrics_path));
  if (rows.empty()) {
    std::printf("report: no rows in %s\n", metrics_path.c_str());
    return;
  }
  double min_range = rows.front().range_width_m, min_dop = rows.front().doppler_width_hz;
  std::size_t min_range_frame = rows.front().frame_index, min_dop_frame = rows.front().frame_index;
  for (const auto& r : rows) {
    if (r.range_width_m < min_range) {
      min_range = r.range_width_m;
      min_range_frame = r.frame_index;
    }
    if (r.doppler_width_hz < min_dop) {
      min_dop = r.doppler_width_hz;
      min_dop_frame = r.frame_index;
    }
  }
  std::printf("frames: %zu\n", rows.size());
  std::printf("range width:   first %.3f m, final %.3f m, best %.3f m (frame %zu)\n", rows.front().range_width_m,
              rows.back().range_width_m, min_range, min_range_frame);
  std::printf("Doppler width: first %.1f Hz, final %.1f Hz, best %.1f Hz (frame %zu)\n",
              rows.front().doppler_width_hz, rows.back().doppler_width_hz, min_dop, min_dop_frame);
  std::printf("slope RMSE:    first %.3e Hz/s, final %.3e Hz/s\n", rows.front().slope_rmse_hz_per_s,
              rows.back().slope_rmse_hz_per_s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FMCW signal identification and mixer tracking toolkit"};
  app.require_subcommand(1);

  CommonOpts common;
  std::string estimate_path, metrics_path;
  double start_time = 0.25;
  bool dump_cubes = false, check = false;

  auto add_common = [&](CLI::App* sub, bool needs_scenario) {
    if (needs_scenario) sub->add_option("-s,--scenario", common.scenario_path, "scenario file")->required();
    sub->add_option("--seed", common.seed, "override the scenario seed");
    sub->add_option("-o,--out", common.out_dir, "output directory");
  };

  auto* identify = app.add_subcommand("identify", "estimate the target waveform from tone-mixed captures");
  add_common(identify, true);

  auto* track = app.add_subcommand("track", "track a previously identified waveform");
  add_common(track, true);
  track->add_option("-e,--estimate", estimate_path, "serialized signal estimate (defaults to <out>/estimate.cfg)");
  track->add_option("--metrics", metrics_path, "metrics CSV path (defaults to <out>/metrics.csv)");
  track->add_option("--start-time", start_time, "absolute time tracking begins, s");
  track->add_flag("--dump-cubes", dump_cubes, "write per-frame range-Doppler magnitude dumps");
  track->add_flag("--check", check, "nonzero exit unless convergence targets are met");

  auto* run = app.add_subcommand("run", "identification followed by tracking");
  add_common(run, true);
  run->add_option("--metrics", metrics_path, "metrics CSV path (defaults to <out>/metrics.csv)");
  run->add_flag("--dump-cubes", dump_cubes, "write per-frame range-Doppler magnitude dumps");
  run->add_flag("--check", check, "nonzero exit unless convergence targets are met");

  auto* report = app.add_subcommand("report", "summarize a metrics CSV");
  report->add_option("--metrics", metrics_path, "metrics CSV path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (report->parsed()) {
      do_report(metrics_path);
      return 0;
    }
    if (metrics_path.empty()) metrics_path = common.out_dir + "/metrics.csv";
    if (identify->parsed()) {
      const Scenario s = load(common);
      do_identify(s, common.out_dir);
      return 0;
    }
    if (track->parsed()) {
      const Scenario s = load(common);
      if (estimate_path.empty()) estimate_path = common.out_dir + "/estimate.cfg";
      const SignalEstimate est = estimate_from_text(read_file(estimate_path));
      const auto out = do_track(s, est, start_time, common.out_dir, metrics_path, dump_cubes);
      return check ? check_outcome(out) : 0;
    }
    // run
    const Scenario s = load(common);
    const auto ident = do_identify(s, common.out_dir);
    const auto out = do_track(s, ident.estimate, ident.end_time, common.out_dir, metrics_path, dump_cubes);
    return check ? check_outcome(out) : 0;
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return 1;
  }
}
