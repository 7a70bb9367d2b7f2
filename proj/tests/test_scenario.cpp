#include <catch2/catch_amalgamated.hpp>

#include "chirptrack/scenario.hpp"

using namespace chirptrack;

namespace {

const std::string kScenarioPath = std::string(CHIRPTRACK_SCENARIO_DIR) + "/paper_sec4.json";

}  // namespace

TEST_CASE("bundled scenario loads with expected physics") {
  const Scenario s = load_scenario(kScenarioPath);
  CHECK(s.carrier == Catch::Approx(76.25e9));
  CHECK(s.target.n_tx == 3);
  CHECK(s.target.n_chirps == 48);
  CHECK(s.target.chirp_slope == Catch::Approx(15.625e12));
  CHECK(s.spoofer.n_rx == 8);
  CHECK(s.spoofer.sampling.sample_period == Catch::Approx(1e-7));
  CHECK(s.reflector.present);
  CHECK(s.track.phase_apply_frame == 12);
  CHECK(s.t_capture() == Catch::Approx(20e-3));
  // random BPSK code resolved from the seed, values in {0, pi}
  REQUIRE(s.target.phase_code.size() == 48);
  for (double p : s.target.phase_code) CHECK((p == 0.0 || p == kPi));
  // frame assembles and validates
  const auto f = s.target_frame();
  CHECK(f.chirps.size() == 48);
  CHECK(f.chirps[1].second.antenna_index == 1);  // TDM cycling
  CHECK(f.chirps[3].second.antenna_index == 0);
  // kernel defaults derived from the expectations block
  const auto k = s.kernel_config();
  CHECK(k.sigma == Catch::Approx(200e-6));
  CHECK(k.sigma_ref == Catch::Approx(5e-6));
  CHECK_NOTHROW(k.validate());
}

TEST_CASE("unknown and duplicate keys are rejected") {
  const std::string text = read_file(kScenarioPath);
  {
    auto j = parse_strict_json(text);
    j["surprise"] = 1;
    CHECK_THROWS_WITH(scenario_from_json(j), Catch::Matchers::ContainsSubstring("unknown key"));
  }
  {
    auto j = parse_strict_json(text);
    j["target"]["frame"].erase("chirp_spacing_us");
    CHECK_THROWS_WITH(scenario_from_json(j), Catch::Matchers::ContainsSubstring("missing key"));
  }
  // duplicate keys die in the parser itself
  CHECK_THROWS_WITH(parse_strict_json(R"({"carrier_ghz": 76, "carrier_ghz": 77})"),
                    Catch::Matchers::ContainsSubstring("duplicate key"));
}

TEST_CASE("geometry-derived paths") {
  const Scenario s = load_scenario(kScenarioPath);
  const auto paths = derive_paths(s, 0.0);
  REQUIRE(paths.size() == 2);
  // direct: 50 m separation, closing at 14.14 m/s
  CHECK(paths[0].delay == Catch::Approx(50.0 / kSpeedOfLight).epsilon(1e-12));
  CHECK(paths[0].doppler == Catch::Approx(76.25e9 * 14.14 / kSpeedOfLight).epsilon(1e-3));
  CHECK(paths[0].aoa == Catch::Approx(0.0).margin(1e-12));
  CHECK(paths[0].aod == Catch::Approx(0.0).margin(1e-12));
  // reflector rides 1 m ahead of the target (nearly colocated in angle)
  CHECK(paths[1].delay > paths[0].delay);
  const double d1 = std::hypot(1.0, 0.02);
  const double d2 = std::hypot(49.0, 0.02);
  CHECK(paths[1].delay == Catch::Approx((d1 + d2) / kSpeedOfLight).epsilon(1e-9));
  // angles are counterclockwise from boresight in world coordinates; looking
  // back along -x, a +y offset appears at a negative angle
  CHECK(paths[1].aoa == Catch::Approx(-std::atan2(0.02, 49.0)).margin(1e-6));
  CHECK(paths[1].aod == Catch::Approx(std::atan2(0.02, 1.0)).margin(1e-6));
  // both paths arrive with comparable strength in this layout
  CHECK(paths[1].amplitude / paths[0].amplitude > 0.3);
  CHECK(paths[1].amplitude / paths[0].amplitude < 3.0);
  // closing geometry: at a later time the delay is shorter
  const auto later = derive_paths(s, 0.1);
  CHECK(later[0].delay < paths[0].delay);
}

TEST_CASE("seed override changes the phase code deterministically") {
  auto j = parse_strict_json(read_file(kScenarioPath));
  j["seed"] = 2;
  const Scenario a = scenario_from_json(j);
  const Scenario b = scenario_from_json(j);
  CHECK(a.target.phase_code == b.target.phase_code);
  j["seed"] = 3;
  const Scenario c = scenario_from_json(j);
  CHECK(a.target.phase_code != c.target.phase_code);  // overwhelmingly likely over 48 chirps
}
