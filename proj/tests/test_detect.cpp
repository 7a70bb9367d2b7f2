#include <random>

#include <catch2/catch_amalgamated.hpp>

#include "chirptrack/detect.hpp"

using namespace chirptrack;

TEST_CASE("beamform recovers the arrival angle") {
  const std::size_t n_rx = 8, n = 16;
  const double angle = 0.35, spacing = 0.5;
  SampleCapture cap;
  cap.sample_period = 1e-7;
  cap.samples.assign(n_rx, std::vector<cdouble>(n));
  for (std::size_t a = 0; a < n_rx; ++a) {
    const double ph = 2.0 * kPi * static_cast<double>(a) * spacing * std::sin(angle);
    for (std::size_t s = 0; s < n; ++s) cap.samples[a][s] = cdouble(std::cos(ph), std::sin(ph));
  }
  const auto bf = beamform(cap, 4, spacing);
  REQUIRE(bf.samples.size() == 32);
  const auto [s_max, b_max] = max_power_bin(bf);
  (void)s_max;
  REQUIRE(!std::isnan(bf.beam_angles[b_max]));
  CHECK(bf.beam_angles[b_max] == Catch::Approx(angle).margin(kPi / 32.0));
  // peak power concentrates nearly all antenna energy
  CHECK(std::norm(bf.samples[b_max][0]) > 0.95 * static_cast<double>(n_rx * n_rx));
}

TEST_CASE("beam angle grid marks invisible bins") {
  SampleCapture cap;
  cap.samples.assign(2, std::vector<cdouble>(4, cdouble(1.0, 0.0)));
  const auto bf = beamform(cap, 4, 0.25);  // spacing 0.25 wavelengths: only |u| <= 0.25 visible
  std::size_t invisible = 0;
  for (double a : bf.beam_angles)
    if (std::isnan(a)) ++invisible;
  CHECK(invisible > 0);
}

TEST_CASE("CFAR threshold factor and false alarm rate") {
  // alpha = N (Pfa^{-1/N} - 1); for N = 32, Pfa = 1e-3 this is 32*(10^{3/32}-1)
  CfarConfig cfg;
  cfg.n_train = 16;
  cfg.n_guard = 4;
  cfg.pfa = 1e-3;

  std::mt19937_64 rng(12345);
  std::normal_distribution<double> g(0.0, 1.0);
  const std::size_t n = 200000;
  std::vector<cdouble> noise(n);
  for (auto& v : noise) v = cdouble(g(rng), g(rng));
  const auto hits = cfar_detect(noise, cfg);
  const double rate = static_cast<double>(hits.size()) / static_cast<double>(n);
  CHECK(rate > 0.4e-3);
  CHECK(rate < 2.5e-3);
}

TEST_CASE("CFAR flags an injected point target") {
  CfarConfig cfg;
  cfg.n_train = 16;
  cfg.n_guard = 4;
  cfg.pfa = 1e-3;
  std::mt19937_64 rng(99);
  std::normal_distribution<double> g(0.0, 0.01);
  std::vector<cdouble> x(2000);
  for (auto& v : x) v = cdouble(g(rng), g(rng));
  x[1000] += cdouble(1.0, 0.0);
  x[1002] += cdouble(0.8, 0.0);  // inside the guard band of 1000
  const auto hits = cfar_detect(x, cfg);
  REQUIRE(!hits.empty());
  bool covers = false;
  for (auto h : hits)
    if (h >= 1000 && h <= 1002) covers = true;
  CHECK(covers);
}

TEST_CASE("CFAR rejects degenerate configs") {
  CfarConfig cfg;
  cfg.pfa = 0.0;
  std::vector<cdouble> x(1000, cdouble(1.0, 0.0));
  CHECK_THROWS_AS(cfar_detect(x, cfg), std::invalid_argument);
  cfg.pfa = 1e-3;
  std::vector<cdouble> tiny(10, cdouble(1.0, 0.0));
  CHECK_THROWS_AS(cfar_detect(tiny, cfg), std::invalid_argument);
}

TEST_CASE("consolidation groups nearby hits at their center") {
  // gap = 3: {10,12,15} chain (12->15 is 3 <= gap), {40} separate
  const std::vector<std::size_t> idx = {10, 12, 15, 40};
  const auto det = consolidate(idx, 3, 1e-6, 5e6, 1.0, 2);
  REQUIRE(det.size() == 2);
  CHECK(det[0].time == Catch::Approx(1.0 + 12e-6));  // center (10+15)/2 = 12
  CHECK(det[0].freq == 5e6);
  CHECK(det[0].beam == 2);
  CHECK(det[1].time == Catch::Approx(1.0 + 40e-6));
}

TEST_CASE("consolidation requires sorted input") {
  CHECK_THROWS_AS(consolidate({5, 3}, 2, 1e-6, 0.0), std::invalid_argument);
  CHECK(consolidate({}, 2, 1e-6, 0.0).empty());
}

TEST_CASE("max_power_bin tie-break is lowest sample then beam") {
  BeamformedCapture bf;
  bf.samples = {{cdouble(1.0, 0.0), cdouble(1.0, 0.0)}, {cdouble(1.0, 0.0), cdouble(1.0, 0.0)}};
  const auto [s, b] = max_power_bin(bf);
  CHECK(s == 0);
  CHECK(b == 0);
}
