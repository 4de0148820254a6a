#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "skipseg/detrend.hpp"
#include "skipseg/rng.hpp"
#include "skipseg/synth.hpp"

using namespace skipseg;

namespace {

SkipProfile from_counts(const std::vector<std::uint64_t>& counts, double bw = 0.5) {
  auto p = SkipProfile::empty("t", "all", static_cast<double>(counts.size()) * bw, bw);
  p.counts = counts;
  for (auto c : counts) p.total_skips += c;
  return p;
}

}  // namespace

TEST_SUITE("detrend") {
  TEST_CASE("constant profile leaves no residual") {
    const auto d = detrend(from_counts(std::vector<std::uint64_t>(200, 17)));
    for (std::size_t i = 0; i < d.residual.size(); ++i) {
      CHECK(d.residual[i] < 1e-6);
      CHECK(std::abs(d.trend[i] - 1.0 / 200.0) < 1e-6);
    }
    CHECK(d.low_confidence.front());
    CHECK(d.low_confidence.back());
    CHECK_FALSE(d.low_confidence[100]);
  }

  TEST_CASE("impulse on a smooth trend is the residual maximum") {
    std::vector<double> x(300);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = 1.0 + 0.3 * std::sin(2.0 * std::numbers::pi * static_cast<double>(i) / 150.0);
    x[137] += 2.0;
    const auto d = detrend_series(x, 0.5);
    CHECK(std::max_element(d.residual.begin(), d.residual.end()) - d.residual.begin() == 137);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(d.residual[i] == std::max(0.0, x[i] - d.trend[i]));
  }

  TEST_CASE("pure low-frequency input leaves a negligible residual") {
    std::vector<double> x(1200);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = 2.0 + std::sin(2.0 * std::numbers::pi * static_cast<double>(i) / 400.0);
    const auto d = detrend_series(x, 0.5);
    const double peak = *std::max_element(x.begin(), x.end());
    for (std::size_t i = 40; i + 40 < x.size(); ++i) CHECK(d.residual[i] <= 1e-3 * peak);
  }

  TEST_CASE("detrend is invariant to scaling the counts") {
    Rng rng(5);
    std::vector<std::uint64_t> c(240);
    for (auto& v : c) v = 5 + rng.below(30);
    auto scaled = c;
    for (auto& v : scaled) v *= 9;
    const auto a = detrend(from_counts(c)), b = detrend(from_counts(scaled));
    for (std::size_t i = 0; i < c.size(); ++i) {
      CHECK(a.residual[i] == doctest::Approx(b.residual[i]).epsilon(1e-12));
      CHECK(a.residual[i] >= 0.0);
    }
  }

  TEST_CASE("parameter and input errors") {
    DetrendParams even;
    even.median_window_bins = 8;
    CHECK_THROWS_AS(detrend(from_counts({1, 2, 3}), even), Error);
    CHECK_THROWS_AS(detrend(from_counts({0, 0, 0})), Error);
  }

  TEST_CASE("top residual peaks find injected surges") {
    const auto song = gen_song(77);
    ListenerModel m;
    m.surge_rate = 0.03;
    m.delay_jitter_s = 0.0;
    const auto p = simulate_profile(song, m, 1000000, "2021-01-01", "US", 3);
    const auto d = detrend(p);
    const auto& b = song.structural.times_s;
    const auto peaks = top_residual_peaks(d, b.size(), 4);
    REQUIRE(peaks.size() == b.size());
    for (std::size_t pk : peaks) {
      const bool near = std::any_of(b.begin(), b.end(), [&](double t) {
        const auto target = static_cast<long>((t + 3.5) / 0.5);
        return std::abs(static_cast<long>(pk) - target) <= 1;
      });
      CHECK(near);
    }
  }

  TEST_CASE("surge delay of impulses placed 3.5 s after each boundary") {
    std::vector<double> x(400, 0.0);
    const BoundarySet bs{"t", {20.0, 50.0, 130.0}, BoundaryKind::kStructural};
    for (double b : bs.times_s) x[static_cast<std::size_t>((b + 3.5) / 0.5)] = 1.0;
    DetrendedProfile d;
    d.bin_width_s = 0.5;
    d.residual = x;
    CHECK(surge_delay_estimate(d, bs) == doctest::Approx(3.5));

    DetrendedProfile silent;
    silent.bin_width_s = 0.5;
    silent.residual.assign(400, 0.0);
    silent.residual[10] = 1.0;
    CHECK_THROWS_AS(surge_delay_estimate(silent, bs), Error);
  }

  TEST_CASE("simulated reaction delay is recovered") {
    ListenerModel m;
    std::vector<double> estimates;
    for (std::uint64_t s = 0; s < 6; ++s) {
      const auto song = gen_song(900 + s);
      const auto d = detrend(simulate_profile(song, m, 300000, "2021-01-01", "US", s));
      estimates.push_back(surge_delay_estimate(d, song.structural));
    }
    std::sort(estimates.begin(), estimates.end());
    const double median = 0.5 * (estimates[2] + estimates[3]);
    CHECK(median >= 3.0);
    CHECK(median <= 4.0);
  }
}
