#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "skipseg/segmentation.hpp"
#include "skipseg/skip_boundary.hpp"
#include "skipseg/synth.hpp"

using namespace skipseg;

namespace {

SkipProfile flat_profile(double dur, std::uint64_t per_bin = 10) {
  auto p = SkipProfile::empty("t", "all", dur, 0.5);
  for (auto& c : p.counts) c = per_bin;
  p.total_skips = per_bin * p.counts.size();
  return p;
}

struct Corpus {
  std::vector<SyntheticSong> songs;
  std::vector<SkipProfile> profiles;
  nn::Model model;
};

// A small trained skip model shared by the slower tests.
const Corpus& corpus() {
  static const Corpus c = [] {
    Corpus out;
    ListenerModel m;
    for (std::uint64_t s = 0; s < 16; ++s) {
      out.songs.push_back(gen_song(4000 + s));
      out.profiles.push_back(simulate_profile(out.songs.back(), m, 300000, "all", "all", s));
    }
    std::vector<SkipWindowSample> train;
    for (std::size_t i = 0; i < 10; ++i) {
      const auto w = make_windows(out.profiles[i], &out.songs[i].structural);
      train.insert(train.end(), w.begin(), w.end());
    }
    nn::TrainConfig cfg;
    cfg.epochs = 15;
    cfg.seed = 2;
    out.model = train_skip_model(train, cfg);
    return out;
  }();
  return c;
}

}  // namespace

TEST_SUITE("skip_boundary") {
  TEST_CASE("window centres and counts") {
    SkipWindowConfig cfg;
    cfg.hop_s = 1.0;
    const auto w = make_windows(flat_profile(60.0), nullptr, cfg);
    REQUIRE(w.size() == 31);
    CHECK(w.front().center_time_s == 15.0);
    CHECK(w.back().center_time_s == 45.0);
    for (const auto& s : w) {
      CHECK(s.window.size() == 60);
      CHECK_FALSE(s.label.has_value());
    }
  }

  TEST_CASE("one second labeling radius") {
    const BoundarySet b{"t", {30.0}, BoundaryKind::kStructural};
    const auto w = make_windows(flat_profile(60.0), &b);
    auto at = [&](double c) {
      return *std::find_if(w.begin(), w.end(), [&](const auto& s) { return std::abs(s.center_time_s - c) < 1e-9; })->label;
    };
    CHECK(at(29.5) == 1);
    CHECK(at(31.0) == 1);
    CHECK(at(31.5) == 0);
    CHECK(window_label(31.0, b.times_s, 1.0) == 1);
  }

  TEST_CASE("labels equal a brute-force recount on synthetic tracks") {
    const auto& c = corpus();
    for (std::size_t i = 0; i < 4; ++i) {
      const auto w = make_windows(c.profiles[i], &c.songs[i].structural);
      std::size_t positives = 0, expected = 0;
      for (const auto& s : w) {
        positives += static_cast<std::size_t>(*s.label);
        bool near = false;
        for (double b : c.songs[i].structural.times_s) near |= std::abs(s.center_time_s - b) <= 1.0 + 1e-9;
        expected += near;
      }
      CHECK(positives == expected);
    }
  }

  TEST_CASE("too-short tracks are skipped with a warning") {
    std::vector<std::string> warnings;
    set_warning_handler([&](const std::string& w) { warnings.push_back(w); });
    CHECK(make_windows(flat_profile(25.0), nullptr).empty());
    set_warning_handler(nullptr);
    CHECK(warnings.size() == 1);
  }

  TEST_CASE("parameter budget") {
    SkipModelConfig small;
    small.hidden = {64, 64};
    CHECK(build_skip_model(60, small).param_count() == 60 * 64 + 64 + 64 * 64 + 64 + 64 + 1);
    CHECK(build_skip_model(60, SkipModelConfig{}).param_count() < SkipModelConfig::kParamBudget);
    SkipModelConfig big;
    big.hidden = {1024};
    CHECK_THROWS_AS(build_skip_model(60, big), Error);
  }

  TEST_CASE("training preconditions and determinism") {
    std::vector<SkipWindowSample> one_class(5, SkipWindowSample{std::vector<double>(60, 0.1), 20.0, 0});
    CHECK_THROWS_AS(train_skip_model(one_class, nn::TrainConfig{}), Error);
    const auto& c = corpus();
    const auto w = make_windows(c.profiles[0], &c.songs[0].structural);
    nn::TrainConfig cfg;
    cfg.epochs = 2;
    CHECK(train_skip_model(w, cfg) == train_skip_model(w, cfg));
  }

  TEST_CASE("zero model gives a flat curve; curve equals per-window forward") {
    const auto p = corpus().profiles[0];
    const auto zero = build_skip_model(60, SkipModelConfig{});
    const auto flat = predict_skip_likelihood(zero, p);
    for (double v : flat.values) CHECK(v == 0.5);

    const auto& model = corpus().model;
    const auto curve = predict_skip_likelihood(model, p);
    const auto w = make_windows(p, nullptr);
    REQUIRE(curve.size() == w.size());
    for (std::size_t i = 0; i < w.size(); i += 17) {
      std::vector<double> y(1);
      model.forward_sample(w[i].window, y);
      CHECK(curve.values[i] == y[0]);
      CHECK(curve.times_s[i] == w[i].center_time_s);
    }
    curve.validate();
    CHECK_THROWS_AS(predict_skip_likelihood(build_skip_model(40, SkipModelConfig{}), p), Error);
  }

  TEST_CASE("prediction is translation consistent") {
    const auto& base = corpus().profiles[1];
    const std::size_t k = 6;
    auto shifted = SkipProfile::empty("t", "all", base.track_duration_s + 0.5 * k, 0.5);
    for (std::size_t i = 0; i < base.counts.size(); ++i) shifted.counts[i + k] = base.counts[i];
    shifted.total_skips = base.total_skips;
    SkipWindowConfig raw;
    raw.use_residual = false;
    const auto& m = corpus().model;
    const auto a = predict_skip_likelihood(m, base, raw), b = predict_skip_likelihood(m, shifted, raw);
    for (std::size_t i = 0; i + k < a.size(); ++i) CHECK(b.values[i + k] == doctest::Approx(a.values[i]).epsilon(1e-12));
    const auto ar = predict_skip_likelihood(m, base), br = predict_skip_likelihood(m, shifted);
    for (std::size_t i = 60; i + 60 < ar.size(); ++i) CHECK(std::abs(br.values[i + k] - ar.values[i]) < 1e-6);
  }

  TEST_CASE("likelihood is higher near true boundaries on held-out tracks") {
    const auto& c = corpus();
    double near = 0, far = 0;
    std::size_t n_near = 0, n_far = 0;
    for (std::size_t i = 10; i < 16; ++i) {
      const auto curve = predict_skip_likelihood(c.model, c.profiles[i]);
      for (std::size_t j = 0; j < curve.size(); ++j) {
        if (window_label(curve.times_s[j], c.songs[i].structural.times_s, 1.0)) {
          near += curve.values[j];
          ++n_near;
        } else {
          far += curve.values[j];
          ++n_far;
        }
      }
    }
    CHECK(near / static_cast<double>(n_near) > far / static_cast<double>(n_far));
  }

  TEST_CASE("weak labels on constructed curves") {
    LikelihoodCurve flat;
    for (int i = 0; i < 100; ++i) {
      flat.times_s.push_back(i * 0.5);
      flat.values.push_back(0.5);
    }
    const auto none = generate_weak_labels(flat, {0.9, 0.1, 5.0});
    CHECK(none.positive_times.empty());
    CHECK(none.negative_times.empty());

    auto spike = flat;
    std::fill(spike.values.begin(), spike.values.end(), 0.0);
    spike.values[40] = 0.95;
    const auto w = generate_weak_labels(spike, {0.9, 0.1, 5.0});
    CHECK(w.positive_times == std::vector<double>{20.0});
    std::size_t expected_neg = 0;
    for (double t : spike.times_s) expected_neg += std::abs(t - 20.0) >= 5.0;
    CHECK(w.negative_times.size() == expected_neg);
    for (double t : w.negative_times) CHECK(std::abs(t - 20.0) >= 5.0);

    CHECK_THROWS_AS(generate_weak_labels(flat, {0.1, 0.9, 5.0}), Error);
    CHECK_THROWS_AS(generate_weak_labels(flat, {0.5, 0.5, 5.0}), Error);
  }

  TEST_CASE("raising tau_hi never adds positives and sharpens precision") {
    const auto& c = corpus();
    std::size_t prev = static_cast<std::size_t>(-1);
    for (double hi : {0.5, 0.6, 0.7, 0.8, 0.9, 0.95}) {
      std::size_t count = 0;
      for (std::size_t i = 10; i < 16; ++i) {
        const auto curve = predict_skip_likelihood(c.model, c.profiles[i]);
        count += generate_weak_labels(curve, {hi, 0.05, 5.0}).positive_times.size();
      }
      CHECK(count <= prev);
      prev = count;
    }
    auto precision = [&](double hi) {
      std::size_t hits = 0, total = 0;
      for (std::size_t i = 10; i < 16; ++i) {
        const auto curve = predict_skip_likelihood(c.model, c.profiles[i]);
        const auto w = generate_weak_labels(curve, {hi, 0.05, 5.0});
        const auto r = hit_rate({"t", w.positive_times, BoundaryKind::kStructural}, c.songs[i].structural, 3.0);
        hits += r.matches.size();
        total += w.positive_times.size();
      }
      return total ? static_cast<double>(hits) / static_cast<double>(total) : 1.0;
    };
    CHECK(precision(0.9) >= precision(0.6));
  }

  TEST_CASE("weak label files round-trip") {
    const std::vector<WeakLabelSet> sets{{"a", {10.0, 40.5}, {1.0, 2.0}, 0.9, 0.05}};
    std::stringstream ss;
    write_weak_labels(ss, sets);
    const auto back = read_weak_labels(ss);
    REQUIRE(back.size() == 1);
    CHECK(back[0].positive_times == sets[0].positive_times);
    CHECK(back[0].negative_times == sets[0].negative_times);
    CHECK(back[0].tau_hi == 0.9);
  }
}
