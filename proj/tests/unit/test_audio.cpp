#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "skipseg/audio.hpp"
#include "skipseg/rng.hpp"
#include "skipseg/synth.hpp"

using namespace skipseg;

namespace {

std::vector<double> sine(double hz, double rate, std::size_t n, double amp = 0.5) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = amp * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / rate);
  return x;
}

AudioArch tiny_arch(std::size_t n_mels) {
  AudioArch a;
  a.context_frames = 32;
  a.n_mels = n_mels;
  a.conv1_filters = 4;
  a.conv1_h = 4;
  a.conv1_w = 2;
  a.pool1_h = 2;
  a.pool1_w = 2;
  a.conv2_filters = 4;
  a.conv2_h = 3;
  a.conv2_w = 2;
  a.pool2_h = 2;
  a.pool2_w = 2;
  a.dense_units = 16;
  return a;
}

double auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  double wins = 0.0;
  for (double p : pos)
    for (double n : neg) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

}  // namespace

TEST_SUITE("audio") {
  TEST_CASE("silence maps to zero") {
    MelConfig cfg;
    const std::vector<double> x(16000, 0.0);
    const auto s = mel_spectrogram(x, cfg);
    CHECK(s.n_mels == 64);
    CHECK(s.n_frames() == 1 + (16000 - 1024) / 512);
    for (double v : s.frames) CHECK(v == 0.0);
  }

  TEST_CASE("a sine at a band centre peaks in that band") {
    MelConfig cfg;
    const auto centers = mel_band_centers(cfg);
    for (std::size_t band : {12u, 20u, 40u, 55u}) {
      const auto s = mel_spectrogram(sine(centers[band], cfg.sample_rate, 16000), cfg);
      std::vector<double> mean(cfg.n_mels, 0.0);
      for (std::size_t f = 0; f < s.n_frames(); ++f)
        for (std::size_t m = 0; m < cfg.n_mels; ++m) mean[m] += s.at(f, m);
      CHECK(static_cast<std::size_t>(std::max_element(mean.begin(), mean.end()) - mean.begin()) == band);
    }
  }

  TEST_CASE("filterbank output never exceeds the spectrum it pools") {
    MelConfig cfg;
    cfg.log_compress = false;
    const auto fb = mel_filterbank(cfg);
    REQUIRE(fb.size() == cfg.n_mels);
    REQUIRE(fb[0].size() == cfg.frame_length / 2 + 1);
    Rng rng(5);
    std::vector<double> x(8000);
    for (auto& v : x) v = 0.3 * rng.normal();
    const auto mag = magnitude_stft(x, cfg);
    const auto mel = mel_spectrogram(x, cfg);
    const std::size_t bins = cfg.frame_length / 2 + 1;
    for (std::size_t f = 0; f < mel.n_frames(); ++f) {
      double in = 0.0, out = 0.0;
      for (std::size_t k = 0; k < bins; ++k) in += mag[f * bins + k];
      for (std::size_t m = 0; m < cfg.n_mels; ++m) out += mel.at(f, m);
      CHECK(out <= in + 1e-9);
    }
  }

  TEST_CASE("delaying the signal by one hop delays the frames by one") {
    MelConfig cfg;
    Rng rng(9);
    std::vector<double> x(12000);
    for (auto& v : x) v = 0.2 * rng.normal();
    std::vector<double> shifted(cfg.hop_length, 0.0);
    shifted.insert(shifted.end(), x.begin(), x.end());
    const auto a = mel_spectrogram(x, cfg), b = mel_spectrogram(shifted, cfg);
    for (std::size_t f = 0; f < a.n_frames(); ++f)
      for (std::size_t m = 0; m < cfg.n_mels; ++m) CHECK(b.at(f + 1, m) == doctest::Approx(a.at(f, m)).epsilon(1e-10));
  }

  TEST_CASE("too-short audio is rejected") {
    CHECK_THROWS_AS(mel_spectrogram(std::vector<double>(100, 0.0), MelConfig{}), Error);
  }

  TEST_CASE("Gaussian smearing around boundaries") {
    std::vector<double> times;
    for (int i = 0; i <= 400; ++i) times.push_back(i * 0.1);
    const std::vector<double> b{20.0};
    SmearConfig cfg;
    const auto t = smear_targets(b, times, cfg);
    auto find = [&](double at) {
      return std::find_if(t.begin(), t.end(), [&](const auto& s) { return std::abs(s.center_time_s - at) < 1e-9; });
    };
    CHECK(find(20.0)->target == 1.0);
    CHECK(find(21.5)->target == doctest::Approx(std::exp(-0.5)));
    CHECK(find(24.0) == t.end());
    CHECK(find(26.0)->target == 0.0);
    for (const auto& s : t) {
      const double d = std::abs(s.center_time_s - 20.0);
      CHECK((d <= 3.0 + 1e-9 || d >= 6.0 - 1e-9));
    }
  }

  TEST_CASE("weak-label smearing equals a recount") {
    std::vector<double> times;
    for (int i = 0; i <= 600; ++i) times.push_back(i * 0.1);
    WeakLabelSet w{"t", {10.0, 40.0}, {0.0, 20.0, 25.0, 42.0, 55.0}, 0.9, 0.05};
    SmearConfig cfg;
    const auto t = smear_targets(w, times, cfg);
    std::size_t pos = 0, neg = 0;
    for (double x : times) {
      const double dp = std::min(std::abs(x - 10.0), std::abs(x - 40.0));
      double dn = 1e9;
      for (double n : w.negative_times) dn = std::min(dn, std::abs(x - n));
      pos += dp <= 3.0 + 1e-12;
      neg += dp >= 6.0 - 1e-12 && dn <= 0.25 + 1e-12;
    }
    std::size_t got_pos = 0, got_neg = 0;
    for (const auto& s : t) (s.target > 0.0 ? got_pos : got_neg)++;
    CHECK(got_pos == pos);
    CHECK(got_neg == neg);
    CHECK_THROWS_AS(smear_targets(w, times, SmearConfig{1.0, 5.0, 4.0, 0.25}), Error);
  }

  TEST_CASE("architecture shape is enforced") {
    using nn::LayerSpec;
    const std::vector<LayerSpec> three_conv{LayerSpec::conv2d(4, 3, 3), LayerSpec::max_pool(2, 2),
                                            LayerSpec::conv2d(4, 3, 3), LayerSpec::max_pool(2, 2),
                                            LayerSpec::conv2d(4, 3, 3), LayerSpec::dense(8),
                                            LayerSpec::dense(1),        LayerSpec::sigmoid()};
    CHECK_THROWS_AS(validate_audio_architecture(three_conv), Error);
    const auto m = build_audio_model(tiny_arch(16));
    CHECK_NOTHROW(validate_audio_architecture(m.layers()));
    CHECK(m.input_shape() == nn::Shape{1, 32, 16});
  }

  TEST_CASE("constant input gives a constant curve equal to per-window forward") {
    auto m = build_audio_model(tiny_arch(8));
    m.init_weights(3);
    MelSpectrogram flat{"c", 4.0, 8, std::vector<double>(100 * 8, 0.7)};
    const auto curve = predict_audio_likelihood(m, flat);
    REQUIRE(curve.size() == 100);
    for (double v : curve.values) CHECK(v == curve.values[0]);

    const auto song = gen_song(21);
    const auto spec = gen_feature_proxy(song, 4.0, 8, 1.0, 2);
    const auto c2 = predict_audio_likelihood(m, spec, 3);
    std::vector<double> patch(32 * 8), y(1);
    for (std::size_t i = 0; i < c2.size(); i += 11) {
      extract_patch(spec, i * 3, 32, patch);
      m.forward_sample(patch, y);
      CHECK(c2.values[i] == doctest::Approx(y[0]).epsilon(1e-12));
      CHECK(c2.times_s[i] == spec.frame_time(i * 3));
    }
    MelSpectrogram shorty{"s", 4.0, 8, std::vector<double>(32 * 8, 0.0)};
    CHECK_THROWS_AS(predict_audio_likelihood(m, shorty), Error);
  }

  TEST_CASE("patches replicate edge frames") {
    MelSpectrogram s{"p", 1.0, 1, {1.0, 2.0, 3.0}};
    std::vector<double> out(5);
    CHECK(extract_patch(s, 0, 5, out));
    CHECK(out == std::vector<double>{1, 1, 1, 2, 3});
    std::vector<double> mid(3);
    CHECK_FALSE(extract_patch(s, 1, 3, mid));
    CHECK(mid == std::vector<double>{1, 2, 3});
  }

  TEST_CASE("fine-tuning changes only the final projection") {
    const auto song = gen_song(31);
    auto spec = std::make_shared<MelSpectrogram>(gen_feature_proxy(song, 4.0, 8, 1.0, 1));
    const auto targets = smear_targets(song.structural.times_s, spec->frame_times());
    const auto data = make_audio_dataset({{spec, targets}}, 32);
    auto m = build_audio_model(tiny_arch(8));
    m.init_weights(1);
    nn::TrainConfig cfg;
    cfg.epochs = 2;
    const auto tuned = finetune_last_layer(m, data, cfg);
    const auto [b, e] = m.param_range(m.last_dense_layer());
    CHECK(e - b == 16 + 1);
    bool changed = false;
    for (std::size_t i = 0; i < m.param_count(); ++i) {
      if (i >= b && i < e)
        changed |= tuned.weights()[i] != m.weights()[i];
      else
        CHECK(tuned.weights()[i] == m.weights()[i]);
    }
    CHECK(changed);
  }

  TEST_CASE("WAV and spectrogram cache round-trip") {
    const auto dir = std::filesystem::temp_directory_path() / "skipseg_audio_test";
    std::filesystem::create_directories(dir);
    const auto x = sine(440.0, 8000.0, 4000, 0.8);
    write_wav((dir / "a.wav").string(), x, 8000.0);
    const auto w = read_wav((dir / "a.wav").string());
    CHECK(w.sample_rate == 8000.0);
    CHECK(w.channels == 1);
    REQUIRE(w.samples.size() == x.size());
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(w.samples[i] - x[i]) <= 1.0 / 32768.0);
    CHECK_THROWS_AS(read_wav((dir / "missing.wav").string()), Error);

    const auto spec = gen_feature_proxy(gen_song(2), 4.0, 8, 1.0, 2);
    write_spectrogram((dir / "a.spec").string(), spec);
    const auto back = read_spectrogram((dir / "a.spec").string());
    CHECK(back.track_id == spec.track_id);
    CHECK(back.frame_rate_hz == spec.frame_rate_hz);
    REQUIRE(back.frames.size() == spec.frames.size());
    for (std::size_t i = 0; i < spec.frames.size(); ++i)
      CHECK(back.frames[i] == static_cast<double>(static_cast<float>(spec.frames[i])));
    std::stringstream bad("NOTASPEC");
    CHECK_THROWS_AS(read_spectrogram(bad), Error);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("a small network separates boundary frames from the rest") {
    std::vector<AudioTrainingTrack> train;
    for (std::uint64_t s = 0; s < 16; ++s) {
      const auto song = gen_song(600 + s);
      auto spec = std::make_shared<MelSpectrogram>(gen_feature_proxy(song, 4.0, 16, 0.5, s));
      train.push_back({spec, smear_targets(song.structural.times_s, spec->frame_times())});
    }
    const auto data = make_audio_dataset(train, 32, {1, 1.0, 1});
    nn::TrainConfig cfg;
    cfg.epochs = 15;
    cfg.seed = 2;
    const auto model = train_audio_model(data, cfg, tiny_arch(16));
    std::vector<double> pos, neg;
    for (std::uint64_t s = 0; s < 3; ++s) {
      const auto song = gen_song(700 + s);
      const auto spec = gen_feature_proxy(song, 4.0, 16, 0.5, 50 + s);
      const auto curve = predict_audio_likelihood(model, spec);
      for (const auto& t : smear_targets(song.structural.times_s, spec.frame_times(), SmearConfig{1.5, 1.0, 6.0, 0.25}))
        (t.target > 0.0 ? pos : neg).push_back(curve.values[t.frame]);
    }
    CHECK(auc(pos, neg) >= 0.9);
  }
}
