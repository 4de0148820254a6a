#include <benchmark/benchmark.h>

#include <cmath>
#include <numbers>

#include "skipseg/audio.hpp"
#include "skipseg/detrend.hpp"
#include "skipseg/neural.hpp"
#include "skipseg/profiles.hpp"
#include "skipseg/retrieval.hpp"
#include "skipseg/rng.hpp"
#include "skipseg/segmentation.hpp"
#include "skipseg/skip_boundary.hpp"
#include "skipseg/synth.hpp"

using namespace skipseg;

namespace {

std::vector<SkipEvent> sample_events(std::size_t n) {
  return gen_skip_events(gen_song(1), ListenerModel{}, n, "2020-01-01", "SE", 2);
}

void BM_IngestEvents(benchmark::State& state) {
  const auto events = sample_events(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(ingest_events(events, 0.5, PartitionScheme::kDate));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_IngestEvents)->Arg(100000);

void BM_SimulateProfile(benchmark::State& state) {
  const auto song = gen_song(3);
  for (auto _ : state)
    benchmark::DoNotOptimize(
        simulate_profile(song, ListenerModel{}, static_cast<std::size_t>(state.range(0)), "d", "r", 4));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SimulateProfile)->Arg(100000)->Arg(1000000);

void BM_Detrend(benchmark::State& state) {
  const auto p = simulate_profile(gen_song(5), ListenerModel{}, 100000, "d", "r", 6);
  for (auto _ : state) benchmark::DoNotOptimize(detrend(p));
}
BENCHMARK(BM_Detrend);

void BM_SpecificityMap(benchmark::State& state) {
  FragmentSet set;
  const auto tracks = static_cast<std::size_t>(state.range(0));
  for (std::size_t t = 0; t < tracks; ++t) {
    const auto song = gen_song(100 + t);
    for (std::size_t d = 0; d < 5; ++d) {
      auto f = fragment(simulate_profile(song, ListenerModel{}, 20000, synthetic_date(d), "SE", t * 7 + d));
      set.emplace(f.key(), std::move(f));
    }
  }
  for (auto _ : state) benchmark::DoNotOptimize(specificity_map(set));
}
BENCHMARK(BM_SpecificityMap)->Arg(20)->Arg(100)->Unit(benchmark::kMillisecond);

nn::Tensor random_batch(const nn::Shape& sample, std::size_t n) {
  nn::Shape shape{n};
  shape.insert(shape.end(), sample.begin(), sample.end());
  nn::Tensor t(shape);
  Rng rng(7);
  for (double& v : t.data) v = rng.normal();
  return t;
}

void BM_SkipModelForward(benchmark::State& state) {
  auto m = build_skip_model(60, SkipModelConfig{});
  m.init_weights(1);
  const auto batch = random_batch({60}, 256);
  for (auto _ : state) benchmark::DoNotOptimize(m.forward(batch));
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_SkipModelForward);

void BM_SkipModelGradient(benchmark::State& state) {
  auto m = build_skip_model(60, SkipModelConfig{});
  m.init_weights(1);
  const auto batch = random_batch({60}, 32);
  const std::vector<double> targets(32, 0.5);
  std::vector<double> grad;
  for (auto _ : state) benchmark::DoNotOptimize(m.loss_and_gradient(batch, targets, grad));
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_SkipModelGradient);

AudioArch small_audio_arch() {
  AudioArch a;
  a.context_frames = 64;
  a.n_mels = 16;
  a.conv1_h = 6;
  a.conv1_w = 4;
  a.conv2_h = 4;
  a.conv2_w = 3;
  a.pool2_h = a.pool2_w = 2;
  a.dense_units = 64;
  return a;
}

void BM_AudioModelForward(benchmark::State& state) {
  const bool full = state.range(0) != 0;
  auto m = build_audio_model(full ? AudioArch{} : small_audio_arch());
  m.init_weights(1);
  const auto batch = random_batch(m.input_shape(), 16);
  for (auto _ : state) benchmark::DoNotOptimize(m.forward(batch));
  state.SetItemsProcessed(state.iterations() * 16);
  state.SetLabel(full ? "500x64 input" : "64x16 input");
}
BENCHMARK(BM_AudioModelForward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_AudioModelGradient(benchmark::State& state) {
  auto m = build_audio_model(small_audio_arch());
  m.init_weights(1);
  const auto batch = random_batch(m.input_shape(), 32);
  const std::vector<double> targets(32, 0.5);
  std::vector<double> grad;
  for (auto _ : state) benchmark::DoNotOptimize(m.loss_and_gradient(batch, targets, grad));
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_AudioModelGradient)->Unit(benchmark::kMillisecond);

void BM_MelSpectrogram(benchmark::State& state) {
  MelConfig cfg;
  std::vector<double> x(static_cast<std::size_t>(cfg.sample_rate * 10));
  for (std::size_t i = 0; i < x.size(); ++i)
    x[i] = 0.3 * std::sin(2.0 * std::numbers::pi * 440.0 * static_cast<double>(i) / cfg.sample_rate);
  for (auto _ : state) benchmark::DoNotOptimize(mel_spectrogram(x, cfg));
  state.SetLabel("10 s at 16 kHz");
}
BENCHMARK(BM_MelSpectrogram)->Unit(benchmark::kMillisecond);

void BM_HitRate(benchmark::State& state) {
  Rng rng(3);
  BoundarySet est{"t", {}, BoundaryKind::kStructural}, ref{"t", {}, BoundaryKind::kStructural};
  double a = 0.0, b = 0.0;
  for (int i = 0; i < state.range(0); ++i) {
    est.times_s.push_back(a += rng.uniform(2.0, 12.0));
    ref.times_s.push_back(b += rng.uniform(2.0, 12.0));
  }
  for (auto _ : state) benchmark::DoNotOptimize(hit_rate(est, ref, 3.0));
}
BENCHMARK(BM_HitRate)->Arg(20)->Arg(1000);

void BM_PeakPick(benchmark::State& state) {
  Rng rng(4);
  LikelihoodCurve c;
  for (int i = 0; i < 2000; ++i) {
    c.times_s.push_back(i * 0.25);
    c.values.push_back(rng.uniform());
  }
  for (auto _ : state) benchmark::DoNotOptimize(peak_pick(c));
}
BENCHMARK(BM_PeakPick);

}  // namespace

BENCHMARK_MAIN();
