#include "skipseg/skip_boundary.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "skipseg/rng.hpp"

namespace skipseg {

using nlohmann::json;

std::size_t SkipWindowConfig::window_bins(double bin_width_s) const {
  return static_cast<std::size_t>(std::lround(window_s / bin_width_s));
}

int window_label(double center_s, std::span<const double> boundaries, double radius_s) {
  for (double b : boundaries)
    if (std::abs(center_s - b) <= radius_s + 1e-9) return 1;
  return 0;
}

std::vector<SkipWindowSample> make_windows(const SkipProfile& p, const BoundarySet* boundaries,
                                           const SkipWindowConfig& cfg) {
  if (!(cfg.hop_s > 0.0)) throw Error("skip windows: hop must be positive");
  if (p.track_duration_s <= cfg.window_s) {
    warn("skip windows: track '" + p.track_id + "' not longer than the window; skipped");
    return {};
  }
  std::vector<double> series;
  if (cfg.use_residual) {
    series = detrend(p, cfg.detrend).residual;
  } else {
    if (p.total_skips == 0) throw Error("skip windows: profile '" + p.key().str() + "' has no skips");
    series.resize(p.counts.size());
    for (std::size_t i = 0; i < series.size(); ++i)
      series[i] = static_cast<double>(p.counts[i]) / static_cast<double>(p.total_skips);
  }
  std::vector<double> shifted;
  if (boundaries)
    for (double b : boundaries->times_s) shifted.push_back(b + cfg.label_shift_s);

  const double bw = p.bin_width_s;
  const std::size_t len = cfg.window_bins(bw);
  const double half = 0.5 * cfg.window_s;
  std::vector<SkipWindowSample> out;
  for (std::size_t k = 0;; ++k) {
    const double c = half + static_cast<double>(k) * cfg.hop_s;
    if (c > p.track_duration_s - half + 1e-9) break;
    const auto start = static_cast<std::ptrdiff_t>(std::lround((c - half) / bw));
    SkipWindowSample s;
    s.center_time_s = c;
    s.window.resize(len, 0.0);
    double peak = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      const auto j = start + static_cast<std::ptrdiff_t>(i);
      if (j >= 0 && j < static_cast<std::ptrdiff_t>(series.size())) s.window[i] = series[static_cast<std::size_t>(j)];
      peak = std::max(peak, s.window[i]);
    }
    if (peak > 0.0)
      for (double& v : s.window) v /= peak;
    if (boundaries) s.label = window_label(c, shifted, cfg.label_radius_s);
    out.push_back(std::move(s));
  }
  return out;
}

nn::Model build_skip_model(std::size_t input_dim, const SkipModelConfig& cfg) {
  std::vector<nn::LayerSpec> layers;
  for (std::size_t h : cfg.hidden) {
    layers.push_back(nn::LayerSpec::dense(h));
    layers.push_back(nn::LayerSpec::relu());
  }
  layers.push_back(nn::LayerSpec::dense(1));
  layers.push_back(nn::LayerSpec::sigmoid());
  const std::size_t n = nn::count_params({input_dim}, layers);
  if (n >= SkipModelConfig::kParamBudget)
    throw Error("skip model: " + std::to_string(n) + " parameters exceed the budget of " +
                std::to_string(SkipModelConfig::kParamBudget));
  return nn::Model({input_dim}, std::move(layers), "skipprofile-nn");
}

nn::Model train_skip_model(std::span<const SkipWindowSample> samples, const nn::TrainConfig& cfg,
                           const SkipModelConfig& arch) {
  if (samples.empty()) throw Error("skip model: no training windows");
  const std::size_t dim = samples.front().window.size();
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!samples[i].label) throw Error("skip model: training window without label");
    if (samples[i].window.size() != dim) throw Error("skip model: windows of different lengths");
    (*samples[i].label ? pos : neg).push_back(i);
  }
  if (pos.empty() || neg.empty()) throw Error("skip model: training windows contain a single class");

  nn::Model model = build_skip_model(dim, arch);
  if (arch.negative_ratio > 0.0) {
    const auto keep = std::min(neg.size(), static_cast<std::size_t>(std::ceil(arch.negative_ratio * static_cast<double>(pos.size()))));
    Rng rng = Rng::substream(cfg.seed, 0x6e6567);
    rng.shuffle(std::span<std::size_t>(neg));
    neg.resize(keep);
    std::sort(neg.begin(), neg.end());
  }
  std::vector<std::size_t> rows;
  std::merge(pos.begin(), pos.end(), neg.begin(), neg.end(), std::back_inserter(rows));

  nn::Dataset data({dim});
  for (std::size_t r : rows) data.add(samples[r].window, static_cast<double>(*samples[r].label));
  model.init_weights(cfg.seed);
  return nn::train(std::move(model), data, cfg);
}

LikelihoodCurve predict_skip_likelihood(const nn::Model& model, const SkipProfile& p, const SkipWindowConfig& cfg,
                                        unsigned threads) {
  const std::size_t dim = cfg.window_bins(p.bin_width_s);
  if (model.input_size() != dim)
    throw Error("skip likelihood: model expects " + std::to_string(model.input_size()) + " inputs, windows have " +
                std::to_string(dim));
  const auto windows = make_windows(p, nullptr, cfg);
  LikelihoodCurve curve;
  curve.source = model.name().empty() ? "skipprofile-nn" : model.name();
  if (windows.empty()) return curve;
  nn::Tensor batch({windows.size(), dim});
  for (std::size_t i = 0; i < windows.size(); ++i) {
    std::copy(windows[i].window.begin(), windows[i].window.end(), batch.row(i).begin());
    curve.times_s.push_back(windows[i].center_time_s);
  }
  const auto out = model.forward(batch, threads);
  curve.values = out.data;
  return curve;
}

void WeakLabelConfig::validate() const {
  if (!(tau_lo >= 0.0 && tau_lo < tau_hi && tau_hi <= 1.0))
    throw Error("weak labels: thresholds must satisfy 0 <= tau_lo < tau_hi <= 1");
  if (min_gap_s < 0.0) throw Error("weak labels: negative minimum gap");
}

WeakLabelSet generate_weak_labels(const LikelihoodCurve& curve, const WeakLabelConfig& cfg, const std::string& track_id) {
  cfg.validate();
  if (curve.times_s.size() != curve.values.size()) throw Error("weak labels: malformed curve");
  const auto& v = curve.values;
  const auto& t = curve.times_s;
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const bool left = i == 0 || v[i] > v[i - 1];
    const bool right = i + 1 == v.size() || v[i] >= v[i + 1];
    if (left && right && v[i] >= cfg.tau_hi) candidates.push_back(i);
  }
  std::stable_sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
  std::vector<std::size_t> accepted;
  for (std::size_t c : candidates)
    if (std::none_of(accepted.begin(), accepted.end(), [&](std::size_t a) { return std::abs(t[a] - t[c]) < cfg.min_gap_s; }))
      accepted.push_back(c);
  std::sort(accepted.begin(), accepted.end());

  WeakLabelSet out;
  out.track_id = track_id;
  out.tau_hi = cfg.tau_hi;
  out.tau_lo = cfg.tau_lo;
  for (std::size_t a : accepted) out.positive_times.push_back(t[a]);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] > cfg.tau_lo) continue;
    const bool far = std::all_of(out.positive_times.begin(), out.positive_times.end(),
                                 [&](double p) { return std::abs(t[i] - p) >= cfg.min_gap_s; });
    if (far) out.negative_times.push_back(t[i]);
  }
  return out;
}

void write_weak_labels(std::ostream& out, std::span<const WeakLabelSet> sets) {
  json arr = json::array();
  for (const auto& w : sets)
    arr.push_back({{"track", w.track_id}, {"positives", w.positive_times}, {"negatives", w.negative_times},
                   {"tau_hi", w.tau_hi}, {"tau_lo", w.tau_lo}});
  out << arr.dump() << '\n';
}

std::vector<WeakLabelSet> read_weak_labels(std::istream& in) {
  std::vector<WeakLabelSet> out;
  try {
    for (const auto& j : json::parse(in)) {
      WeakLabelSet w;
      w.track_id = j.at("track").get<std::string>();
      w.positive_times = j.at("positives").get<std::vector<double>>();
      w.negative_times = j.at("negatives").get<std::vector<double>>();
      w.tau_hi = j.at("tau_hi").get<double>();
      w.tau_lo = j.at("tau_lo").get<double>();
      out.push_back(std::move(w));
    }
  } catch (const std::exception& ex) {
    throw ParseError(std::string("weak label file: ") + ex.what());
  }
  return out;
}

}  // namespace skipseg
