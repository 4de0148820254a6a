#include "skipseg/detrend.hpp"

#include <algorithm>
#include <cmath>

#include "skipseg/signal.hpp"

namespace skipseg {

void DetrendParams::validate() const {
  if (median_window_bins == 0 || median_window_bins % 2 == 0)
    throw Error("detrend: median window must be an odd positive bin count");
  if (!(lowpass_cutoff > 0.0 && lowpass_cutoff < 0.5))
    throw Error("detrend: low-pass cutoff must lie in (0, 0.5) cycles/bin");
}

DetrendedProfile detrend_series(const std::vector<double>& normalized, double bin_width_s,
                                const DetrendParams& params) {
  params.validate();
  if (normalized.empty()) throw Error("detrend: empty series");
  DetrendedProfile d;
  d.params = params;
  d.bin_width_s = bin_width_s;
  d.normalized = normalized;

  const auto median = signal::median_filter(normalized, params.median_window_bins);
  const auto lp = signal::Biquad::butterworth_lowpass(params.lowpass_cutoff);
  const auto pad = std::max<std::size_t>(params.median_window_bins,
                                         static_cast<std::size_t>(std::ceil(3.0 / params.lowpass_cutoff)));
  d.trend = signal::filtfilt(lp, median, pad);

  const std::size_t n = normalized.size();
  d.residual.resize(n);
  d.low_confidence.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    d.residual[i] = std::max(0.0, normalized[i] - d.trend[i]);
    d.low_confidence[i] = i < params.median_window_bins || i + params.median_window_bins >= n;
  }
  return d;
}

DetrendedProfile detrend(const SkipProfile& p, const DetrendParams& params) {
  if (p.counts.empty()) throw Error("detrend: profile '" + p.key().str() + "' has no bins");
  if (p.total_skips == 0) throw Error("detrend: profile '" + p.key().str() + "' has no skips");
  std::vector<double> x(p.counts.size());
  const double total = static_cast<double>(p.total_skips);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(p.counts[i]) / total;
  auto d = detrend_series(x, p.bin_width_s, params);
  d.track_id = p.track_id;
  return d;
}

std::vector<std::size_t> top_residual_peaks(const DetrendedProfile& d, std::size_t k,
                                            std::size_t min_separation) {
  const auto& r = d.residual;
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < r.size(); ++i) {
    const bool left = i == 0 || r[i] > r[i - 1];
    const bool right = i + 1 == r.size() || r[i] >= r[i + 1];
    const bool edge = i < d.low_confidence.size() && d.low_confidence[i];
    if (left && right && r[i] > 0.0 && !edge) candidates.push_back(i);
  }
  std::stable_sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) { return r[a] > r[b]; });
  std::vector<std::size_t> out;
  for (std::size_t c : candidates) {
    if (out.size() == k) break;
    const bool clear = std::none_of(out.begin(), out.end(), [&](std::size_t o) {
      return (c > o ? c - o : o - c) < min_separation;
    });
    if (clear) out.push_back(c);
  }
  return out;
}

double surge_delay_estimate(const DetrendedProfile& d, const BoundarySet& boundaries, double search_s) {
  if (boundaries.times_s.empty()) throw Error("surge delay: no boundaries");
  const auto& r = d.residual;
  const double w = d.bin_width_s;
  std::vector<double> delays;
  for (double b : boundaries.times_s) {
    // A skip logged in bin i happened at or after i * w, so bins are placed
    // by their start time here.
    const auto first = static_cast<std::size_t>(std::floor(b / w)) + 1;
    const auto last = std::min(r.size(), static_cast<std::size_t>(std::floor((b + search_s) / w)) + 1);
    if (first >= last) continue;
    const double peak = *std::max_element(r.begin() + static_cast<std::ptrdiff_t>(first),
                                          r.begin() + static_cast<std::ptrdiff_t>(last));
    if (peak <= 0.0) continue;
    for (std::size_t i = first; i < last; ++i) {
      const bool left = i == 0 || r[i] >= r[i - 1];
      const bool right = i + 1 == r.size() || r[i] >= r[i + 1];
      if (left && right && r[i] >= 0.5 * peak) {
        delays.push_back(static_cast<double>(i) * w - b);
        break;
      }
    }
  }
  if (delays.empty()) throw Error("surge delay: no residual peak follows any boundary");
  std::sort(delays.begin(), delays.end());
  const std::size_t m = delays.size();
  return m % 2 ? delays[m / 2] : 0.5 * (delays[m / 2 - 1] + delays[m / 2]);
}

}  // namespace skipseg
