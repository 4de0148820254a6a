#pragma once

#include <cstddef>
#include <vector>

#include "skipseg/common.hpp"
#include "skipseg/profiles.hpp"

namespace skipseg {

struct DetrendParams {
  std::size_t median_window_bins = 9;
  double lowpass_cutoff = 0.1;  // cycles per bin

  void validate() const;
};

/// Smooth course of a profile and the rectified residual above it.
struct DetrendedProfile {
  std::vector<double> normalized;  // counts / total_skips
  std::vector<double> trend;
  std::vector<double> residual;
  std::vector<bool> low_confidence;  // bins within one median window of an edge
  double bin_width_s = 0.5;
  std::string track_id;
  DetrendParams params;

  double bin_time(std::size_t i) const { return (static_cast<double>(i) + 0.5) * bin_width_s; }
};

/// trend = lowpass(median(counts / total_skips)); residual = max(0, normalized - trend).
DetrendedProfile detrend(const SkipProfile& p, const DetrendParams& params = {});

/// Same pipeline on an arbitrary non-negative series (already normalized).
DetrendedProfile detrend_series(const std::vector<double>& normalized, double bin_width_s,
                                const DetrendParams& params = {});

/// Indices of the k largest residual local maxima, at least `min_separation`
/// bins apart, in descending residual order. Low-confidence bins are skipped.
std::vector<std::size_t> top_residual_peaks(const DetrendedProfile& d, std::size_t k,
                                            std::size_t min_separation);

/// Median over boundaries of the lag from each boundary to the first
/// prominent residual peak within `search_s` after it. A peak is prominent
/// when it reaches half the residual maximum of that search window.
double surge_delay_estimate(const DetrendedProfile& d, const BoundarySet& boundaries,
                            double search_s = 10.0);

}  // namespace skipseg
