#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace skipseg::signal {

/// Running median with an odd window; samples beyond either end replicate
/// the nearest edge value.
std::vector<double> median_filter(std::span<const double> x, std::size_t window);

/// Second-order Butterworth low-pass section (bilinear transform).
struct Biquad {
  double b0, b1, b2, a1, a2;

  /// cutoff in cycles per sample, 0 < cutoff < 0.5.
  static Biquad butterworth_lowpass(double cutoff);
  double dc_gain() const { return (b0 + b1 + b2) / (1.0 + a1 + a2); }
};

/// Zero-phase forward-backward filtering with replicate padding; the filter
/// state is primed to steady state so constant inputs pass unchanged.
std::vector<double> filtfilt(const Biquad& f, std::span<const double> x, std::size_t pad);

double l2_norm(std::span<const double> x);

}  // namespace skipseg::signal
