#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "skipseg/common.hpp"
#include "skipseg/detrend.hpp"
#include "skipseg/neural.hpp"
#include "skipseg/profiles.hpp"

namespace skipseg {

struct SkipWindowConfig {
  double window_s = 30.0;
  double hop_s = 0.5;
  double label_radius_s = 1.0;
  /// Added to reference boundary times before labeling; -3.5 aligns labels
  /// with the skip surge instead of the boundary.
  double label_shift_s = 0.0;
  bool use_residual = true;  // false feeds the normalized raw profile
  DetrendParams detrend;

  std::size_t window_bins(double bin_width_s) const;
};

/// One 30 s profile excerpt, max-normalized, centred at center_time_s.
struct SkipWindowSample {
  std::vector<double> window;
  double center_time_s = 0.0;
  std::optional<int> label;
};

/// Windows at every hop with centres in [window/2, duration - window/2].
/// Labels are set iff `boundaries` is given. Too-short tracks yield no
/// windows and a warning.
std::vector<SkipWindowSample> make_windows(const SkipProfile& p, const BoundarySet* boundaries,
                                           const SkipWindowConfig& cfg = {});

/// Label rule: 1 iff some boundary lies within radius of the centre.
int window_label(double center_s, std::span<const double> boundaries, double radius_s);

struct SkipModelConfig {
  std::vector<std::size_t> hidden = {128, 64};
  double negative_ratio = 3.0;  // negatives kept per positive; <= 0 keeps all
  static constexpr std::size_t kParamBudget = 50000;
};

/// Dense ReLU stack with a sigmoid scalar head. Throws if the parameter
/// count reaches the budget.
nn::Model build_skip_model(std::size_t input_dim, const SkipModelConfig& cfg);

nn::Model train_skip_model(std::span<const SkipWindowSample> samples, const nn::TrainConfig& cfg,
                           const SkipModelConfig& arch = {});

LikelihoodCurve predict_skip_likelihood(const nn::Model& model, const SkipProfile& p,
                                        const SkipWindowConfig& cfg = {}, unsigned threads = 1);

struct WeakLabelConfig {
  double tau_hi = 0.9;
  double tau_lo = 0.05;
  double min_gap_s = 5.0;

  void validate() const;
};

/// Machine-generated boundary labels kept only where the likelihood is very
/// high (positives) or very low (negatives).
struct WeakLabelSet {
  std::string track_id;
  std::vector<double> positive_times;
  std::vector<double> negative_times;
  double tau_hi = 0.9, tau_lo = 0.05;
};

WeakLabelSet generate_weak_labels(const LikelihoodCurve& curve, const WeakLabelConfig& cfg,
                                  const std::string& track_id = {});

void write_weak_labels(std::ostream& out, std::span<const WeakLabelSet> sets);
std::vector<WeakLabelSet> read_weak_labels(std::istream& in);

}  // namespace skipseg
