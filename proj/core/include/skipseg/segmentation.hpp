#pragma once

#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "skipseg/common.hpp"

namespace skipseg {

struct PeakPickResult {
  BoundarySet boundaries;
  double threshold = 0.0;
};

/// Local maxima accepted greedily by height, each at least `min_spacing_s`
/// from every accepted peak, then thresholded at half the third-highest
/// accepted peak (no threshold with fewer than three).
PeakPickResult peak_pick_detailed(const LikelihoodCurve& curve, double min_spacing_s);
BoundarySet peak_pick(const LikelihoodCurve& curve, double min_spacing_s = 4.0);

struct HitRateResult {
  double window_s = 0.0;
  double beta = 1.0;
  double precision = 0.0;
  double recall = 0.0;
  double f_measure = 0.0;
  bool empty_estimate = false;
  std::vector<std::pair<double, double>> matches;  // (estimate, reference)
};

/// Hit tolerance shared by every matcher: |a - b| <= window (+1e-9 slack).
bool within_window(double a, double b, double window_s);

/// Maximum one-to-one matching of estimates to references within the hit
/// window; F is the weighted harmonic mean with weight beta.
HitRateResult hit_rate(const BoundarySet& est, const BoundarySet& ref, double window_s, double beta = 1.0);

double f_measure(double precision, double recall, double beta);

/// Boundaries at spacing, 2*spacing, ... strictly before the track end.
BoundarySet grid_baseline(double track_duration_s, double spacing_s, const std::string& track_id = {});

struct GridSearchResult {
  double best_spacing_s = 0.0;
  double best_f = 0.0;
  std::vector<std::pair<double, double>> scores;  // (spacing, mean F)
};

/// Mean F of the fixed grid over a corpus, for each candidate spacing.
/// Ties prefer the smaller spacing.
GridSearchResult grid_search(const std::map<std::string, BoundarySet>& references,
                             const std::map<std::string, double>& durations, std::span<const double> spacings,
                             double window_s, double beta = 1.0);

/// references[track][kind]
using ReferenceCorpus = std::map<std::string, std::map<BoundaryKind, BoundarySet>>;

struct TrackScore {
  std::string track_id;
  BoundaryKind kind;
  HitRateResult result;
};

struct CorpusCell {
  BoundaryKind kind;
  double window_s;
  double macro_f = 0.0;  // mean of per-track F
  double micro_f = 0.0;  // F of pooled match counts
  double macro_precision = 0.0, macro_recall = 0.0;
  std::size_t tracks = 0;
};

struct CorpusReport {
  std::string algorithm;
  double beta = 1.0;
  std::vector<CorpusCell> cells;  // structural then extended, windows ascending
  std::vector<TrackScore> per_track;
  std::vector<std::string> skipped;  // predictions without a reference

  const CorpusCell& cell(BoundaryKind kind, double window_s) const;
};

CorpusReport evaluate_corpus(const std::map<std::string, BoundarySet>& predictions, const ReferenceCorpus& references,
                             std::span<const double> windows, double beta, const std::string& algorithm = {});

/// Table rows: one line per algorithm, columns Structural/Extended x windows.
void write_report_csv(std::ostream& out, std::span<const CorpusReport> reports);
void write_report_json(std::ostream& out, std::span<const CorpusReport> reports);

/// Boundary files: JSON array of {track, kind, boundaries:[seconds]}.
std::vector<BoundarySet> read_boundaries(std::istream& in);
void write_boundaries(std::ostream& out, std::span<const BoundarySet> sets);
ReferenceCorpus to_reference_corpus(std::span<const BoundarySet> sets);

/// Curve files: JSON array of {track, source, times_s, values}.
std::map<std::string, LikelihoodCurve> read_curves(std::istream& in);
void write_curves(std::ostream& out, const std::map<std::string, LikelihoodCurve>& curves);

}  // namespace skipseg
