#include "skipseg/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace skipseg {

using nlohmann::json;

PeakPickResult peak_pick_detailed(const LikelihoodCurve& curve, double min_spacing_s) {
  if (curve.times_s.size() != curve.values.size()) throw Error("peak pick: times/values length mismatch");
  const auto& v = curve.values;
  const auto& t = curve.times_s;
  std::vector<std::size_t> candidates;
  for (std::size_t i = 1; i + 1 < v.size(); ++i)
    if (v[i] > v[i - 1] && v[i] >= v[i + 1] && t[i] > 0.0) candidates.push_back(i);
  std::stable_sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });

  std::vector<std::size_t> accepted;
  for (std::size_t c : candidates) {
    const bool clear = std::none_of(accepted.begin(), accepted.end(),
                                    [&](std::size_t a) { return std::abs(t[a] - t[c]) < min_spacing_s; });
    if (clear) accepted.push_back(c);
  }
  PeakPickResult r;
  r.boundaries.kind = BoundaryKind::kStructural;
  r.threshold = accepted.size() >= 3 ? 0.5 * v[accepted[2]] : 0.0;
  std::vector<std::size_t> kept;
  for (std::size_t a : accepted)
    if (v[a] >= r.threshold) kept.push_back(a);
  std::sort(kept.begin(), kept.end());
  for (std::size_t k : kept) r.boundaries.times_s.push_back(t[k]);
  return r;
}

BoundarySet peak_pick(const LikelihoodCurve& curve, double min_spacing_s) {
  return peak_pick_detailed(curve, min_spacing_s).boundaries;
}

bool within_window(double a, double b, double window_s) { return std::abs(a - b) <= window_s + 1e-9; }

double f_measure(double precision, double recall, double beta) {
  const double b2 = beta * beta;
  const double denom = b2 * precision + recall;
  return denom > 0.0 ? (1.0 + b2) * precision * recall / denom : 0.0;
}

HitRateResult hit_rate(const BoundarySet& est, const BoundarySet& ref, double window_s, double beta) {
  if (!(window_s > 0.0)) throw Error("hit rate: window must be positive");
  if (ref.times_s.empty()) throw Error("hit rate: empty reference for track '" + ref.track_id + "'");
  std::vector<double> e = est.times_s, r = ref.times_s;
  std::sort(e.begin(), e.end());
  std::sort(r.begin(), r.end());

  HitRateResult out;
  out.window_s = window_s;
  out.beta = beta;
  // Windows of equal width form an interval graph on the line: scanning
  // both sorted lists and matching the earliest compatible pair is optimal.
  std::size_t i = 0, j = 0;
  while (i < e.size() && j < r.size()) {
    if (within_window(e[i], r[j], window_s)) {
      out.matches.emplace_back(e[i], r[j]);
      ++i;
      ++j;
    } else if (e[i] < r[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  const double m = static_cast<double>(out.matches.size());
  out.empty_estimate = e.empty();
  out.precision = e.empty() ? 0.0 : m / static_cast<double>(e.size());
  out.recall = m / static_cast<double>(r.size());
  out.f_measure = f_measure(out.precision, out.recall, beta);
  return out;
}

BoundarySet grid_baseline(double track_duration_s, double spacing_s, const std::string& track_id) {
  if (!(spacing_s > 0.0)) throw Error("grid baseline: spacing must be positive");
  BoundarySet b;
  b.track_id = track_id;
  for (std::size_t k = 1;; ++k) {
    const double t = static_cast<double>(k) * spacing_s;
    if (t >= track_duration_s) break;
    b.times_s.push_back(t);
  }
  return b;
}

GridSearchResult grid_search(const std::map<std::string, BoundarySet>& references,
                             const std::map<std::string, double>& durations, std::span<const double> spacings,
                             double window_s, double beta) {
  if (spacings.empty()) throw Error("grid search: no candidate spacings");
  GridSearchResult out;
  out.best_f = -1.0;
  for (double s : spacings) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& [track, ref] : references) {
      const auto d = durations.find(track);
      if (d == durations.end()) throw Error("grid search: no duration for track '" + track + "'");
      sum += hit_rate(grid_baseline(d->second, s, track), ref, window_s, beta).f_measure;
      ++n;
    }
    const double mean = n ? sum / static_cast<double>(n) : 0.0;
    out.scores.emplace_back(s, mean);
    if (mean > out.best_f) {
      out.best_f = mean;
      out.best_spacing_s = s;
    }
  }
  return out;
}

const CorpusCell& CorpusReport::cell(BoundaryKind kind, double window_s) const {
  for (const auto& c : cells)
    if (c.kind == kind && std::abs(c.window_s - window_s) < 1e-12) return c;
  throw Error("corpus report has no cell for the requested kind/window");
}

CorpusReport evaluate_corpus(const std::map<std::string, BoundarySet>& predictions, const ReferenceCorpus& references,
                             std::span<const double> windows, double beta, const std::string& algorithm) {
  CorpusReport rep;
  rep.algorithm = algorithm;
  rep.beta = beta;
  std::vector<double> ws(windows.begin(), windows.end());
  std::sort(ws.begin(), ws.end());

  std::size_t shared = 0;
  for (const auto& [track, est] : predictions) {
    const auto it = references.find(track);
    if (it == references.end()) {
      rep.skipped.push_back(track);
      warn("evaluate: no reference boundaries for track '" + track + "'; skipped");
      continue;
    }
    ++shared;
    for (const auto& [kind, ref] : it->second) {
      if (ref.times_s.empty()) continue;
      for (double w : ws) rep.per_track.push_back({track, kind, hit_rate(est, ref, w, beta)});
    }
  }
  if (shared == 0) throw Error("evaluate: predictions and references share no track");

  for (BoundaryKind kind : {BoundaryKind::kStructural, BoundaryKind::kExtended}) {
    for (double w : ws) {
      CorpusCell c{kind, w};
      double matches = 0, n_est = 0, n_ref = 0;
      for (const auto& s : rep.per_track) {
        if (s.kind != kind || s.result.window_s != w) continue;
        ++c.tracks;
        c.macro_f += s.result.f_measure;
        c.macro_precision += s.result.precision;
        c.macro_recall += s.result.recall;
        matches += static_cast<double>(s.result.matches.size());
        n_est += static_cast<double>(predictions.at(s.track_id).times_s.size());
        n_ref += static_cast<double>(references.at(s.track_id).at(kind).times_s.size());
      }
      if (c.tracks > 0) {
        const double n = static_cast<double>(c.tracks);
        c.macro_f /= n;
        c.macro_precision /= n;
        c.macro_recall /= n;
        const double p = n_est > 0 ? matches / n_est : 0.0;
        const double r = n_ref > 0 ? matches / n_ref : 0.0;
        c.micro_f = f_measure(p, r, beta);
      }
      rep.cells.push_back(c);
    }
  }
  return rep;
}

namespace {

std::string window_label(double w) {
  std::ostringstream s;
  s << w;
  return s.str();
}

}  // namespace

void write_report_csv(std::ostream& out, std::span<const CorpusReport> reports) {
  if (reports.empty()) return;
  out << "algorithm,beta";
  for (const auto& c : reports.front().cells) out << ',' << to_string(c.kind) << '_' << window_label(c.window_s);
  out << '\n';
  for (const auto& r : reports) {
    out << r.algorithm << ',' << r.beta;
    for (const auto& c : r.cells) out << ',' << c.macro_f;
    out << '\n';
  }
}

void write_report_json(std::ostream& out, std::span<const CorpusReport> reports) {
  json columns = json::array();
  if (!reports.empty())
    for (const auto& c : reports.front().cells)
      columns.push_back({{"boundaries", to_string(c.kind)}, {"hit_window_s", c.window_s}});
  json rows = json::array();
  for (const auto& r : reports) {
    json macro = json::array(), micro = json::array(), tracks = json::array();
    for (const auto& c : r.cells) {
      macro.push_back(c.macro_f);
      micro.push_back(c.micro_f);
      tracks.push_back(c.tracks);
    }
    rows.push_back({{"algorithm", r.algorithm}, {"beta", r.beta}, {"f_macro", macro}, {"f_micro", micro},
                    {"tracks", tracks}, {"skipped", r.skipped}});
  }
  out << json{{"metric", "hit rate weighted F-score"}, {"columns", columns}, {"rows", rows}}.dump(1) << '\n';
}

std::vector<BoundarySet> read_boundaries(std::istream& in) {
  std::vector<BoundarySet> out;
  try {
    json doc = json::parse(in);
    if (doc.is_object()) doc = json::array({doc});
    for (const auto& j : doc) {
      BoundarySet b;
      b.track_id = j.at("track").get<std::string>();
      b.kind = boundary_kind_from_string(j.value("kind", std::string("structural")));
      b.times_s = j.at("boundaries").get<std::vector<double>>();
      b.validate();
      out.push_back(std::move(b));
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception& ex) {
    throw ParseError(std::string("boundary file: ") + ex.what());
  }
  return out;
}

void write_boundaries(std::ostream& out, std::span<const BoundarySet> sets) {
  json arr = json::array();
  for (const auto& b : sets) arr.push_back({{"track", b.track_id}, {"kind", to_string(b.kind)}, {"boundaries", b.times_s}});
  out << arr.dump(1) << '\n';
}

ReferenceCorpus to_reference_corpus(std::span<const BoundarySet> sets) {
  ReferenceCorpus c;
  for (const auto& b : sets) c[b.track_id][b.kind] = b;
  return c;
}

std::map<std::string, LikelihoodCurve> read_curves(std::istream& in) {
  std::map<std::string, LikelihoodCurve> out;
  try {
    const json doc = json::parse(in);
    for (const auto& j : doc) {
      LikelihoodCurve c;
      c.source = j.value("source", std::string{});
      c.times_s = j.at("times_s").get<std::vector<double>>();
      c.values = j.at("values").get<std::vector<double>>();
      c.validate();
      out[j.at("track").get<std::string>()] = std::move(c);
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception& ex) {
    throw ParseError(std::string("curve file: ") + ex.what());
  }
  return out;
}

void write_curves(std::ostream& out, const std::map<std::string, LikelihoodCurve>& curves) {
  json arr = json::array();
  for (const auto& [track, c] : curves)
    arr.push_back({{"track", track}, {"source", c.source}, {"times_s", c.times_s}, {"values", c.values}});
  out << arr.dump() << '\n';
}

}  // namespace skipseg
