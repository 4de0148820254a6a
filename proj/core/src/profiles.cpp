#include "skipseg/profiles.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "skipseg/common.hpp"
#include "skipseg/signal.hpp"

namespace skipseg {

using nlohmann::json;

namespace {

constexpr double kDurationTolerance = 1e-6;

bool valid_date(const std::string& d) {
  if (d.size() != 10 || d[4] != '-' || d[7] != '-') return false;
  for (std::size_t i : {0, 1, 2, 3, 5, 6, 8, 9})
    if (d[i] < '0' || d[i] > '9') return false;
  const int month = std::stoi(d.substr(5, 2));
  const int day = std::stoi(d.substr(8, 2));
  return month >= 1 && month <= 12 && day >= 1 && day <= 31;
}

void check_compatible(const SkipProfile& a, const SkipProfile& b) {
  if (a.track_id != b.track_id) throw Error("merge: track ids differ ('" + a.track_id + "' vs '" + b.track_id + "')");
  if (a.bin_width_s != b.bin_width_s) throw Error("merge: bin widths differ for track '" + a.track_id + "'");
  if (std::abs(a.track_duration_s - b.track_duration_s) > kDurationTolerance)
    throw Error("merge: durations differ for track '" + a.track_id + "'");
  if (a.counts.size() != b.counts.size()) throw Error("merge: bin counts differ for track '" + a.track_id + "'");
}

}  // namespace

void SkipEvent::validate() const {
  if (track_id.empty()) throw Error("event: empty track id");
  if (!valid_date(stream_date)) throw Error("event: malformed date '" + stream_date + "'");
  if (!std::isfinite(track_duration_s) || track_duration_s <= 0.0) throw Error("event: duration must be positive");
  if (!std::isfinite(stop_time_s) || stop_time_s < 0.0 || stop_time_s > track_duration_s)
    throw Error("event: stop time outside [0, duration]");
  if (completed && stop_time_s != track_duration_s) throw Error("event: completed play must stop at the track end");
}

PartitionScheme partition_scheme_from_string(const std::string& s) {
  if (s == "date") return PartitionScheme::kDate;
  if (s == "region") return PartitionScheme::kRegion;
  if (s == "all") return PartitionScheme::kAll;
  throw Error("unknown partition scheme '" + s + "'");
}

const char* to_string(PartitionScheme scheme) {
  switch (scheme) {
    case PartitionScheme::kDate: return "date";
    case PartitionScheme::kRegion: return "region";
    case PartitionScheme::kAll: return "all";
  }
  return "?";
}

std::size_t bin_count(double track_duration_s, double bin_width_s) {
  if (!(bin_width_s > 0.0)) throw Error("bin width must be positive");
  if (!(track_duration_s > 0.0)) throw Error("track duration must be positive");
  return static_cast<std::size_t>(std::ceil(track_duration_s / bin_width_s - 1e-9));
}

SkipProfile SkipProfile::empty(std::string track_id, std::string partition, double track_duration_s,
                               double bin_width_s) {
  SkipProfile p;
  p.track_id = std::move(track_id);
  p.partition = std::move(partition);
  p.bin_width_s = bin_width_s;
  p.track_duration_s = track_duration_s;
  p.counts.assign(bin_count(track_duration_s, bin_width_s), 0);
  return p;
}

std::uint64_t SkipProfile::end_of_track_skips() const {
  std::uint64_t s = 0;
  for (std::size_t i = counts.size() >= 2 ? counts.size() - 2 : 0; i < counts.size(); ++i) s += counts[i];
  return s;
}

void SkipProfile::add(const SkipEvent& e) {
  if (std::abs(e.track_duration_s - track_duration_s) > kDurationTolerance)
    throw Error("duration mismatch for track '" + track_id + "'");
  if (e.completed) {
    ++total_completions;
    return;
  }
  const auto bin = std::min(static_cast<std::size_t>(e.stop_time_s / bin_width_s), counts.size() - 1);
  ++counts[bin];
  ++total_skips;
}

void SkipProfile::validate() const {
  if (counts.size() != bin_count(track_duration_s, bin_width_s))
    throw Error("profile '" + key().str() + "': bin count does not match duration");
  std::uint64_t s = 0;
  for (auto c : counts) s += c;
  if (s != total_skips) throw Error("profile '" + key().str() + "': counts do not sum to total_skips");
}

std::string partition_key(const SkipEvent& e, PartitionScheme scheme) {
  switch (scheme) {
    case PartitionScheme::kDate: return e.stream_date;
    case PartitionScheme::kRegion: return e.region;
    case PartitionScheme::kAll: return "all";
  }
  return {};
}

void ingest_into(ProfileSet& set, std::span<const SkipEvent> events, double bin_width_s,
                 PartitionScheme scheme) {
  std::map<std::string, double> durations;
  for (const auto& [key, p] : set) durations.emplace(key.track_id, p.track_duration_s);
  for (const auto& e : events) {
    auto [it, inserted] = durations.emplace(e.track_id, e.track_duration_s);
    if (!inserted && std::abs(it->second - e.track_duration_s) > kDurationTolerance)
      throw Error("duration mismatch across events of track '" + e.track_id + "'");
    ProfileKey key{e.track_id, partition_key(e, scheme)};
    auto pit = set.find(key);
    if (pit == set.end())
      pit = set.emplace(key, SkipProfile::empty(key.track_id, key.partition, e.track_duration_s, bin_width_s)).first;
    pit->second.add(e);
  }
}

ProfileSet ingest_events(std::span<const SkipEvent> events, double bin_width_s, PartitionScheme scheme) {
  ProfileSet set;
  ingest_into(set, events, bin_width_s, scheme);
  return set;
}

SkipProfile merge(const SkipProfile& a, const SkipProfile& b) {
  check_compatible(a, b);
  if (a.partition != b.partition) throw Error("merge: partitions differ for track '" + a.track_id + "'");
  SkipProfile out = a;
  for (std::size_t i = 0; i < out.counts.size(); ++i) out.counts[i] += b.counts[i];
  out.total_skips += b.total_skips;
  out.total_completions += b.total_completions;
  return out;
}

ProfileSet merge(const ProfileSet& a, const ProfileSet& b) {
  ProfileSet out = a;
  for (const auto& [key, p] : b) {
    auto it = out.find(key);
    if (it == out.end())
      out.emplace(key, p);
    else
      it->second = merge(it->second, p);
  }
  return out;
}

std::vector<double> survival_curve(const SkipProfile& p) {
  const std::uint64_t total = p.total_streams();
  if (total == 0) throw Error("survival curve of empty profile '" + p.key().str() + "'");
  std::vector<double> s(p.counts.size());
  std::uint64_t cumulative = 0;
  for (std::size_t i = 0; i < p.counts.size(); ++i) {
    cumulative += p.counts[i];
    s[i] = static_cast<double>(total - cumulative) / static_cast<double>(total);
  }
  return s;
}

AggregateCurve aggregate_curve(std::span<const SkipProfile> profiles, const AggregateOptions& opt) {
  AggregateCurve out;
  if (profiles.empty()) return out;
  const double bw = profiles.front().bin_width_s;
  std::size_t n = 0;
  for (const auto& p : profiles) {
    if (p.bin_width_s != bw) throw Error("aggregate curve: mixed bin widths");
    n = std::max(n, p.counts.size());
  }
  if (opt.relative_time) n = opt.relative_points;
  else if (opt.absolute_span_s > 0.0) n = std::min(n, bin_count(opt.absolute_span_s, bw));

  std::vector<double> sum(n, 0.0);
  std::vector<std::size_t> covered(n, 0);
  for (const auto& p : profiles) {
    const double total = static_cast<double>(p.total_streams());
    if (total == 0.0) continue;
    const std::size_t keep = opt.include_track_end || p.counts.size() < 2 ? p.counts.size() : p.counts.size() - 2;
    if (opt.relative_time) {
      std::vector<double> local(n, 0.0);
      for (std::size_t i = 0; i < keep; ++i) {
        const double frac = p.bin_time(i) / p.track_duration_s;
        const auto j = std::min(static_cast<std::size_t>(frac * static_cast<double>(n)), n - 1);
        local[j] += static_cast<double>(p.counts[i]) / total;
      }
      for (std::size_t j = 0; j < n; ++j) {
        sum[j] += local[j];
        ++covered[j];
      }
    } else {
      for (std::size_t i = 0; i < std::min(p.counts.size(), n); ++i) {
        if (i < keep) sum[i] += static_cast<double>(p.counts[i]) / total;
        ++covered[i];
      }
    }
  }
  out.axis.resize(n);
  out.skip_fraction.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.axis[i] = opt.relative_time ? (static_cast<double>(i) + 0.5) / static_cast<double>(n)
                                    : (static_cast<double>(i) + 0.5) * bw;
    out.skip_fraction[i] = covered[i] ? sum[i] / static_cast<double>(covered[i]) : 0.0;
  }
  return out;
}

double skipped_before_fraction(std::span<const SkipProfile> profiles, double seconds) {
  double skipped = 0.0, total = 0.0;
  for (const auto& p : profiles) {
    total += static_cast<double>(p.total_streams());
    for (std::size_t i = 0; i < p.counts.size(); ++i) {
      if (static_cast<double>(i + 1) * p.bin_width_s > seconds + 1e-9) break;
      skipped += static_cast<double>(p.counts[i]);
    }
  }
  if (total == 0.0) throw Error("no streams");
  return skipped / total;
}

ProfileFragment fragment(const SkipProfile& p, const FragmentOptions& opt) {
  const double end_s = opt.offset_s + opt.span_s;
  if (p.track_duration_s < end_s)
    throw Error("fragment: track '" + p.track_id + "' shorter than " + std::to_string(end_s) + "s");
  const auto first = static_cast<std::size_t>(std::lround(opt.offset_s / p.bin_width_s));
  const auto len = static_cast<std::size_t>(std::lround(opt.span_s / p.bin_width_s));
  if (first + len > p.counts.size()) throw Error("fragment: profile '" + p.key().str() + "' has too few bins");

  std::vector<double> slice(len);
  for (std::size_t i = 0; i < len; ++i) slice[i] = static_cast<double>(p.counts[first + i]);
  auto smooth = signal::median_filter(slice, opt.median_window);
  const double norm = signal::l2_norm(smooth);
  if (norm == 0.0) throw Error("fragment: profile '" + p.key().str() + "' has no skips in the fragment span");
  for (double& v : smooth) v /= norm;
  return {p.track_id, p.partition, std::move(smooth)};
}

double fragment_distance(const ProfileFragment& a, const ProfileFragment& b) {
  if (a.values.size() != b.values.size())
    throw Error("fragment distance: dimension mismatch (" + std::to_string(a.values.size()) + " vs " +
                std::to_string(b.values.size()) + ")");
  double s = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double d = a.values[i] - b.values[i];
    s += d * d;
  }
  return std::sqrt(s);
}

DistanceSeries distance_series(std::span<const std::optional<SkipProfile>> days, DistanceMode mode,
                               const FragmentOptions& opt) {
  DistanceSeries out;
  std::vector<std::pair<std::size_t, ProfileFragment>> usable;
  for (std::size_t k = 0; k < days.size(); ++k) {
    if (!days[k]) {
      out.gaps.push_back(k);
      continue;
    }
    try {
      usable.emplace_back(k, fragment(*days[k], opt));
    } catch (const Error&) {
      out.gaps.push_back(k);
    }
  }
  if (usable.size() < 2) throw Error("distance series: fewer than two usable days");
  for (std::size_t k = 1; k < usable.size(); ++k) {
    const auto& ref = mode == DistanceMode::kVsRelease ? usable.front().second : usable[k - 1].second;
    out.values.push_back(fragment_distance(ref, usable[k].second));
    out.day_index.push_back(usable[k].first);
  }
  return out;
}

SkipEvent parse_event(const std::string& line, std::size_t line_no) {
  SkipEvent e;
  try {
    const json j = json::parse(line);
    if (!j.is_object()) throw ParseError("event record is not an object", line_no);
    e.track_id = j.at("track").get<std::string>();
    e.stream_date = j.at("date").get<std::string>();
    e.region = j.value("region", std::string{});
    e.stop_time_s = j.at("stop").get<double>();
    e.track_duration_s = j.at("dur").get<double>();
    e.completed = j.value("completed", false);
    e.validate();
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& ex) {
    throw ParseError(std::string("malformed event: ") + ex.what(), line_no);
  }
  return e;
}

std::vector<SkipEvent> read_events(std::istream& in) {
  std::vector<SkipEvent> events;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    events.push_back(parse_event(line, line_no));
  }
  return events;
}

void write_event(std::ostream& out, const SkipEvent& e) {
  nlohmann::ordered_json j;
  j["track"] = e.track_id;
  j["date"] = e.stream_date;
  j["region"] = e.region;
  j["stop"] = e.stop_time_s;
  j["dur"] = e.track_duration_s;
  j["completed"] = e.completed;
  out << j.dump() << '\n';
}

void write_profiles(std::ostream& out, const ProfileSet& set) {
  json arr = json::array();
  for (const auto& [key, p] : set) {
    arr.push_back({{"track", p.track_id},
                   {"partition", p.partition},
                   {"bin_width_s", p.bin_width_s},
                   {"track_duration_s", p.track_duration_s},
                   {"total_skips", p.total_skips},
                   {"total_completions", p.total_completions},
                   {"end_of_track_skips", p.end_of_track_skips()},
                   {"counts", p.counts}});
  }
  json doc{{"format", "skipseg-profiles"}, {"version", 1}, {"profiles", std::move(arr)}};
  out << doc.dump(1) << '\n';
}

ProfileSet read_profiles(std::istream& in) {
  ProfileSet set;
  try {
    const json doc = json::parse(in);
    if (doc.value("format", "") != "skipseg-profiles") throw ParseError("not a profile file");
    for (const auto& j : doc.at("profiles")) {
      SkipProfile p;
      p.track_id = j.at("track").get<std::string>();
      p.partition = j.at("partition").get<std::string>();
      p.bin_width_s = j.at("bin_width_s").get<double>();
      p.track_duration_s = j.at("track_duration_s").get<double>();
      p.total_skips = j.at("total_skips").get<std::uint64_t>();
      p.total_completions = j.at("total_completions").get<std::uint64_t>();
      p.counts = j.at("counts").get<std::vector<std::uint64_t>>();
      p.validate();
      set.emplace(p.key(), std::move(p));
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception& ex) {
    throw ParseError(std::string("profile file: ") + ex.what());
  }
  return set;
}

}  // namespace skipseg
