#pragma once

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace skipseg {

/// One playback termination record.
struct SkipEvent {
  std::string track_id;
  std::string stream_date;  // YYYY-MM-DD
  std::string region;       // ISO country code
  double stop_time_s = 0.0;
  double track_duration_s = 0.0;
  bool completed = false;

  /// Throws Error when the record violates the event invariants.
  void validate() const;

  bool operator==(const SkipEvent&) const = default;
};

enum class PartitionScheme { kDate, kRegion, kAll };

PartitionScheme partition_scheme_from_string(const std::string& s);
const char* to_string(PartitionScheme scheme);

struct ProfileKey {
  std::string track_id;
  std::string partition;

  auto operator<=>(const ProfileKey&) const = default;
  std::string str() const { return track_id + "/" + partition; }
};

/// Histogram of stop offsets for one (track, partition) pair. Completed plays
/// are not counted as skips; they only feed total_completions.
struct SkipProfile {
  std::string track_id;
  std::string partition;
  double bin_width_s = 0.5;
  double track_duration_s = 0.0;
  std::vector<std::uint64_t> counts;
  std::uint64_t total_skips = 0;
  std::uint64_t total_completions = 0;

  static SkipProfile empty(std::string track_id, std::string partition,
                           double track_duration_s, double bin_width_s);

  ProfileKey key() const { return {track_id, partition}; }
  std::uint64_t total_streams() const { return total_skips + total_completions; }
  double bin_time(std::size_t i) const { return (static_cast<double>(i) + 0.5) * bin_width_s; }

  /// Skips in the final two bins; kept in counts but reported separately.
  std::uint64_t end_of_track_skips() const;

  void add(const SkipEvent& e);
  void validate() const;

  bool operator==(const SkipProfile&) const = default;
};

std::size_t bin_count(double track_duration_s, double bin_width_s);

using ProfileSet = std::map<ProfileKey, SkipProfile>;

std::string partition_key(const SkipEvent& e, PartitionScheme scheme);

/// Bins events into one profile per (track, partition key). Throws when two
/// events of one track disagree on the duration.
ProfileSet ingest_events(std::span<const SkipEvent> events, double bin_width_s,
                         PartitionScheme scheme);

/// Folds events into an existing set (streaming ingestion).
void ingest_into(ProfileSet& set, std::span<const SkipEvent> events, double bin_width_s,
                 PartitionScheme scheme);

SkipProfile merge(const SkipProfile& a, const SkipProfile& b);
ProfileSet merge(const ProfileSet& a, const ProfileSet& b);

/// Probability that a stream is still playing at the end of each bin.
std::vector<double> survival_curve(const SkipProfile& p);

struct AggregateOptions {
  bool include_track_end = true;  // keep skips in the final two bins
  bool relative_time = false;     // resample onto [0,1] of track length
  std::size_t relative_points = 100;
  double absolute_span_s = 0.0;   // >0 truncates the absolute axis
};

/// Mean skip-rate curve (skips per stream per bin) over many profiles.
struct AggregateCurve {
  std::vector<double> axis;  // seconds, or fraction of track length
  std::vector<double> skip_fraction;
};

AggregateCurve aggregate_curve(std::span<const SkipProfile> profiles, const AggregateOptions& opt);

/// Fraction of all streams stopped before `seconds`.
double skipped_before_fraction(std::span<const SkipProfile> profiles, double seconds);

struct FragmentOptions {
  double offset_s = 5.0;
  double span_s = 115.0;
  std::size_t median_window = 5;
};

/// Sliced, median-smoothed, L2-normalized profile window.
struct ProfileFragment {
  std::string track_id;
  std::string partition;
  std::vector<double> values;

  ProfileKey key() const { return {track_id, partition}; }
};

ProfileFragment fragment(const SkipProfile& p, const FragmentOptions& opt = {});

double fragment_distance(const ProfileFragment& a, const ProfileFragment& b);

enum class DistanceMode { kVsRelease, kDayToDay };

struct DistanceSeries {
  std::vector<double> values;
  std::vector<std::size_t> day_index;  // later day of each compared pair
  std::vector<std::size_t> gaps;       // missing or unusable days
};

/// Distances between fragments of consecutive (or release-day vs later)
/// daily profiles. `days[k]` is the profile of day k, or nullopt if absent.
DistanceSeries distance_series(std::span<const std::optional<SkipProfile>> days, DistanceMode mode,
                               const FragmentOptions& opt = {});

/// Parses one JSONL event record; unknown keys are ignored.
SkipEvent parse_event(const std::string& line, std::size_t line_no);
std::vector<SkipEvent> read_events(std::istream& in);
void write_event(std::ostream& out, const SkipEvent& e);

void write_profiles(std::ostream& out, const ProfileSet& set);
ProfileSet read_profiles(std::istream& in);

}  // namespace skipseg
