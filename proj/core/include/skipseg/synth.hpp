#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "skipseg/audio.hpp"
#include "skipseg/common.hpp"
#include "skipseg/profiles.hpp"

namespace skipseg {

struct SongConfig {
  double min_duration_s = 150.0;
  double max_duration_s = 240.0;
  double min_section_s = 8.0;
  double max_section_s = 30.0;
  std::size_t n_bands = 16;
  /// Chance that a section long enough to split gets a mid-section change-point.
  double extended_probability = 0.5;

  void validate() const;
};

/// Stationary feature statistics of one stretch of a song. Stretches tile the
/// track; `extended` marks stretches that open at a mid-section change-point.
struct SectionDescriptor {
  double start_s = 0.0;
  double end_s = 0.0;
  bool extended = false;
  std::vector<double> mean;
  std::vector<double> stddev;
};

struct SyntheticSong {
  std::string track_id;
  std::uint64_t seed = 0;
  double duration_s = 0.0;
  BoundarySet structural;
  /// Structural boundaries plus the mid-section change-points.
  BoundarySet extended;
  std::vector<SectionDescriptor> sections;

  std::size_t section_count() const;
};

SyntheticSong gen_song(std::uint64_t seed, const SongConfig& cfg = {}, const std::string& track_id = {});

/// Additive stop hazard: early-listening decay + constant base rate +
/// end-of-track spike + a decaying surge after each boundary, shifted by the
/// reaction delay.
struct ListenerModel {
  double early_rate = 0.1526;  // per second at t = 0
  double early_decay_s = 2.0;
  double base_rate = 0.0015;
  double end_rate = 0.02;
  double end_decay_s = 5.0;
  double surge_rate = 0.004;
  double surge_decay_s = 2.0;
  double extended_surge_factor = 0.4;
  double delay_s = 3.5;
  double delay_jitter_s = 0.2;  // per boundary, fixed for the song
  double day_drift = 0.05;      // relative std of the surge magnitude per (date, region)
  double streams_per_day = 1e5;
  double volume_decay_per_day = 0.0;
  double grid_step_s = 0.05;

  void validate() const;
};

/// Model hazard (per second) at time t for a given surge scale.
double listener_hazard(const SyntheticSong& song, const ListenerModel& m, double t, double surge_scale = 1.0);

/// Reaction delay applied to each boundary of the extended set.
std::vector<double> boundary_delays(const SyntheticSong& song, const ListenerModel& m);

/// Surge scale of one (date, region) partition.
double day_surge_scale(const SyntheticSong& song, const ListenerModel& m, const std::string& date,
                       const std::string& region);

/// Probability mass of stopping inside each bin (skips only), from the model
/// hazard with unit surge scale.
std::vector<double> expected_skip_mass(const SyntheticSong& song, const ListenerModel& m, double bin_width_s);

std::vector<SkipEvent> gen_skip_events(const SyntheticSong& song, const ListenerModel& m, std::size_t n_streams,
                                       const std::string& date, const std::string& region, std::uint64_t seed,
                                       unsigned threads = 1);

/// Same streams as gen_skip_events, binned directly into a profile.
SkipProfile simulate_profile(const SyntheticSong& song, const ListenerModel& m, std::size_t n_streams,
                             const std::string& date, const std::string& region, std::uint64_t seed,
                             double bin_width_s = 0.5, unsigned threads = 1);

/// Stream volume of day `day` (0 = release day).
std::size_t daily_streams(const ListenerModel& m, std::size_t day);

/// ISO date `days` after 2020-01-01.
std::string synthetic_date(std::size_t days);

/// Piecewise-stationary frames drawn from the section descriptors, with
/// Gaussian noise of `noise` times each band's deviation.
MelSpectrogram gen_feature_proxy(const SyntheticSong& song, double frame_rate_hz, std::size_t n_mels, double noise,
                                 std::uint64_t seed);

void write_songs(std::ostream& out, std::span<const SyntheticSong> songs);
std::vector<SyntheticSong> read_songs(std::istream& in);

}  // namespace skipseg
