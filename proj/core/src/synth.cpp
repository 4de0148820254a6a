#include "skipseg/synth.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "skipseg/parallel.hpp"
#include "skipseg/rng.hpp"

namespace skipseg {

using nlohmann::json;

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

double round_to(double x, double step) { return std::round(x / step) * step; }

constexpr std::size_t kStreamBlock = 4096;

}  // namespace

void SongConfig::validate() const {
  if (!(min_duration_s > 0.0 && min_duration_s <= max_duration_s)) throw Error("song config: invalid duration range");
  if (!(min_section_s > 0.0 && min_section_s <= max_section_s)) throw Error("song config: invalid section range");
  if (n_bands == 0) throw Error("song config: zero feature bands");
  if (extended_probability < 0.0 || extended_probability > 1.0)
    throw Error("song config: extended probability outside [0,1]");
  // Every duration in range must split into at least three admissible sections.
  const double lo = std::ceil(max_duration_s / max_section_s - 1e-9);
  const double hi = std::floor(min_duration_s / min_section_s + 1e-9);
  if (std::max(lo, 3.0) > hi) throw Error("song config: section lengths cannot tile the duration range with >= 3 sections");
}

std::size_t SyntheticSong::section_count() const {
  return static_cast<std::size_t>(std::count_if(sections.begin(), sections.end(), [](const auto& s) { return !s.extended; }));
}

SyntheticSong gen_song(std::uint64_t seed, const SongConfig& cfg, const std::string& track_id) {
  cfg.validate();
  Rng rng = Rng::substream(seed, 0x736f6e67);
  SyntheticSong song;
  song.seed = seed;
  song.track_id = track_id.empty() ? "song-" + std::to_string(seed) : track_id;
  song.duration_s = round_to(rng.uniform(cfg.min_duration_s, cfg.max_duration_s), 0.1);
  const double dur = song.duration_s;

  std::vector<double> lengths;
  for (int attempt = 0; attempt < 1000 && lengths.empty(); ++attempt) {
    double sum = 0.0;
    while (sum < dur) {
      lengths.push_back(rng.uniform(cfg.min_section_s, cfg.max_section_s));
      sum += lengths.back();
    }
    const double scale = dur / sum;
    const bool ok = lengths.size() >= 3 && std::all_of(lengths.begin(), lengths.end(), [&](double l) {
      return l * scale >= cfg.min_section_s && l * scale <= cfg.max_section_s;
    });
    if (ok)
      for (double& l : lengths) l *= scale;
    else
      lengths.clear();
  }
  if (lengths.empty()) {
    const auto n = std::max<std::size_t>(3, static_cast<std::size_t>(std::ceil(dur / cfg.max_section_s)));
    lengths.assign(n, dur / static_cast<double>(n));
  }

  std::vector<double> starts{0.0};
  for (std::size_t i = 0; i + 1 < lengths.size(); ++i) starts.push_back(round_to(starts.back() + lengths[i], 0.01));
  song.structural = {song.track_id, {starts.begin() + 1, starts.end()}, BoundaryKind::kStructural};

  const double min_jump = 0.25 * std::sqrt(static_cast<double>(cfg.n_bands));
  std::vector<double> prev;
  for (std::size_t s = 0; s < starts.size(); ++s) {
    const double start = starts[s];
    const double end = s + 1 < starts.size() ? starts[s + 1] : dur;
    SectionDescriptor d;
    d.start_s = start;
    d.end_s = end;
    for (;;) {
      d.mean.resize(cfg.n_bands);
      for (double& m : d.mean) m = rng.uniform(0.1, 0.9);
      if (prev.empty()) break;
      double dist = 0.0;
      for (std::size_t b = 0; b < cfg.n_bands; ++b) dist += (d.mean[b] - prev[b]) * (d.mean[b] - prev[b]);
      if (std::sqrt(dist) >= min_jump) break;
    }
    d.stddev.resize(cfg.n_bands);
    for (double& v : d.stddev) v = rng.uniform(0.05, 0.15);
    prev = d.mean;

    const bool split = end - start >= 2.0 * cfg.min_section_s && rng.uniform() < cfg.extended_probability;
    if (!split) {
      song.sections.push_back(std::move(d));
      continue;
    }
    const double cut = round_to(start + (end - start) * rng.uniform(0.4, 0.6), 0.01);
    SectionDescriptor tail = d;
    d.end_s = cut;
    tail.start_s = cut;
    tail.extended = true;
    const std::size_t shifted = std::max<std::size_t>(1, cfg.n_bands / 4);
    std::vector<std::size_t> bands(cfg.n_bands);
    for (std::size_t b = 0; b < bands.size(); ++b) bands[b] = b;
    rng.shuffle(std::span<std::size_t>(bands));
    for (std::size_t k = 0; k < shifted; ++k) {
      const double delta = rng.uniform(0.15, 0.3) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
      tail.mean[bands[k]] = std::clamp(tail.mean[bands[k]] + delta, 0.0, 1.0);
    }
    song.sections.push_back(std::move(d));
    song.sections.push_back(std::move(tail));
  }
  song.extended = {song.track_id, {}, BoundaryKind::kExtended};
  for (std::size_t s = 1; s < song.sections.size(); ++s) song.extended.times_s.push_back(song.sections[s].start_s);
  song.structural.validate(dur);
  song.extended.validate(dur);
  if (song.structural.times_s.size() < 2) throw Error("gen_song: fewer than two boundaries");
  return song;
}

void ListenerModel::validate() const {
  for (double v : {early_rate, base_rate, end_rate, surge_rate, extended_surge_factor, delay_s, delay_jitter_s, day_drift,
                   volume_decay_per_day})
    if (!(v >= 0.0)) throw Error("listener model: rates, delays and drift must be non-negative");
  if (!(early_decay_s > 0.0 && end_decay_s > 0.0 && surge_decay_s > 0.0))
    throw Error("listener model: decay constants must be positive");
  if (!(grid_step_s > 0.0)) throw Error("listener model: grid step must be positive");
  if (!(streams_per_day >= 1.0)) throw Error("listener model: need at least one stream per day");
}

std::vector<double> boundary_delays(const SyntheticSong& song, const ListenerModel& m) {
  std::vector<double> out;
  for (std::size_t i = 0; i < song.extended.times_s.size(); ++i) {
    Rng rng = Rng::substream(song.seed, 0x6a6974 + i);
    out.push_back(std::max(0.0, m.delay_s + m.delay_jitter_s * rng.normal()));
  }
  return out;
}

double day_surge_scale(const SyntheticSong& song, const ListenerModel& m, const std::string& date,
                       const std::string& region) {
  Rng rng = Rng::substream(song.seed ^ fnv1a(date + "|" + region), 0x647269);
  return std::max(0.0, 1.0 + m.day_drift * rng.normal());
}

namespace {

struct Surge {
  double onset_s;
  double rate;
};

std::vector<Surge> surges(const SyntheticSong& song, const ListenerModel& m, double scale) {
  const auto delays = boundary_delays(song, m);
  const auto& structural = song.structural.times_s;
  std::vector<Surge> out;
  for (std::size_t i = 0; i < song.extended.times_s.size(); ++i) {
    const double b = song.extended.times_s[i];
    const bool is_structural = std::binary_search(structural.begin(), structural.end(), b);
    out.push_back({b + delays[i], scale * m.surge_rate * (is_structural ? 1.0 : m.extended_surge_factor)});
  }
  return out;
}

double hazard_at(const SyntheticSong& song, const ListenerModel& m, std::span<const Surge> s, double t) {
  double h = m.early_rate * std::exp(-t / m.early_decay_s) + m.base_rate +
             m.end_rate * std::exp(-(song.duration_s - t) / m.end_decay_s);
  for (const auto& g : s)
    if (t >= g.onset_s) h += g.rate * std::exp(-(t - g.onset_s) / m.surge_decay_s);
  return h;
}

/// Inverse-CDF stop sampler on a fixed time grid (trapezoidal cumulative hazard).
class StopSampler {
 public:
  StopSampler(const SyntheticSong& song, const ListenerModel& m, double surge_scale) : dur_(song.duration_s) {
    m.validate();
    const auto s = surges(song, m, surge_scale);
    const auto n = static_cast<std::size_t>(std::ceil(dur_ / m.grid_step_s - 1e-9));
    times_.resize(n + 1);
    cum_.resize(n + 1);
    double prev_h = hazard_at(song, m, s, 0.0);
    for (std::size_t k = 1; k <= n; ++k) {
      times_[k] = std::min(dur_, static_cast<double>(k) * m.grid_step_s);
      const double h = hazard_at(song, m, s, times_[k]);
      cum_[k] = cum_[k - 1] + 0.5 * (prev_h + h) * (times_[k] - times_[k - 1]);
      prev_h = h;
    }
  }

  /// Stop time, or a negative value for a completed play.
  double sample(Rng& rng) const {
    const double e = -std::log1p(-rng.uniform());
    if (e >= cum_.back()) return -1.0;
    const auto it = std::upper_bound(cum_.begin(), cum_.end(), e);
    const auto k = static_cast<std::size_t>(it - cum_.begin());
    const double frac = (e - cum_[k - 1]) / (cum_[k] - cum_[k - 1]);
    return std::min(dur_, times_[k - 1] + frac * (times_[k] - times_[k - 1]));
  }

  /// P(stop in [a, b)) under the same interpolated cumulative hazard.
  double mass(double a, double b) const { return std::exp(-cumulative(a)) - std::exp(-cumulative(b)); }

 private:
  double cumulative(double t) const {
    if (t >= dur_) return cum_.back();
    const auto it = std::upper_bound(times_.begin(), times_.end(), t);
    const auto k = static_cast<std::size_t>(it - times_.begin());
    const double frac = (t - times_[k - 1]) / (times_[k] - times_[k - 1]);
    return cum_[k - 1] + frac * (cum_[k] - cum_[k - 1]);
  }

  double dur_;
  std::vector<double> times_, cum_;
};

/// Runs `visit(stop)` for each simulated stream, in block order.
template <typename Visit>
void simulate_streams(const SyntheticSong& song, const ListenerModel& m, std::size_t n_streams, const std::string& date,
                      const std::string& region, std::uint64_t seed, unsigned threads, Visit&& visit) {
  const StopSampler sampler(song, m, day_surge_scale(song, m, date, region));
  const std::uint64_t stream_seed = Rng::mix(seed) ^ fnv1a(song.track_id + "|" + date + "|" + region);
  const std::size_t blocks = (n_streams + kStreamBlock - 1) / kStreamBlock;
  std::vector<std::vector<double>> stops(blocks);
  parallel_for(blocks, threads, [&](std::size_t b) {
    Rng rng = Rng::substream(stream_seed, b);
    const std::size_t n = std::min(kStreamBlock, n_streams - b * kStreamBlock);
    stops[b].resize(n);
    for (double& s : stops[b]) s = sampler.sample(rng);
  });
  for (const auto& block : stops)
    for (double s : block) visit(s);
}

}  // namespace

double listener_hazard(const SyntheticSong& song, const ListenerModel& m, double t, double surge_scale) {
  const auto s = surges(song, m, surge_scale);
  return hazard_at(song, m, s, t);
}

std::vector<double> expected_skip_mass(const SyntheticSong& song, const ListenerModel& m, double bin_width_s) {
  const StopSampler sampler(song, m, 1.0);
  const std::size_t n = bin_count(song.duration_s, bin_width_s);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = sampler.mass(static_cast<double>(i) * bin_width_s,
                          std::min(song.duration_s, static_cast<double>(i + 1) * bin_width_s));
  return out;
}

std::vector<SkipEvent> gen_skip_events(const SyntheticSong& song, const ListenerModel& m, std::size_t n_streams,
                                       const std::string& date, const std::string& region, std::uint64_t seed,
                                       unsigned threads) {
  if (n_streams == 0) throw Error("gen_skip_events: need at least one stream");
  std::vector<SkipEvent> out;
  out.reserve(n_streams);
  simulate_streams(song, m, n_streams, date, region, seed, threads, [&](double stop) {
    const bool completed = stop < 0.0;
    out.push_back({song.track_id, date, region, completed ? song.duration_s : stop, song.duration_s, completed});
  });
  return out;
}

SkipProfile simulate_profile(const SyntheticSong& song, const ListenerModel& m, std::size_t n_streams,
                             const std::string& date, const std::string& region, std::uint64_t seed,
                             double bin_width_s, unsigned threads) {
  if (n_streams == 0) throw Error("simulate_profile: need at least one stream");
  auto p = SkipProfile::empty(song.track_id, date, song.duration_s, bin_width_s);
  SkipEvent e{song.track_id, date, region, 0.0, song.duration_s, false};
  simulate_streams(song, m, n_streams, date, region, seed, threads, [&](double stop) {
    e.completed = stop < 0.0;
    e.stop_time_s = e.completed ? song.duration_s : stop;
    p.add(e);
  });
  return p;
}

std::size_t daily_streams(const ListenerModel& m, std::size_t day) {
  const double v = m.streams_per_day * std::exp(-m.volume_decay_per_day * static_cast<double>(day));
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(v)));
}

std::string synthetic_date(std::size_t days) {
  using namespace std::chrono;
  const year_month_day ymd{sys_days{year{2020} / January / 1} + std::chrono::days{static_cast<int>(days)}};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()));
  return buf;
}

MelSpectrogram gen_feature_proxy(const SyntheticSong& song, double frame_rate_hz, std::size_t n_mels, double noise,
                                 std::uint64_t seed) {
  if (!(frame_rate_hz > 0.0)) throw Error("feature proxy: frame rate must be positive");
  if (n_mels == 0) throw Error("feature proxy: zero bands");
  if (song.sections.empty()) throw Error("feature proxy: song has no sections");
  Rng rng = Rng::substream(seed, fnv1a(song.track_id));
  MelSpectrogram spec;
  spec.track_id = song.track_id;
  spec.frame_rate_hz = frame_rate_hz;
  spec.n_mels = n_mels;
  const auto n_frames = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(song.duration_s * frame_rate_hz)));
  spec.frames.resize(n_frames * n_mels);
  const std::size_t n_bands = song.sections.front().mean.size();
  std::size_t s = 0;
  for (std::size_t f = 0; f < n_frames; ++f) {
    const double t = static_cast<double>(f) / frame_rate_hz;
    while (s + 1 < song.sections.size() && t >= song.sections[s + 1].start_s) ++s;
    const auto& d = song.sections[s];
    for (std::size_t m = 0; m < n_mels; ++m) {
      const std::size_t b = m * n_bands / n_mels;
      double v = d.mean[b];
      if (noise > 0.0) v += noise * d.stddev[b] * rng.normal();
      spec.frames[f * n_mels + m] = v;
    }
  }
  return spec;
}

void write_songs(std::ostream& out, std::span<const SyntheticSong> songs) {
  json arr = json::array();
  for (const auto& s : songs) {
    json sections = json::array();
    for (const auto& d : s.sections)
      sections.push_back({{"start", d.start_s}, {"end", d.end_s}, {"extended", d.extended}, {"mean", d.mean},
                          {"stddev", d.stddev}});
    arr.push_back({{"track", s.track_id},
                   {"seed", s.seed},
                   {"duration", s.duration_s},
                   {"structural", s.structural.times_s},
                   {"extended", s.extended.times_s},
                   {"sections", sections}});
  }
  out << arr.dump() << '\n';
}

std::vector<SyntheticSong> read_songs(std::istream& in) {
  std::vector<SyntheticSong> out;
  try {
    for (const auto& j : json::parse(in)) {
      SyntheticSong s;
      s.track_id = j.at("track").get<std::string>();
      s.seed = j.at("seed").get<std::uint64_t>();
      s.duration_s = j.at("duration").get<double>();
      s.structural = {s.track_id, j.at("structural").get<std::vector<double>>(), BoundaryKind::kStructural};
      s.extended = {s.track_id, j.at("extended").get<std::vector<double>>(), BoundaryKind::kExtended};
      for (const auto& d : j.at("sections"))
        s.sections.push_back({d.at("start").get<double>(), d.at("end").get<double>(), d.at("extended").get<bool>(),
                              d.at("mean").get<std::vector<double>>(), d.at("stddev").get<std::vector<double>>()});
      s.structural.validate(s.duration_s);
      s.extended.validate(s.duration_s);
      out.push_back(std::move(s));
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception& ex) {
    throw ParseError(std::string("song file: ") + ex.what());
  }
  return out;
}

}  // namespace skipseg
