#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cli_support.hpp"
#include "skipseg/audio.hpp"
#include "skipseg/detrend.hpp"
#include "skipseg/neural.hpp"
#include "skipseg/profiles.hpp"
#include "skipseg/retrieval.hpp"
#include "skipseg/rng.hpp"
#include "skipseg/segmentation.hpp"
#include "skipseg/skip_boundary.hpp"
#include "skipseg/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace skipseg;

namespace {

struct Globals {
  std::uint64_t seed = 1;
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
};

std::ifstream open_in(const std::string& path) {
  cli::require_inputs({path});
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return in;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

ProfileSet load_profiles(const std::string& path) {
  auto in = open_in(path);
  return read_profiles(in);
}

/// One profile per track, summing every partition.
std::map<std::string, SkipProfile> collapse_by_track(const ProfileSet& set) {
  std::map<std::string, SkipProfile> out;
  for (const auto& [key, p] : set) {
    SkipProfile q = p;
    q.partition = "all";
    auto it = out.find(key.track_id);
    if (it == out.end())
      out.emplace(key.track_id, std::move(q));
    else
      it->second = merge(it->second, q);
  }
  return out;
}

std::vector<BoundarySet> load_boundaries(const std::string& path) {
  auto in = open_in(path);
  return read_boundaries(in);
}

std::map<std::string, BoundarySet> boundaries_of_kind(const std::vector<BoundarySet>& sets, BoundaryKind kind) {
  std::map<std::string, BoundarySet> out;
  for (const auto& s : sets)
    if (s.kind == kind) out[s.track_id] = s;
  return out;
}

std::vector<SyntheticSong> load_songs(const std::string& path) {
  auto in = open_in(path);
  return read_songs(in);
}

std::vector<std::shared_ptr<const MelSpectrogram>> load_spectrograms(const std::vector<std::string>& inputs) {
  std::vector<std::shared_ptr<const MelSpectrogram>> out;
  for (const auto& p : cli::expand_inputs(inputs, ".spec")) {
    cli::require_inputs({p});
    out.push_back(std::make_shared<const MelSpectrogram>(read_spectrogram(p)));
  }
  if (out.empty()) throw Error("no spectrograms found");
  return out;
}

void add_train_options(CLI::App* sub, nn::TrainConfig& t) {
  sub->add_option("--optimizer", [&t](const CLI::results_t& r) {
       t.optimizer = nn::optimizer_from_string(r.back());
       return true;
     }, "adam or sgd")->default_str("adam");
  sub->add_option("--lr", t.learning_rate, "Learning rate");
  sub->add_option("--momentum", t.momentum, "SGD momentum");
  sub->add_option("--batch", t.batch_size, "Minibatch size");
  sub->add_option("--epochs", t.epochs, "Maximum epochs");
  sub->add_option("--patience", t.patience, "Early-stopping patience (0 disables)");
  sub->add_option("--validation", t.validation_fraction, "Held-out fraction for model selection");
}

void add_arch_options(CLI::App* sub, AudioArch& a) {
  sub->add_option("--context", a.context_frames, "Context frames per patch");
  sub->add_option("--conv1", a.conv1_filters, "First conv filters");
  sub->add_option("--conv1-h", a.conv1_h);
  sub->add_option("--conv1-w", a.conv1_w);
  sub->add_option("--pool1-h", a.pool1_h);
  sub->add_option("--pool1-w", a.pool1_w);
  sub->add_option("--conv2", a.conv2_filters, "Second conv filters");
  sub->add_option("--conv2-h", a.conv2_h);
  sub->add_option("--conv2-w", a.conv2_w);
  sub->add_option("--pool2-h", a.pool2_h);
  sub->add_option("--pool2-w", a.pool2_w);
  sub->add_option("--dense", a.dense_units, "Hidden dense units");
}

void add_smear_options(CLI::App* sub, SmearConfig& s) {
  sub->add_option("--sigma", s.sigma_s, "Gaussian smearing width (s)");
  sub->add_option("--pos-radius", s.positive_radius_s, "Positive target radius (s)");
  sub->add_option("--neg-margin", s.negative_margin_s, "Minimum distance of negatives (s)");
  sub->add_option("--weak-neg-radius", s.weak_negative_radius_s, "Frames this close to a weak negative are used");
}

std::optional<long> day_number(const std::string& date) {
  int y = 0;
  unsigned m = 0, d = 0;
  if (std::sscanf(date.c_str(), "%d-%u-%u", &y, &m, &d) != 3) return std::nullopt;
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) return std::nullopt;
  return std::chrono::sys_days{ymd}.time_since_epoch().count();
}

struct Command {
  CLI::App* app;
  std::function<fs::path()> run;  // returns the primary output for the manifest
};

// ---------------------------------------------------------------- synth

Command add_synth(CLI::App& root, const Globals& g) {
  auto* sub = root.add_subcommand("synth", "Generate synthetic songs, reference boundaries and skip events");
  struct Opts {
    std::string out_dir;
    std::size_t tracks = 10, dates = 10, streams = 1000;
    std::vector<std::string> regions{"SE"};
    bool profiles_only = false;
    double bin_width = 0.5;
    SongConfig song;
    ListenerModel model;
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--out-dir", o->out_dir, "Output directory")->required();
  sub->add_option("--tracks", o->tracks, "Number of songs");
  sub->add_option("--dates", o->dates, "Number of daily partitions");
  sub->add_option("--streams", o->streams, "Streams per track, date and region on day 0");
  sub->add_option("--regions", o->regions, "Region codes");
  sub->add_flag("--profiles-only", o->profiles_only, "Write binned profiles instead of raw events");
  sub->add_option("--bin-width", o->bin_width, "Bin width for --profiles-only");
  sub->add_option("--min-duration", o->song.min_duration_s);
  sub->add_option("--max-duration", o->song.max_duration_s);
  sub->add_option("--min-section", o->song.min_section_s);
  sub->add_option("--max-section", o->song.max_section_s);
  sub->add_option("--extended-probability", o->song.extended_probability);
  sub->add_option("--delay", o->model.delay_s, "Reaction delay (s)");
  sub->add_option("--delay-jitter", o->model.delay_jitter_s);
  sub->add_option("--surge", o->model.surge_rate, "Post-boundary stop rate (1/s)");
  sub->add_option("--day-drift", o->model.day_drift);
  sub->add_option("--volume-decay", o->model.volume_decay_per_day, "Relative stream volume loss per day");
  return {sub, [o, &g]() -> fs::path {
            o->model.streams_per_day = static_cast<double>(o->streams);
            o->model.validate();
            const fs::path dir(o->out_dir);
            fs::create_directories(dir);
            std::vector<SyntheticSong> songs;
            std::vector<BoundarySet> refs;
            for (std::size_t i = 0; i < o->tracks; ++i) {
              char id[32];
              std::snprintf(id, sizeof id, "track-%04zu", i);
              songs.push_back(gen_song(Rng::substream(g.seed, i).next(), o->song, id));
              refs.push_back(songs.back().structural);
              refs.push_back(songs.back().extended);
            }
            {
              auto out = open_out(dir / "songs.json");
              write_songs(out, songs);
            }
            {
              auto out = open_out(dir / "boundaries.json");
              write_boundaries(out, refs);
            }
            if (o->profiles_only) {
              ProfileSet set;
              for (const auto& song : songs)
                for (std::size_t d = 0; d < o->dates; ++d)
                  for (std::size_t r = 0; r < o->regions.size(); ++r) {
                    const auto date = synthetic_date(d);
                    const auto seed = Rng::substream(song.seed, (d << 16) + r).next();
                    auto p = simulate_profile(song, o->model, daily_streams(o->model, d), date, o->regions[r], seed,
                                              o->bin_width, g.threads);
                    const ProfileKey key{song.track_id, date};
                    auto it = set.find(key);
                    if (it == set.end())
                      set.emplace(key, std::move(p));
                    else
                      it->second = merge(it->second, p);
                  }
              auto out = open_out(dir / "profiles.json");
              write_profiles(out, set);
            } else {
              auto out = open_out(dir / "events.jsonl");
              for (const auto& song : songs)
                for (std::size_t d = 0; d < o->dates; ++d)
                  for (std::size_t r = 0; r < o->regions.size(); ++r) {
                    const auto seed = Rng::substream(song.seed, (d << 16) + r).next();
                    for (const auto& e : gen_skip_events(song, o->model, daily_streams(o->model, d), synthetic_date(d),
                                                         o->regions[r], seed, g.threads))
                      write_event(out, e);
                  }
            }
            return dir;
          }};
}

// ---------------------------------------------------------------- ingest

Command add_ingest(CLI::App& root, const Globals&) {
  auto* sub = root.add_subcommand("ingest", "Bin skip events into per-partition profiles");
  struct Opts {
    std::vector<std::string> events;
    std::string out, partition = "date";
    double bin_width = 0.5;
    std::size_t chunk = 100000;
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--events", o->events, "JSONL event files")->required();
  sub->add_option("--out", o->out, "Profile file")->required();
  sub->add_option("--partition", o->partition, "date, region or all");
  sub->add_option("--bin-width", o->bin_width, "Bin width (s)");
  sub->add_option("--chunk", o->chunk, "Events folded per batch");
  return {sub, [o]() -> fs::path {
            cli::require_inputs(o->events);
            const auto scheme = partition_scheme_from_string(o->partition);
            ProfileSet set;
            std::vector<SkipEvent> buffer;
            for (const auto& path : o->events) {
              auto in = open_in(path);
              std::string line;
              std::size_t line_no = 0;
              while (std::getline(in, line)) {
                ++line_no;
                if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
                buffer.push_back(parse_event(line, line_no));
                if (buffer.size() == o->chunk) {
                  ingest_into(set, buffer, o->bin_width, scheme);
                  buffer.clear();
                }
              }
            }
            ingest_into(set, buffer, o->bin_width, scheme);
            auto out = open_out(o->out);
            write_profiles(out, set);
            std::cout << "profiles " << set.size() << "\n";
            return o->out;
          }};
}

// ---------------------------------------------------------------- profile-stats

Command add_profile_stats(CLI::App& root, const Globals&) {
  auto* sub = root.add_subcommand("profile-stats", "Aggregate curves, survival curves and day-to-day distances");
  struct Opts {
    std::string profiles, out_dir, distance_mode = "day";
    AggregateOptions agg;
    bool exclude_end = false;
    double early_s = 5.0;
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--profiles", o->profiles, "Profile file")->required();
  sub->add_option("--out-dir", o->out_dir, "Output directory")->required();
  sub->add_flag("--relative", o->agg.relative_time, "Aggregate over relative track time");
  sub->add_option("--relative-points", o->agg.relative_points);
  sub->add_option("--span", o->agg.absolute_span_s, "Truncate the absolute axis (s)");
  sub->add_flag("--exclude-end", o->exclude_end, "Drop skips in the final two bins");
  sub->add_option("--early", o->early_s, "Horizon for the early-skip fraction (s)");
  sub->add_option("--distance-mode", o->distance_mode, "day (consecutive days) or release (vs first day)");
  return {sub, [o]() -> fs::path {
            const auto set = load_profiles(o->profiles);
            std::vector<SkipProfile> all;
            for (const auto& [k, p] : set) all.push_back(p);
            const fs::path dir(o->out_dir);
            fs::create_directories(dir);
            o->agg.include_track_end = !o->exclude_end;
            const auto curve = aggregate_curve(all, o->agg);
            {
              auto out = open_out(dir / "aggregate.csv");
              out << (o->agg.relative_time ? "fraction" : "time_s") << ",skip_fraction\n";
              for (std::size_t i = 0; i < curve.axis.size(); ++i) out << curve.axis[i] << "," << curve.skip_fraction[i] << "\n";
            }
            {
              auto out = open_out(dir / "survival.csv");
              out << "track,partition,time_s,survival\n";
              for (const auto& p : all) {
                const auto s = survival_curve(p);
                for (std::size_t i = 0; i < s.size(); ++i)
                  out << p.track_id << "," << p.partition << "," << static_cast<double>(i) * p.bin_width_s << "," << s[i]
                      << "\n";
              }
            }
            const auto mode = o->distance_mode == "release" ? DistanceMode::kVsRelease : DistanceMode::kDayToDay;
            if (o->distance_mode != "release" && o->distance_mode != "day")
              throw Error("profile-stats: distance mode must be 'day' or 'release'");
            {
              auto out = open_out(dir / "distances.csv");
              out << "track,day_index,distance\n";
              std::map<std::string, std::map<long, SkipProfile>> by_track;
              for (const auto& [k, p] : set)
                if (auto d = day_number(k.partition)) by_track[k.track_id].emplace(*d, p);
              for (const auto& [track, days] : by_track) {
                const long first = days.begin()->first;
                const long last = days.rbegin()->first;
                std::vector<std::optional<SkipProfile>> series(static_cast<std::size_t>(last - first + 1));
                for (const auto& [d, p] : days) series[static_cast<std::size_t>(d - first)] = p;
                if (series.size() < 2) continue;
                try {
                  const auto ds = distance_series(series, mode);
                  for (std::size_t i = 0; i < ds.values.size(); ++i)
                    out << track << "," << ds.day_index[i] << "," << ds.values[i] << "\n";
                } catch (const Error& e) {
                  warn("profile-stats: " + track + ": " + e.what());
                }
              }
            }
            std::uint64_t streams = 0, skips = 0, completions = 0;
            for (const auto& p : all) {
              streams += p.total_streams();
              skips += p.total_skips;
              completions += p.total_completions;
            }
            json stats{{"profiles", all.size()},
                       {"streams", streams},
                       {"skips", skips},
                       {"completions", completions},
                       {"early_horizon_s", o->early_s},
                       {"skipped_before_horizon", skipped_before_fraction(all, o->early_s)}};
            auto out = open_out(dir / "stats.json");
            out << stats.dump(2) << "\n";
            std::cout << stats.dump() << "\n";
            return dir;
          }};
}

// ---------------------------------------------------------------- specificity

Command add_specificity(CLI::App& root, const Globals& g) {
  auto* sub = root.add_subcommand("specificity", "Retrieval of a track's other partitions by fragment distance");
  struct Opts {
    std::string profiles, out_dir;
    std::size_t trials = 1000, bins = 20;
    FragmentOptions frag;
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--profiles", o->profiles, "Profile file")->required();
  sub->add_option("--out-dir", o->out_dir, "Output directory")->required();
  sub->add_option("--trials", o->trials, "Random-ranking trials for the baseline");
  sub->add_option("--bins", o->bins, "Distance histogram bins");
  sub->add_option("--offset", o->frag.offset_s, "Fragment start (s)");
  sub->add_option("--span", o->frag.span_s, "Fragment length (s)");
  sub->add_option("--median-window", o->frag.median_window, "Fragment smoothing (bins)");
  return {sub, [o, &g]() -> fs::path {
            const auto set = load_profiles(o->profiles);
            FragmentSet frags;
            std::map<std::string, std::size_t> per_track;
            for (const auto& [k, p] : set) {
              frags.emplace(k, fragment(p, o->frag));
              ++per_track[k.track_id];
            }
            const auto report = specificity_map(frags, g.threads);
            std::vector<std::size_t> shape;
            for (const auto& [t, n] : per_track) shape.push_back(n);
            const double baseline = random_baseline_map(shape, o->trials, g.seed);
            // L2-normalized fragments lie at most 2 apart.
            const auto same = histogram(report.same_pair_distances, 0.0, 2.0, o->bins);
            const auto diff = histogram(report.diff_pair_distances, 0.0, 2.0, o->bins);
            const fs::path dir(o->out_dir);
            fs::create_directories(dir);
            json j{{"map", report.map},
                   {"baseline_map", baseline},
                   {"queries", report.queries.size()},
                   {"skipped_tracks", report.skipped_tracks},
                   {"histogram", {{"lo", same.lo}, {"hi", same.hi}, {"same", same.counts}, {"diff", diff.counts}}}};
            {
              auto out = open_out(dir / "report.json");
              out << j.dump(2) << "\n";
            }
            auto out = open_out(dir / "queries.csv");
            out << "track,partition,average_precision\n";
            for (const auto& q : report.queries)
              out << q.query.track_id << "," << q.query.partition << "," << q.average_precision << "\n";
            std::cout << "map " << report.map << " baseline " << baseline << "\n";
            return dir;
          }};
}

// ---------------------------------------------------------------- detrend

Command add_detrend(CLI::App& root, const Globals&) {
  auto* sub = root.add_subcommand("detrend", "Split profiles into a smooth trend and a rectified residual");
  struct Opts {
    std::string profiles, out, boundaries, kind = "structural";
    DetrendParams params;
    double search_s = 10.0;
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--profiles", o->profiles, "Profile file")->required();
  sub->add_option("--out", o->out, "CSV output")->required();
  sub->add_option("--median-window", o->params.median_window_bins, "Median window (bins, odd)");
  sub->add_option("--cutoff", o->params.lowpass_cutoff, "Low-pass cutoff (cycles/bin)");
  sub->add_option("--boundaries", o->boundaries, "Reference boundaries for the delay estimate");
  sub->add_option("--kind", o->kind, "Boundary kind for the delay estimate");
  sub->add_option("--search", o->search_s, "Delay search window after each boundary (s)");
  return {sub, [o]() -> fs::path {
            cli::require_inputs({o->profiles, o->boundaries});
            const auto set = load_profiles(o->profiles);
            std::map<std::string, BoundarySet> refs;
            if (!o->boundaries.empty())
              refs = boundaries_of_kind(load_boundaries(o->boundaries), boundary_kind_from_string(o->kind));
            auto out = open_out(o->out);
            out << "track,partition,time_s,normalized,trend,residual,low_confidence\n";
            std::vector<double> delays;
            for (const auto& [k, p] : set) {
              const auto d = detrend(p, o->params);
              for (std::size_t i = 0; i < d.residual.size(); ++i)
                out << k.track_id << "," << k.partition << "," << static_cast<double>(i) * d.bin_width_s << ","
                    << d.normalized[i] << "," << d.trend[i] << "," << d.residual[i] << "," << d.low_confidence[i]
                    << "\n";
              if (auto it = refs.find(k.track_id); it != refs.end() && !it->second.times_s.empty()) {
                try {
                  delays.push_back(surge_delay_estimate(d, it->second, o->search_s));
                } catch (const Error& e) {
                  warn(std::string("detrend: ") + e.what());
                }
              }
            }
            if (!delays.empty()) {
              std::sort(delays.begin(), delays.end());
              const std::size_t m = delays.size();
              const double median = m % 2 ? delays[m / 2] : 0.5 * (delays[m / 2 - 1] + delays[m / 2]);
              std::cout << "surge delay median " << median << " s over " << m << " profiles\n";
            }
            return o->out;
          }};
}

// ---------------------------------------------------------------- train-skip

Command add_train_skip(CLI::App& root, const Globals& g) {
  auto* sub = root.add_subcommand("train-skip", "Train the boundary classifier on skip-profile windows");
  struct Opts {
    std::string profiles, boundaries, out, kind = "structural";
    SkipWindowConfig window;
    SkipModelConfig arch;
    nn::TrainConfig train;
    bool raw = false;
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--profiles", o->profiles, "Profile file (partitions of a track are summed)")->required();
  sub->add_option("--boundaries", o->boundaries, "Reference boundaries")->required();
  sub->add_option("--out", o->out, "Model file")->required();
  sub->add_option("--kind", o->kind, "Boundary kind used as labels");
  sub->add_option("--hidden", o->arch.hidden, "Hidden layer widths");
  sub->add_option("--negative-ratio", o->arch.negative_ratio, "Negatives kept per positive (<= 0 keeps all)");
  sub->add_option("--label-radius", o->window.label_radius_s);
  sub->add_option("--label-shift", o->window.label_shift_s);
  sub->add_option("--hop", o->window.hop_s);
  sub->add_flag("--raw", o->raw, "Feed normalized raw profiles instead of residuals");
  add_train_options(sub, o->train);
  return {sub, [o, &g]() -> fs::path {
            cli::require_inputs({o->profiles, o->boundaries});
            o->window.use_residual = !o->raw;
            o->train.seed = g.seed;
            const auto profiles = collapse_by_track(load_profiles(o->profiles));
            const auto refs = boundaries_of_kind(load_boundaries(o->boundaries), boundary_kind_from_string(o->kind));
            std::vector<SkipWindowSample> samples;
            std::size_t used = 0;
            for (const auto& [track, p] : profiles) {
              auto it = refs.find(track);
              if (it == refs.end()) continue;
              const auto w = make_windows(p, &it->second, o->window);
              samples.insert(samples.end(), w.begin(), w.end());
              ++used;
            }
            if (used == 0) throw Error("train-skip: no track has both a profile and reference boundaries");
            auto model = train_skip_model(samples, o->train, o->arch);
            nn::save_model(o->out, model);
            std::cout << "tracks " << used << " windows " << samples.size() << " best epoch "
                      << model.record().best_epoch << "\n";
            return o->out;
          }};
}

// ---------------------------------------------------------------- weak-labels

Command add_weak_labels(CLI::App& root, const Globals& g) {
  auto* sub = root.add_subcommand("weak-labels", "Confident boundary/non-boundary times from a skip model");
  struct Opts {
    std::string model, profiles, out, curves;
    WeakLabelConfig weak;
    SkipWindowConfig window;
    bool raw = false;
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--model", o->model, "Skip model")->required();
  sub->add_option("--profiles", o->profiles, "Profile file")->required();
  sub->add_option("--out", o->out, "Weak label file")->required();
  sub->add_option("--curves", o->curves, "Also write likelihood curves here");
  sub->add_option("--tau-hi", o->weak.tau_hi);
  sub->add_option("--tau-lo", o->weak.tau_lo);
  sub->add_option("--min-gap", o->weak.min_gap_s, "Minimum distance of negatives from positives (s)");
  sub->add_flag("--raw", o->raw, "Model was trained on raw profiles");
  return {sub, [o, &g]() -> fs::path {
            cli::require_inputs({o->model, o->profiles});
            o->window.use_residual = !o->raw;
            const auto model = nn::load_model(o->model);
            std::vector<WeakLabelSet> sets;
            std::map<std::string, LikelihoodCurve> curves;
            std::size_t pos = 0, neg = 0;
            for (const auto& [track, p] : collapse_by_track(load_profiles(o->profiles))) {
              if (make_windows(p, nullptr, o->window).empty()) continue;
              auto curve = predict_skip_likelihood(model, p, o->window, g.threads);
              sets.push_back(generate_weak_labels(curve, o->weak, track));
              pos += sets.back().positive_times.size();
              neg += sets.back().negative_times.size();
              curves.emplace(track, std::move(curve));
            }
            {
              auto out = open_out(o->out);
              write_weak_labels(out, sets);
            }
            if (!o->curves.empty()) {
              auto out = open_out(o->curves);
              write_curves(out, curves);
            }
            std::cout << "tracks " << sets.size() << " positives " << pos << " negatives " << neg << "\n";
            return o->out;
          }};
}

// ---------------------------------------------------------------- features

Command add_features(CLI::App& root, const Globals& g) {
  auto* sub = root.add_subcommand("features", "Mel spectrograms from WAV audio or feature proxies from songs");
  struct Opts {
    std::vector<std::string> audio;
    std::string songs, out_dir;
    MelConfig mel;
    double fps = 31.25, noise = 1.0;
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--audio", o->audio, "WAV files or directories");
  sub->add_option("--songs", o->songs, "Synthetic song file (writes feature proxies)");
  sub->add_option("--out-dir", o->out_dir, "Spectrogram directory")->required();
  sub->add_option("--n-mels", o->mel.n_mels, "Mel bands");
  sub->add_option("--frame-length", o->mel.frame_length, "STFT frame length (samples)");
  sub->add_option("--hop", o->mel.hop_length, "STFT hop (samples)");
  sub->add_option("--fmin", o->mel.fmin_hz);
  sub->add_option("--fmax", o->mel.fmax_hz, "0 means Nyquist");
  sub->add_option("--fps", o->fps, "Proxy frame rate");
  sub->add_option("--noise", o->noise, "Proxy noise level");
  return {sub, [o, &g]() -> fs::path {
            if (o->audio.empty() == o->songs.empty())
              throw Error("features: give exactly one of --audio and --songs");
            cli::require_inputs(o->audio);
            cli::require_inputs({o->songs});
            const fs::path dir(o->out_dir);
            fs::create_directories(dir);
            std::size_t n = 0;
            for (const auto& path : cli::expand_inputs(o->audio, ".wav")) {
              const auto wav = read_wav(path);
              MelConfig cfg = o->mel;
              cfg.sample_rate = wav.sample_rate;
              const auto id = fs::path(path).stem().string();
              write_spectrogram((dir / (id + ".spec")).string(), mel_spectrogram(wav.samples, cfg, id));
              ++n;
            }
            if (!o->songs.empty())
              for (const auto& song : load_songs(o->songs)) {
                const auto spec = gen_feature_proxy(song, o->fps, o->mel.n_mels, o->noise, g.seed);
                write_spectrogram((dir / (song.track_id + ".spec")).string(), spec);
                ++n;
              }
            std::cout << "spectrograms " << n << "\n";
            return dir;
          }};
}

// ---------------------------------------------------------------- train-audio / finetune

std::vector<AudioTrainingTrack> clean_tracks(const std::vector<std::shared_ptr<const MelSpectrogram>>& specs,
                                             const std::map<std::string, BoundarySet>& refs, const SmearConfig& smear) {
  std::vector<AudioTrainingTrack> out;
  for (const auto& s : specs) {
    auto it = refs.find(s->track_id);
    if (it == refs.end()) continue;
    out.push_back({s, smear_targets(it->second.times_s, s->frame_times(), smear)});
  }
  return out;
}

Command add_train_audio(CLI::App& root, const Globals& g) {
  auto* sub = root.add_subcommand("train-audio", "Train the convolutional boundary detector on spectrograms");
  struct Opts {
    std::vector<std::string> specs;
    std::string boundaries, weak, out, kind = "structural";
    AudioArch arch;
    SmearConfig smear;
    AudioSampling sampling;
    nn::TrainConfig train;
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--spectrograms", o->specs, "Spectrogram files or directories")->required();
  sub->add_option("--boundaries", o->boundaries, "Clean reference boundaries");
  sub->add_option("--weak-labels", o->weak, "Weak label file");
  sub->add_option("--kind", o->kind, "Boundary kind for clean labels");
  sub->add_option("--out", o->out, "Model file")->required();
  sub->add_option("--positive-stride", o->sampling.positive_stride);
  sub->add_option("--negative-ratio", o->sampling.negative_ratio);
  add_arch_options(sub, o->arch);
  add_smear_options(sub, o->smear);
  add_train_options(sub, o->train);
  return {sub, [o, &g]() -> fs::path {
            if (o->boundaries.empty() == o->weak.empty())
              throw Error("train-audio: give exactly one of --boundaries and --weak-labels");
            cli::require_inputs(o->specs);
            cli::require_inputs({o->boundaries, o->weak});
            const auto specs = load_spectrograms(o->specs);
            o->arch.n_mels = specs.front()->n_mels;
            o->sampling.seed = g.seed;
            o->train.seed = g.seed;
            std::vector<AudioTrainingTrack> tracks;
            if (!o->weak.empty()) {
              auto in = open_in(o->weak);
              std::map<std::string, WeakLabelSet> weak;
              for (auto& w : read_weak_labels(in)) weak.emplace(w.track_id, std::move(w));
              for (const auto& s : specs)
                if (auto it = weak.find(s->track_id); it != weak.end())
                  tracks.push_back({s, smear_targets(it->second, s->frame_times(), o->smear)});
            } else {
              tracks = clean_tracks(specs, boundaries_of_kind(load_boundaries(o->boundaries),
                                                              boundary_kind_from_string(o->kind)),
                                    o->smear);
            }
            if (tracks.empty()) throw Error("train-audio: no spectrogram has matching labels");
            const auto data = make_audio_dataset(tracks, o->arch.context_frames, o->sampling);
            const auto model = train_audio_model(data, o->train, o->arch);
            nn::save_model(o->out, model);
            std::cout << "tracks " << tracks.size() << " samples " << data.size() << " best epoch "
                      << model.record().best_epoch << "\n";
            return o->out;
          }};
}

Command add_finetune(CLI::App& root, const Globals& g) {
  auto* sub = root.add_subcommand("finetune", "Retrain only the final layer of an audio model on clean labels");
  struct Opts {
    std::vector<std::string> specs;
    std::string model, boundaries, out, kind = "structural";
    SmearConfig smear;
    AudioSampling sampling;
    nn::TrainConfig train;
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--model", o->model, "Audio model")->required();
  sub->add_option("--spectrograms", o->specs, "Spectrogram files or directories")->required();
  sub->add_option("--boundaries", o->boundaries, "Clean reference boundaries")->required();
  sub->add_option("--kind", o->kind);
  sub->add_option("--out", o->out, "Model file")->required();
  sub->add_option("--positive-stride", o->sampling.positive_stride);
  sub->add_option("--negative-ratio", o->sampling.negative_ratio);
  add_smear_options(sub, o->smear);
  add_train_options(sub, o->train);
  return {sub, [o, &g]() -> fs::path {
            cli::require_inputs(o->specs);
            cli::require_inputs({o->model, o->boundaries});
            const auto model = nn::load_model(o->model);
            const auto specs = load_spectrograms(o->specs);
            const auto tracks = clean_tracks(
                specs, boundaries_of_kind(load_boundaries(o->boundaries), boundary_kind_from_string(o->kind)), o->smear);
            if (tracks.empty()) throw Error("finetune: no spectrogram has matching labels");
            o->sampling.seed = g.seed;
            o->train.seed = g.seed;
            const auto data = make_audio_dataset(tracks, model.input_shape()[1], o->sampling);
            const auto tuned = finetune_last_layer(model, data, o->train);
            nn::save_model(o->out, tuned);
            std::cout << "tracks " << tracks.size() << " samples " << data.size() << "\n";
            return o->out;
          }};
}

// ---------------------------------------------------------------- segment

Command add_segment(CLI::App& root, const Globals& g) {
  auto* sub = root.add_subcommand("segment", "Boundary estimates from a model or a fixed grid");
  struct Opts {
    std::string method = "model", model, profiles, songs, out, curves;
    std::vector<std::string> specs;
    double min_spacing = 4.0, spacing = 10.0;
    bool raw = false;
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--method", o->method, "model or grid");
  sub->add_option("--model", o->model, "Skip or audio model");
  sub->add_option("--profiles", o->profiles, "Profiles (skip model, or durations for grid)");
  sub->add_option("--spectrograms", o->specs, "Spectrograms (audio model, or durations for grid)");
  sub->add_option("--songs", o->songs, "Song file (durations for grid)");
  sub->add_option("--out", o->out, "Boundary file")->required();
  sub->add_option("--curves", o->curves, "Also write likelihood curves here");
  sub->add_option("--min-spacing", o->min_spacing, "Peak-picking minimum spacing (s)");
  sub->add_option("--spacing", o->spacing, "Grid spacing (s)");
  sub->add_flag("--raw", o->raw, "Skip model was trained on raw profiles");
  return {sub, [o, &g]() -> fs::path {
            cli::require_inputs(o->specs);
            cli::require_inputs({o->model, o->profiles, o->songs});
            std::map<std::string, LikelihoodCurve> curves;
            std::vector<BoundarySet> est;
            if (o->method == "grid") {
              std::map<std::string, double> durations;
              if (!o->songs.empty())
                for (const auto& s : load_songs(o->songs)) durations[s.track_id] = s.duration_s;
              if (!o->profiles.empty())
                for (const auto& [t, p] : collapse_by_track(load_profiles(o->profiles))) durations[t] = p.track_duration_s;
              if (!o->specs.empty())
                for (const auto& s : load_spectrograms(o->specs))
                  durations[s->track_id] = static_cast<double>(s->n_frames()) / s->frame_rate_hz;
              if (durations.empty()) throw Error("segment: grid needs --songs, --profiles or --spectrograms");
              for (const auto& [t, d] : durations) est.push_back(grid_baseline(d, o->spacing, t));
            } else if (o->method == "model") {
              if (o->model.empty()) throw Error("segment: --model is required for the model method");
              const auto model = nn::load_model(o->model);
              if (model.input_shape().size() == 3) {
                if (o->specs.empty()) throw Error("segment: an audio model needs --spectrograms");
                for (const auto& s : load_spectrograms(o->specs))
                  curves.emplace(s->track_id, predict_audio_likelihood(model, *s, 1, g.threads));
              } else {
                if (o->profiles.empty()) throw Error("segment: a skip model needs --profiles");
                SkipWindowConfig w;
                w.use_residual = !o->raw;
                for (const auto& [t, p] : collapse_by_track(load_profiles(o->profiles)))
                  if (!make_windows(p, nullptr, w).empty()) curves.emplace(t, predict_skip_likelihood(model, p, w, g.threads));
              }
              for (const auto& [t, c] : curves) {
                auto b = peak_pick(c, o->min_spacing);
                b.track_id = t;
                est.push_back(std::move(b));
              }
            } else {
              throw Error("segment: method must be 'model' or 'grid'");
            }
            {
              auto out = open_out(o->out);
              write_boundaries(out, est);
            }
            if (!o->curves.empty()) {
              auto out = open_out(o->curves);
              write_curves(out, curves);
            }
            std::cout << "tracks " << est.size() << "\n";
            return o->out;
          }};
}

// ---------------------------------------------------------------- evaluate

Command add_evaluate(CLI::App& root, const Globals&) {
  auto* sub = root.add_subcommand("evaluate", "Hit-rate precision, recall and F against reference boundaries");
  struct Opts {
    std::vector<std::string> est, names;
    std::string ref, out, json_out, songs, profiles;
    std::vector<double> windows{0.5, 3.0};
    double beta = 1.0;
    bool grid_search = false;
    double grid_min = 4.0, grid_max = 20.0, grid_step = 1.0, grid_window = 3.0;
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--est", o->est, "Estimated boundary files")->required();
  sub->add_option("--name", o->names, "Algorithm name per estimate file");
  sub->add_option("--ref", o->ref, "Reference boundary file")->required();
  sub->add_option("--window", o->windows, "Hit windows (s)");
  sub->add_option("--beta", o->beta, "F-measure weight");
  sub->add_option("--out", o->out, "CSV report (stdout if omitted)");
  sub->add_option("--json", o->json_out, "JSON report with per-track scores");
  sub->add_flag("--grid-search", o->grid_search, "Add the best fixed-grid baseline as a row");
  sub->add_option("--grid-min", o->grid_min);
  sub->add_option("--grid-max", o->grid_max);
  sub->add_option("--grid-step", o->grid_step);
  sub->add_option("--grid-window", o->grid_window, "Window used to pick the grid spacing");
  sub->add_option("--songs", o->songs, "Track durations for the grid search");
  sub->add_option("--profiles", o->profiles, "Track durations for the grid search");
  return {sub, [o]() -> fs::path {
            cli::require_inputs(o->est);
            cli::require_inputs({o->ref, o->songs, o->profiles});
            if (!o->names.empty() && o->names.size() != o->est.size())
              throw Error("evaluate: give one --name per --est file");
            const auto ref_sets = load_boundaries(o->ref);
            const auto refs = to_reference_corpus(ref_sets);
            std::vector<CorpusReport> reports;
            for (std::size_t i = 0; i < o->est.size(); ++i) {
              std::map<std::string, BoundarySet> pred;
              for (auto& b : load_boundaries(o->est[i]))
                if (!pred.emplace(b.track_id, b).second)
                  throw Error("evaluate: " + o->est[i] + " holds two estimates for track '" + b.track_id + "'");
              const auto name = o->names.empty() ? fs::path(o->est[i]).stem().string() : o->names[i];
              reports.push_back(evaluate_corpus(pred, refs, o->windows, o->beta, name));
            }
            if (o->grid_search) {
              std::map<std::string, double> durations;
              if (!o->songs.empty())
                for (const auto& s : load_songs(o->songs)) durations[s.track_id] = s.duration_s;
              if (!o->profiles.empty())
                for (const auto& [t, p] : collapse_by_track(load_profiles(o->profiles))) durations[t] = p.track_duration_s;
              std::map<std::string, BoundarySet> structural;
              for (const auto& [t, kinds] : refs)
                if (auto it = kinds.find(BoundaryKind::kStructural); it != kinds.end() && durations.count(t))
                  structural.emplace(t, it->second);
              if (structural.empty()) throw Error("evaluate: grid search needs durations via --songs or --profiles");
              std::vector<double> spacings;
              for (double s = o->grid_min; s <= o->grid_max + 1e-9; s += o->grid_step) spacings.push_back(s);
              const auto best = grid_search(structural, durations, spacings, o->grid_window, o->beta);
              std::map<std::string, BoundarySet> grid;
              for (const auto& [t, r] : structural) grid.emplace(t, grid_baseline(durations.at(t), best.best_spacing_s, t));
              char name[48];
              std::snprintf(name, sizeof name, "grid-%gs", best.best_spacing_s);
              reports.push_back(evaluate_corpus(grid, refs, o->windows, o->beta, name));
            }
            if (o->out.empty()) {
              write_report_csv(std::cout, reports);
            } else {
              auto out = open_out(o->out);
              write_report_csv(out, reports);
            }
            if (!o->json_out.empty()) {
              auto out = open_out(o->json_out);
              write_report_json(out, reports);
            }
            return o->out.empty() ? fs::path(o->json_out) : fs::path(o->out);
          }};
}

}  // namespace

int main(int argc, char** argv) {
  Globals g;
  CLI::App app{"Skip-profile structure analysis and boundary detection"};
  app.require_subcommand(1);
  app.fallthrough();
  app.option_defaults()->always_capture_default();
  app.add_option("--seed", g.seed, "Seed for every random choice");
  app.add_option("--threads", g.threads, "Worker threads");
  app.add_option("--config", "JSON file with the same keys as the flags");

  std::vector<Command> commands{add_synth(app, g),       add_ingest(app, g),        add_profile_stats(app, g),
                                add_specificity(app, g), add_detrend(app, g),       add_train_skip(app, g),
                                add_weak_labels(app, g), add_features(app, g),      add_train_audio(app, g),
                                add_finetune(app, g),    add_segment(app, g),       add_evaluate(app, g)};
  std::vector<std::string> names;
  for (const auto& c : commands) names.push_back(c.app->get_name());

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = cli::expand_config(args, names);
    std::reverse(args.begin(), args.end());  // CLI11 consumes from the back
    try {
      app.parse(args);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e);
    } catch (const CLI::ParseError& e) {
      std::cerr << "skipseg: " << e.what() << "\n\n" << app.help();
      return 2;
    }
    for (const auto& c : commands) {
      if (!c.app->parsed()) continue;
      g.threads = std::max(1u, g.threads);
      const fs::path output = c.run();
      if (!output.empty()) cli::write_manifest(app, *c.app, output);
    }
    return 0;
  } catch (const cli::MissingInput& m) {
    std::cerr << "skipseg: input file not found: " << m.path << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "skipseg: " << e.what() << "\n";
    return 1;
  }
}
