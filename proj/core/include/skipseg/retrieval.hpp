#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "skipseg/profiles.hpp"

namespace skipseg {

/// Mean over relevant positions k of precision@k. Throws if nothing is relevant.
double average_precision(const std::vector<bool>& relevance);

struct QueryResult {
  ProfileKey query;
  std::vector<std::pair<ProfileKey, double>> ranking;  // ascending distance
  std::vector<bool> relevance;
  double average_precision = 0.0;
};

struct MapReport {
  double map = 0.0;
  std::vector<QueryResult> queries;
  std::vector<double> same_pair_distances;  // unordered pairs, same track
  std::vector<double> diff_pair_distances;  // unordered pairs, different tracks
  std::vector<std::string> skipped_tracks;  // tracks with a single partition
};

using FragmentSet = std::map<ProfileKey, ProfileFragment>;

/// Ranks every other fragment by Euclidean distance for each valid query;
/// candidates from the query's track are relevant. Equal distances are
/// ordered by candidate key.
MapReport specificity_map(const FragmentSet& fragments, unsigned threads = 1);

/// MAP of uniformly shuffled rankings for a corpus where track i has
/// `partitions_per_track[i]` fragments, averaged over `trials`.
double random_baseline_map(std::span<const std::size_t> partitions_per_track, std::size_t trials,
                           std::uint64_t seed);

struct Histogram {
  double lo = 0.0, hi = 0.0;
  std::vector<std::size_t> counts;
};

Histogram histogram(std::span<const double> values, double lo, double hi, std::size_t bins);

}  // namespace skipseg
