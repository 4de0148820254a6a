#include "skipseg/retrieval.hpp"

#include <algorithm>
#include <numeric>

#include "skipseg/common.hpp"
#include "skipseg/parallel.hpp"
#include "skipseg/rng.hpp"

namespace skipseg {

double average_precision(const std::vector<bool>& relevance) {
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < relevance.size(); ++k) {
    if (!relevance[k]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  if (hits == 0) throw Error("average precision: no relevant item in ranking");
  return sum / static_cast<double>(hits);
}

MapReport specificity_map(const FragmentSet& fragments, unsigned threads) {
  MapReport report;
  std::vector<const ProfileFragment*> items;
  items.reserve(fragments.size());
  std::map<std::string, std::size_t> per_track;
  for (const auto& [key, f] : fragments) {
    items.push_back(&f);
    ++per_track[key.track_id];
  }
  for (const auto& [track, n] : per_track)
    if (n < 2) {
      report.skipped_tracks.push_back(track);
      warn("specificity: track '" + track + "' has a single partition; its queries are skipped");
    }

  const std::size_t n = items.size();
  std::vector<double> dist(n * n, 0.0);
  parallel_for(n, threads, [&](std::size_t i) {
    for (std::size_t j = i + 1; j < n; ++j) dist[i * n + j] = fragment_distance(*items[i], *items[j]);
  });
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) dist[i * n + j] = dist[j * n + i];

  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      (items[i]->track_id == items[j]->track_id ? report.same_pair_distances : report.diff_pair_distances)
          .push_back(dist[i * n + j]);

  std::vector<std::size_t> query_index;
  for (std::size_t i = 0; i < n; ++i)
    if (per_track[items[i]->track_id] >= 2) query_index.push_back(i);
  if (query_index.empty()) throw Error("specificity: no track has two or more partitions");

  report.queries.resize(query_index.size());
  parallel_for(query_index.size(), threads, [&](std::size_t q) {
    const std::size_t i = query_index[q];
    std::vector<std::size_t> order;
    order.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) order.push_back(j);
    // items are in key order, so index order is the lexicographic tie-break
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dist[i * n + a] < dist[i * n + b]; });
    QueryResult& r = report.queries[q];
    r.query = items[i]->key();
    r.ranking.reserve(order.size());
    r.relevance.reserve(order.size());
    for (std::size_t j : order) {
      r.ranking.emplace_back(items[j]->key(), dist[i * n + j]);
      r.relevance.push_back(items[j]->track_id == items[i]->track_id);
    }
    r.average_precision = average_precision(r.relevance);
  });

  double sum = 0.0;
  for (const auto& r : report.queries) sum += r.average_precision;
  report.map = sum / static_cast<double>(report.queries.size());
  return report;
}

double random_baseline_map(std::span<const std::size_t> partitions_per_track, std::size_t trials,
                           std::uint64_t seed) {
  if (trials == 0) throw Error("random baseline: trials must be at least 1");
  const std::size_t total = std::accumulate(partitions_per_track.begin(), partitions_per_track.end(), std::size_t{0});
  std::size_t queries = 0;
  for (std::size_t p : partitions_per_track)
    if (p >= 2) queries += p;
  if (queries == 0) throw Error("random baseline: no track has two or more partitions");

  Rng rng(seed);
  const std::size_t candidates = total - 1;
  std::vector<std::size_t> positions;
  double sum = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    for (std::size_t p : partitions_per_track) {
      if (p < 2) continue;
      const std::size_t relevant = p - 1;
      for (std::size_t q = 0; q < p; ++q) {
        // Floyd's sampling: a uniform subset of ranks for the relevant items.
        positions.clear();
        for (std::size_t j = candidates - relevant; j < candidates; ++j) {
          const std::size_t r = rng.below(j + 1);
          const bool taken = std::find(positions.begin(), positions.end(), r) != positions.end();
          positions.push_back(taken ? j : r);
        }
        std::sort(positions.begin(), positions.end());
        double ap = 0.0;
        for (std::size_t k = 0; k < positions.size(); ++k)
          ap += static_cast<double>(k + 1) / static_cast<double>(positions[k] + 1);
        sum += ap / static_cast<double>(relevant);
      }
    }
  }
  return sum / static_cast<double>(trials * queries);
}

Histogram histogram(std::span<const double> values, double lo, double hi, std::size_t bins) {
  if (!(hi > lo) || bins == 0) throw Error("histogram: invalid range");
  Histogram h{lo, hi, std::vector<std::size_t>(bins, 0)};
  for (double v : values) {
    const double f = (v - lo) / (hi - lo);
    const auto b = static_cast<std::size_t>(std::clamp(f * static_cast<double>(bins), 0.0, static_cast<double>(bins - 1)));
    ++h.counts[b];
  }
  return h;
}

}  // namespace skipseg
