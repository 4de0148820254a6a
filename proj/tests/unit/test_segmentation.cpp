#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "skipseg/rng.hpp"
#include "skipseg/segmentation.hpp"

using namespace skipseg;

namespace {

BoundarySet bs(std::vector<double> t, const std::string& id = "t") { return {id, std::move(t), BoundaryKind::kStructural}; }

// Maximum one-to-one matching by trying every assignment.
std::size_t brute_force_matches(const std::vector<double>& est, const std::vector<double>& ref, double w) {
  std::vector<bool> used(ref.size(), false);
  std::function<std::size_t(std::size_t)> go = [&](std::size_t i) -> std::size_t {
    if (i == est.size()) return 0;
    std::size_t best = go(i + 1);
    for (std::size_t j = 0; j < ref.size(); ++j) {
      if (used[j] || std::abs(est[i] - ref[j]) > w + 1e-9) continue;
      used[j] = true;
      best = std::max(best, 1 + go(i + 1));
      used[j] = false;
    }
    return best;
  };
  return go(0);
}

LikelihoodCurve curve_from(const std::vector<double>& v, double dt = 1.0) {
  LikelihoodCurve c;
  for (std::size_t i = 0; i < v.size(); ++i) c.times_s.push_back(static_cast<double>(i + 1) * dt);
  c.values = v;
  return c;
}

}  // namespace

TEST_SUITE("segmentation") {
  TEST_CASE("peak picking examples") {
    auto single = curve_from({0, 1, 0});
    const auto one = peak_pick(single);
    CHECK(one.times_s == std::vector<double>{2.0});

    std::vector<double> v(80, 0.0);
    v[10] = 1.0;
    v[30] = 0.8;
    v[50] = 0.6;
    v[70] = 0.25;
    const auto r = peak_pick_detailed(curve_from(v), 4.0);
    CHECK(r.threshold == doctest::Approx(0.3));
    CHECK(r.boundaries.times_s == std::vector<double>{11.0, 31.0, 51.0});

    std::vector<double> close(20, 0.0);
    close[5] = 0.7;
    close[6] = 0.2;
    close[7] = 0.9;
    const auto c = peak_pick(curve_from(close, 0.5), 4.0);
    CHECK(c.times_s == std::vector<double>{4.0});
    CHECK(peak_pick(curve_from({})).times_s.empty());
  }

  TEST_CASE("peak picking respects spacing and threshold on random curves") {
    Rng rng(4);
    for (int k = 0; k < 50; ++k) {
      std::vector<double> v(200);
      for (double& x : v) x = rng.uniform();
      const auto c = curve_from(v, 0.25);
      const auto r = peak_pick_detailed(c, 4.0);
      const auto& t = r.boundaries.times_s;
      for (std::size_t i = 0; i < t.size(); ++i) {
        for (std::size_t j = i + 1; j < t.size(); ++j) CHECK(std::abs(t[i] - t[j]) >= 4.0);
        const auto idx = static_cast<std::size_t>(std::lround(t[i] / 0.25)) - 1;
        CHECK(v[idx] >= r.threshold);
      }
    }
  }

  TEST_CASE("hit rate examples") {
    const auto same = hit_rate(bs({10, 20, 30}), bs({10, 20, 30}), 0.5);
    CHECK(same.precision == 1.0);
    CHECK(same.recall == 1.0);
    CHECK(same.f_measure == 1.0);

    const auto r = hit_rate(bs({10.4, 30}), bs({10, 20}), 0.5);
    CHECK(r.matches.size() == 1);
    CHECK(r.precision == 0.5);
    CHECK(r.recall == 0.5);
    CHECK(r.f_measure == 0.5);

    const auto cluster = hit_rate(bs({9.9, 10.1}), bs({10.0}), 0.5);
    CHECK(cluster.matches.size() == 1);
    CHECK(cluster.precision == 0.5);
    CHECK(cluster.recall == 1.0);

    CHECK_THROWS_AS(hit_rate(bs({1}), bs({}), 0.5), Error);
    CHECK_THROWS_AS(hit_rate(bs({1}), bs({1}), 0.0), Error);
    const auto empty = hit_rate(bs({}), bs({5}), 3.0);
    CHECK(empty.empty_estimate);
    CHECK(empty.precision == 0.0);
    CHECK(empty.f_measure == 0.0);
  }

  TEST_CASE("hit rate matching is optimal against exhaustive enumeration") {
    Rng rng(99);
    for (int k = 0; k < 1000; ++k) {
      std::vector<double> e(rng.below(6)), r(1 + rng.below(5));
      for (double& x : e) x = std::round(rng.uniform(0, 20) * 10) / 10;
      for (double& x : r) x = std::round(rng.uniform(0, 20) * 10) / 10;
      const double w = rng.uniform() < 0.5 ? 0.5 : 3.0;
      const auto h = hit_rate(bs(e), bs(r), w);
      CHECK(h.matches.size() == brute_force_matches(e, r, w));
      CHECK(h.matches.size() <= std::min(e.size(), r.size()));
      for (const auto& [a, b] : h.matches) CHECK(within_window(a, b, w));
    }
  }

  TEST_CASE("F symmetry, weighting and window monotonicity") {
    const auto a = bs({5, 12, 19, 33}), b = bs({5.2, 13, 25, 33.4});
    const auto ab = hit_rate(a, b, 0.5), ba = hit_rate(b, a, 0.5);
    CHECK(ab.f_measure == ba.f_measure);
    CHECK(ab.precision == ba.recall);
    CHECK(f_measure(0.5, 1.0, 1.0) == doctest::Approx(2.0 / 3.0));
    CHECK(f_measure(0.5, 1.0, 0.58) == doctest::Approx((1 + 0.58 * 0.58) * 0.5 / (0.58 * 0.58 * 0.5 + 1.0)));
    double prev_f = -1, prev_p = -1, prev_r = -1;
    for (double w : {0.25, 0.5, 1.0, 3.0, 10.0}) {
      const auto h = hit_rate(a, b, w);
      CHECK(h.f_measure >= prev_f);
      CHECK(h.precision >= prev_p);
      CHECK(h.recall >= prev_r);
      prev_f = h.f_measure;
      prev_p = h.precision;
      prev_r = h.recall;
    }
  }

  TEST_CASE("grid baseline and grid search") {
    CHECK(grid_baseline(60, 12).times_s == std::vector<double>{12, 24, 36, 48});
    CHECK(grid_baseline(10, 12).times_s.empty());
    CHECK_THROWS_AS(grid_baseline(10, 0), Error);

    std::map<std::string, BoundarySet> refs{{"a", bs({10, 20, 30, 40}, "a")}, {"b", bs({10, 20, 30}, "b")}};
    std::map<std::string, double> durs{{"a", 50}, {"b", 40}};
    std::vector<double> spacings;
    for (int s = 4; s <= 20; ++s) spacings.push_back(s);
    const auto g = grid_search(refs, durs, spacings, 0.5);
    CHECK(g.best_spacing_s == 10.0);
    CHECK(g.best_f == doctest::Approx(1.0));
    CHECK(g.scores.size() == spacings.size());
    const auto again = grid_search(refs, durs, spacings, 0.5);
    CHECK(again.best_spacing_s == g.best_spacing_s);
  }

  TEST_CASE("corpus evaluation") {
    ReferenceCorpus refs;
    refs["x"][BoundaryKind::kStructural] = bs({10, 20}, "x");
    refs["x"][BoundaryKind::kExtended] = bs({10, 15, 20}, "x");
    refs["y"][BoundaryKind::kStructural] = bs({30}, "y");
    std::map<std::string, BoundarySet> preds{{"x", bs({10.2, 40}, "x")}};
    const std::vector<double> windows{0.5, 3.0};
    const auto single = evaluate_corpus(preds, refs, windows, 1.0, "algo");
    CHECK(single.cell(BoundaryKind::kStructural, 0.5).macro_f ==
          doctest::Approx(hit_rate(preds["x"], refs["x"][BoundaryKind::kStructural], 0.5).f_measure));
    CHECK(single.cell(BoundaryKind::kStructural, 3.0).tracks == 1);

    preds["y"] = bs({29, 31}, "y");
    preds["z"] = bs({1}, "z");
    std::vector<std::string> warnings;
    set_warning_handler([&](const std::string& w) { warnings.push_back(w); });
    const auto both = evaluate_corpus(preds, refs, windows, 1.0, "algo");
    set_warning_handler(nullptr);
    CHECK(both.skipped == std::vector<std::string>{"z"});
    CHECK_FALSE(warnings.empty());
    const auto& cell = both.cell(BoundaryKind::kStructural, 3.0);
    const double fx = hit_rate(preds["x"], refs["x"][BoundaryKind::kStructural], 3.0).f_measure;
    const double fy = hit_rate(preds["y"], refs["y"][BoundaryKind::kStructural], 3.0).f_measure;
    CHECK(cell.macro_f == doctest::Approx((fx + fy) / 2));
    // pooled: 2 hits of 4 estimates, 2 of 3 references
    CHECK(cell.micro_f == doctest::Approx(f_measure(0.5, 2.0 / 3.0, 1.0)));

    std::map<std::string, BoundarySet> renamed{{"b", preds["y"]}, {"a", preds["x"]}};
    ReferenceCorpus renamed_refs{{"b", refs["y"]}, {"a", refs["x"]}};
    const auto perm = evaluate_corpus(renamed, renamed_refs, windows, 1.0);
    CHECK(perm.cell(BoundaryKind::kStructural, 3.0).macro_f == doctest::Approx(cell.macro_f));

    std::map<std::string, BoundarySet> none{{"q", bs({1}, "q")}};
    CHECK_THROWS_AS(evaluate_corpus(none, refs, windows, 1.0), Error);

    std::ostringstream csv;
    const std::vector<CorpusReport> reports{both};
    write_report_csv(csv, reports);
    CHECK(csv.str().rfind("algorithm,beta,structural_0.5,structural_3,extended_0.5,extended_3\n", 0) == 0);
  }

  TEST_CASE("boundary and curve files round-trip") {
    std::vector<BoundarySet> sets{bs({1.5, 2.25}, "a"), {"a", {3.0}, BoundaryKind::kExtended}};
    std::stringstream ss;
    write_boundaries(ss, sets);
    const auto back = read_boundaries(ss);
    REQUIRE(back.size() == 2);
    CHECK(back[0].times_s == sets[0].times_s);
    CHECK(back[1].kind == BoundaryKind::kExtended);
    const auto corpus = to_reference_corpus(back);
    CHECK(corpus.at("a").size() == 2);

    std::map<std::string, LikelihoodCurve> curves{{"a", curve_from({0.1, 0.9, 0.3})}};
    curves["a"].source = "test";
    std::stringstream cs;
    write_curves(cs, curves);
    const auto cb = read_curves(cs);
    CHECK(cb.at("a").values == curves["a"].values);
    CHECK(cb.at("a").source == "test");
    std::stringstream bad("[{\"track\":\"a\"}]");
    CHECK_THROWS_AS(read_boundaries(bad), ParseError);
  }
}
