#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "phono/random.hpp"
#include "phono/stats.hpp"

using namespace phono;

namespace {

// Independent reference: raw-moment Pearson and counting-based ranks.
double raw_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}

std::vector<double> counting_ranks(const std::vector<double>& x) {
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double below = 0, equal = 0;
    for (double v : x) {
      if (v < x[i]) below += 1;
      if (v == x[i]) equal += 1;
    }
    r[i] = below + (equal + 1) / 2;
  }
  return r;
}

}  // namespace

TEST_CASE("exact linear relations") {
  const std::vector<double> x{1, 2, 3};
  CHECK(pearson(x, std::vector<double>{2, 4, 6}).r == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(pearson(x, std::vector<double>{3, 2, 1}).r == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(pearson(x, std::vector<double>{2, 4, 6}).p_value == 0.0);
}

TEST_CASE("spearman with ties matches average ranks") {
  const std::vector<double> x{1, 2, 2, 3}, y{1, 3, 2, 4};
  CHECK(fractional_ranks(x) == std::vector<double>{1, 2.5, 2.5, 4});
  // 4.5 / sqrt(4.5 * 5)
  CHECK(spearman(x, y).r == doctest::Approx(0.9486832980505138).epsilon(1e-14));
}

TEST_CASE("t-approximation p-values") {
  std::vector<double> x(10);
  std::iota(x.begin(), x.end(), 0.0);
  const std::vector<double> y{2, 1, 4, 3, 7, 5, 6, 9, 8, 0};
  const auto p = pearson(x, y);
  CHECK(p.r == doctest::Approx(0.3818181818181818).epsilon(1e-14));
  CHECK(p.p_value == doctest::Approx(0.27625533338543595).epsilon(1e-10));
  CHECK(spearman(x, y).p_value == doctest::Approx(0.27625533338543595).epsilon(1e-10));
}

TEST_CASE("correlations equal independent implementations on random vectors") {
  Rng rng(42);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 3 + rng.uniform_index(10);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      // Small integer grid so ties occur often.
      x[i] = trial % 2 ? static_cast<double>(rng.uniform_index(5)) : rng.normal();
      y[i] = trial % 3 ? static_cast<double>(rng.uniform_index(5)) : rng.normal();
    }
    if (std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; }) ||
        std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; }))
      continue;
    CHECK(std::abs(pearson(x, y).r - raw_pearson(x, y)) < 1e-10);
    CHECK(std::abs(spearman(x, y).r - raw_pearson(counting_ranks(x), counting_ranks(y))) < 1e-10);
  }
}

TEST_CASE("spearman is invariant under monotone transforms") {
  Rng rng(7);
  std::vector<double> x(30), y(30);
  for (std::size_t i = 0; i < 30; ++i) {
    x[i] = rng.normal();
    y[i] = x[i] + rng.normal();
  }
  std::vector<double> tx(30), ty(30);
  std::transform(x.begin(), x.end(), tx.begin(), [](double v) { return std::exp(3 * v); });
  std::transform(y.begin(), y.end(), ty.begin(), [](double v) { return v * v * v - 4; });
  CHECK(spearman(tx, ty).r == doctest::Approx(spearman(x, y).r).epsilon(1e-14));
  CHECK(spearman(x, tx).r == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("degenerate correlation inputs") {
  CHECK_THROWS_AS(pearson(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}), StatsError);
  CHECK_THROWS_AS(spearman(std::vector<double>{1, 2}, std::vector<double>{1, 2}), StatsError);
  CHECK_THROWS_AS(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2}), StatsError);
}

TEST_CASE("paired permutation extremes") {
  const std::vector<double> zeros(50, 0.0);
  CHECK(paired_permutation(zeros, zeros, 1000, 1).p_value == 1.0);
  const std::vector<double> ones(1000, 1.0);
  const std::vector<double> none(1000, 0.0);
  const auto r = paired_permutation(ones, none, 10000, 1);
  CHECK(r.observed == 1.0);
  CHECK(r.p_value == doctest::Approx(1.0 / 10001.0).epsilon(1e-15));
  CHECK_THROWS_AS(paired_permutation(ones, none, 99, 1), StatsError);
  CHECK_THROWS_AS(paired_permutation(std::vector<double>(9, 1.0), std::vector<double>(9, 0.0), 1000, 1), StatsError);
}

TEST_CASE("paired permutation p-values are uniform under the null") {
  // KS statistic against U(0, 1). At 200 nulls the sampling spread of the
  // statistic alone is about 0.06, so 2000 nulls are used with the same bound.
  Rng rng(2024);
  std::vector<double> pvals;
  for (int sim = 0; sim < 2000; ++sim) {
    std::vector<double> a(30), b(30);
    for (std::size_t i = 0; i < 30; ++i) {
      a[i] = rng.normal();
      b[i] = rng.normal();
    }
    pvals.push_back(paired_permutation(a, b, 999, rng.next_u64()).p_value);
  }
  std::sort(pvals.begin(), pvals.end());
  double ks = 0.0;
  const double n = static_cast<double>(pvals.size());
  for (std::size_t i = 0; i < pvals.size(); ++i)
    ks = std::max({ks, static_cast<double>(i + 1) / n - pvals[i], pvals[i] - static_cast<double>(i) / n});
  CHECK(ks < 0.05);
}

namespace {

std::vector<WordPoint> structured_words(Rng& rng, std::size_t n_languages, bool tradeoff) {
  std::vector<WordPoint> out;
  for (std::size_t l = 0; l < n_languages; ++l) {
    const double base_len = 3.0 + static_cast<double>(l) * 0.4;
    for (int w = 0; w < 40; ++w) {
      const double len = std::max(1.0, std::round(base_len + rng.normal()));
      const double bits = tradeoff ? 6.0 - 0.5 * base_len + 0.3 * rng.normal() : 3.0 + 0.3 * rng.normal();
      out.push_back({"l" + std::to_string(100 + l), len, bits});
    }
  }
  return out;
}

}  // namespace

TEST_CASE("fake-language test") {
  Rng rng(11);
  const auto real = fake_language_test(structured_words(rng, 12, true), 1000, 5);
  CHECK(real.test.observed < -0.9);
  CHECK(real.test.p_value == doctest::Approx(1.0 / 1001.0));
  CHECK(real.min_permuted > real.test.observed);

  // Random labels: p <= 0.05 should be as rare as 5%, checked over many
  // null datasets rather than one draw.
  int significant = 0;
  for (int sim = 0; sim < 100; ++sim) {
    auto shuffled = structured_words(rng, 12, true);
    std::vector<std::string> labels;
    for (const auto& w : shuffled) labels.push_back(w.language_id);
    rng.shuffle(labels);
    for (std::size_t i = 0; i < shuffled.size(); ++i) shuffled[i].language_id = labels[i];
    if (fake_language_test(shuffled, 200, rng.next_u64()).test.p_value <= 0.05) ++significant;
  }
  CHECK(significant <= 12);

  std::vector<WordPoint> one(20, WordPoint{"solo", 3, 2});
  CHECK_THROWS_AS(fake_language_test(one, 1000, 5), StatsError);
}

TEST_CASE("per-word correlation summaries") {
  std::vector<WordPoint> words;
  for (int i = 1; i <= 6; ++i) {
    words.push_back({"aaa", static_cast<double>(i), 10.0 - i});   // rho -1
    words.push_back({"bbb", static_cast<double>(i), 1.0 * i});    // rho +1
  }
  words.push_back({"ccc", 1, 1});  // too few points, skipped
  const auto r = per_word_correlation(words);
  CHECK(r.languages.size() == 2);
  CHECK(r.mean_language_spearman == doctest::Approx(0.0));
  CHECK(r.min_language.language_id == "aaa");
  CHECK(r.min_language.spearman.r == doctest::Approx(-1.0));
  CHECK(r.pooled_spearman.n == 13);
}

namespace {

ComplexityRecord rec(const std::string& lang, double bits, double len) {
  ComplexityRecord r;
  r.language_id = lang;
  r.model_id = "lstm";
  r.bits_per_phoneme = bits;
  r.avg_word_len = len;
  r.n_words = 10;
  return r;
}

}  // namespace

TEST_CASE("family means on a three-family toy") {
  const std::vector<ComplexityRecord> records{rec("a1", 3.0, 5.0), rec("a2", 4.0, 4.0), rec("b1", 2.0, 7.0),
                                              rec("c1", 5.0, 3.0), rec("c2", 4.0, 3.5), rec("c3", 3.0, 4.5)};
  const FamilyMap fam{{"a1", "A"}, {"a2", "A"}, {"b1", "B"}, {"c1", "C"}, {"c2", "C"}, {"c3", "C"}};
  const auto agg = family_aggregate(records, fam);
  REQUIRE(agg.families.size() == 3);
  CHECK(agg.families[0].family == "A");
  CHECK(agg.families[0].bits_per_phoneme == doctest::Approx(3.5));
  CHECK(agg.families[0].avg_word_len == doctest::Approx(4.5));
  CHECK(agg.families[1].bits_per_phoneme == doctest::Approx(2.0));
  CHECK(agg.families[2].bits_per_phoneme == doctest::Approx(4.0));
  CHECK(agg.families[2].avg_word_len == doctest::Approx(11.0 / 3.0));
  CHECK(agg.families[2].n_languages == 3);
  CHECK(agg.spearman.r == doctest::Approx(-1.0));

  // C has three languages, below the default minimum of four.
  CHECK(intra_family(records, fam).empty());
  const auto c = intra_family(records, fam, 3);
  REQUIRE(c.size() == 1);
  CHECK(c[0].family == "C");

  auto missing = fam;
  missing.erase("b1");
  CHECK_THROWS_AS(family_aggregate(records, missing), StatsError);
}

TEST_CASE("inventory counts from the feature table") {
  const FeatureTable ft({"syllabic", "voice"}, {{"a", {1, 1}}, {"b", {0, 1}}, {"k", {0, 0}}});
  std::vector<LexiconEntry> entries;
  auto add = [&](const char* lang, const char* concept_id, std::vector<const char*> segs) {
    std::vector<Segment> s;
    for (auto* x : segs) s.emplace_back(x);
    entries.push_back({lang, concept_id, Word(s), {}});
  };
  add("toy", "c1", {"a", "b"});
  add("toy", "c2", {"b", "a", "b"});
  add("two", "c1", {"k", "a", "q"});
  add("thr", "c1", {"a"});
  const auto inv = inventory_baselines(Lexicon::from_entries(entries), ft);
  REQUIRE(inv.languages.size() == 3);
  const auto& toy = inv.languages[1];
  CHECK(toy.language_id == "toy");
  CHECK(toy.vowels == 1);
  CHECK(toy.consonants == 1);
  CHECK(toy.avg_word_len == doctest::Approx(2.5));
  CHECK(inv.languages[2].consonants == 2);  // q unresolvable, counted as consonant
  CHECK(std::any_of(inv.warnings.begin(), inv.warnings.end(),
                    [](const std::string& w) { return w.find("'q'") != std::string::npos; }));
  CHECK(inv.spearman.count("vowels") == 0);  // one vowel everywhere: no variance
  CHECK(inv.spearman.count("phonemes") == 1);
}

TEST_CASE("density summary") {
  Rng rng(3);
  std::vector<double> sample(10000);
  for (auto& v : sample) v = rng.normal();
  const auto d = density_summary(sample);
  const auto peak = std::max_element(d.kde.begin(), d.kde.end(),
                                     [](const auto& a, const auto& b) { return a.second < b.second; });
  CHECK(std::abs(peak->first) < 0.1);
  CHECK(d.hist10.size() == 10);
  CHECK(d.hist100.size() == 100);
  std::size_t total = 0;
  for (const auto& b : d.hist100) total += b.count;
  CHECK(total == 10000);
  double area = 0.0;
  for (std::size_t i = 1; i < d.kde.size(); ++i) area += (d.kde[i].first - d.kde[i - 1].first) * d.kde[i].second;
  CHECK(area == doctest::Approx(1.0).epsilon(0.01));

  const std::vector<double> constant(5, 2.5);
  const auto spike = density_summary(constant);
  CHECK(spike.bandwidth == 0.0);
  CHECK(spike.kde.size() == 1);
  CHECK(spike.hist10.size() == 1);
  CHECK(spike.hist10[0].count == 5);
  CHECK_THROWS_AS(density_summary(std::vector<double>{1.0}), StatsError);
}
