#include <cmath>
#include <numeric>

#include "doctest.h"
#include "phono/ngram.hpp"
#include "phono/random.hpp"

using namespace phono;

namespace {

Vocabulary abc() { return Vocabulary("toy", {Segment("a"), Segment("b"), Segment("c")}); }

// a=0, b=1, c=2, eos=3, bos=4
std::vector<EncodedWord> ab_ab_ac() { return {{0, 1}, {0, 1}, {0, 2}}; }

// Brute-force reference: counts are recomputed by scanning the padded words
// for every query, without any tables.
struct BruteForce {
  std::vector<EncodedWord> words;
  std::size_t k;  // phonemes
  double lambda;
  std::array<double, 3> alpha;

  std::size_t eos() const { return k; }
  std::size_t bos() const { return k + 1; }

  std::vector<std::size_t> padded(const EncodedWord& w, std::size_t order) const {
    std::vector<std::size_t> p(order - 1, bos());
    p.insert(p.end(), w.begin(), w.end());
    p.push_back(eos());
    return p;
  }

  // Number of padded windows of length |gram| equal to gram, counting only
  // windows whose last symbol is a prediction target.
  double count(const std::vector<std::size_t>& gram, std::size_t order) const {
    double c = 0;
    for (const auto& w : words) {
      const auto p = padded(w, order);
      for (std::size_t end = order - 1; end < p.size(); ++end) {
        bool match = true;
        for (std::size_t j = 0; j < gram.size(); ++j)
          if (p[end + 1 - gram.size() + j] != gram[j]) match = false;
        if (match) c += 1;
      }
    }
    return c;
  }

  double context_count(const std::vector<std::size_t>& ctx, std::size_t order) const {
    double c = 0;
    for (std::size_t x = 0; x <= k; ++x) {
      auto g = ctx;
      g.push_back(x);
      c += count(g, order);
    }
    return c;
  }

  double prob(const std::vector<std::size_t>& history, std::size_t x) const {
    std::vector<std::size_t> h(2, bos());
    h.insert(h.end(), history.begin(), history.end());
    const std::size_t n = h.size();
    double total = 0;
    for (std::size_t y = 0; y <= k; ++y) total += count({y}, 1);
    const double f1 = (count({x}, 1) + lambda) / (total + lambda * static_cast<double>(k + 1));
    const double c2 = context_count({h[n - 1]}, 2);
    const double c3 = context_count({h[n - 2], h[n - 1]}, 3);
    const double f2 = c2 > 0 ? count({h[n - 1], x}, 2) / c2 : 0;
    const double f3 = c3 > 0 ? count({h[n - 2], h[n - 1], x}, 3) / c3 : 0;
    double num = alpha[0] * f1, den = alpha[0];
    if (c2 > 0) num += alpha[1] * f2, den += alpha[1];
    if (c3 > 0) num += alpha[2] * f3, den += alpha[2];
    return den > 0 ? num / den : f1;
  }
};

double dev_ll(const NGramModel& m, std::span<const EncodedWord> words) {
  double ll = 0;
  for (const auto& w : words)
    for (double p : m.sequence_probabilities(w)) ll += std::log(p);
  return ll;
}

}  // namespace

TEST_CASE("hand-enumerated counts on {ab, ab, ac}") {
  const auto v = abc();
  const auto words = ab_ab_ac();
  const auto uni = count_ngrams(words, v, 1);
  const SymbolId a = 0, b = 1, c = 2, eos = 3, bos = 4;
  CHECK(uni.count(std::vector<SymbolId>{a}) == 3);
  CHECK(uni.count(std::vector<SymbolId>{b}) == 2);
  CHECK(uni.count(std::vector<SymbolId>{c}) == 1);
  CHECK(uni.count(std::vector<SymbolId>{eos}) == 3);
  CHECK(uni.count(std::vector<SymbolId>{bos}) == 0);
  CHECK(uni.total() == 9);

  const auto bi = count_ngrams(words, v, 2);
  CHECK(bi.count(std::vector<SymbolId>{a, b}) == 2);
  CHECK(bi.count(std::vector<SymbolId>{a, c}) == 1);
  CHECK(bi.count(std::vector<SymbolId>{b, eos}) == 2);
  CHECK(bi.count(std::vector<SymbolId>{bos, a}) == 3);
  CHECK(relative_frequency(bi, std::vector<SymbolId>{a}, b) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

  const auto tri = count_ngrams(words, v, 3);
  CHECK(relative_frequency(tri, std::vector<SymbolId>{a, b}, eos) == 1.0);
  CHECK(relative_frequency(tri, std::vector<SymbolId>{c, b}, a) == 0.0);
  CHECK(tri.context_count(std::vector<SymbolId>{bos, bos}) == 3);

  CHECK(count_ngrams(std::vector<EncodedWord>{}, v, 2).empty());
  CHECK_THROWS_AS(count_ngrams(std::vector<EncodedWord>{{0, 7}}, v, 2), NGramError);
  CHECK_THROWS_AS(CountTable(4), NGramError);
}

TEST_CASE("context counts are marginals of the n-gram counts") {
  Rng rng(5);
  std::vector<EncodedWord> words;
  for (int i = 0; i < 30; ++i) {
    EncodedWord w(1 + rng.uniform_index(5));
    for (auto& s : w) s = static_cast<SymbolId>(rng.uniform_index(3));
    words.push_back(w);
  }
  const auto tri = count_ngrams(words, abc(), 3);
  std::map<NGram, std::uint64_t> marginals;
  for (const auto& [g, c] : tri.counts()) marginals[NGram(g.begin(), g.end() - 1)] += c;
  for (const auto& [ctx, c] : marginals) CHECK(tri.context_count(ctx) == c);
}

TEST_CASE("pure unigram weights reproduce relative frequencies") {
  const auto v = abc();
  const auto tables = count_all_orders(ab_ab_ac(), v);
  const NGramModel m(v, tables, InterpolationWeights{{1, 0, 0}}, 0.0);
  for (const std::vector<SymbolId>& h : {std::vector<SymbolId>{}, {0}, {0, 1}, {2, 2, 2}}) {
    const auto d = m.next_distribution(h);
    CHECK(d[0] == doctest::Approx(3.0 / 9.0).epsilon(1e-15));
    CHECK(d[1] == doctest::Approx(2.0 / 9.0).epsilon(1e-15));
    CHECK(d[2] == doctest::Approx(1.0 / 9.0).epsilon(1e-15));
    CHECK(d[3] == doctest::Approx(3.0 / 9.0).epsilon(1e-15));
  }
  // With the default floor: (c + 0.01) / (9 + 0.04).
  const NGramModel smoothed(v, tables, InterpolationWeights{{1, 0, 0}});
  CHECK(smoothed.next_distribution({})[0] == doctest::Approx(3.01 / 9.04).epsilon(1e-15));
}

TEST_CASE("pure trigram weights after (a, b) predict eos") {
  const auto v = abc();
  const NGramModel m(v, count_all_orders(ab_ab_ac(), v), InterpolationWeights{{0, 0, 1}});
  const std::vector<SymbolId> h{0, 1};
  CHECK(m.next_distribution(h)[3] == 1.0);
}

TEST_CASE("interpolated probabilities equal the brute-force oracle") {
  Rng rng(20240611);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t k = 1 + rng.uniform_index(4);
    std::vector<Segment> syms;
    for (std::size_t i = 0; i < k; ++i) syms.emplace_back(std::string(1, static_cast<char>('a' + i)));
    const Vocabulary v("rand", syms);
    std::vector<EncodedWord> words(1 + rng.uniform_index(5));
    for (auto& w : words) {
      w.resize(1 + rng.uniform_index(5));
      for (auto& s : w) s = static_cast<SymbolId>(rng.uniform_index(k));
    }
    const double lambda = trial % 3 == 0 ? 0.0 : 0.01 * static_cast<double>(trial % 7);
    InterpolationWeights wts;
    const double a1 = trial % 3 == 0 ? 0.0 : rng.uniform01();
    const double a2 = rng.uniform01() * (1 - a1);
    wts.alpha = {a1, a2, 1.0 - a1 - a2};
    const NGramModel model(v, count_all_orders(words, v), wts, lambda);
    const BruteForce oracle{words, k, lambda, wts.alpha};

    for (int q = 0; q < 10; ++q) {
      std::vector<SymbolId> h(rng.uniform_index(5));
      for (auto& s : h) s = static_cast<SymbolId>(rng.uniform_index(k));
      const auto dist = model.next_distribution(h);
      std::vector<std::size_t> hh(h.begin(), h.end());
      for (std::size_t x = 0; x <= k; ++x) CHECK(std::abs(dist[x] - oracle.prob(hh, x)) <= 1e-12);
      if (lambda > 0 && wts.alpha[0] > 0)
        CHECK(std::abs(std::accumulate(dist.begin(), dist.end(), 0.0) - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("counts are additive in the words") {
  const auto v = abc();
  const std::vector<EncodedWord> first{{0, 1, 2}, {2, 2}};
  const std::vector<EncodedWord> second{{1, 0}};
  std::vector<EncodedWord> both = first;
  both.insert(both.end(), second.begin(), second.end());
  const auto a = count_ngrams(first, v, 3), b = count_ngrams(second, v, 3), ab = count_ngrams(both, v, 3);
  for (const auto& [g, c] : ab.counts()) CHECK(c == a.count(g) + b.count(g));
}

namespace {

std::vector<EncodedWord> sample_unigram_words(Rng& rng, std::size_t n, std::size_t k) {
  std::vector<double> w(k);
  for (std::size_t i = 0; i < k; ++i) w[i] = 1.0 / static_cast<double>(i + 1);
  std::vector<EncodedWord> out(n);
  for (auto& word : out) {
    do word.push_back(static_cast<SymbolId>(rng.categorical(w)));
    while (rng.bernoulli(0.8));
  }
  return out;
}

Vocabulary letters(std::size_t k) {
  std::vector<Segment> syms;
  for (std::size_t i = 0; i < k; ++i) syms.emplace_back("s" + std::to_string(i));
  return Vocabulary("synthetic", syms);
}

}  // namespace

TEST_CASE("fit_weights prefers the unigram when context carries no information") {
  Rng rng(1);
  const std::size_t k = 20;
  const auto v = letters(k);
  const auto train = sample_unigram_words(rng, 150, k);
  const auto dev = sample_unigram_words(rng, 150, k);
  const auto fit = fit_weights(count_all_orders(train, v), dev, v);
  CHECK(fit.weights.alpha[0] >= 0.8);
  CHECK(fit.dev_log_likelihood >= fit.unigram_only_log_likelihood);
}

TEST_CASE("fit_weights prefers the trigram for deterministic trigram structure") {
  // Each word is a fixed pattern selected by its first symbol; the next
  // symbol is a function of the previous two.
  const std::size_t k = 6;
  const auto v = letters(k);
  std::vector<EncodedWord> words;
  for (SymbolId start = 0; start < k; ++start)
    for (int rep = 0; rep < 5; ++rep) {
      EncodedWord w{start, static_cast<SymbolId>((start + 1) % k)};
      for (int i = 0; i < 4; ++i) w.push_back(static_cast<SymbolId>((w[w.size() - 1] * 2 + w[w.size() - 2]) % k));
      words.push_back(w);
    }
  const auto fit = fit_weights(count_all_orders(words, v), words, v);
  CHECK(fit.weights.alpha[2] >= 0.6);
  CHECK(fit.dev_log_likelihood >= fit.unigram_only_log_likelihood);
}

TEST_CASE("fitted model is normalized and beats the unigram on its own training set") {
  Rng rng(8);
  const auto v = letters(5);
  std::vector<EncodedWord> words;
  for (int i = 0; i < 80; ++i) {
    EncodedWord w{static_cast<SymbolId>(rng.uniform_index(5))};
    while (rng.bernoulli(0.75)) w.push_back(static_cast<SymbolId>((w.back() + 1 + rng.uniform_index(2)) % 5));
    words.push_back(w);
  }
  const auto tri = train_ngram(NGramKind::Trigram, v, words, words);
  const auto uni = train_ngram(NGramKind::Unigram, v, words, words);
  CHECK(uni.model_id() == "unigram");
  CHECK(tri.model_id() == "trigram");
  CHECK(uni.weights() == InterpolationWeights{{1, 0, 0}});
  CHECK(dev_ll(tri, words) >= dev_ll(uni, words));
  for (int q = 0; q < 100; ++q) {
    std::vector<SymbolId> h(rng.uniform_index(6));
    for (auto& s : h) s = static_cast<SymbolId>(rng.uniform_index(5));
    const auto d = tri.next_distribution(h);
    CHECK(std::abs(std::accumulate(d.begin(), d.end(), 0.0) - 1.0) <= 1e-9);
    for (double p : d) CHECK(p > 0.0);
  }
}

TEST_CASE("fit_weights error conditions") {
  const auto v = abc();
  const auto tables = count_all_orders(ab_ab_ac(), v);
  CHECK_THROWS_AS(fit_weights(tables, std::vector<EncodedWord>{}, v), NGramError);
  const Vocabulary wide("toy", {Segment("a"), Segment("b"), Segment("c"), Segment("d")});
  const auto wide_tables = count_all_orders(std::vector<EncodedWord>{{0, 1}}, wide);
  CHECK_THROWS_AS(fit_weights(wide_tables, std::vector<EncodedWord>{{3, 2}}, wide), NGramError);
}

TEST_CASE("grid search is deterministic") {
  Rng rng(3);
  const auto v = letters(8);
  const auto train = sample_unigram_words(rng, 60, 8);
  const auto dev = sample_unigram_words(rng, 30, 8);
  const auto t = count_all_orders(train, v);
  CHECK(fit_weights(t, dev, v).weights == fit_weights(t, dev, v).weights);
}

TEST_CASE("JSON round trip") {
  const auto v = abc();
  const NGramModel m(v, count_all_orders(ab_ab_ac(), v), InterpolationWeights{{0.5, 0.3, 0.2}});
  const auto back = NGramModel::from_json(m.to_json());
  CHECK(back.vocabulary() == v);
  CHECK(back.weights() == m.weights());
  for (const std::vector<SymbolId>& h : {std::vector<SymbolId>{}, {0}, {0, 2}}) CHECK(back.next_distribution(h) == m.next_distribution(h));
}

TEST_CASE("weights must lie on the simplex") {
  CHECK_THROWS_AS((InterpolationWeights{{0.5, 0.5, 0.1}}.validate()), NGramError);
  CHECK_THROWS_AS((InterpolationWeights{{1.2, -0.2, 0.0}}.validate()), NGramError);
  CHECK_NOTHROW((InterpolationWeights{{0.2, 0.3, 0.5}}.validate()));
}
