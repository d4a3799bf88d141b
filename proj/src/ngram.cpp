#include "phono/ngram.hpp"

#include <cmath>
#include <fstream>
#include <limits>

namespace phono {

CountTable::CountTable(std::size_t order) : order_(order) {
  if (order < 1 || order > 3) throw NGramError("n-gram order must be 1, 2 or 3");
}

void CountTable::add(std::span<const SymbolId> ngram, std::uint64_t n) {
  if (ngram.size() != order_) throw NGramError("n-gram length does not match table order");
  counts_[NGram(ngram.begin(), ngram.end())] += n;
  context_counts_[NGram(ngram.begin(), ngram.end() - 1)] += n;
  total_ += n;
}

std::uint64_t CountTable::count(std::span<const SymbolId> ngram) const {
  auto it = counts_.find(NGram(ngram.begin(), ngram.end()));
  return it == counts_.end() ? 0 : it->second;
}

std::uint64_t CountTable::context_count(std::span<const SymbolId> context) const {
  auto it = context_counts_.find(NGram(context.begin(), context.end()));
  return it == context_counts_.end() ? 0 : it->second;
}

CountTable count_ngrams(std::span<const EncodedWord> words, const Vocabulary& vocab, std::size_t order) {
  CountTable table(order);
  std::vector<SymbolId> padded;
  for (const auto& w : words) {
    padded.assign(order - 1, vocab.bos());
    for (SymbolId s : w) {
      if (s >= vocab.size()) throw NGramError("symbol id outside the vocabulary: " + std::to_string(s));
      padded.push_back(s);
    }
    padded.push_back(vocab.eos());
    for (std::size_t end = order; end <= padded.size(); ++end)
      table.add(std::span<const SymbolId>(padded).subspan(end - order, order));
  }
  return table;
}

CountTable count_ngrams(std::span<const Word> words, const Vocabulary& vocab, std::size_t order) {
  std::vector<EncodedWord> encoded;
  encoded.reserve(words.size());
  for (const auto& w : words) {
    try {
      encoded.push_back(vocab.encode(w));
    } catch (const CorpusError& e) {
      throw NGramError(e.what());
    }
  }
  return count_ngrams(encoded, vocab, order);
}

double relative_frequency(const CountTable& table, std::span<const SymbolId> context, SymbolId x) {
  if (context.size() + 1 != table.order()) throw NGramError("context length must be order - 1");
  const auto denom = table.context_count(context);
  if (denom == 0) return 0.0;
  NGram ngram(context.begin(), context.end());
  ngram.push_back(x);
  return static_cast<double>(table.count(ngram)) / static_cast<double>(denom);
}

void InterpolationWeights::validate() const {
  double sum = 0.0;
  for (double a : alpha) {
    if (!(a >= 0.0)) throw NGramError("interpolation weights must be non-negative");
    sum += a;
  }
  if (std::abs(sum - 1.0) > 1e-12) throw NGramError("interpolation weights must sum to 1");
}

NGramTables count_all_orders(std::span<const EncodedWord> words, const Vocabulary& vocab) {
  return {count_ngrams(words, vocab, 1), count_ngrams(words, vocab, 2), count_ngrams(words, vocab, 3)};
}

namespace {

double smoothed_unigram(const CountTable& unigram, const Vocabulary& vocab, double smoothing, SymbolId x) {
  const double outcomes = static_cast<double>(vocab.n_outcomes());
  const double denom = static_cast<double>(unigram.total()) + smoothing * outcomes;
  if (denom <= 0.0) return 1.0 / outcomes;
  const SymbolId key[1] = {x};
  return (static_cast<double>(unigram.count(key)) + smoothing) / denom;
}

}  // namespace

InterpolationTerms interpolation_terms(const NGramTables& tables, const Vocabulary& vocab, double smoothing,
                                       std::span<const SymbolId> history, SymbolId x) {
  InterpolationTerms t;
  const SymbolId bos = vocab.bos();
  const std::size_t n = history.size();
  const SymbolId prev1 = n >= 1 ? history[n - 1] : bos;
  const SymbolId prev2 = n >= 2 ? history[n - 2] : bos;

  t.f[0] = smoothed_unigram(tables.unigram, vocab, smoothing, x);

  const SymbolId ctx2[1] = {prev1};
  t.active[1] = tables.bigram.context_count(ctx2) > 0;
  t.f[1] = relative_frequency(tables.bigram, ctx2, x);

  const SymbolId ctx3[2] = {prev2, prev1};
  t.active[2] = tables.trigram.context_count(ctx3) > 0;
  t.f[2] = relative_frequency(tables.trigram, ctx3, x);
  return t;
}

double interpolate(const InterpolationTerms& terms, const InterpolationWeights& weights) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    if (!terms.active[k]) continue;
    num += weights.alpha[k] * terms.f[k];
    den += weights.alpha[k];
  }
  if (den <= 0.0) return terms.f[0];
  return num / den;
}

NGramModel::NGramModel(Vocabulary vocab, NGramTables tables, InterpolationWeights weights, double unigram_smoothing,
                       std::string model_id)
    : vocab_(std::move(vocab)),
      tables_(std::move(tables)),
      weights_(weights),
      smoothing_(unigram_smoothing),
      model_id_(std::move(model_id)) {
  weights_.validate();
  if (smoothing_ < 0.0) throw NGramError("unigram smoothing must be non-negative");
}

double NGramModel::unigram_probability(SymbolId x) const { return smoothed_unigram(tables_.unigram, vocab_, smoothing_, x); }

std::vector<double> NGramModel::next_distribution(std::span<const SymbolId> history) const {
  std::vector<double> dist(vocab_.n_outcomes());
  for (SymbolId x = 0; x < dist.size(); ++x)
    dist[x] = interpolate(interpolation_terms(tables_, vocab_, smoothing_, history, x), weights_);
  return dist;
}

std::vector<double> NGramModel::sequence_probabilities(std::span<const SymbolId> word) const {
  std::vector<double> probs;
  probs.reserve(word.size() + 1);
  for (std::size_t i = 0; i <= word.size(); ++i) {
    const SymbolId target = i < word.size() ? word[i] : vocab_.eos();
    probs.push_back(interpolate(interpolation_terms(tables_, vocab_, smoothing_, word.first(i), target), weights_));
  }
  return probs;
}

nlohmann::json NGramModel::to_json() const {
  nlohmann::ordered_json j;
  j["format_version"] = 1;
  j["model_id"] = model_id_;
  j["language_id"] = vocab_.language_id();
  std::vector<std::string> symbols;
  for (const auto& s : vocab_.symbols()) symbols.push_back(s.str());
  j["symbols"] = symbols;
  j["unigram_smoothing"] = smoothing_;
  j["weights"] = weights_.alpha;
  auto dump = [&](const CountTable& t) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& [ngram, c] : t.counts()) {
      nlohmann::json names = nlohmann::json::array();
      for (SymbolId s : ngram) names.push_back(vocab_.name(s));
      rows.push_back({names, c});
    }
    return rows;
  };
  j["counts"] = {{"1", dump(tables_.unigram)}, {"2", dump(tables_.bigram)}, {"3", dump(tables_.trigram)}};
  return j;
}

NGramModel NGramModel::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != 1) throw NGramError("unsupported n-gram model format version");
    std::vector<Segment> symbols;
    for (const auto& s : j.at("symbols")) symbols.emplace_back(s.get<std::string>());
    Vocabulary vocab(j.at("language_id").get<std::string>(), std::move(symbols));
    auto id_of = [&](const std::string& name) -> SymbolId {
      if (name == kBosSymbol) return vocab.bos();
      if (name == kEosSymbol) return vocab.eos();
      return vocab.id(Segment(name));
    };
    NGramTables tables;
    CountTable* by_order[3] = {&tables.unigram, &tables.bigram, &tables.trigram};
    for (int order = 1; order <= 3; ++order) {
      for (const auto& row : j.at("counts").at(std::to_string(order))) {
        NGram ngram;
        for (const auto& name : row.at(0)) ngram.push_back(id_of(name.get<std::string>()));
        by_order[order - 1]->add(ngram, row.at(1).get<std::uint64_t>());
      }
    }
    InterpolationWeights w{j.at("weights").get<std::array<double, 3>>()};
    return NGramModel(std::move(vocab), std::move(tables), w, j.at("unigram_smoothing").get<double>(),
                      j.at("model_id").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw NGramError(std::string("malformed n-gram model: ") + e.what());
  }
}

void NGramModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw NGramError("cannot write " + path.string());
  out << to_json().dump() << '\n';
}

NGramModel NGramModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NGramError("cannot open " + path.string());
  return from_json(nlohmann::json::parse(in));
}

WeightFit fit_weights(const NGramTables& train, std::span<const EncodedWord> dev, const Vocabulary& vocab,
                      double unigram_smoothing) {
  if (dev.empty()) throw NGramError("fit_weights: empty dev set");
  if (train.unigram.empty()) throw NGramError("fit_weights: empty training counts");
  bool any_seen = false;
  for (const auto& w : dev)
    for (SymbolId s : w) {
      const SymbolId key[1] = {s};
      if (train.unigram.count(key) > 0) any_seen = true;
    }
  if (!any_seen) throw NGramError("fit_weights: no dev phoneme occurs in training; likelihood is not informative");

  std::vector<InterpolationTerms> positions;
  for (const auto& w : dev) {
    for (std::size_t i = 0; i <= w.size(); ++i) {
      const SymbolId target = i < w.size() ? w[i] : vocab.eos();
      positions.push_back(
          interpolation_terms(train, vocab, unigram_smoothing, std::span<const SymbolId>(w).first(i), target));
    }
  }

  // Weights live on an integer lattice with 500 units so they sum to 1 exactly.
  constexpr int kUnits = 500;
  constexpr int kCoarse = 10;  // 0.02
  auto weights_at = [](int u1, int u2) {
    return InterpolationWeights{{static_cast<double>(u1) / kUnits, static_cast<double>(u2) / kUnits,
                                 static_cast<double>(kUnits - u1 - u2) / kUnits}};
  };
  auto log_likelihood = [&](const InterpolationWeights& w) {
    double ll = 0.0;
    for (const auto& t : positions) {
      const double p = interpolate(t, w);
      if (!(p > 0.0)) return -std::numeric_limits<double>::infinity();
      ll += std::log(p);
    }
    return ll;
  };

  int best1 = kUnits, best2 = 0;
  double best_ll = log_likelihood(weights_at(kUnits, 0));
  const double unigram_ll = best_ll;
  auto consider = [&](int u1, int u2) {
    const double ll = log_likelihood(weights_at(u1, u2));
    if (ll > best_ll) {
      best_ll = ll;
      best1 = u1;
      best2 = u2;
    }
  };
  // alpha_1 stays at least one lattice unit so every outcome keeps the
  // unigram floor.
  for (int u1 = kCoarse; u1 <= kUnits; u1 += kCoarse)
    for (int u2 = 0; u1 + u2 <= kUnits; u2 += kCoarse) consider(u1, u2);

  const int c1 = best1, c2 = best2;
  for (int u1 = std::max(1, c1 - kCoarse); u1 <= std::min(kUnits, c1 + kCoarse); ++u1)
    for (int u2 = std::max(0, c2 - kCoarse); u2 <= std::min(kUnits - u1, c2 + kCoarse); ++u2) consider(u1, u2);

  return {weights_at(best1, best2), best_ll, unigram_ll};
}

NGramModel train_ngram(NGramKind kind, const Vocabulary& vocab, std::span<const EncodedWord> train,
                       std::span<const EncodedWord> dev, double unigram_smoothing) {
  if (train.empty()) throw NGramError("train_ngram: empty training set");
  auto tables = count_all_orders(train, vocab);
  if (kind == NGramKind::Unigram)
    return NGramModel(vocab, std::move(tables), InterpolationWeights{{1.0, 0.0, 0.0}}, unigram_smoothing, "unigram");
  const auto fit = fit_weights(tables, dev, vocab, unigram_smoothing);
  return NGramModel(vocab, std::move(tables), fit.weights, unigram_smoothing, "trigram");
}

}  // namespace phono
