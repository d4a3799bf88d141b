#pragma once

// Phoneme n-gram models: relative-frequency estimates up to trigrams mixed by
// deleted interpolation, with mixture weights tuned on a development fold.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "phono/model.hpp"

namespace phono {

class NGramError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using EncodedWord = std::vector<SymbolId>;
using NGram = std::vector<SymbolId>;

/// Counts of all n-grams (fixed order) over bos/eos-padded words. Context
/// totals are the marginals of the n-gram counts, so f_n is normalized for
/// every context that has been seen.
class CountTable {
 public:
  explicit CountTable(std::size_t order);

  std::size_t order() const { return order_; }
  void add(std::span<const SymbolId> ngram, std::uint64_t n = 1);

  std::uint64_t count(std::span<const SymbolId> ngram) const;
  std::uint64_t context_count(std::span<const SymbolId> context) const;
  std::uint64_t total() const { return total_; }
  bool empty() const { return counts_.empty(); }
  const std::map<NGram, std::uint64_t>& counts() const { return counts_; }

  bool operator==(const CountTable&) const = default;

 private:
  std::size_t order_;
  std::map<NGram, std::uint64_t> counts_;
  std::map<NGram, std::uint64_t> context_counts_;
  std::uint64_t total_ = 0;
};

// Pads each word with (order-1) bos and one eos and counts every window.
CountTable count_ngrams(std::span<const EncodedWord> words, const Vocabulary& vocab, std::size_t order);
CountTable count_ngrams(std::span<const Word> words, const Vocabulary& vocab, std::size_t order);

// count(context x) / count(context); 0 for an unseen context.
double relative_frequency(const CountTable& table, std::span<const SymbolId> context, SymbolId x);

struct InterpolationWeights {
  std::array<double, 3> alpha{1.0, 0.0, 0.0};  // unigram, bigram, trigram

  void validate() const;
  bool operator==(const InterpolationWeights&) const = default;
};

struct NGramTables {
  CountTable unigram{1};
  CountTable bigram{2};
  CountTable trigram{3};
};

NGramTables count_all_orders(std::span<const EncodedWord> words, const Vocabulary& vocab);

inline constexpr double kDefaultUnigramSmoothing = 0.01;

class NGramModel final : public LanguageModel {
 public:
  NGramModel(Vocabulary vocab, NGramTables tables, InterpolationWeights weights,
             double unigram_smoothing = kDefaultUnigramSmoothing, std::string model_id = "trigram");

  std::string model_id() const override { return model_id_; }
  const Vocabulary& vocabulary() const override { return vocab_; }
  std::vector<double> next_distribution(std::span<const SymbolId> history) const override;
  std::vector<double> sequence_probabilities(std::span<const SymbolId> word) const override;

  const NGramTables& tables() const { return tables_; }
  const InterpolationWeights& weights() const { return weights_; }
  double unigram_smoothing() const { return smoothing_; }

  // Add-lambda unigram over phonemes plus eos.
  double unigram_probability(SymbolId x) const;

  nlohmann::json to_json() const;
  static NGramModel from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static NGramModel load(const std::filesystem::path& path);

 private:
  Vocabulary vocab_;
  NGramTables tables_;
  InterpolationWeights weights_;
  double smoothing_;
  std::string model_id_;
};

// The f_1, f_2, f_3 terms at one position and whether the bigram/trigram
// contexts were observed in training.
struct InterpolationTerms {
  std::array<double, 3> f{};
  std::array<bool, 3> active{true, false, false};
};

InterpolationTerms interpolation_terms(const NGramTables& tables, const Vocabulary& vocab, double smoothing,
                                       std::span<const SymbolId> history, SymbolId x);

// Mixture of the active terms, renormalized over the active weights; falls
// back to the unigram when no active term has weight.
double interpolate(const InterpolationTerms& terms, const InterpolationWeights& weights);

struct WeightFit {
  InterpolationWeights weights;
  double dev_log_likelihood = 0.0;           // natural log, summed over dev positions
  double unigram_only_log_likelihood = 0.0;  // same at alpha = (1, 0, 0)
};

// Exhaustive simplex grid at step 0.02, then a 0.002 grid within one coarse
// step of the best point. Maximizes dev log-likelihood; ties keep the
// earliest grid point, so the result is deterministic. alpha_1 is kept
// >= 0.002 so the fitted model never assigns zero probability.
WeightFit fit_weights(const NGramTables& train, std::span<const EncodedWord> dev, const Vocabulary& vocab,
                      double unigram_smoothing = kDefaultUnigramSmoothing);

enum class NGramKind { Unigram, Trigram };

NGramModel train_ngram(NGramKind kind, const Vocabulary& vocab, std::span<const EncodedWord> train,
                       std::span<const EncodedWord> dev, double unigram_smoothing = kDefaultUnigramSmoothing);

}  // namespace phono
