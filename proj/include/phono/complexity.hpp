#pragma once

// Complexity measures from model scores: per-word surprisal, per-language
// bits per phoneme over cross-validated test folds, truncated-prefix and
// positional breakdowns.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "phono/corpus.hpp"
#include "phono/model.hpp"

namespace phono {

class ComplexityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct WordScore {
  std::string language_id;
  std::string concept_id;
  std::string model_id;
  Word word;
  std::vector<double> position_bits;  // m + 1 entries, the last for eos
  double total_bits = 0.0;

  std::size_t length() const { return word.size(); }
  double bits_per_phoneme() const { return total_bits / static_cast<double>(word.size() + 1); }
};

// -log2 q at every position; total_bits is their sum.
WordScore score_word(const LanguageModel& model, const Word& word, std::string language_id = {},
                     std::string concept_id = {});

struct ComplexityRecord {
  std::string language_id;
  std::string model_id;
  double bits_per_phoneme = 0.0;         // mean over words of B / (m + 1)
  double pooled_bits_per_phoneme = 0.0;  // sum of B over sum of (m + 1)
  double bits_per_word = 0.0;
  double avg_word_len = 0.0;  // segments, boundaries excluded
  std::size_t n_words = 0;
};

// Aggregates one language's scores; all must share language and model.
ComplexityRecord aggregate(const std::vector<WordScore>& scores);

struct LanguageEvaluation {
  ComplexityRecord record;
  std::vector<WordScore> scores;  // lexicon order
};

// models[r] is the model trained for rotation r; every word is scored by the
// model whose test fold holds its concept.
LanguageEvaluation evaluate_language(const std::vector<const LanguageModel*>& models, const Lexicon& lexicon,
                                     const FoldAssignment& folds, std::string_view language_id);

// Per language: mean over words of the bits of the first min(m, k) phonemes
// divided by min(m, k). The eos position is never inside the window.
std::map<std::string, double> truncated_bits(const std::vector<WordScore>& scores, std::size_t k);

struct PositionBits {
  std::string language_id;
  std::size_t position = 0;  // 1-based
  double bits = 0.0;
};

// One row per (word, non-eos position).
std::vector<PositionBits> positional_bits(const std::vector<WordScore>& scores);

void write_complexity_csv(std::ostream& out, const std::vector<ComplexityRecord>& records,
                          const std::string& manifest_id);
std::vector<ComplexityRecord> read_complexity_csv(const std::filesystem::path& path);

// Per-position bits are stored space-separated in one field.
void write_scores_csv(std::ostream& out, const std::vector<WordScore>& scores, const std::string& manifest_id);
std::vector<WordScore> read_scores_csv(const std::filesystem::path& path);

}  // namespace phono
