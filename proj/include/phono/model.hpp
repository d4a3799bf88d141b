#pragma once

#include <span>
#include <string>
#include <vector>

#include "phono/corpus.hpp"

namespace phono {

/// Anything that yields a next-symbol distribution for a word prefix:
/// the variational family q_lex the complexity measures are computed with.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual std::string model_id() const = 0;
  virtual const Vocabulary& vocabulary() const = 0;

  // Distribution over vocabulary().n_outcomes() outcomes (phonemes, then
  // eos) given the phonemes emitted so far; boundary padding is implicit.
  virtual std::vector<double> next_distribution(std::span<const SymbolId> history) const = 0;

  // q(x_i | x_<i) for every position of `word` plus the final eos, so the
  // result has word.size() + 1 entries.
  virtual std::vector<double> sequence_probabilities(std::span<const SymbolId> word) const;
};

}  // namespace phono
