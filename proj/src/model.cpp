#include "phono/model.hpp"

namespace phono {

std::vector<double> LanguageModel::sequence_probabilities(std::span<const SymbolId> word) const {
  std::vector<double> probs;
  probs.reserve(word.size() + 1);
  for (std::size_t i = 0; i <= word.size(); ++i) {
    const auto dist = next_distribution(word.first(i));
    const SymbolId target = i < word.size() ? word[i] : vocabulary().eos();
    probs.push_back(dist.at(target));
  }
  return probs;
}

}  // namespace phono
