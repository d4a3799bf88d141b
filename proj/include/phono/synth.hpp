#pragma once

// Deterministic synthetic multi-language lexicon used when the real corpus is
// unavailable. Each language trades per-phoneme entropy against word length:
// a larger, flatter consonant inventory comes with shorter words, so bits per
// word stay roughly constant across languages. Harmony and final-devoicing
// languages carry the constraints the perturbation studies remove.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "phono/corpus.hpp"

namespace phono {

struct SynthLanguage {
  std::string id;
  std::string family;
  // 0: small, skewed inventory and long words; 1: large, flat inventory
  // and short words.
  double knob = 0.5;
  bool harmony = false;
  bool final_devoicing = false;  // surface finals voiceless, spelling keeps the underlying voicing
};

struct SynthConfig {
  std::vector<SynthLanguage> languages;
  std::size_t n_concepts = 240;
  double missing_rate = 0.03;  // per (language, concept)
  double variant_rate = 0.05;  // chance of a second form for a concept
  double bits_per_word = 15.0;  // generator entropy per word before coda, jittered by 8% per language
  std::uint64_t seed = 0;

  // 27 languages in seven families plus an excluded "cmn".
  static SynthConfig standard();
  // Three languages, one with harmony and one with devoicing.
  static SynthConfig toy();
};

struct SynthCorpus {
  Lexicon lexicon;
  std::map<std::string, std::string> families;  // language -> family
};

SynthCorpus generate_synthetic(const SynthConfig& config);

}  // namespace phono
