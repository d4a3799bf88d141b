#pragma once

// Artificial languages with one phonotactic constraint removed: final
// obstruent devoicing undone via the orthography, and vowel harmony
// destroyed by resampling vowels.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "phono/corpus.hpp"
#include "phono/features.hpp"

namespace phono {

class PerturbError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::array<std::string_view, 11> kHarmonyLanguages = {"bua", "ckt", "evn", "fin", "hun", "khk",
                                                                       "mhr", "mnc", "myv", "tel", "tur"};

/// Voiceless obstruent -> voiced counterpart, and the lowercase word-final
/// spellings that signal an underlying voiced obstruent.
struct VoicingMap {
  std::map<std::string, std::string> pairs;
  std::set<std::string> voiced_final_graphemes;

  void validate() const;  // non-empty, injective, no segment on both sides
  static VoicingMap from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

VoicingMap load_voicing_map(const std::filesystem::path& path);

struct DevoicingChange {
  std::string concept_id;
  std::string orthography;
  Word before;
  Word after;
};

struct PerturbedLexicon {
  Lexicon lexicon;
  std::vector<DevoicingChange> changes;
  std::size_t collapsed = 0;  // entries merged because the new form already existed
};

// Voices the final segment of every `language_id` word whose final segment
// is a key of the map and whose spelling ends in a voiced-final grapheme.
PerturbedLexicon reverse_devoicing(const Lexicon& lexicon, std::string_view language_id, const VoicingMap& map);

struct VowelInventory {
  std::string language_id;
  std::vector<Segment> vowels;  // sorted, unique
};

struct VowelOverrides {
  std::set<std::string> add;
  std::set<std::string> remove;
};

// Segments of the language's vocabulary with the "syllabic" attribute,
// adjusted by the overrides.
VowelInventory build_vowel_inventory(const Lexicon& lexicon, std::string_view language_id, const FeatureTable& features,
                                     const VowelOverrides& overrides = {});

// Replaces every inventory vowel in the language's words by an independent
// uniform draw from the inventory. A draw that would duplicate an existing
// (concept, word) entry is redrawn, so the entry count is kept. With
// `features`, a syllabic segment missing from the inventory is an error.
PerturbedLexicon scramble_harmony(const Lexicon& lexicon, std::string_view language_id, const VowelInventory& inventory,
                                  std::uint64_t seed, const FeatureTable* features = nullptr);

nlohmann::ordered_json change_report(const PerturbedLexicon& result, std::string_view kind, std::string_view language_id);

}  // namespace phono
