#include "phono/perturb.hpp"

#include <algorithm>
#include <fstream>

#include "phono/random.hpp"
#include "phono/utf8.hpp"

namespace phono {

void VoicingMap::validate() const {
  if (pairs.empty()) throw PerturbError("voicing map has no pairs");
  if (voiced_final_graphemes.empty()) throw PerturbError("voicing map has no voiced-final graphemes");
  std::set<std::string> voiced;
  for (const auto& [voiceless, v] : pairs) {
    if (!voiced.insert(v).second) throw PerturbError("voicing map is not injective at '" + v + "'");
    if (voiceless == v) throw PerturbError("voicing map sends '" + v + "' to itself");
  }
  for (const auto& [voiceless, v] : pairs)
    if (voiced.count(voiceless)) throw PerturbError("'" + voiceless + "' is both voiceless and voiced in the map");
}

VoicingMap VoicingMap::from_json(const nlohmann::json& j) {
  VoicingMap m;
  for (const auto& [k, v] : j.at("pairs").items()) m.pairs[k] = v.get<std::string>();
  for (const auto& g : j.at("voiced_final_graphemes")) m.voiced_final_graphemes.insert(g.get<std::string>());
  m.validate();
  return m;
}

nlohmann::json VoicingMap::to_json() const {
  return {{"pairs", pairs}, {"voiced_final_graphemes", voiced_final_graphemes}};
}

VoicingMap load_voicing_map(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw PerturbError("cannot open voicing map " + path.string());
  try {
    return VoicingMap::from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw PerturbError(path.string() + ": " + e.what());
  }
}

namespace {

std::string lowercase(std::string_view text) {
  std::u32string cps = utf8::decode(text);
  for (auto& c : cps) c = utf8::to_lower(c);
  return utf8::encode(cps);
}

bool ends_with_voiced_grapheme(const std::string& orthography, const std::set<std::string>& graphemes) {
  const std::string lower = lowercase(orthography);
  return std::any_of(graphemes.begin(), graphemes.end(), [&](const std::string& g) {
    return !g.empty() && lower.size() >= g.size() && lower.compare(lower.size() - g.size(), g.size(), g) == 0;
  });
}

PerturbedLexicon rebuild(const Lexicon& lexicon, std::string_view language_id, std::vector<LexiconEntry> replaced,
                         std::vector<DevoicingChange> changes) {
  const std::size_t before = replaced.size();
  PerturbedLexicon out;
  out.lexicon = lexicon.with_language_entries(language_id, std::move(replaced));
  out.collapsed = before - out.lexicon.entries_for(language_id).size();
  out.changes = std::move(changes);
  return out;
}

}  // namespace

PerturbedLexicon reverse_devoicing(const Lexicon& lexicon, std::string_view language_id, const VoicingMap& map) {
  map.validate();
  if (!lexicon.has_language(language_id)) throw PerturbError("language " + std::string(language_id) + " not in lexicon");
  std::vector<LexiconEntry> replaced;
  std::vector<DevoicingChange> changes;
  std::vector<std::string> missing;
  for (const auto* e : lexicon.entries_for(language_id)) {
    LexiconEntry copy = *e;
    const auto& segs = e->word.segments();
    const auto it = map.pairs.find(segs.back().str());
    if (it != map.pairs.end()) {
      if (!e->orthography) {
        missing.push_back(e->concept_id + " /" + e->word.to_string() + "/");
      } else if (ends_with_voiced_grapheme(*e->orthography, map.voiced_final_graphemes)) {
        auto voiced = segs;
        voiced.back() = Segment(it->second);
        copy.word = Word(std::move(voiced));
        changes.push_back({e->concept_id, *e->orthography, e->word, copy.word});
      }
    }
    replaced.push_back(std::move(copy));
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += "\n  " + m;
    throw PerturbError("entries without orthography in " + std::string(language_id) + ":" + list);
  }
  return rebuild(lexicon, language_id, std::move(replaced), std::move(changes));
}

VowelInventory build_vowel_inventory(const Lexicon& lexicon, std::string_view language_id, const FeatureTable& features,
                                     const VowelOverrides& overrides) {
  const auto vocab = build_vocabulary(lexicon, language_id);
  VowelInventory inv{std::string(language_id), {}};
  for (const auto& s : vocab.symbols()) {
    if (overrides.remove.count(s.str())) continue;
    if (overrides.add.count(s.str()) || has_attribute(features, s, "syllabic")) inv.vowels.push_back(s);
  }
  return inv;
}

PerturbedLexicon scramble_harmony(const Lexicon& lexicon, std::string_view language_id, const VowelInventory& inventory,
                                  std::uint64_t seed, const FeatureTable* features) {
  if (inventory.vowels.empty()) throw PerturbError("empty vowel inventory for " + std::string(language_id));
  if (!lexicon.has_language(language_id)) throw PerturbError("language " + std::string(language_id) + " not in lexicon");
  const std::set<Segment> vowels(inventory.vowels.begin(), inventory.vowels.end());
  Rng rng(seed);
  constexpr int kMaxRedraws = 100;

  std::set<std::pair<std::string, Word>> taken;
  std::vector<LexiconEntry> replaced;
  for (const auto* e : lexicon.entries_for(language_id)) {
    for (const auto& s : e->word.segments())
      if (features && !vowels.count(s) && has_attribute(*features, s, "syllabic"))
        throw PerturbError("vowel '" + s.str() + "' of " + std::string(language_id) + " is not in the inventory");
    LexiconEntry copy = *e;
    for (int attempt = 0; attempt <= kMaxRedraws; ++attempt) {
      auto segs = e->word.segments();
      for (auto& s : segs)
        if (vowels.count(s)) s = inventory.vowels[rng.uniform_index(inventory.vowels.size())];
      copy.word = Word(std::move(segs));
      if (!taken.count({copy.concept_id, copy.word})) break;
    }
    taken.insert({copy.concept_id, copy.word});
    replaced.push_back(std::move(copy));
  }
  return rebuild(lexicon, language_id, std::move(replaced), {});
}

nlohmann::ordered_json change_report(const PerturbedLexicon& result, std::string_view kind, std::string_view language_id) {
  nlohmann::ordered_json j;
  j["kind"] = kind;
  j["language_id"] = language_id;
  j["n_changes"] = result.changes.size();
  j["collapsed"] = result.collapsed;
  auto& list = j["changes"] = nlohmann::ordered_json::array();
  for (const auto& c : result.changes)
    list.push_back({{"concept_id", c.concept_id},
                    {"orthography", c.orthography},
                    {"before", c.before.to_string()},
                    {"after", c.after.to_string()}});
  return j;
}

}  // namespace phono
