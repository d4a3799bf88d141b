#include <set>

#include "doctest.h"
#include "phono/perturb.hpp"

using namespace phono;

namespace {

Word w(std::initializer_list<const char*> segs) {
  std::vector<Segment> v;
  for (const char* s : segs) v.emplace_back(s);
  return Word(v);
}

VoicingMap german_map() {
  return VoicingMap::from_json(nlohmann::json::parse(R"({
    "pairs": {"p": "b", "t": "d", "k": "ɡ", "f": "v", "s": "z"},
    "voiced_final_graphemes": ["b", "d", "g", "v", "w", "s"]
  })"));
}

Lexicon german() {
  return Lexicon::from_entries({
      {"deu", "train", w({"t͡s", "uː", "k"}), "Zug"},
      {"deu", "piece", w({"t͡s", "uː", "k"}), "zuck"},
      {"deu", "shoe", w({"ʃ", "uː"}), "Schuh"},
      {"deu", "dog", w({"h", "ʊ", "n", "t"}), "Hund"},
      {"nld", "dog", w({"h", "ɔ", "n", "t"}), "hond"},
  });
}

}  // namespace

TEST_CASE("devoicing reversal follows the orthography") {
  const auto r = reverse_devoicing(german(), "deu", german_map());
  const auto entries = r.lexicon.entries_for("deu");
  auto find = [&](const char* concept_id) {
    for (const auto* e : entries)
      if (e->concept_id == concept_id) return e->word;
    FAIL("missing concept");
    return w({"x"});
  };
  CHECK(find("train") == w({"t͡s", "uː", "ɡ"}));
  CHECK(find("piece") == w({"t͡s", "uː", "k"}));
  CHECK(find("shoe") == w({"ʃ", "uː"}));
  CHECK(find("dog") == w({"h", "ʊ", "n", "d"}));
  CHECK(r.changes.size() == 2);
  // Other languages untouched.
  CHECK(r.lexicon.entries_for("nld")[0]->word == w({"h", "ɔ", "n", "t"}));
  CHECK(r.lexicon.size() == german().size());
}

TEST_CASE("devoicing reversal is idempotent") {
  const auto once = reverse_devoicing(german(), "deu", german_map());
  const auto twice = reverse_devoicing(once.lexicon, "deu", german_map());
  CHECK(twice.lexicon == once.lexicon);
  CHECK(twice.changes.empty());
}

TEST_CASE("matching words without orthography are an error") {
  const auto lex = Lexicon::from_entries({{"deu", "a", w({"a", "t"}), std::nullopt}, {"deu", "b", w({"a"}), std::nullopt}});
  try {
    reverse_devoicing(lex, "deu", german_map());
    FAIL("expected an error");
  } catch (const PerturbError& e) {
    CHECK(std::string(e.what()).find("a /a t/") != std::string::npos);
  }
}

TEST_CASE("voicing maps must be injective") {
  CHECK_THROWS_AS(VoicingMap::from_json(nlohmann::json::parse(
                      R"({"pairs": {"p": "b", "f": "b"}, "voiced_final_graphemes": ["b"]})")),
                  PerturbError);
  CHECK_THROWS_AS(VoicingMap::from_json(nlohmann::json::parse(R"({"pairs": {}, "voiced_final_graphemes": ["b"]})")),
                  PerturbError);
}

namespace {

Lexicon harmony_lexicon() {
  std::vector<LexiconEntry> entries{{"tur", "c0", w({"k", "u", "l", "a", "k"}), {}}};
  const char* vowels[] = {"a", "e", "i", "o", "u"};
  for (int c = 1; c < 40; ++c)
    entries.push_back({"tur", "c" + std::to_string(c), w({"t", vowels[c % 5], "r", vowels[(c / 5) % 5]}), {}});
  return Lexicon::from_entries(entries);
}

VowelInventory five_vowels() {
  return {"tur", {Segment("a"), Segment("e"), Segment("i"), Segment("o"), Segment("u")}};
}

}  // namespace

TEST_CASE("scrambling keeps the consonant skeleton") {
  const auto lex = harmony_lexicon();
  const auto inv = five_vowels();
  const std::set<std::string> vowel_set{"a", "e", "i", "o", "u"};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto out = scramble_harmony(lex, "tur", inv, seed).lexicon;
    for (const auto* e : out.entries_for("tur")) {
      if (e->concept_id != "c0") continue;
      REQUIRE(e->word.size() == 5);
      CHECK(e->word[0].str() == "k");
      CHECK(e->word[2].str() == "l");
      CHECK(e->word[4].str() == "k");
      CHECK(vowel_set.count(e->word[1].str()));
      CHECK(vowel_set.count(e->word[3].str()));
    }
  }
}

TEST_CASE("single-vowel inventory") {
  const auto lex = Lexicon::from_entries({{"xxx", "c0", w({"k", "e", "l", "e", "k"}), {}}, {"xxx", "c1", w({"e", "t"}), {}}});
  const auto out = scramble_harmony(lex, "xxx", {"xxx", {Segment("e")}}, 1);
  CHECK(out.lexicon == lex);
}

TEST_CASE("ten seeds give ten distinct datasets with the original lengths") {
  const auto lex = harmony_lexicon();
  std::set<std::vector<std::string>> distinct;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto out = scramble_harmony(lex, "tur", five_vowels(), seed).lexicon;
    REQUIRE(out.size() == lex.size());
    for (std::size_t i = 0; i < lex.size(); ++i) {
      CHECK(out.entries()[i].concept_id == lex.entries()[i].concept_id);
      CHECK(out.entries()[i].word.size() == lex.entries()[i].word.size());
    }
    std::vector<std::string> forms;
    for (const auto& e : out.entries()) forms.push_back(e.word.to_string());
    distinct.insert(forms);
  }
  CHECK(distinct.size() == 10);
  CHECK(scramble_harmony(lex, "tur", five_vowels(), 3).lexicon == scramble_harmony(lex, "tur", five_vowels(), 3).lexicon);
}

TEST_CASE("vowel inventory comes from the feature table") {
  const FeatureTable ft({"syllabic"}, {{"a", {1}}, {"e", {1}}, {"i", {1}}, {"o", {1}}, {"u", {1}}, {"k", {0}},
                                       {"l", {0}}, {"r", {0}}, {"t", {0}}});
  const auto inv = build_vowel_inventory(harmony_lexicon(), "tur", ft);
  CHECK(inv.vowels.size() == 5);
  const auto fewer = build_vowel_inventory(harmony_lexicon(), "tur", ft, {{}, {"u"}});
  CHECK(fewer.vowels.size() == 4);
  CHECK_THROWS_AS(scramble_harmony(harmony_lexicon(), "tur", fewer, 0, &ft), PerturbError);
  CHECK_THROWS_AS(scramble_harmony(harmony_lexicon(), "tur", {"tur", {}}, 0), PerturbError);
}
