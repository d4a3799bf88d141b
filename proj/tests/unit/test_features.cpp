#include <sstream>

#include "doctest.h"
#include "phono/features.hpp"

using namespace phono;

namespace {

LoadedFeatureTable table_from(const std::string& csv) {
  std::istringstream in(csv);
  return read_feature_table(in);
}

const char* kToy =
    "phoneme,sonorant,strident,nasal\n"
    "m,+,-,+\n"
    "o,+,0,-\n"
    "t,-,-,-\n"
    "s,-,+,-\n";

}  // namespace

TEST_CASE("cells map to presence bits, reserved bits follow") {
  const auto t = table_from(kToy).table;
  CHECK(t.width() == 3 + kReservedAttributeCount);
  CHECK(feature_vector(t, "m") == FeatureVector{1, 0, 1, 0, 0, 0, 0, 0, 0});
  CHECK(feature_vector(t, "o") == FeatureVector{1, 0, 0, 0, 0, 0, 0, 0, 0});
  CHECK(feature_vector(t, "<s>") == FeatureVector{0, 0, 0, 1, 0, 0, 0, 0, 0});
  CHECK(feature_vector(t, "</s>") == FeatureVector{0, 0, 0, 0, 1, 0, 0, 0, 0});
  CHECK(t.all_attribute_names().back() == "<tie>");
}

TEST_CASE("duplicate rows keep the first and warn") {
  const auto loaded = table_from("phoneme,sonorant,strident,nasal\nm,+,-,+\nm,-,-,-\n");
  CHECK(loaded.warnings.size() == 1);
  CHECK(feature_vector(loaded.table, "m") == FeatureVector{1, 0, 1, 0, 0, 0, 0, 0, 0});
}

TEST_CASE("malformed tables") {
  CHECK_THROWS_AS(table_from("phoneme,a,b\nm,+\n"), FeatureError);
  CHECK_THROWS_AS(table_from("phoneme\nm\n"), FeatureError);
  CHECK_THROWS_AS(table_from("phoneme,a\nm,x\n"), FeatureError);
  CHECK_THROWS_AS(table_from("segment,a\nm,+\n"), FeatureError);
}

TEST_CASE("diacritic fallback sets reserved bits") {
  const auto t = table_from(kToy).table;
  CHECK(feature_vector(t, "oː") == FeatureVector{1, 0, 0, 0, 0, 1, 0, 0, 0});
  CHECK(feature_vector(t, "mʲ") == FeatureVector{1, 0, 1, 0, 0, 0, 1, 0, 0});
  CHECK(feature_vector(t, "tʰ") == FeatureVector{0, 0, 0, 0, 0, 0, 0, 1, 0});
  // Tie-bar cluster: union of the bases plus the tie bit.
  CHECK(feature_vector(t, "t͡s") == FeatureVector{0, 1, 0, 0, 0, 0, 0, 0, 1});
}

TEST_CASE("unresolvable segments are errors, not zero vectors") {
  const auto t = table_from(kToy).table;
  CHECK_THROWS_AS(feature_vector(t, "q"), FeatureError);
  std::vector<Segment> segs{Segment("m"), Segment("q"), Segment("ʁ")};
  try {
    check_coverage(t, {Vocabulary("xx", segs)});
    FAIL("expected an error");
  } catch (const FeatureError& e) {
    const std::string what = e.what();
    CHECK(what.find("q") != std::string::npos);
    CHECK(what.find("ʁ") != std::string::npos);
  }
}

TEST_CASE("shipped table resolves common IPA and classifies vowels") {
  const auto t = load_feature_table(PHONO_DATA_DIR "/features.csv").table;
  for (const char* s : {"a", "e", "i", "o", "u", "y", "ø", "ɛ", "ɔ", "ə", "ɨ", "æ", "ɑ", "ɯ", "oː", "a\u0303"})
    CHECK_MESSAGE(has_attribute(t, Segment(s), "syllabic"), s);
  for (const char* s : {"p", "t", "k", "b", "d", "g", "ɡ", "s", "z", "ʃ", "m", "n", "ŋ", "l", "r", "j", "t͡s", "t͡ʃ",
                        "kʲ", "tʰ"})
    CHECK_MESSAGE(!has_attribute(t, Segment(s), "syllabic"), s);
  CHECK(has_attribute(t, Segment("b"), "voice"));
  CHECK_FALSE(has_attribute(t, Segment("p"), "voice"));
}
