#include "phono/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "phono/random.hpp"

namespace phono {

namespace {

const std::vector<std::string> kConsonantPool = {"p", "t", "k", "b", "d", "ɡ", "m", "n", "ŋ", "f", "v",
                                                 "s", "z", "ʃ", "ʒ", "x", "ɣ", "l", "r", "j", "w", "h",
                                                 "c", "ɟ", "ɲ", "ʎ", "q", "χ", "θ", "ð", "β"};
const std::vector<std::string> kFrontVowels = {"i", "e", "y", "ø", "ɛ", "æ"};
const std::vector<std::string> kBackVowels = {"u", "o", "ɯ", "a", "ɔ", "ʊ"};

// Voiceless final obstruent -> voiced partner, for devoicing languages.
const std::map<std::string, std::string> kVoicing = {{"p", "b"}, {"t", "d"}, {"k", "ɡ"}, {"f", "v"}, {"s", "z"}};

constexpr double kVowelEntropy = 1.4;
constexpr double kOnsetlessRate = 0.2;
constexpr double kBitsPerWordJitter = 0.08;

double zipf_entropy(std::size_t n, double exponent) {
  double z = 0.0;
  for (std::size_t r = 0; r < n; ++r) z += std::pow(static_cast<double>(r + 1), -exponent);
  double h = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double p = std::pow(static_cast<double>(r + 1), -exponent) / z;
    h -= p * std::log2(p);
  }
  return h;
}

// Zipf exponent whose distribution over n items has the given entropy.
double zipf_exponent_for(std::size_t n, double entropy) {
  double lo = 0.0, hi = 20.0;
  for (int i = 0; i < 100; ++i) {
    const double mid = 0.5 * (lo + hi);
    (zipf_entropy(n, mid) > entropy ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// Zipf weights over a random ranking of n items.
std::vector<double> zipf_row(std::size_t n, double exponent, Rng& rng) {
  std::vector<std::size_t> rank(n);
  for (std::size_t i = 0; i < n; ++i) rank[i] = i;
  rng.shuffle(rank);
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = std::pow(static_cast<double>(rank[i] + 1), -exponent);
  return w;
}

std::vector<std::string> sample_without_replacement(const std::vector<std::string>& pool, std::size_t n, Rng& rng) {
  auto copy = pool;
  rng.shuffle(copy);
  copy.resize(std::min(n, copy.size()));
  return copy;
}

std::string spell(const std::string& segment, const std::string& language, bool final_position) {
  static const std::map<std::string, std::string> common = {
      {"ʃ", "sch"}, {"ʒ", "sch"}, {"ŋ", "ng"}, {"x", "ch"}, {"ɣ", "g"}, {"ɡ", "g"}, {"ɲ", "nj"}, {"ʎ", "lj"},
      {"χ", "ch"},  {"θ", "th"},  {"ð", "dh"}, {"β", "bh"}, {"c", "tj"}, {"ɟ", "dj"}, {"q", "q"},   {"ɛ", "e"},
      {"æ", "ä"},   {"ɯ", "i"},   {"ɔ", "o"},  {"ʊ", "u"},  {"y", "ü"},  {"ø", "ö"}};
  if (final_position) {
    static const std::map<std::string, std::string> deu = {{"k", "ck"}, {"v", "w"}, {"s", "ß"}, {"z", "s"}};
    if (language == "deu" && deu.count(segment)) return deu.at(segment);
  }
  if (language == "nld") {
    if (segment == "y") return "uu";
    if (segment == "ø") return "eu";
    if (segment == "ʃ") return "sj";
  }
  const auto it = common.find(segment);
  return it == common.end() ? segment : it->second;
}

class LanguageGenerator {
 public:
  LanguageGenerator(const SynthLanguage& spec, const SynthConfig& config)
      : spec_(spec), rng_(derive_seed(config.seed, spec.id, 0)) {
    const std::size_t n_consonants = 7 + static_cast<std::size_t>(std::lround(15.0 * spec.knob));
    const double exponent = 1.4 - 0.9 * spec.knob;

    std::vector<std::string> pool;
    if (spec.final_devoicing)
      for (const auto& [voiceless, voiced] : kVoicing) {
        consonants_.push_back(voiceless);
        consonants_.push_back(voiced);
      }
    for (const auto& c : kConsonantPool)
      if (std::find(consonants_.begin(), consonants_.end(), c) == consonants_.end()) pool.push_back(c);
    const std::size_t remaining = n_consonants > consonants_.size() ? n_consonants - consonants_.size() : 0;
    for (auto& c : sample_without_replacement(pool, remaining, rng_)) consonants_.push_back(c);
    std::sort(consonants_.begin(), consonants_.end());

    if (spec.harmony) {
      const std::size_t per_class = 2 + static_cast<std::size_t>(rng_.uniform_index(3));
      for (auto& v : sample_without_replacement(kFrontVowels, per_class, rng_)) vowels_.push_back(v);
      for (auto& v : sample_without_replacement(kBackVowels, per_class, rng_)) vowels_.push_back(v);
    } else {
      std::vector<std::string> all = kFrontVowels;
      all.insert(all.end(), kBackVowels.begin(), kBackVowels.end());
      vowels_ = sample_without_replacement(all, 3 + static_cast<std::size_t>(rng_.uniform_index(5)), rng_);
    }
    std::sort(vowels_.begin(), vowels_.end());

    initial_consonant_ = zipf_row(consonants_.size(), 0.5 * exponent, rng_);
    for (std::size_t v = 0; v < vowels_.size(); ++v)
      consonant_after_vowel_.push_back(zipf_row(consonants_.size(), exponent, rng_));
    const double vowel_exponent = zipf_exponent_for(vowels_.size(), kVowelEntropy);
    for (std::size_t c = 0; c < consonants_.size(); ++c)
      vowel_after_consonant_.push_back(zipf_row(vowels_.size(), vowel_exponent, rng_));

    coda_rate_ = spec.final_devoicing ? 0.5 : 0.3;
    const double bits = config.bits_per_word * (1.0 + rng_.uniform(-kBitsPerWordJitter, kBitsPerWordJitter));
    Rng calibration(derive_seed(config.seed, spec.id, 1));
    mean_syllables_ = std::max(1.0, bits / syllable_entropy(calibration));
  }

  Rng& rng() { return rng_; }

  struct Form {
    std::vector<Segment> segments;
    std::string orthography;
  };

  Form word() {
    const auto n_syllables =
        static_cast<int>(std::max(1L, std::lround(mean_syllables_ + rng_.uniform(-1.0, 1.0))));
    double unused = 0.0;
    std::size_t last_vowel = 0;
    auto out = syllables(rng_, n_syllables, last_vowel, unused);

    std::string underlying_final;
    if (rng_.bernoulli(coda_rate_)) {
      auto row = consonant_after_vowel_[last_vowel];
      if (spec_.final_devoicing)
        for (std::size_t c = 0; c < consonants_.size(); ++c) row[c] = kVoicing.count(consonants_[c]) ? 1.0 : 0.0;
      const std::string coda = consonants_[rng_.categorical(row)];
      out.push_back(coda);
      underlying_final = coda;
      if (spec_.final_devoicing && voicing_contrast(coda) && rng_.bernoulli(0.5)) underlying_final = kVoicing.at(coda);
    }

    Form form;
    for (const auto& s : out) form.segments.emplace_back(s);
    if (spec_.final_devoicing) {
      for (std::size_t i = 0; i < out.size(); ++i) {
        const bool last = i + 1 == out.size();
        form.orthography += spell(last && !underlying_final.empty() ? underlying_final : out[i], spec_.id, last);
      }
      form.orthography[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(form.orthography[0])));
    }
    return form;
  }

 private:
  // Onsets and nuclei of one word; `bits` accumulates -log2 of every draw.
  std::vector<std::string> syllables(Rng& rng, int n_syllables, std::size_t& last_vowel, double& bits) const {
    std::vector<std::string> out;
    int harmony_class = -1;
    for (int s = 0; s < n_syllables; ++s) {
      std::size_t vowel = 0;
      if (s == 0 && rng.bernoulli(kOnsetlessRate)) {
        vowel = draw_vowel(rng, std::vector<double>(vowels_.size(), 1.0), harmony_class, bits);
      } else {
        const auto& row = s == 0 ? initial_consonant_ : consonant_after_vowel_[last_vowel];
        const std::size_t c = draw(rng, row, bits);
        out.push_back(consonants_[c]);
        vowel = draw_vowel(rng, vowel_after_consonant_[c], harmony_class, bits);
      }
      out.push_back(vowels_[vowel]);
      last_vowel = vowel;
    }
    return out;
  }

  // Mean bits per syllable of the generator, by sampling four-syllable words.
  double syllable_entropy(Rng& rng) const {
    constexpr int kWords = 4000, kSyllables = 4;
    double bits = 0.0;
    std::size_t last = 0;
    for (int i = 0; i < kWords; ++i) syllables(rng, kSyllables, last, bits);
    return bits / (kWords * kSyllables);
  }

  static std::size_t draw(Rng& rng, const std::vector<double>& row, double& bits) {
    const std::size_t i = rng.categorical(row);
    double total = 0.0;
    for (double w : row) total += w;
    bits -= std::log2(row[i] / total);
    return i;
  }

  // Dutch spelling only keeps the underlying voicing of final b and d.
  bool voicing_contrast(const std::string& coda) const { return spec_.id != "nld" || coda == "p" || coda == "t"; }

  int vowel_class(std::size_t v) const {
    const auto& s = vowels_[v];
    return std::find(kFrontVowels.begin(), kFrontVowels.end(), s) != kFrontVowels.end() ? 0 : 1;
  }

  std::size_t draw_vowel(Rng& rng, std::vector<double> row, int& harmony_class, double& bits) const {
    if (spec_.harmony && harmony_class >= 0)
      for (std::size_t v = 0; v < vowels_.size(); ++v)
        if (vowel_class(v) != harmony_class) row[v] = 0.0;
    const std::size_t v = draw(rng, row, bits);
    if (spec_.harmony && harmony_class < 0) harmony_class = vowel_class(v);
    return v;
  }

  const SynthLanguage& spec_;
  Rng rng_;
  std::vector<std::string> consonants_;
  std::vector<std::string> vowels_;
  std::vector<double> initial_consonant_;
  std::vector<std::vector<double>> consonant_after_vowel_;
  std::vector<std::vector<double>> vowel_after_consonant_;
  double coda_rate_ = 0.3;
  double mean_syllables_ = 2.0;
};

std::vector<SynthLanguage> family(const std::string& name, double center,
                                  const std::vector<std::pair<std::string, char>>& members, Rng& rng) {
  std::vector<std::size_t> rank(members.size());
  for (std::size_t i = 0; i < rank.size(); ++i) rank[i] = i;
  rng.shuffle(rank);
  std::vector<SynthLanguage> out;
  const double n = static_cast<double>(members.size());
  for (std::size_t i = 0; i < members.size(); ++i) {
    SynthLanguage l;
    l.id = members[i].first;
    l.family = name;
    const double spread = 0.4 * ((static_cast<double>(rank[i]) + 0.5) / n - 0.5);
    l.knob = std::clamp(center + spread + rng.uniform(-0.03, 0.03), 0.02, 0.98);
    l.harmony = members[i].second == 'h';
    l.final_devoicing = members[i].second == 'd';
    out.push_back(l);
  }
  return out;
}

}  // namespace

SynthConfig SynthConfig::standard() {
  SynthConfig c;
  Rng rng(0x5eed);
  const auto add = [&](const std::string& name, double center, const std::vector<std::pair<std::string, char>>& m) {
    for (auto& l : family(name, center, m, rng)) c.languages.push_back(l);
  };
  add("Indo-European", 0.55, {{"deu", 'd'}, {"nld", 'd'}, {"eng", '-'}, {"rus", '-'}, {"spa", '-'}});
  add("Uralic", 0.35, {{"fin", 'h'}, {"hun", 'h'}, {"mhr", 'h'}, {"myv", 'h'}, {"ekk", '-'}});
  add("Turkic", 0.45, {{"tur", 'h'}, {"tat", '-'}, {"bak", '-'}, {"kaz", '-'}});
  add("Mongolic", 0.30, {{"khk", 'h'}, {"bua", 'h'}, {"xal", '-'}});
  add("Tungusic", 0.25, {{"evn", 'h'}, {"mnc", 'h'}, {"eve", '-'}, {"gld", '-'}});
  add("Dravidian", 0.70, {{"tel", 'h'}, {"tam", '-'}, {"kan", '-'}, {"mal", '-'}});
  add("Chukotko-Kamchatkan", 0.60, {{"ckt", 'h'}, {"itl", '-'}});
  add("Sino-Tibetan", 0.80, {{"cmn", '-'}});
  return c;
}

SynthConfig SynthConfig::toy() {
  SynthConfig c;
  c.n_concepts = 60;
  c.languages = {{"deu", "Indo-European", 0.55, false, true},
                 {"fin", "Uralic", 0.30, true, false},
                 {"tel", "Dravidian", 0.75, true, false}};
  return c;
}

SynthCorpus generate_synthetic(const SynthConfig& config) {
  std::vector<LexiconEntry> entries;
  SynthCorpus out;
  for (const auto& lang : config.languages) {
    out.families[lang.id] = lang.family;
    LanguageGenerator gen(lang, config);
    for (std::size_t c = 0; c < config.n_concepts; ++c) {
      char concept_id[16];
      std::snprintf(concept_id, sizeof concept_id, "c%03zu", c + 1);
      if (gen.rng().bernoulli(config.missing_rate)) continue;
      const int forms = gen.rng().bernoulli(config.variant_rate) ? 2 : 1;
      for (int f = 0; f < forms; ++f) {
        auto form = gen.word();
        std::optional<std::string> orthography;
        if (lang.final_devoicing) orthography = form.orthography;
        entries.push_back({lang.id, concept_id, Word(std::move(form.segments)), std::move(orthography)});
      }
    }
  }
  out.lexicon = Lexicon::from_entries(std::move(entries));
  return out;
}

}  // namespace phono
