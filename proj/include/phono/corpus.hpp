#pragma once

// Concept-aligned lexicon ingestion, IPA segmentation, per-language
// phoneme inventories and concept-level cross-validation folds.

#include <compare>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace phono {

inline constexpr std::string_view kBosSymbol = "<s>";
inline constexpr std::string_view kEosSymbol = "</s>";

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class SegmentMode { Pretokenized, Unicode };

SegmentMode parse_segment_mode(std::string_view name);
std::string_view to_string(SegmentMode mode);

/// One phoneme: a base character plus any diacritics, length marks or
/// tie-bar partner. Never empty, never whitespace, never a boundary symbol.
class Segment {
 public:
  explicit Segment(std::string symbol);

  const std::string& str() const { return symbol_; }

  auto operator<=>(const Segment&) const = default;

 private:
  std::string symbol_;
};

/// A surface form as a non-empty phoneme sequence (boundaries not stored).
class Word {
 public:
  explicit Word(std::vector<Segment> segments);

  const std::vector<Segment>& segments() const { return segments_; }
  std::size_t size() const { return segments_.size(); }
  const Segment& operator[](std::size_t i) const { return segments_[i]; }

  // Space-separated segments, the pretokenized TSV form.
  std::string to_string() const;

  auto operator<=>(const Word&) const = default;

 private:
  std::vector<Segment> segments_;
};

struct LexiconEntry {
  std::string language_id;
  std::string concept_id;
  Word word;
  std::optional<std::string> orthography;

  bool operator==(const LexiconEntry&) const = default;
};

/// Immutable, deduplicated set of entries ordered by (language, concept, word).
class Lexicon {
 public:
  Lexicon() = default;

  // Collapses entries sharing (language, concept, word); the first
  // occurrence (and its orthography) wins.
  static Lexicon from_entries(std::vector<LexiconEntry> entries, std::size_t* duplicates = nullptr);

  const std::vector<LexiconEntry>& entries() const { return entries_; }
  const std::set<std::string>& languages() const { return languages_; }
  const std::set<std::string>& concepts() const { return concepts_; }
  std::size_t size() const { return entries_.size(); }
  bool has_language(std::string_view language) const;

  std::vector<const LexiconEntry*> entries_for(std::string_view language) const;

  // Copy with only the given language's entries replaced.
  Lexicon with_language_entries(std::string_view language, std::vector<LexiconEntry> replacement) const;

  bool operator==(const Lexicon&) const = default;

 private:
  std::vector<LexiconEntry> entries_;
  std::set<std::string> languages_;
  std::set<std::string> concepts_;
};

struct LoadReport {
  std::string source;
  std::size_t rows = 0;
  std::size_t duplicates = 0;
  std::size_t excluded_rows = 0;
  std::set<std::string> languages_before_exclusion;
  std::map<std::string, std::size_t> words_per_language;
  // Line numbers whose orthography or raw IPA contains internal whitespace.
  std::vector<std::size_t> multiword_lines;
};

struct LoadedLexicon {
  Lexicon lexicon;
  LoadReport report;
};

std::vector<Segment> segment_ipa(std::string_view raw, SegmentMode mode);

LoadedLexicon read_lexicon(std::istream& in, SegmentMode mode, const std::set<std::string>& exclude,
                           std::string source = "<stream>");
LoadedLexicon load_lexicon(const std::filesystem::path& path, SegmentMode mode,
                           const std::set<std::string>& exclude = {});

// Writes the TSV schema with pretokenized IPA; read_lexicon in pretokenized
// mode restores an identical Lexicon.
void write_lexicon(std::ostream& out, const Lexicon& lexicon);
void save_lexicon(const std::filesystem::path& path, const Lexicon& lexicon);

using SymbolId = std::uint32_t;

/// Phoneme inventory of one language. Ids 0..size()-1 are phonemes in sorted
/// order, size() is end-of-word and size()+1 is beginning-of-word.
class Vocabulary {
 public:
  Vocabulary(std::string language_id, std::vector<Segment> symbols);

  const std::string& language_id() const { return language_id_; }
  const std::vector<Segment>& symbols() const { return symbols_; }
  std::size_t size() const { return symbols_.size(); }
  SymbolId eos() const { return static_cast<SymbolId>(symbols_.size()); }
  SymbolId bos() const { return static_cast<SymbolId>(symbols_.size() + 1); }
  // Outcomes of a next-symbol distribution: phonemes plus eos.
  std::size_t n_outcomes() const { return symbols_.size() + 1; }

  std::optional<SymbolId> find(const Segment& s) const;
  SymbolId id(const Segment& s) const;
  std::string name(SymbolId id) const;
  std::vector<SymbolId> encode(const Word& word) const;
  std::uint64_t fingerprint() const;

  bool operator==(const Vocabulary& other) const {
    return language_id_ == other.language_id_ && symbols_ == other.symbols_;
  }

 private:
  std::string language_id_;
  std::vector<Segment> symbols_;
  std::map<std::string, SymbolId, std::less<>> index_;
};

Vocabulary build_vocabulary(const Lexicon& lexicon, std::string_view language);

enum class FoldRole { Train, Dev, Test };

class FoldAssignment {
 public:
  FoldAssignment(std::size_t n_folds, std::uint64_t seed, std::map<std::string, std::size_t> assignment);

  std::size_t n_folds() const { return n_folds_; }
  std::uint64_t seed() const { return seed_; }
  const std::map<std::string, std::size_t>& assignment() const { return assignment_; }

  std::size_t fold_of(const std::string& concept_id) const;
  std::vector<std::string> concepts_in(std::size_t fold) const;

  // Rotation r: test = fold r, dev = fold (r+1) mod n, train = the rest.
  FoldRole role(const std::string& concept_id, std::size_t rotation) const;

  bool operator==(const FoldAssignment&) const = default;

 private:
  std::size_t n_folds_;
  std::uint64_t seed_;
  std::map<std::string, std::size_t> assignment_;
};

FoldAssignment make_folds(const Lexicon& lexicon, std::size_t n_folds, std::uint64_t seed);

void save_folds(const std::filesystem::path& path, const FoldAssignment& folds);
FoldAssignment load_folds(const std::filesystem::path& path);

struct LanguageSplit {
  std::vector<const LexiconEntry*> train;
  std::vector<const LexiconEntry*> dev;
  std::vector<const LexiconEntry*> test;
};

LanguageSplit split_language(const Lexicon& lexicon, const FoldAssignment& folds, std::string_view language,
                             std::size_t rotation);

}  // namespace phono
