#include "phono/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "phono/random.hpp"
#include "phono/utf8.hpp"

namespace phono {

namespace {

bool contains_whitespace(std::string_view s) {
  for (char32_t cp : utf8::decode(s))
    if (utf8::is_whitespace(cp)) return true;
  return false;
}

std::vector<std::string> split_tabs(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      fields.emplace_back(line.substr(start));
      break;
    }
    fields.emplace_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  return fields;
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::string error_at(const std::string& source, std::size_t line, const std::string& what) {
  return source + ":" + std::to_string(line) + ": " + what;
}

}  // namespace

SegmentMode parse_segment_mode(std::string_view name) {
  if (name == "pretokenized") return SegmentMode::Pretokenized;
  if (name == "unicode") return SegmentMode::Unicode;
  throw CorpusError("unknown segmentation mode '" + std::string(name) + "' (expected pretokenized or unicode)");
}

std::string_view to_string(SegmentMode mode) {
  return mode == SegmentMode::Pretokenized ? "pretokenized" : "unicode";
}

Segment::Segment(std::string symbol) : symbol_(std::move(symbol)) {
  if (symbol_.empty()) throw CorpusError("empty segment");
  if (symbol_ == kBosSymbol || symbol_ == kEosSymbol) throw CorpusError("segment equals a boundary symbol: " + symbol_);
  if (contains_whitespace(symbol_)) throw CorpusError("segment contains whitespace: '" + symbol_ + "'");
}

Word::Word(std::vector<Segment> segments) : segments_(std::move(segments)) {
  if (segments_.empty()) throw CorpusError("word must contain at least one segment");
}

std::string Word::to_string() const {
  std::string out;
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    if (i) out.push_back(' ');
    out += segments_[i].str();
  }
  return out;
}

Lexicon Lexicon::from_entries(std::vector<LexiconEntry> entries, std::size_t* duplicates) {
  // Stable sort keeps the first occurrence of a duplicate key in front.
  std::stable_sort(entries.begin(), entries.end(), [](const LexiconEntry& a, const LexiconEntry& b) {
    return std::tie(a.language_id, a.concept_id, a.word) < std::tie(b.language_id, b.concept_id, b.word);
  });
  Lexicon lex;
  std::size_t dups = 0;
  for (auto& e : entries) {
    if (!lex.entries_.empty()) {
      const auto& last = lex.entries_.back();
      if (last.language_id == e.language_id && last.concept_id == e.concept_id && last.word == e.word) {
        ++dups;
        continue;
      }
    }
    lex.languages_.insert(e.language_id);
    lex.concepts_.insert(e.concept_id);
    lex.entries_.push_back(std::move(e));
  }
  if (duplicates) *duplicates = dups;
  return lex;
}

bool Lexicon::has_language(std::string_view language) const { return languages_.count(std::string(language)) > 0; }

std::vector<const LexiconEntry*> Lexicon::entries_for(std::string_view language) const {
  std::vector<const LexiconEntry*> out;
  auto it = std::lower_bound(entries_.begin(), entries_.end(), language,
                             [](const LexiconEntry& e, std::string_view lang) { return e.language_id < lang; });
  for (; it != entries_.end() && it->language_id == language; ++it) out.push_back(&*it);
  return out;
}

Lexicon Lexicon::with_language_entries(std::string_view language, std::vector<LexiconEntry> replacement) const {
  std::vector<LexiconEntry> all;
  all.reserve(entries_.size());
  for (const auto& e : entries_)
    if (e.language_id != language) all.push_back(e);
  for (auto& e : replacement) {
    if (e.language_id != language) throw CorpusError("replacement entry belongs to another language: " + e.language_id);
    all.push_back(std::move(e));
  }
  return from_entries(std::move(all));
}

std::vector<Segment> segment_ipa(std::string_view raw, SegmentMode mode) {
  std::vector<Segment> out;
  if (mode == SegmentMode::Pretokenized) {
    std::string current;
    for (char32_t cp : utf8::decode(raw)) {
      if (utf8::is_whitespace(cp)) {
        if (!current.empty()) out.emplace_back(std::move(current));
        current.clear();
      } else {
        current += utf8::encode(cp);
      }
    }
    if (!current.empty()) out.emplace_back(std::move(current));
  } else {
    std::u32string current;
    bool join_next = false;
    for (char32_t cp : utf8::decode(raw)) {
      if (utf8::is_whitespace(cp)) {
        if (join_next) throw CorpusError("tie bar followed by whitespace in '" + std::string(raw) + "'");
        if (!current.empty()) out.emplace_back(utf8::encode(current));
        current.clear();
        continue;
      }
      if (utf8::is_tie_bar(cp)) {
        if (current.empty()) throw CorpusError("tie bar without a preceding base in '" + std::string(raw) + "'");
        current.push_back(cp);
        join_next = true;
      } else if (utf8::attaches_to_previous(cp)) {
        if (current.empty())
          throw CorpusError("combining mark or modifier without a preceding base in '" + std::string(raw) + "'");
        current.push_back(cp);
      } else if (join_next) {
        current.push_back(cp);
        join_next = false;
      } else {
        if (!current.empty()) out.emplace_back(utf8::encode(current));
        current.assign(1, cp);
      }
    }
    if (join_next) throw CorpusError("dangling tie bar in '" + std::string(raw) + "'");
    if (!current.empty()) out.emplace_back(utf8::encode(current));
  }
  if (out.empty()) throw CorpusError("IPA field contains no segments: '" + std::string(raw) + "'");
  return out;
}

LoadedLexicon read_lexicon(std::istream& in, SegmentMode mode, const std::set<std::string>& exclude,
                           std::string source) {
  LoadReport report;
  report.source = source;
  std::string line;
  std::size_t line_no = 0;
  std::size_t columns = 0;
  std::vector<LexiconEntry> entries;

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      const auto header = split_tabs(line);
      if (header.size() < 3 || header.size() > 4 || header[0] != "language_id" || header[1] != "concept_id" ||
          header[2] != "ipa" || (header.size() == 4 && header[3] != "orthography"))
        throw CorpusError(error_at(source, line_no, "expected header 'language_id\\tconcept_id\\tipa[\\torthography]'"));
      columns = header.size();
      continue;
    }
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != columns)
      throw CorpusError(error_at(source, line_no,
                                 "expected " + std::to_string(columns) + " columns, got " + std::to_string(fields.size())));
    ++report.rows;
    const std::string language = trim(fields[0]);
    const std::string concept_id = trim(fields[1]);
    if (language.empty() || concept_id.empty())
      throw CorpusError(error_at(source, line_no, "empty language_id or concept_id"));
    report.languages_before_exclusion.insert(language);
    if (exclude.count(language)) {
      ++report.excluded_rows;
      continue;
    }
    const std::string ipa = trim(fields[2]);
    if (ipa.empty()) throw CorpusError(error_at(source, line_no, "empty IPA field"));
    std::optional<std::string> orthography;
    if (columns == 4) {
      auto o = trim(fields[3]);
      if (!o.empty()) orthography = std::move(o);
    }
    if ((orthography && contains_whitespace(*orthography)) ||
        (mode == SegmentMode::Unicode && contains_whitespace(ipa)))
      report.multiword_lines.push_back(line_no);

    std::vector<Segment> segments;
    try {
      segments = segment_ipa(ipa, mode);
    } catch (const std::exception& e) {
      throw CorpusError(error_at(source, line_no, e.what()));
    }
    entries.push_back({language, concept_id, Word(std::move(segments)), std::move(orthography)});
  }
  if (line_no == 0) throw CorpusError(source + ": empty lexicon file (missing header)");

  LoadedLexicon result{Lexicon::from_entries(std::move(entries), &report.duplicates), std::move(report)};
  for (const auto& e : result.lexicon.entries()) ++result.report.words_per_language[e.language_id];
  return result;
}

LoadedLexicon load_lexicon(const std::filesystem::path& path, SegmentMode mode, const std::set<std::string>& exclude) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open lexicon file " + path.string());
  return read_lexicon(in, mode, exclude, path.string());
}

void write_lexicon(std::ostream& out, const Lexicon& lexicon) {
  out << "language_id\tconcept_id\tipa\torthography\n";
  for (const auto& e : lexicon.entries())
    out << e.language_id << '\t' << e.concept_id << '\t' << e.word.to_string() << '\t' << e.orthography.value_or("")
        << '\n';
}

void save_lexicon(const std::filesystem::path& path, const Lexicon& lexicon) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write lexicon file " + path.string());
  write_lexicon(out, lexicon);
}

Vocabulary::Vocabulary(std::string language_id, std::vector<Segment> symbols)
    : language_id_(std::move(language_id)), symbols_(std::move(symbols)) {
  std::sort(symbols_.begin(), symbols_.end());
  symbols_.erase(std::unique(symbols_.begin(), symbols_.end()), symbols_.end());
  for (std::size_t i = 0; i < symbols_.size(); ++i) index_.emplace(symbols_[i].str(), static_cast<SymbolId>(i));
}

std::optional<SymbolId> Vocabulary::find(const Segment& s) const {
  auto it = index_.find(s.str());
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

SymbolId Vocabulary::id(const Segment& s) const {
  if (auto found = find(s)) return *found;
  throw CorpusError("segment '" + s.str() + "' is not in the vocabulary of " + language_id_);
}

std::string Vocabulary::name(SymbolId id) const {
  if (id < symbols_.size()) return symbols_[id].str();
  if (id == eos()) return std::string(kEosSymbol);
  if (id == bos()) return std::string(kBosSymbol);
  throw CorpusError("symbol id out of range: " + std::to_string(id));
}

std::vector<SymbolId> Vocabulary::encode(const Word& word) const {
  std::vector<SymbolId> ids;
  ids.reserve(word.size());
  for (const auto& s : word.segments()) ids.push_back(id(s));
  return ids;
}

std::uint64_t Vocabulary::fingerprint() const {
  std::uint64_t h = fnv1a64(language_id_);
  for (const auto& s : symbols_) {
    h = fnv1a64(s.str(), h);
    h = fnv1a64("\x1f", h);
  }
  return h;
}

Vocabulary build_vocabulary(const Lexicon& lexicon, std::string_view language) {
  const auto entries = lexicon.entries_for(language);
  if (entries.empty()) throw CorpusError("language not in lexicon: " + std::string(language));
  std::vector<Segment> symbols;
  for (const auto* e : entries)
    for (const auto& s : e->word.segments()) symbols.push_back(s);
  return Vocabulary(std::string(language), std::move(symbols));
}

FoldAssignment::FoldAssignment(std::size_t n_folds, std::uint64_t seed, std::map<std::string, std::size_t> assignment)
    : n_folds_(n_folds), seed_(seed), assignment_(std::move(assignment)) {
  if (n_folds_ < 3) throw CorpusError("need at least 3 folds (train/dev/test)");
  for (const auto& [concept_id, fold] : assignment_)
    if (fold >= n_folds_) throw CorpusError("fold index out of range for concept " + concept_id);
}

std::size_t FoldAssignment::fold_of(const std::string& concept_id) const {
  auto it = assignment_.find(concept_id);
  if (it == assignment_.end()) throw CorpusError("concept not in fold assignment: " + concept_id);
  return it->second;
}

std::vector<std::string> FoldAssignment::concepts_in(std::size_t fold) const {
  std::vector<std::string> out;
  for (const auto& [concept_id, f] : assignment_)
    if (f == fold) out.push_back(concept_id);
  return out;
}

FoldRole FoldAssignment::role(const std::string& concept_id, std::size_t rotation) const {
  const auto fold = fold_of(concept_id);
  if (fold == rotation % n_folds_) return FoldRole::Test;
  if (fold == (rotation + 1) % n_folds_) return FoldRole::Dev;
  return FoldRole::Train;
}

FoldAssignment make_folds(const Lexicon& lexicon, std::size_t n_folds, std::uint64_t seed) {
  if (n_folds < 3) throw CorpusError("need at least 3 folds (train/dev/test)");
  std::vector<std::string> concepts(lexicon.concepts().begin(), lexicon.concepts().end());
  if (n_folds > concepts.size())
    throw CorpusError("more folds (" + std::to_string(n_folds) + ") than concepts (" +
                      std::to_string(concepts.size()) + ")");
  Rng rng(seed);
  rng.shuffle(concepts);
  std::map<std::string, std::size_t> assignment;
  for (std::size_t i = 0; i < concepts.size(); ++i) assignment.emplace(concepts[i], i % n_folds);
  return FoldAssignment(n_folds, seed, std::move(assignment));
}

void save_folds(const std::filesystem::path& path, const FoldAssignment& folds) {
  nlohmann::ordered_json j;
  j["format_version"] = 1;
  j["n_folds"] = folds.n_folds();
  j["seed"] = folds.seed();
  j["assignment"] = folds.assignment();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write folds file " + path.string());
  out << j.dump(1) << '\n';
}

FoldAssignment load_folds(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open folds file " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    return FoldAssignment(j.at("n_folds").get<std::size_t>(), j.at("seed").get<std::uint64_t>(),
                          j.at("assignment").get<std::map<std::string, std::size_t>>());
  } catch (const nlohmann::json::exception& e) {
    throw CorpusError("malformed folds file " + path.string() + ": " + e.what());
  }
}

LanguageSplit split_language(const Lexicon& lexicon, const FoldAssignment& folds, std::string_view language,
                             std::size_t rotation) {
  if (rotation >= folds.n_folds()) throw CorpusError("rotation out of range: " + std::to_string(rotation));
  LanguageSplit split;
  for (const auto* e : lexicon.entries_for(language)) {
    switch (folds.role(e->concept_id, rotation)) {
      case FoldRole::Train: split.train.push_back(e); break;
      case FoldRole::Dev: split.dev.push_back(e); break;
      case FoldRole::Test: split.test.push_back(e); break;
    }
  }
  return split;
}

}  // namespace phono
