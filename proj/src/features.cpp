#include "phono/features.hpp"

#include <fstream>
#include <istream>
#include <set>

#include "phono/utf8.hpp"

namespace phono {

namespace {

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

std::size_t reserved_slot(const FeatureTable& table, ReservedAttribute a) {
  return table.attributes().size() + static_cast<std::size_t>(a);
}

std::optional<ReservedAttribute> mark_attribute(char32_t cp) {
  switch (cp) {
    case 0x02D0:  // ː
    case 0x02D1:  // ˑ
      return ReservedAttribute::Length;
    case 0x02B2:  // ʲ
      return ReservedAttribute::Palatalized;
    case 0x02B0:  // ʰ
      return ReservedAttribute::Aspirated;
    case 0x0361:
    case 0x035C:
      return ReservedAttribute::Tie;
    default:
      return std::nullopt;
  }
}

FeatureVector widen(const FeatureTable& table, const FeatureVector& row) {
  FeatureVector v(table.width(), 0);
  std::copy(row.begin(), row.end(), v.begin());
  return v;
}

std::optional<FeatureVector> resolve(const FeatureTable& table, std::string_view symbol) {
  if (symbol == kBosSymbol || symbol == kEosSymbol) {
    FeatureVector v(table.width(), 0);
    v[reserved_slot(table, symbol == kBosSymbol ? ReservedAttribute::Bos : ReservedAttribute::Eos)] = 1;
    return v;
  }
  if (const auto* row = table.row(symbol)) return widen(table, *row);

  const auto cps = utf8::decode(symbol);
  std::u32string with_tie;  // marks stripped, tie bars kept
  std::vector<std::u32string> bases;
  std::set<ReservedAttribute> removed;
  bool has_tie = false;
  for (char32_t cp : cps) {
    if (utf8::is_tie_bar(cp)) {
      has_tie = true;
      with_tie.push_back(cp);
    } else if (utf8::attaches_to_previous(cp)) {
      if (auto a = mark_attribute(cp)) removed.insert(*a);
    } else {
      with_tie.push_back(cp);
      bases.emplace_back(1, cp);
    }
  }
  if (bases.empty()) return std::nullopt;

  auto finish = [&](FeatureVector v, bool set_tie) {
    for (auto a : removed)
      if (a != ReservedAttribute::Tie) v[reserved_slot(table, a)] = 1;
    if (set_tie) v[reserved_slot(table, ReservedAttribute::Tie)] = 1;
    return v;
  };

  if (const auto* row = table.row(utf8::encode(with_tie))) return finish(widen(table, *row), false);

  // Tie-joined clusters absent from the table: union of the parts.
  if (has_tie || bases.size() > 1) {
    FeatureVector v(table.width(), 0);
    for (const auto& b : bases) {
      const auto* row = table.row(utf8::encode(b));
      if (!row) return std::nullopt;
      for (std::size_t k = 0; k < row->size(); ++k) v[k] |= (*row)[k];
    }
    return finish(std::move(v), true);
  }
  return std::nullopt;
}

}  // namespace

FeatureTable::FeatureTable(std::vector<std::string> attributes, std::map<std::string, FeatureVector, std::less<>> rows)
    : attributes_(std::move(attributes)), rows_(std::move(rows)) {
  if (attributes_.empty()) throw FeatureError("feature table has no attributes");
  for (const auto& [phoneme, v] : rows_)
    if (v.size() != attributes_.size()) throw FeatureError("feature row for '" + phoneme + "' has the wrong width");
}

std::vector<std::string> FeatureTable::all_attribute_names() const {
  auto names = attributes_;
  for (auto n : kReservedAttributeNames) names.emplace_back(n);
  return names;
}

const FeatureVector* FeatureTable::row(std::string_view phoneme) const {
  auto it = rows_.find(phoneme);
  return it == rows_.end() ? nullptr : &it->second;
}

std::optional<std::size_t> FeatureTable::attribute_index(std::string_view name) const {
  const auto all = all_attribute_names();
  for (std::size_t i = 0; i < all.size(); ++i)
    if (all[i] == name) return i;
  return std::nullopt;
}

LoadedFeatureTable read_feature_table(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> attributes;
  std::map<std::string, FeatureVector, std::less<>> rows;
  std::vector<std::string> warnings;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_commas(line);
    if (attributes.empty()) {
      if (cells.empty() || cells[0] != "phoneme")
        throw FeatureError(source + ":" + std::to_string(line_no) + ": header must start with 'phoneme'");
      if (cells.size() < 2) throw FeatureError(source + ": feature table has no attributes");
      attributes.assign(cells.begin() + 1, cells.end());
      continue;
    }
    if (cells.size() != attributes.size() + 1)
      throw FeatureError(source + ":" + std::to_string(line_no) + ": ragged row, expected " +
                         std::to_string(attributes.size() + 1) + " cells, got " + std::to_string(cells.size()));
    FeatureVector v(attributes.size(), 0);
    for (std::size_t k = 0; k < attributes.size(); ++k) {
      const auto& cell = cells[k + 1];
      if (cell == "+")
        v[k] = 1;
      else if (cell != "-" && cell != "0")
        throw FeatureError(source + ":" + std::to_string(line_no) + ": invalid cell '" + cell + "'");
    }
    const auto& phoneme = cells[0];
    if (phoneme.empty()) throw FeatureError(source + ":" + std::to_string(line_no) + ": empty phoneme");
    if (rows.count(phoneme)) {
      warnings.push_back(source + ":" + std::to_string(line_no) + ": duplicate row for '" + phoneme +
                         "', keeping the first");
      continue;
    }
    rows.emplace(phoneme, std::move(v));
  }
  if (attributes.empty()) throw FeatureError(source + ": empty feature table");
  return {FeatureTable(std::move(attributes), std::move(rows)), std::move(warnings)};
}

LoadedFeatureTable load_feature_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FeatureError("cannot open feature table " + path.string());
  return read_feature_table(in, path.string());
}

FeatureVector feature_vector(const FeatureTable& table, std::string_view symbol) {
  if (auto v = resolve(table, symbol)) return std::move(*v);
  throw FeatureError("no features for segment '" + std::string(symbol) + "'");
}

FeatureVector feature_vector(const FeatureTable& table, const Segment& s) { return feature_vector(table, s.str()); }

void check_coverage(const FeatureTable& table, const std::vector<Vocabulary>& vocabularies) {
  std::set<std::string> missing;
  for (const auto& vocab : vocabularies)
    for (const auto& s : vocab.symbols())
      if (!resolve(table, s.str())) missing.insert(s.str() + " (" + vocab.language_id() + ")");
  if (missing.empty()) return;
  std::string msg = "feature table cannot resolve " + std::to_string(missing.size()) + " segment(s):";
  for (const auto& m : missing) msg += " " + m;
  throw FeatureError(msg);
}

bool has_attribute(const FeatureTable& table, const Segment& s, std::string_view attribute) {
  const auto idx = table.attribute_index(attribute);
  if (!idx) throw FeatureError("unknown attribute '" + std::string(attribute) + "'");
  return feature_vector(table, s)[*idx] != 0;
}

}  // namespace phono
