#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "phono/corpus.hpp"

namespace phono {

class FeatureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Attributes appended after the table's own columns. Boundaries get their
// own bits so every vector has at least one bit set; the rest record
// diacritics that the fallback strips off.
enum class ReservedAttribute : std::size_t { Bos, Eos, Length, Palatalized, Aspirated, Tie };
inline constexpr std::size_t kReservedAttributeCount = 6;
inline constexpr std::array<std::string_view, kReservedAttributeCount> kReservedAttributeNames = {
    "<bos>", "<eos>", "<length>", "<palatalized>", "<aspirated>", "<tie>"};

using FeatureVector = std::vector<std::uint8_t>;

/// Phoneme -> presence-only multi-hot attribute vector.
class FeatureTable {
 public:
  FeatureTable(std::vector<std::string> attributes, std::map<std::string, FeatureVector, std::less<>> rows);

  const std::vector<std::string>& attributes() const { return attributes_; }
  // Length of vectors returned by feature_vector (table attributes + reserved).
  std::size_t width() const { return attributes_.size() + kReservedAttributeCount; }
  std::vector<std::string> all_attribute_names() const;

  std::size_t size() const { return rows_.size(); }
  const FeatureVector* row(std::string_view phoneme) const;
  std::optional<std::size_t> attribute_index(std::string_view name) const;

 private:
  std::vector<std::string> attributes_;
  std::map<std::string, FeatureVector, std::less<>> rows_;
};

struct LoadedFeatureTable {
  FeatureTable table;
  std::vector<std::string> warnings;
};

// CSV with header `phoneme,attr1,...,attrK`; cells '+' (present), '-' or '0'.
LoadedFeatureTable read_feature_table(std::istream& in, const std::string& source = "<stream>");
LoadedFeatureTable load_feature_table(const std::filesystem::path& path);

// Full-width vector for a phoneme or a boundary symbol ("<s>", "</s>").
// Unlisted phonemes fall back to their base characters, with length,
// palatalization, aspiration and tie-bar marks mapped to reserved bits.
FeatureVector feature_vector(const FeatureTable& table, std::string_view symbol);
FeatureVector feature_vector(const FeatureTable& table, const Segment& s);

// Throws a FeatureError naming every segment (over all vocabularies) that
// feature_vector cannot resolve.
void check_coverage(const FeatureTable& table, const std::vector<Vocabulary>& vocabularies);

// True when the resolved vector has `attribute` set.
bool has_attribute(const FeatureTable& table, const Segment& s, std::string_view attribute);

}  // namespace phono
