#pragma once

// Corpus acquisition: download or copy into a local cache, verify the
// SHA-256 digest, and convert to the lexicon TSV schema.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>

namespace phono {

class FetchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// $PHONO_CACHE_DIR, else $HOME/.cache/phono.
std::filesystem::path cache_directory();

struct CachedFile {
  std::filesystem::path path;
  std::string sha256;
  bool from_cache = false;
};

// Copies a local file or downloads an http(s) URL into `cache_dir`. A cached
// copy is reused without touching the network; its digest is checked
// against `expected_sha256` or, if none is given, against the digest
// recorded when it was first stored. Nothing is left in the cache when the
// check fails.
CachedFile cache_source(const std::string& source, const std::filesystem::path& cache_dir,
                        const std::optional<std::string>& expected_sha256 = std::nullopt, bool offline = false);

// NorthEuraLex forms table (Language_ID, Concept_ID, IPA, Word_Form) or an
// already converted table -> `language_id concept_id ipa orthography`.
void convert_forms(std::istream& in, std::ostream& out);

// NorthEuraLex language table (iso_code, family) -> family map CSV.
void convert_language_table(std::istream& in, std::ostream& out);

struct FetchOptions {
  std::string source;
  std::optional<std::string> sha256;
  std::optional<std::string> languages_source;
  std::filesystem::path cache_dir = cache_directory();
  std::filesystem::path out_dir;
  bool offline = false;
};

struct FetchResult {
  std::filesystem::path lexicon;                 // out_dir/lexicon.tsv
  std::optional<std::filesystem::path> families;  // out_dir/families.csv
  std::string sha256;
  bool from_cache = false;
};

FetchResult fetch_data(const FetchOptions& options);

}  // namespace phono
