#pragma once

// Correlations with t-approximation p-values, paired and language-label
// permutation tests, family-level aggregation, inventory-size baselines and
// kernel density summaries.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "phono/complexity.hpp"
#include "phono/corpus.hpp"
#include "phono/features.hpp"

namespace phono {

class StatsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class CorrelationMethod { Pearson, Spearman };
std::string_view to_string(CorrelationMethod m);

struct CorrelationResult {
  CorrelationMethod method = CorrelationMethod::Pearson;
  double r = 0.0;
  std::size_t n = 0;
  double p_value = 1.0;  // two-sided, t distribution with n - 2 df
};

// Both require n >= 3 and non-zero variance in x and y.
CorrelationResult pearson(std::span<const double> x, std::span<const double> y);
CorrelationResult spearman(std::span<const double> x, std::span<const double> y);
CorrelationResult correlate(CorrelationMethod m, std::span<const double> x, std::span<const double> y);

// 1-based ranks; ties share the mean of the ranks they span.
std::vector<double> fractional_ranks(std::span<const double> x);

struct PermutationResult {
  double observed = 0.0;
  std::size_t n_resamples = 0;
  double p_value = 1.0;  // (1 + #extreme) / (1 + n_resamples)
  std::uint64_t seed = 0;
};

// Mean of a - b against independent sign flips of each difference; two-sided.
PermutationResult paired_permutation(std::span<const double> a, std::span<const double> b, std::size_t n_resamples,
                                     std::uint64_t seed);

// Correlation p-value from permuting y (two-sided); for small samples.
PermutationResult permutation_correlation(CorrelationMethod m, std::span<const double> x, std::span<const double> y,
                                          std::size_t n_resamples, std::uint64_t seed);

struct WordPoint {
  std::string language_id;
  double length = 0.0;
  double bits_per_phoneme = 0.0;
};

std::vector<WordPoint> word_points(const std::vector<WordScore>& scores);

struct FakeLanguageResult {
  PermutationResult test;  // p counts permutations with correlation <= observed
  double mean_permuted = 0.0;
  double min_permuted = 0.0;
};

// Reassigns words at random to pseudo-languages of the original sizes and
// recomputes the language-level length / bits-per-phoneme correlation.
FakeLanguageResult fake_language_test(const std::vector<WordPoint>& words, std::size_t n_permutations,
                                      std::uint64_t seed, CorrelationMethod method = CorrelationMethod::Spearman);

struct LanguageCorrelation {
  std::string language_id;
  CorrelationResult spearman;
};

struct PerWordCorrelations {
  CorrelationResult pooled_pearson;
  CorrelationResult pooled_spearman;
  double mean_language_spearman = 0.0;
  LanguageCorrelation min_language;
  std::vector<LanguageCorrelation> languages;  // languages with a defined correlation
};

PerWordCorrelations per_word_correlation(const std::vector<WordPoint>& words);

using FamilyMap = std::map<std::string, std::string>;  // language -> family

FamilyMap read_family_map(const std::filesystem::path& path);  // CSV language_id,family

struct FamilyRecord {
  std::string family;
  std::size_t n_languages = 0;
  double bits_per_phoneme = 0.0;
  double avg_word_len = 0.0;
};

struct FamilyAggregate {
  std::vector<FamilyRecord> families;
  CorrelationResult pearson;
  CorrelationResult spearman;
};

FamilyAggregate family_aggregate(const std::vector<ComplexityRecord>& records, const FamilyMap& families);

struct FamilyCorrelation {
  std::string family;
  std::size_t n_languages = 0;
  CorrelationResult pearson;
  CorrelationResult spearman;
};

std::vector<FamilyCorrelation> intra_family(const std::vector<ComplexityRecord>& records, const FamilyMap& families,
                                            std::size_t min_size = 4);

struct InventoryCounts {
  std::string language_id;
  std::size_t phonemes = 0;
  std::size_t vowels = 0;
  std::size_t consonants = 0;
  double avg_word_len = 0.0;
};

struct InventoryBaselines {
  std::vector<InventoryCounts> languages;
  // Keyed by "phonemes", "vowels", "consonants"; absent when a count has
  // no variance across languages.
  std::map<std::string, CorrelationResult> pearson;
  std::map<std::string, CorrelationResult> spearman;
  std::vector<std::string> warnings;
};

// A segment is a vowel when its resolved feature vector has "syllabic".
// Unresolvable segments count as consonants and are listed in warnings.
InventoryBaselines inventory_baselines(const Lexicon& lexicon, const FeatureTable& features);

struct HistogramBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
};

struct DensitySummary {
  double bandwidth = 0.0;  // 0 for constant input
  std::vector<std::pair<double, double>> kde;
  std::vector<HistogramBin> hist10;
  std::vector<HistogramBin> hist100;
};

// Gaussian KDE with Silverman's bandwidth 0.9 min(sd, IQR/1.34) n^(-1/5)
// on a 512-point grid spanning three bandwidths past the data. Constant
// input yields a single spike and single-bin histograms.
DensitySummary density_summary(std::span<const double> values);
void write_density_csv(std::ostream& out, const DensitySummary& d, const std::string& manifest_id);

}  // namespace phono
