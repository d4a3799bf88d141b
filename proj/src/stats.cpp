#include "phono/stats.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <numeric>
#include <ostream>

#include "phono/csv.hpp"
#include "phono/random.hpp"

namespace phono {

std::string_view to_string(CorrelationMethod m) { return m == CorrelationMethod::Pearson ? "pearson" : "spearman"; }

namespace {

void check_inputs(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw StatsError("correlation inputs differ in length");
  if (x.size() < 3) throw StatsError("correlation needs at least 3 points");
  auto constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double a) { return a == v.front(); });
  };
  if (constant(x) || constant(y)) throw StatsError("correlation undefined for zero variance");
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw StatsError("correlation inputs must be finite");
}

double product_moment(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return 0.0;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double t_p_value(double r, std::size_t n) {
  if (n < 3) return 1.0;
  if (std::abs(r) >= 1.0) return 0.0;
  const double df = static_cast<double>(n - 2);
  const double t = r * std::sqrt(df / (1.0 - r * r));
  const boost::math::students_t dist(df);
  return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))));
}

}  // namespace

std::vector<double> fractional_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

CorrelationResult pearson(std::span<const double> x, std::span<const double> y) {
  check_inputs(x, y);
  const double r = product_moment(x, y);
  return {CorrelationMethod::Pearson, r, x.size(), t_p_value(r, x.size())};
}

CorrelationResult spearman(std::span<const double> x, std::span<const double> y) {
  check_inputs(x, y);
  const auto rx = fractional_ranks(x), ry = fractional_ranks(y);
  const double r = product_moment(rx, ry);
  return {CorrelationMethod::Spearman, r, x.size(), t_p_value(r, x.size())};
}

CorrelationResult correlate(CorrelationMethod m, std::span<const double> x, std::span<const double> y) {
  return m == CorrelationMethod::Pearson ? pearson(x, y) : spearman(x, y);
}

PermutationResult paired_permutation(std::span<const double> a, std::span<const double> b, std::size_t n_resamples,
                                     std::uint64_t seed) {
  if (a.size() != b.size()) throw StatsError("paired samples differ in length");
  if (a.size() < 10) throw StatsError("paired permutation needs at least 10 pairs");
  if (n_resamples < 100) throw StatsError("paired permutation needs at least 100 resamples");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double n = static_cast<double>(d.size());
  const double observed = std::accumulate(d.begin(), d.end(), 0.0) / n;
  const double threshold = std::abs(observed) * (1.0 - 1e-12);

  Rng rng(seed);
  std::size_t extreme = 0;
  for (std::size_t r = 0; r < n_resamples; ++r) {
    double sum = 0.0;
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (i % 64 == 0) bits = rng.next_u64();
      sum += (bits & 1) ? -d[i] : d[i];
      bits >>= 1;
    }
    if (std::abs(sum / n) >= threshold) ++extreme;
  }
  return {observed, n_resamples, static_cast<double>(1 + extreme) / static_cast<double>(1 + n_resamples), seed};
}

PermutationResult permutation_correlation(CorrelationMethod m, std::span<const double> x, std::span<const double> y,
                                          std::size_t n_resamples, std::uint64_t seed) {
  if (n_resamples < 100) throw StatsError("permutation test needs at least 100 resamples");
  const double observed = correlate(m, x, y).r;
  std::vector<double> shuffled(y.begin(), y.end());
  Rng rng(seed);
  std::size_t extreme = 0;
  const double threshold = std::abs(observed) * (1.0 - 1e-12);
  for (std::size_t r = 0; r < n_resamples; ++r) {
    rng.shuffle(shuffled);
    if (std::abs(correlate(m, x, shuffled).r) >= threshold) ++extreme;
  }
  return {observed, n_resamples, static_cast<double>(1 + extreme) / static_cast<double>(1 + n_resamples), seed};
}

std::vector<WordPoint> word_points(const std::vector<WordScore>& scores) {
  std::vector<WordPoint> out;
  out.reserve(scores.size());
  for (const auto& s : scores) out.push_back({s.language_id, static_cast<double>(s.length()), s.bits_per_phoneme()});
  return out;
}

namespace {

struct LanguageMeans {
  std::vector<double> length;
  std::vector<double> bits;
};

// Mean length and bits per consecutive group of `sizes` in `order`.
LanguageMeans group_means(const std::vector<WordPoint>& words, const std::vector<std::size_t>& order,
                          const std::vector<std::size_t>& sizes) {
  LanguageMeans m;
  std::size_t pos = 0;
  for (std::size_t size : sizes) {
    double len = 0.0, bits = 0.0;
    for (std::size_t i = 0; i < size; ++i, ++pos) {
      len += words[order[pos]].length;
      bits += words[order[pos]].bits_per_phoneme;
    }
    m.length.push_back(len / static_cast<double>(size));
    m.bits.push_back(bits / static_cast<double>(size));
  }
  return m;
}

}  // namespace

FakeLanguageResult fake_language_test(const std::vector<WordPoint>& words, std::size_t n_permutations,
                                      std::uint64_t seed, CorrelationMethod method) {
  if (n_permutations < 100) throw StatsError("fake-language test needs at least 100 permutations");
  std::map<std::string, std::vector<std::size_t>> by_language;
  for (std::size_t i = 0; i < words.size(); ++i) by_language[words[i].language_id].push_back(i);
  if (by_language.size() < 3) throw StatsError("fake-language test needs at least 3 languages");

  std::vector<std::size_t> order, sizes;
  for (const auto& [lang, idx] : by_language) {
    order.insert(order.end(), idx.begin(), idx.end());
    sizes.push_back(idx.size());
  }
  const auto observed_means = group_means(words, order, sizes);
  const double observed = correlate(method, observed_means.length, observed_means.bits).r;

  Rng rng(seed);
  std::size_t as_extreme = 0;
  double sum = 0.0, min = std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < n_permutations; ++p) {
    rng.shuffle(order);
    const auto m = group_means(words, order, sizes);
    double r = 0.0;
    try {
      r = correlate(method, m.length, m.bits).r;
    } catch (const StatsError&) {
      r = 0.0;  // all pseudo-languages identical
    }
    if (r <= observed) ++as_extreme;
    sum += r;
    min = std::min(min, r);
  }
  FakeLanguageResult out;
  out.test = {observed, n_permutations,
              static_cast<double>(1 + as_extreme) / static_cast<double>(1 + n_permutations), seed};
  out.mean_permuted = sum / static_cast<double>(n_permutations);
  out.min_permuted = min;
  return out;
}

PerWordCorrelations per_word_correlation(const std::vector<WordPoint>& words) {
  PerWordCorrelations out;
  std::vector<double> len, bits;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_language;
  for (const auto& w : words) {
    len.push_back(w.length);
    bits.push_back(w.bits_per_phoneme);
    by_language[w.language_id].first.push_back(w.length);
    by_language[w.language_id].second.push_back(w.bits_per_phoneme);
  }
  out.pooled_pearson = pearson(len, bits);
  out.pooled_spearman = spearman(len, bits);
  double sum = 0.0;
  for (const auto& [lang, xy] : by_language) {
    try {
      out.languages.push_back({lang, spearman(xy.first, xy.second)});
    } catch (const StatsError&) {
      continue;
    }
    sum += out.languages.back().spearman.r;
    if (out.languages.size() == 1 || out.languages.back().spearman.r < out.min_language.spearman.r)
      out.min_language = out.languages.back();
  }
  if (out.languages.empty()) throw StatsError("no language has a defined per-word correlation");
  out.mean_language_spearman = sum / static_cast<double>(out.languages.size());
  return out;
}

FamilyMap read_family_map(const std::filesystem::path& path) {
  const auto t = csv::read_file(path);
  const auto lang = t.column("language_id"), fam = t.column("family");
  FamilyMap out;
  for (const auto& row : t.rows) out[row[lang]] = row[fam];
  return out;
}

namespace {

std::map<std::string, std::vector<const ComplexityRecord*>> group_by_family(
    const std::vector<ComplexityRecord>& records, const FamilyMap& families) {
  std::map<std::string, std::vector<const ComplexityRecord*>> out;
  for (const auto& r : records) {
    if (r.model_id != records.front().model_id) throw StatsError("family statistics over mixed models");
    const auto it = families.find(r.language_id);
    if (it == families.end()) throw StatsError("language " + r.language_id + " has no family");
    out[it->second].push_back(&r);
  }
  return out;
}

}  // namespace

FamilyAggregate family_aggregate(const std::vector<ComplexityRecord>& records, const FamilyMap& families) {
  FamilyAggregate out;
  std::vector<double> len, bits;
  for (const auto& [family, members] : group_by_family(records, families)) {
    FamilyRecord f{family, members.size(), 0.0, 0.0};
    for (const auto* r : members) {
      f.bits_per_phoneme += r->bits_per_phoneme;
      f.avg_word_len += r->avg_word_len;
    }
    f.bits_per_phoneme /= static_cast<double>(members.size());
    f.avg_word_len /= static_cast<double>(members.size());
    out.families.push_back(f);
    len.push_back(f.avg_word_len);
    bits.push_back(f.bits_per_phoneme);
  }
  out.pearson = pearson(len, bits);
  out.spearman = spearman(len, bits);
  return out;
}

std::vector<FamilyCorrelation> intra_family(const std::vector<ComplexityRecord>& records, const FamilyMap& families,
                                            std::size_t min_size) {
  std::vector<FamilyCorrelation> out;
  for (const auto& [family, members] : group_by_family(records, families)) {
    if (members.size() < std::max<std::size_t>(min_size, 3)) continue;
    std::vector<double> len, bits;
    for (const auto* r : members) {
      len.push_back(r->avg_word_len);
      bits.push_back(r->bits_per_phoneme);
    }
    out.push_back({family, members.size(), pearson(len, bits), spearman(len, bits)});
  }
  return out;
}

InventoryBaselines inventory_baselines(const Lexicon& lexicon, const FeatureTable& features) {
  InventoryBaselines out;
  for (const auto& lang : lexicon.languages()) {
    const auto vocab = build_vocabulary(lexicon, lang);
    InventoryCounts c{lang, vocab.size(), 0, 0, 0.0};
    for (const auto& s : vocab.symbols()) {
      bool vowel = false;
      try {
        vowel = has_attribute(features, s, "syllabic");
      } catch (const FeatureError&) {
        out.warnings.push_back(lang + ": '" + s.str() + "' has no features; counted as a consonant");
      }
      ++(vowel ? c.vowels : c.consonants);
    }
    const auto entries = lexicon.entries_for(lang);
    for (const auto* e : entries) c.avg_word_len += static_cast<double>(e->word.size());
    c.avg_word_len /= static_cast<double>(entries.size());
    out.languages.push_back(c);
  }
  std::vector<double> len;
  std::map<std::string, std::vector<double>> counts;
  for (const auto& c : out.languages) {
    len.push_back(c.avg_word_len);
    counts["phonemes"].push_back(static_cast<double>(c.phonemes));
    counts["vowels"].push_back(static_cast<double>(c.vowels));
    counts["consonants"].push_back(static_cast<double>(c.consonants));
  }
  for (const auto& [name, values] : counts) {
    try {
      out.pearson[name] = pearson(values, len);
      out.spearman[name] = spearman(values, len);
    } catch (const StatsError& e) {
      out.warnings.push_back(name + " baseline: " + e.what());
    }
  }
  return out;
}

namespace {

double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::vector<HistogramBin> histogram(const std::vector<double>& sorted, std::size_t n_bins) {
  const double lo = sorted.front(), hi = sorted.back();
  if (lo == hi) return {{lo, hi, sorted.size()}};
  const double width = (hi - lo) / static_cast<double>(n_bins);
  std::vector<HistogramBin> bins(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b) {
    bins[b].lo = lo + width * static_cast<double>(b);
    bins[b].hi = b + 1 == n_bins ? hi : lo + width * static_cast<double>(b + 1);
  }
  for (double v : sorted) {
    auto b = static_cast<std::size_t>((v - lo) / width);
    ++bins[std::min(b, n_bins - 1)].count;
  }
  return bins;
}

}  // namespace

DensitySummary density_summary(std::span<const double> values) {
  if (values.size() < 2) throw StatsError("density summary needs at least 2 values");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  DensitySummary out;
  out.hist10 = histogram(sorted, 10);
  out.hist100 = histogram(sorted, 100);
  if (sorted.front() == sorted.back()) {
    out.kde = {{sorted.front(), std::numeric_limits<double>::infinity()}};
    return out;
  }
  const double n = static_cast<double>(sorted.size());
  const double mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : sorted) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  const double iqr = quantile(sorted, 0.75) - quantile(sorted, 0.25);
  const double spread = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
  const double h = 0.9 * spread * std::pow(n, -0.2);
  out.bandwidth = h;

  constexpr std::size_t kGrid = 512;
  const double lo = sorted.front() - 3.0 * h, hi = sorted.back() + 3.0 * h;
  const double norm = 1.0 / (n * h * std::sqrt(2.0 * M_PI));
  out.kde.reserve(kGrid);
  for (std::size_t g = 0; g < kGrid; ++g) {
    const double x = lo + (hi - lo) * static_cast<double>(g) / static_cast<double>(kGrid - 1);
    double d = 0.0;
    for (double v : sorted) {
      const double z = (x - v) / h;
      d += std::exp(-0.5 * z * z);
    }
    out.kde.emplace_back(x, d * norm);
  }
  return out;
}

void write_density_csv(std::ostream& out, const DensitySummary& d, const std::string& manifest_id) {
  using csv::format_double;
  csv::write_row(out, {"series", "x", "x_hi", "value", "manifest_id"});
  for (const auto& [x, y] : d.kde) csv::write_row(out, {"kde", format_double(x), format_double(x), format_double(y), manifest_id});
  for (const auto& b : d.hist10)
    csv::write_row(out, {"hist10", format_double(b.lo), format_double(b.hi), std::to_string(b.count), manifest_id});
  for (const auto& b : d.hist100)
    csv::write_row(out, {"hist100", format_double(b.lo), format_double(b.hi), std::to_string(b.count), manifest_id});
}

}  // namespace phono
