#include "phono/complexity.hpp"

#include <cmath>
#include <sstream>

#include "phono/csv.hpp"

namespace phono {

WordScore score_word(const LanguageModel& model, const Word& word, std::string language_id, std::string concept_id) {
  const auto encoded = model.vocabulary().encode(word);
  const auto probs = model.sequence_probabilities(encoded);
  if (probs.size() != word.size() + 1) throw ComplexityError("model returned the wrong number of positions");
  WordScore s{std::move(language_id), std::move(concept_id), model.model_id(), word, {}, 0.0};
  s.position_bits.reserve(probs.size());
  for (double p : probs) {
    if (!(p > 0.0) || p > 1.0 + 1e-9)
      throw ComplexityError("model " + model.model_id() + " gave probability " + std::to_string(p) + " to '" +
                            word.to_string() + "'");
    const double b = p >= 1.0 ? 0.0 : -std::log2(p);
    s.position_bits.push_back(b);
    s.total_bits += b;
  }
  return s;
}

ComplexityRecord aggregate(const std::vector<WordScore>& scores) {
  if (scores.empty()) throw ComplexityError("no scores to aggregate");
  ComplexityRecord r;
  r.language_id = scores.front().language_id;
  r.model_id = scores.front().model_id;
  double positions = 0.0;
  for (const auto& s : scores) {
    if (s.language_id != r.language_id || s.model_id != r.model_id)
      throw ComplexityError("aggregate over mixed languages or models");
    r.bits_per_phoneme += s.bits_per_phoneme();
    r.bits_per_word += s.total_bits;
    r.avg_word_len += static_cast<double>(s.length());
    positions += static_cast<double>(s.length() + 1);
  }
  const auto n = static_cast<double>(scores.size());
  r.n_words = scores.size();
  r.pooled_bits_per_phoneme = r.bits_per_word / positions;
  r.bits_per_phoneme /= n;
  r.bits_per_word /= n;
  r.avg_word_len /= n;
  return r;
}

LanguageEvaluation evaluate_language(const std::vector<const LanguageModel*>& models, const Lexicon& lexicon,
                                     const FoldAssignment& folds, std::string_view language_id) {
  if (models.size() != folds.n_folds())
    throw ComplexityError("expected " + std::to_string(folds.n_folds()) + " rotation models for " +
                          std::string(language_id) + ", got " + std::to_string(models.size()));
  for (std::size_t r = 0; r < models.size(); ++r)
    if (!models[r]) throw ComplexityError("missing model for rotation " + std::to_string(r));

  LanguageEvaluation out;
  for (const auto* e : lexicon.entries_for(language_id)) {
    const auto* model = models[folds.fold_of(e->concept_id)];
    out.scores.push_back(score_word(*model, e->word, e->language_id, e->concept_id));
  }
  if (out.scores.empty()) throw ComplexityError("no words for " + std::string(language_id));
  // Rotation models of one run share a model id; keep the first.
  for (auto& s : out.scores) s.model_id = models.front()->model_id();
  out.record = aggregate(out.scores);
  return out;
}

std::map<std::string, double> truncated_bits(const std::vector<WordScore>& scores, std::size_t k) {
  if (k < 1) throw ComplexityError("truncation window must be >= 1");
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (const auto& s : scores) {
    const std::size_t w = std::min(s.length(), k);
    double sum = 0.0;
    for (std::size_t i = 0; i < w; ++i) sum += s.position_bits[i];
    auto& [total, n] = acc[s.language_id];
    total += sum / static_cast<double>(w);
    ++n;
  }
  std::map<std::string, double> out;
  for (const auto& [lang, tn] : acc) out[lang] = tn.first / static_cast<double>(tn.second);
  return out;
}

std::vector<PositionBits> positional_bits(const std::vector<WordScore>& scores) {
  std::vector<PositionBits> out;
  for (const auto& s : scores)
    for (std::size_t i = 0; i < s.length(); ++i) out.push_back({s.language_id, i + 1, s.position_bits[i]});
  return out;
}

void write_complexity_csv(std::ostream& out, const std::vector<ComplexityRecord>& records,
                          const std::string& manifest_id) {
  using csv::format_double;
  csv::write_row(out, {"language_id", "model_id", "bits_per_phoneme", "bits_per_word", "avg_word_len", "n_words",
                       "pooled_bits_per_phoneme", "manifest_id"});
  for (const auto& r : records)
    csv::write_row(out, {r.language_id, r.model_id, format_double(r.bits_per_phoneme), format_double(r.bits_per_word),
                         format_double(r.avg_word_len), std::to_string(r.n_words),
                         format_double(r.pooled_bits_per_phoneme), manifest_id});
}

std::vector<ComplexityRecord> read_complexity_csv(const std::filesystem::path& path) {
  const auto t = csv::read_file(path);
  const auto lang = t.column("language_id"), model = t.column("model_id"), bpp = t.column("bits_per_phoneme"),
             bpw = t.column("bits_per_word"), len = t.column("avg_word_len"), n = t.column("n_words"),
             pooled = t.column("pooled_bits_per_phoneme");
  std::vector<ComplexityRecord> out;
  for (const auto& row : t.rows)
    out.push_back({row[lang], row[model], std::stod(row[bpp]), std::stod(row[pooled]), std::stod(row[bpw]),
                   std::stod(row[len]), static_cast<std::size_t>(std::stoull(row[n]))});
  return out;
}

void write_scores_csv(std::ostream& out, const std::vector<WordScore>& scores, const std::string& manifest_id) {
  using csv::format_double;
  csv::write_row(out, {"language_id", "concept_id", "model_id", "ipa", "length", "bits_per_word", "bits_per_phoneme",
                       "position_bits", "manifest_id"});
  for (const auto& s : scores) {
    std::string positions;
    for (std::size_t i = 0; i < s.position_bits.size(); ++i) {
      if (i) positions += ' ';
      positions += format_double(s.position_bits[i]);
    }
    csv::write_row(out, {s.language_id, s.concept_id, s.model_id, s.word.to_string(), std::to_string(s.length()),
                         format_double(s.total_bits), format_double(s.bits_per_phoneme()), positions, manifest_id});
  }
}

std::vector<WordScore> read_scores_csv(const std::filesystem::path& path) {
  const auto t = csv::read_file(path);
  const auto lang = t.column("language_id"), concept_col = t.column("concept_id"), model = t.column("model_id"),
             ipa = t.column("ipa"), bits = t.column("position_bits");
  std::vector<WordScore> out;
  for (const auto& row : t.rows) {
    WordScore s{row[lang], row[concept_col], row[model], Word(segment_ipa(row[ipa], SegmentMode::Pretokenized)), {},
                0.0};
    std::istringstream in(row[bits]);
    double b;
    while (in >> b) {
      s.position_bits.push_back(b);
      s.total_bits += b;
    }
    if (s.position_bits.size() != s.length() + 1)
      throw ComplexityError(path.string() + ": position_bits do not match the word length");
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace phono
