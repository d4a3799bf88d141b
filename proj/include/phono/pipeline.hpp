#pragma once

// End-to-end experiment runner: ingest, split, train, eval, perturb,
// correlate and report over one artifacts directory
// (data/, models/<lang>/<fold>/, reports/), driven by a JSON run config and
// recorded in a manifest.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "phono/corpus.hpp"
#include "phono/neural.hpp"
#include "phono/perturb.hpp"

namespace phono {

std::string_view software_version();

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& cause)
      : std::runtime_error("stage " + stage + ": " + cause), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

enum class ModelFamily { Unigram, Trigram, Lstm };

struct ModelSpec {
  std::string id;  // unigram, trigram, lstm, lstm-feature, lstm-concat, with "-shared" for a shared store
  ModelFamily family = ModelFamily::Unigram;
  EmbeddingKind embedding = EmbeddingKind::Lookup;
  bool shared = false;
};

struct RunConfig {
  static constexpr int kVersion = 1;

  std::filesystem::path corpus;
  SegmentMode segment_mode = SegmentMode::Pretokenized;
  std::set<std::string> exclude = {"cmn"};
  std::filesystem::path features;
  std::optional<std::filesystem::path> families;
  std::size_t folds = 10;
  std::uint64_t seed = 0;

  std::vector<std::string> models = {"unigram", "trigram", "lstm"};
  std::vector<EmbeddingKind> embeddings = {EmbeddingKind::Lookup};
  bool shared_embeddings = false;
  double train_frac = 1.0;
  EmbeddingSpec embedding;
  TrainConfig lstm;  // seed is replaced per task

  bool harmony = true;
  std::vector<std::string> harmony_languages = {kHarmonyLanguages.begin(), kHarmonyLanguages.end()};
  std::size_t harmony_seeds = 10;
  std::map<std::string, VowelOverrides> vowel_overrides;
  std::map<std::string, std::filesystem::path> devoicing;  // language -> voicing map
  std::vector<std::string> perturb_models = {"lstm"};

  std::size_t paired_permutations = 10000;
  std::size_t fake_permutations = 10000;
  std::size_t truncate = 3;
  std::size_t jobs = 1;  // not part of the manifest id: it never changes outputs

  // Relative paths are resolved against `base_dir`. Unknown keys are errors.
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  static RunConfig load(const std::filesystem::path& path);
  nlohmann::ordered_json to_json() const;
  void validate() const;

  std::vector<ModelSpec> model_specs() const;
  ModelSpec model_spec(std::string_view id) const;
};

struct Manifest {
  std::string id;               // hash of everything that determines outputs
  nlohmann::ordered_json body;  // config, inputs, seeds, version, timestamps
};

class Pipeline {
 public:
  using Log = std::function<void(const std::string&)>;

  Pipeline(RunConfig config, std::filesystem::path out_dir, Log log = {});

  static const std::vector<std::string>& stage_names();

  const RunConfig& config() const { return config_; }
  const Manifest& manifest() const { return manifest_; }
  const std::filesystem::path& out_dir() const { return out_; }

  // Runs one stage unless its stamp matches the current manifest (or `force`
  // is set). Failures are rethrown as StageError.
  void run_stage(std::string_view name, bool force = false);
  void run_all();

  // Stages skipped since the last run_all started.
  const std::vector<std::string>& skipped() const { return skipped_; }

 private:
  void ingest();
  void split();
  void train();
  void evaluate();
  void perturb();
  void correlate();
  void report();

  void write_manifest() const;
  bool stage_done(std::string_view name) const;
  void mark_done(std::string_view name) const;
  void say(const std::string& line) const;

  RunConfig config_;
  std::filesystem::path out_;
  Log log_;
  Manifest manifest_;
  std::map<std::string, std::string> input_hashes_;
  std::vector<std::string> skipped_;
};

// Runs fn(0..n-1) on up to `jobs` threads. The exception of the lowest
// failing index is rethrown after all workers stop.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

}  // namespace phono
