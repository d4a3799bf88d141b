#include "phono/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include "phono/complexity.hpp"
#include "phono/csv.hpp"
#include "phono/features.hpp"
#include "phono/hash.hpp"
#include "phono/ngram.hpp"
#include "phono/random.hpp"
#include "phono/stats.hpp"

#ifndef PHONO_VERSION
#define PHONO_VERSION "0.0.0"
#endif

namespace phono {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

std::string_view software_version() { return PHONO_VERSION; }

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  const auto worker = [&] {
    for (std::size_t i = next++; i < n && !failed; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
        failed = true;
      }
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < jobs; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------- config

namespace {

const std::set<std::string> kConfigKeys = {
    "version", "corpus", "segment_mode", "exclude_languages", "features", "families", "folds", "seed",
    "models", "embeddings", "shared_embeddings", "train_frac", "embedding_dim", "lstm", "harmony",
    "devoicing", "perturb_models", "permutations", "truncate", "jobs"};

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

std::string embedding_suffix(EmbeddingKind k) {
  return k == EmbeddingKind::Lookup ? "" : "-" + std::string(to_string(k));
}

}  // namespace

RunConfig RunConfig::from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!kConfigKeys.count(k)) throw ConfigError("unknown config key '" + k + "'");
  if (j.value("version", kVersion) != kVersion)
    throw ConfigError("unsupported config version " + j.at("version").dump());
  RunConfig c;
  try {
    if (!j.contains("corpus")) throw ConfigError("config lacks 'corpus'");
    if (!j.contains("features")) throw ConfigError("config lacks 'features'");
    c.corpus = resolve(base_dir, j.at("corpus").get<std::string>());
    c.features = resolve(base_dir, j.at("features").get<std::string>());
    if (j.contains("families")) c.families = resolve(base_dir, j.at("families").get<std::string>());
    if (j.contains("segment_mode")) c.segment_mode = parse_segment_mode(j.at("segment_mode").get<std::string>());
    if (j.contains("exclude_languages")) c.exclude = j.at("exclude_languages").get<std::set<std::string>>();
    c.folds = j.value("folds", c.folds);
    c.seed = j.value("seed", c.seed);
    if (j.contains("models")) c.models = j.at("models").get<std::vector<std::string>>();
    if (j.contains("embeddings")) {
      c.embeddings.clear();
      for (const auto& e : j.at("embeddings")) c.embeddings.push_back(parse_embedding_kind(e.get<std::string>()));
    }
    c.shared_embeddings = j.value("shared_embeddings", c.shared_embeddings);
    c.train_frac = j.value("train_frac", c.train_frac);
    c.embedding.dim = j.value("embedding_dim", c.embedding.dim);
    if (j.contains("lstm")) c.lstm = TrainConfig::from_json(j.at("lstm"));
    if (j.contains("harmony")) {
      const auto& h = j.at("harmony");
      c.harmony = h.value("enabled", c.harmony);
      if (h.contains("languages")) c.harmony_languages = h.at("languages").get<std::vector<std::string>>();
      c.harmony_seeds = h.value("seeds", c.harmony_seeds);
      if (h.contains("vowel_overrides"))
        for (const auto& [lang, o] : h.at("vowel_overrides").items())
          c.vowel_overrides[lang] = {o.value("add", std::set<std::string>{}), o.value("remove", std::set<std::string>{})};
    }
    if (j.contains("devoicing"))
      for (const auto& [lang, p] : j.at("devoicing").items()) c.devoicing[lang] = resolve(base_dir, p.get<std::string>());
    if (j.contains("perturb_models")) c.perturb_models = j.at("perturb_models").get<std::vector<std::string>>();
    if (j.contains("permutations")) {
      c.paired_permutations = j.at("permutations").value("paired", c.paired_permutations);
      c.fake_permutations = j.at("permutations").value("fake_language", c.fake_permutations);
    }
    c.truncate = j.value("truncate", c.truncate);
    c.jobs = j.value("jobs", c.jobs);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed run config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return from_json(json::parse(in), fs::absolute(path).parent_path());
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

ordered_json RunConfig::to_json() const {
  ordered_json j;
  j["version"] = kVersion;
  j["corpus"] = corpus.string();
  j["segment_mode"] = to_string(segment_mode);
  j["exclude_languages"] = exclude;
  j["features"] = features.string();
  if (families) j["families"] = families->string();
  j["folds"] = folds;
  j["seed"] = seed;
  j["models"] = models;
  j["embeddings"] = ordered_json::array();
  for (auto k : embeddings) j["embeddings"].push_back(to_string(k));
  j["shared_embeddings"] = shared_embeddings;
  j["train_frac"] = train_frac;
  j["embedding_dim"] = embedding.dim;
  auto lstm_json = lstm.to_json();
  lstm_json.erase("seed");
  j["lstm"] = lstm_json;
  ordered_json overrides = ordered_json::object();
  for (const auto& [lang, o] : vowel_overrides) overrides[lang] = {{"add", o.add}, {"remove", o.remove}};
  j["harmony"] = {{"enabled", harmony}, {"languages", harmony_languages}, {"seeds", harmony_seeds},
                  {"vowel_overrides", overrides}};
  ordered_json dev = ordered_json::object();
  for (const auto& [lang, p] : devoicing) dev[lang] = p.string();
  j["devoicing"] = dev;
  j["perturb_models"] = perturb_models;
  j["permutations"] = {{"paired", paired_permutations}, {"fake_language", fake_permutations}};
  j["truncate"] = truncate;
  j["jobs"] = jobs;
  return j;
}

void RunConfig::validate() const {
  if (folds < 3) throw ConfigError("folds must be at least 3");
  if (models.empty()) throw ConfigError("no models configured");
  for (const auto& m : models)
    if (m != "unigram" && m != "trigram" && m != "lstm") throw ConfigError("unknown model '" + m + "'");
  if (embeddings.empty()) throw ConfigError("no embedding kinds configured");
  if (!(train_frac > 0.0 && train_frac <= 1.0)) throw ConfigError("train_frac must be in (0, 1]");
  if (truncate < 1) throw ConfigError("truncate must be at least 1");
  if (jobs < 1) throw ConfigError("jobs must be at least 1");
  embedding.validate();
  lstm.validate();
  if (harmony && harmony_seeds < 1) throw ConfigError("harmony needs at least one seed");
}

std::vector<ModelSpec> RunConfig::model_specs() const {
  std::vector<ModelSpec> out;
  for (const auto& m : models) {
    if (m == "unigram") out.push_back({"unigram", ModelFamily::Unigram});
    if (m == "trigram") out.push_back({"trigram", ModelFamily::Trigram});
    if (m == "lstm")
      for (auto k : embeddings) {
        const std::string id = "lstm" + embedding_suffix(k) + (shared_embeddings ? "-shared" : "");
        out.push_back({id, ModelFamily::Lstm, k, shared_embeddings});
      }
  }
  return out;
}

ModelSpec RunConfig::model_spec(std::string_view id) const {
  for (const auto& s : model_specs())
    if (s.id == id) return s;
  throw ConfigError("model '" + std::string(id) + "' is not among the configured models");
}

// ---------------------------------------------------------------- helpers

namespace {

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".partial";
  {
    std::ofstream out(tmp, std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + path.string());
  }
  fs::rename(tmp, path);
}

template <typename Fn>
std::string render(Fn&& fn) {
  std::ostringstream s;
  fn(s);
  return s.str();
}

std::string short_hash(const std::string& text) { return sha256_hex(text).substr(0, 16); }

std::string rotation_dir(std::size_t r) { return std::to_string(r); }

std::vector<EncodedWord> encode(const Vocabulary& vocab, const std::vector<const LexiconEntry*>& entries) {
  std::vector<EncodedWord> out;
  out.reserve(entries.size());
  for (const auto* e : entries) out.push_back(vocab.encode(e->word));
  return out;
}

struct FoldData {
  std::vector<EncodedWord> train;
  std::vector<EncodedWord> dev;
};

FoldData fold_data(const Lexicon& lex, const FoldAssignment& folds, const Vocabulary& vocab, const std::string& lang,
                   std::size_t rotation, double train_frac, std::uint64_t task_seed) {
  const auto split = split_language(lex, folds, lang, rotation);
  FoldData d{encode(vocab, split.train), encode(vocab, split.dev)};
  if (train_frac < 1.0 && !d.train.empty()) {
    Rng rng(derive_seed(task_seed, "train_frac", 0));
    rng.shuffle(d.train);
    const auto keep = static_cast<std::size_t>(std::ceil(train_frac * static_cast<double>(d.train.size())));
    d.train.resize(std::max<std::size_t>(1, keep));
  }
  if (d.train.empty()) throw std::runtime_error(lang + " rotation " + std::to_string(rotation) + " has no training words");
  if (d.dev.empty()) throw std::runtime_error(lang + " rotation " + std::to_string(rotation) + " has no dev words");
  return d;
}

TrainConfig task_train_config(const RunConfig& c, std::uint64_t task_seed) {
  TrainConfig t = c.lstm;
  t.seed = task_seed;
  return t;
}

std::unique_ptr<LanguageModel> fit_model(const ModelSpec& spec, const Vocabulary& vocab, const FoldData& data,
                                         const RunConfig& config, std::uint64_t task_seed,
                                         const FeatureTable* features, TrainingLog* log) {
  switch (spec.family) {
    case ModelFamily::Unigram:
      return std::make_unique<NGramModel>(train_ngram(NGramKind::Unigram, vocab, data.train, data.dev));
    case ModelFamily::Trigram:
      return std::make_unique<NGramModel>(train_ngram(NGramKind::Trigram, vocab, data.train, data.dev));
    case ModelFamily::Lstm: {
      EmbeddingSpec es = config.embedding;
      es.kind = spec.embedding;
      auto result = train_lstm(vocab, data.train, data.dev, es, task_train_config(config, task_seed), features);
      if (log) *log = result.log;
      return std::make_unique<NeuralScorer>(vocab, std::move(result.params), spec.id);
    }
  }
  throw std::logic_error("unhandled model family");
}

fs::path model_path(const fs::path& out, const std::string& lang, std::size_t r, const ModelSpec& spec) {
  return out / "models" / lang / rotation_dir(r) / (spec.id + (spec.family == ModelFamily::Lstm ? ".bin" : ".json"));
}

void save_model(const fs::path& path, const LanguageModel& model, const RunConfig& config, std::uint64_t task_seed) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".partial";
  if (const auto* ngram = dynamic_cast<const NGramModel*>(&model)) {
    ngram->save(tmp);
  } else {
    const auto& neural = dynamic_cast<const NeuralScorer&>(model);
    save_checkpoint(tmp, neural.vocabulary(), neural.params(), task_train_config(config, task_seed), neural.model_id());
  }
  fs::rename(tmp, path);
}

std::unique_ptr<LanguageModel> load_model(const fs::path& path, const ModelSpec& spec) {
  if (spec.family != ModelFamily::Lstm) return std::make_unique<NGramModel>(NGramModel::load(path));
  auto ck = load_checkpoint(path);
  return std::make_unique<NeuralScorer>(std::move(ck.vocab), std::move(ck.params), ck.model_id);
}

// Mean bits per phoneme per concept (variants averaged).
std::map<std::string, double> concept_means(const std::vector<WordScore>& scores) {
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (const auto& s : scores) {
    auto& a = acc[s.concept_id];
    a.first += s.bits_per_phoneme();
    ++a.second;
  }
  std::map<std::string, double> out;
  for (const auto& [c, a] : acc) out[c] = a.first / static_cast<double>(a.second);
  return out;
}

std::string format_p(double p) { return std::isnan(p) ? "" : csv::format_double(p); }

}  // namespace

// ---------------------------------------------------------------- pipeline

const std::vector<std::string>& Pipeline::stage_names() {
  static const std::vector<std::string> names = {"ingest", "split", "train", "eval", "perturb", "correlate", "report"};
  return names;
}

Pipeline::Pipeline(RunConfig config, fs::path out_dir, Log log)
    : config_(std::move(config)), out_(std::move(out_dir)), log_(std::move(log)) {
  config_.validate();
  const auto hash_input = [&](const std::string& name, const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("input " + name + " not found: " + path.string());
    input_hashes_[name] = sha256_file(path);
  };
  hash_input("corpus", config_.corpus);
  hash_input("features", config_.features);
  if (config_.families) hash_input("families", *config_.families);
  for (const auto& [lang, p] : config_.devoicing) hash_input("voicing/" + lang, p);

  // Paths and the worker count do not change outputs; content hashes stand
  // in for the files.
  ordered_json identity = config_.to_json();
  for (const char* key : {"corpus", "features", "families", "jobs"}) identity.erase(key);
  identity["devoicing"] = ordered_json::object();
  for (const auto& [lang, p] : config_.devoicing) identity["devoicing"][lang] = input_hashes_.at("voicing/" + lang);
  identity["inputs"] = input_hashes_;
  identity["software_version"] = software_version();
  manifest_.id = short_hash(identity.dump());

  auto& b = manifest_.body;
  b["manifest_id"] = manifest_.id;
  b["software_version"] = software_version();
  b["created"] = utc_timestamp();
  b["global_seed"] = config_.seed;
  b["config"] = config_.to_json();
  ordered_json inputs = ordered_json::object();
  for (const auto& [name, h] : input_hashes_) inputs[name] = {{"sha256", h}};
  inputs["corpus"]["path"] = config_.corpus.string();
  inputs["features"]["path"] = config_.features.string();
  if (config_.families) inputs["families"]["path"] = config_.families->string();
  for (const auto& [lang, p] : config_.devoicing) inputs["voicing/" + lang]["path"] = p.string();
  b["inputs"] = inputs;

  fs::create_directories(out_);
  const fs::path existing = out_ / "manifest.json";
  if (fs::exists(existing)) {
    try {
      const auto old = json::parse(read_text(existing));
      if (old.value("manifest_id", "") == manifest_.id) {
        if (old.contains("created")) b["created"] = old["created"];
        if (old.contains("tasks")) b["tasks"] = old["tasks"];
      }
    } catch (const json::exception&) {
    }
  }
  write_manifest();
}

void Pipeline::write_manifest() const { write_text(out_ / "manifest.json", manifest_.body.dump(2) + "\n"); }

bool Pipeline::stage_done(std::string_view name) const {
  const fs::path stamp = out_ / ".stages" / std::string(name);
  if (!fs::exists(stamp)) return false;
  std::istringstream s(read_text(stamp));
  std::string id;
  std::getline(s, id);
  return id == manifest_.id;
}

void Pipeline::mark_done(std::string_view name) const {
  write_text(out_ / ".stages" / std::string(name), manifest_.id + "\n" + utc_timestamp() + "\n");
}

void Pipeline::say(const std::string& line) const {
  if (log_) log_(line);
}

void Pipeline::run_stage(std::string_view name, bool force) {
  const std::string stage(name);
  const auto& names = stage_names();
  if (std::find(names.begin(), names.end(), stage) == names.end()) throw StageError(stage, "unknown stage");
  if (!force && stage_done(stage)) {
    skipped_.push_back(stage);
    say(stage + ": up to date");
    return;
  }
  const auto t0 = std::chrono::steady_clock::now();
  try {
    if (stage == "ingest") ingest();
    if (stage == "split") split();
    if (stage == "train") train();
    if (stage == "eval") evaluate();
    if (stage == "perturb") perturb();
    if (stage == "correlate") correlate();
    if (stage == "report") report();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
  mark_done(stage);
  // Later stages consumed the old outputs of this one.
  for (auto it = std::find(names.begin(), names.end(), stage) + 1; it != names.end(); ++it) {
    std::error_code ec;
    fs::remove(out_ / ".stages" / *it, ec);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ostringstream s;
  s << stage << ": done in " << std::fixed << std::setprecision(1) << secs << " s";
  say(s.str());
}

void Pipeline::run_all() {
  skipped_.clear();
  for (const auto& s : stage_names()) run_stage(s);
}

namespace {

struct Loaded {
  Lexicon lexicon;
  FoldAssignment folds;
  std::vector<std::string> languages;
  std::map<std::string, Vocabulary> vocab;
};

Loaded load_prepared(const fs::path& out) {
  const fs::path lex_path = out / "data" / "lexicon.tsv";
  const fs::path folds_path = out / "data" / "folds.json";
  if (!fs::exists(lex_path)) throw std::runtime_error("missing " + lex_path.string() + " (run ingest first)");
  if (!fs::exists(folds_path)) throw std::runtime_error("missing " + folds_path.string() + " (run split first)");
  auto lex = load_lexicon(lex_path, SegmentMode::Pretokenized).lexicon;
  auto folds = load_folds(folds_path);
  Loaded l{std::move(lex), std::move(folds), {}, {}};
  for (const auto& lang : l.lexicon.languages()) {
    l.languages.push_back(lang);
    l.vocab.emplace(lang, build_vocabulary(l.lexicon, lang));
  }
  return l;
}

bool needs_features(const RunConfig& c) {
  for (const auto& s : c.model_specs())
    if (s.family == ModelFamily::Lstm && s.embedding != EmbeddingKind::Lookup) return true;
  return false;
}

}  // namespace

void Pipeline::ingest() {
  auto loaded = load_lexicon(config_.corpus, config_.segment_mode, config_.exclude);
  fs::create_directories(out_ / "data");
  write_text(out_ / "data" / "lexicon.tsv", render([&](std::ostream& o) { write_lexicon(o, loaded.lexicon); }));

  const auto& r = loaded.report;
  ordered_json report;
  report["manifest_id"] = manifest_.id;
  report["source"] = fs::path(r.source).filename().string();
  report["rows"] = r.rows;
  report["duplicates"] = r.duplicates;
  report["excluded_rows"] = r.excluded_rows;
  report["excluded_languages"] = config_.exclude;
  report["languages_before_exclusion"] = r.languages_before_exclusion.size();
  report["languages"] = loaded.lexicon.languages().size();
  report["concepts"] = loaded.lexicon.concepts().size();
  report["entries"] = loaded.lexicon.size();
  report["words_per_language"] = r.words_per_language;
  report["multiword_lines"] = r.multiword_lines;
  write_text(out_ / "data" / "load_report.json", report.dump(2) + "\n");

  std::vector<Vocabulary> vocabs;
  ordered_json vj = ordered_json::object();
  for (const auto& lang : loaded.lexicon.languages()) {
    vocabs.push_back(build_vocabulary(loaded.lexicon, lang));
    ordered_json syms = ordered_json::array();
    for (const auto& s : vocabs.back().symbols()) syms.push_back(s.str());
    vj[lang] = syms;
  }
  write_text(out_ / "data" / "vocabularies.json", vj.dump(1) + "\n");
  const auto features = load_feature_table(config_.features).table;
  if (needs_features(config_) || config_.harmony) check_coverage(features, vocabs);

  ordered_json tasks = ordered_json::array();
  for (const auto& lang : loaded.lexicon.languages())
    for (std::size_t f = 0; f < config_.folds; ++f)
      tasks.push_back({{"language", lang}, {"fold", f}, {"seed", derive_seed(config_.seed, lang, f)}});
  manifest_.body["tasks"] = tasks;
  write_manifest();
  say("ingest: " + std::to_string(loaded.lexicon.languages().size()) + " languages, " +
      std::to_string(loaded.lexicon.size()) + " entries");
}

void Pipeline::split() {
  const fs::path lex_path = out_ / "data" / "lexicon.tsv";
  if (!fs::exists(lex_path)) throw std::runtime_error("missing " + lex_path.string() + " (run ingest first)");
  const auto lex = load_lexicon(lex_path, SegmentMode::Pretokenized).lexicon;
  const auto folds = make_folds(lex, config_.folds, config_.seed);
  fs::create_directories(out_ / "data");
  const fs::path tmp = out_ / "data" / "folds.json.partial";
  save_folds(tmp, folds);
  fs::rename(tmp, out_ / "data" / "folds.json");
}

namespace {

// Identifies everything a trained model depends on, so a resumed run can
// reuse it even when unrelated settings changed.
std::string model_key(const RunConfig& c, const std::map<std::string, std::string>& inputs, const ModelSpec& spec,
                      const std::string& lang, std::size_t r, std::string_view lexicon_hash) {
  ordered_json j;
  j["model"] = spec.id;
  j["language"] = lang;
  j["rotation"] = r;
  j["folds"] = c.folds;
  j["seed"] = c.seed;
  j["train_frac"] = c.train_frac;
  j["lexicon"] = lexicon_hash;
  if (spec.family == ModelFamily::Lstm) {
    j["lstm"] = c.lstm.to_json();
    j["embedding_dim"] = c.embedding.dim;
    if (spec.embedding != EmbeddingKind::Lookup) j["features"] = inputs.at("features");
    if (spec.shared) j["shared_languages"] = "all";
  }
  j["software_version"] = software_version();
  return short_hash(j.dump());
}

bool key_matches(const fs::path& artifact, const std::string& key) {
  const fs::path k = artifact.string() + ".key";
  return fs::exists(artifact) && fs::exists(k) && read_text(k) == key + "\n";
}

}  // namespace

void Pipeline::train() {
  const auto data = load_prepared(out_);
  const auto specs = config_.model_specs();
  std::optional<FeatureTable> features;
  if (needs_features(config_)) features = load_feature_table(config_.features).table;
  const FeatureTable* fp = features ? &*features : nullptr;
  const std::string lexicon_hash = sha256_file(out_ / "data" / "lexicon.tsv");

  struct Task {
    const ModelSpec* spec;
    std::string lang;  // empty for a shared task over all languages
    std::size_t rotation;
  };
  std::vector<Task> tasks;
  for (const auto& spec : specs)
    for (std::size_t r = 0; r < config_.folds; ++r) {
      if (spec.shared)
        tasks.push_back({&spec, "", r});
      else
        for (const auto& lang : data.languages) tasks.push_back({&spec, lang, r});
    }

  std::mutex mu;
  std::size_t done = 0, reused = 0;
  const auto write = [&](const ModelSpec& spec, const std::string& lang, std::size_t r, const LanguageModel& model,
                         const TrainingLog* log) {
    const auto path = model_path(out_, lang, r, spec);
    const std::uint64_t seed = derive_seed(config_.seed, lang, r);
    save_model(path, model, config_, seed);
    if (log) write_text(path.string() + ".log.json", log->to_json().dump(1) + "\n");
    write_text(path.string() + ".key", model_key(config_, input_hashes_, spec, lang, r, lexicon_hash) + "\n");
  };

  parallel_for(tasks.size(), config_.jobs, [&](std::size_t i) {
    const auto& t = tasks[i];
    const auto& spec = *t.spec;
    bool fresh = false;
    if (!spec.shared) {
      const auto path = model_path(out_, t.lang, t.rotation, spec);
      if (!key_matches(path, model_key(config_, input_hashes_, spec, t.lang, t.rotation, lexicon_hash))) {
        const std::uint64_t seed = derive_seed(config_.seed, t.lang, t.rotation);
        const auto fd = fold_data(data.lexicon, data.folds, data.vocab.at(t.lang), t.lang, t.rotation,
                                  config_.train_frac, seed);
        TrainingLog log;
        const auto model = fit_model(spec, data.vocab.at(t.lang), fd, config_, seed, fp, &log);
        write(spec, t.lang, t.rotation, *model, spec.family == ModelFamily::Lstm ? &log : nullptr);
        fresh = true;
      }
    } else {
      bool all = true;
      for (const auto& lang : data.languages)
        all = all && key_matches(model_path(out_, lang, t.rotation, spec),
                                 model_key(config_, input_hashes_, spec, lang, t.rotation, lexicon_hash));
      if (!all) {
        std::vector<LanguageTrainingData> langs;
        for (const auto& lang : data.languages) {
          const std::uint64_t seed = derive_seed(config_.seed, lang, t.rotation);
          auto fd = fold_data(data.lexicon, data.folds, data.vocab.at(lang), lang, t.rotation, config_.train_frac, seed);
          langs.push_back({&data.vocab.at(lang), std::move(fd.train), std::move(fd.dev), seed});
        }
        EmbeddingSpec es = config_.embedding;
        es.kind = spec.embedding;
        const auto result =
            train_shared(langs, es, task_train_config(config_, derive_seed(config_.seed, "shared", t.rotation)), fp);
        for (std::size_t l = 0; l < data.languages.size(); ++l) {
          const auto& lang = data.languages[l];
          const NeuralScorer model(data.vocab.at(lang), result.params[l], spec.id);
          write(spec, lang, t.rotation, model, &result.logs[l]);
        }
        fresh = true;
      }
    }
    std::lock_guard lock(mu);
    ++done;
    if (!fresh) ++reused;
    if (fresh)
      say("train: " + spec.id + " " + (t.lang.empty() ? std::string("shared") : t.lang) + " rotation " +
          std::to_string(t.rotation) + " (" + std::to_string(done) + "/" + std::to_string(tasks.size()) + ")");
  });
  if (reused) say("train: reused " + std::to_string(reused) + " of " + std::to_string(tasks.size()) + " models");
}

void Pipeline::evaluate() {
  const auto data = load_prepared(out_);
  const auto specs = config_.model_specs();
  struct Task {
    const ModelSpec* spec;
    std::string lang;
  };
  std::vector<Task> tasks;
  for (const auto& lang : data.languages)
    for (const auto& spec : specs) tasks.push_back({&spec, lang});

  std::vector<LanguageEvaluation> results(tasks.size());
  parallel_for(tasks.size(), config_.jobs, [&](std::size_t i) {
    const auto& t = tasks[i];
    std::vector<std::unique_ptr<LanguageModel>> models;
    std::vector<const LanguageModel*> ptrs;
    for (std::size_t r = 0; r < config_.folds; ++r) {
      const auto path = model_path(out_, t.lang, r, *t.spec);
      if (!fs::exists(path)) throw std::runtime_error("missing model " + path.string() + " (run train first)");
      models.push_back(load_model(path, *t.spec));
      if (!(models.back()->vocabulary() == data.vocab.at(t.lang)))
        throw std::runtime_error("model " + path.string() + " was trained on a different vocabulary");
      ptrs.push_back(models.back().get());
    }
    results[i] = evaluate_language(ptrs, data.lexicon, data.folds, t.lang);
  });

  std::vector<ComplexityRecord> records;
  std::vector<WordScore> scores;
  for (auto& r : results) {
    records.push_back(r.record);
    for (auto& s : r.scores) scores.push_back(std::move(s));
  }
  fs::create_directories(out_ / "reports");
  write_text(out_ / "reports" / "complexity.csv",
             render([&](std::ostream& o) { write_complexity_csv(o, records, manifest_.id); }));
  write_text(out_ / "reports" / "scores.csv", render([&](std::ostream& o) { write_scores_csv(o, scores, manifest_.id); }));
}

namespace {

struct PerturbTask {
  enum Kind { Harmony, Devoicing } kind;
  ModelSpec spec;
  std::string lang;
  std::size_t seed_index = 0;
};

fs::path perturb_dir(const fs::path& out, const PerturbTask& t) {
  if (t.kind == PerturbTask::Harmony)
    return out / "reports" / "perturb" / "harmony" / t.lang / ("seed" + std::to_string(t.seed_index));
  return out / "reports" / "perturb" / "devoicing" / t.lang;
}

std::uint64_t scramble_seed(std::uint64_t global, const std::string& lang, std::size_t index) {
  return derive_seed(global, lang + "#harmony", index);
}

}  // namespace

void Pipeline::perturb() {
  const auto data = load_prepared(out_);
  const auto features = load_feature_table(config_.features).table;
  const std::string lexicon_hash = sha256_file(out_ / "data" / "lexicon.tsv");
  const fs::path scores_path = out_ / "reports" / "scores.csv";
  const fs::path complexity_path = out_ / "reports" / "complexity.csv";
  if (!fs::exists(scores_path)) throw std::runtime_error("missing " + scores_path.string() + " (run eval first)");
  const auto all_scores = read_scores_csv(scores_path);
  const auto all_records = read_complexity_csv(complexity_path);

  std::vector<std::string> harmony_langs, harmony_missing;
  if (config_.harmony)
    for (const auto& l : config_.harmony_languages)
      (data.lexicon.has_language(l) ? harmony_langs : harmony_missing).push_back(l);
  std::map<std::string, VoicingMap> voicing;
  for (const auto& [lang, path] : config_.devoicing) {
    if (!data.lexicon.has_language(lang)) throw std::runtime_error("devoicing language " + lang + " not in lexicon");
    voicing.emplace(lang, load_voicing_map(path));
  }

  std::vector<PerturbTask> tasks;
  for (const auto& id : config_.perturb_models) {
    if (harmony_langs.empty() && voicing.empty()) break;
    const auto spec = config_.model_spec(id);
    if (spec.shared) throw ConfigError("perturbation studies need an independently trained model, not " + id);
    for (const auto& lang : harmony_langs)
      for (std::size_t s = 0; s < config_.harmony_seeds; ++s) tasks.push_back({PerturbTask::Harmony, spec, lang, s});
    for (const auto& [lang, map] : voicing) tasks.push_back({PerturbTask::Devoicing, spec, lang, 0});
  }

  std::map<std::string, VowelInventory> inventories;
  for (const auto& lang : harmony_langs) {
    const auto it = config_.vowel_overrides.find(lang);
    inventories[lang] =
        build_vowel_inventory(data.lexicon, lang, features, it == config_.vowel_overrides.end() ? VowelOverrides{} : it->second);
  }

  std::vector<std::vector<WordScore>> results(tasks.size());
  std::vector<nlohmann::ordered_json> reports(tasks.size());
  std::mutex mu;
  std::size_t done = 0;
  parallel_for(tasks.size(), config_.jobs, [&](std::size_t i) {
    const auto& t = tasks[i];
    const fs::path dir = perturb_dir(out_, t);
    const fs::path scores_file = dir / (t.spec.id + ".scores.csv");
    ordered_json key_json = {{"kind", t.kind}, {"seed_index", t.seed_index},
                             {"model", model_key(config_, input_hashes_, t.spec, t.lang, 0, lexicon_hash)}};
    if (t.kind == PerturbTask::Devoicing) key_json["voicing"] = input_hashes_.at("voicing/" + t.lang);
    if (t.kind == PerturbTask::Harmony) key_json["overrides"] = config_.to_json()["harmony"]["vowel_overrides"];
    const std::string key = short_hash(key_json.dump());

    PerturbedLexicon perturbed;
    if (t.kind == PerturbTask::Harmony)
      perturbed = scramble_harmony(data.lexicon, t.lang, inventories.at(t.lang),
                                   scramble_seed(config_.seed, t.lang, t.seed_index), &features);
    else
      perturbed = reverse_devoicing(data.lexicon, t.lang, voicing.at(t.lang));
    reports[i] = change_report(perturbed, t.kind == PerturbTask::Harmony ? "harmony-scramble" : "devoice-reversal", t.lang);
    if (t.kind == PerturbTask::Harmony) reports[i]["seed"] = scramble_seed(config_.seed, t.lang, t.seed_index);

    if (key_matches(scores_file, key)) {
      results[i] = read_scores_csv(scores_file);
    } else {
      const Vocabulary vocab = build_vocabulary(perturbed.lexicon, t.lang);
      std::vector<std::unique_ptr<LanguageModel>> models;
      std::vector<const LanguageModel*> ptrs;
      for (std::size_t r = 0; r < config_.folds; ++r) {
        const std::uint64_t seed = derive_seed(config_.seed, t.lang, r);
        const auto fd = fold_data(perturbed.lexicon, data.folds, vocab, t.lang, r, config_.train_frac, seed);
        models.push_back(fit_model(t.spec, vocab, fd, config_, seed, &features, nullptr));
        ptrs.push_back(models.back().get());
      }
      auto eval = evaluate_language(ptrs, perturbed.lexicon, data.folds, t.lang);
      results[i] = std::move(eval.scores);
      std::vector<LexiconEntry> entries;
      for (const auto* e : perturbed.lexicon.entries_for(t.lang)) entries.push_back(*e);
      write_text(dir / "lexicon.tsv",
                 render([&](std::ostream& o) { write_lexicon(o, Lexicon::from_entries(std::move(entries))); }));
      write_text(dir / "changes.json", reports[i].dump(1) + "\n");
      write_text(scores_file, render([&](std::ostream& o) { write_scores_csv(o, results[i], manifest_.id); }));
      write_text(scores_file.string() + ".key", key + "\n");
    }
    std::lock_guard lock(mu);
    ++done;
    say("perturb: " + std::string(t.kind == PerturbTask::Harmony ? "harmony " : "devoicing ") + t.lang +
        (t.kind == PerturbTask::Harmony ? " seed " + std::to_string(t.seed_index) : std::string()) + " " + t.spec.id +
        " (" + std::to_string(done) + "/" + std::to_string(tasks.size()) + ")");
  });

  // Original per-language results for the same model.
  const auto original_scores = [&](const std::string& lang, const std::string& model) {
    std::vector<WordScore> out;
    for (const auto& s : all_scores)
      if (s.language_id == lang && s.model_id == model) out.push_back(s);
    if (out.empty()) throw std::runtime_error("no original scores for " + lang + " / " + model);
    return out;
  };
  const auto original_record = [&](const std::string& lang, const std::string& model) {
    for (const auto& r : all_records)
      if (r.language_id == lang && r.model_id == model) return r;
    throw std::runtime_error("no original record for " + lang + " / " + model);
  };
  const auto paired = [&](const std::map<std::string, double>& artificial, const std::map<std::string, double>& original,
                          const std::string& label) {
    std::vector<double> a, b;
    for (const auto& [c, v] : original)
      if (const auto it = artificial.find(c); it != artificial.end()) {
        a.push_back(it->second);
        b.push_back(v);
      }
    return paired_permutation(a, b, config_.paired_permutations, derive_seed(config_.seed, label, 0));
  };

  using csv::format_double;
  std::ostringstream harmony_csv, seeds_csv, devoicing_csv;
  csv::write_row(harmony_csv, {"language_id", "model_id", "original_bits_per_phoneme", "scrambled_bits_per_phoneme",
                               "increase", "relative_increase", "n_seeds", "n_pairs", "p_value", "manifest_id"});
  csv::write_row(seeds_csv, {"language_id", "model_id", "seed_index", "seed", "bits_per_phoneme", "n_words",
                             "manifest_id"});
  csv::write_row(devoicing_csv, {"language_id", "model_id", "original_bits_per_phoneme", "artificial_bits_per_phoneme",
                                 "increase", "n_changes", "n_collapsed", "n_pairs", "p_value", "manifest_id"});
  ordered_json summary;
  summary["manifest_id"] = manifest_.id;
  summary["harmony_languages_run"] = harmony_langs;
  summary["harmony_languages_missing"] = harmony_missing;

  for (const auto& id : config_.perturb_models) {
    for (const auto& lang : harmony_langs) {
      const auto orig = original_record(lang, id);
      std::map<std::string, double> scrambled_mean;
      std::map<std::string, std::size_t> counts;
      double bpp_sum = 0.0;
      std::size_t n_seeds = 0;
      for (std::size_t i = 0; i < tasks.size(); ++i) {
        const auto& t = tasks[i];
        if (t.kind != PerturbTask::Harmony || t.lang != lang || t.spec.id != id) continue;
        const auto rec = aggregate(results[i]);
        bpp_sum += rec.bits_per_phoneme;
        ++n_seeds;
        csv::write_row(seeds_csv, {lang, id, std::to_string(t.seed_index),
                                   std::to_string(scramble_seed(config_.seed, lang, t.seed_index)),
                                   format_double(rec.bits_per_phoneme), std::to_string(rec.n_words), manifest_.id});
        for (const auto& [c, v] : concept_means(results[i])) {
          scrambled_mean[c] += v;
          ++counts[c];
        }
      }
      for (auto& [c, v] : scrambled_mean) v /= static_cast<double>(counts[c]);
      const double scrambled = bpp_sum / static_cast<double>(n_seeds);
      const auto test = paired(scrambled_mean, concept_means(original_scores(lang, id)), lang + "#harmony-test");
      csv::write_row(harmony_csv, {lang, id, format_double(orig.bits_per_phoneme), format_double(scrambled),
                                   format_double(scrambled - orig.bits_per_phoneme),
                                   format_double((scrambled - orig.bits_per_phoneme) / orig.bits_per_phoneme),
                                   std::to_string(n_seeds), std::to_string(scrambled_mean.size()),
                                   format_double(test.p_value), manifest_.id});
    }
    for (const auto& [lang, map] : voicing) {
      for (std::size_t i = 0; i < tasks.size(); ++i) {
        const auto& t = tasks[i];
        if (t.kind != PerturbTask::Devoicing || t.lang != lang || t.spec.id != id) continue;
        const auto orig = original_record(lang, id);
        const auto rec = aggregate(results[i]);
        const auto original = concept_means(original_scores(lang, id));
        const auto test = paired(concept_means(results[i]), original, lang + "#devoicing-test");
        csv::write_row(devoicing_csv,
                       {lang, id, format_double(orig.bits_per_phoneme), format_double(rec.bits_per_phoneme),
                        format_double(rec.bits_per_phoneme - orig.bits_per_phoneme),
                        std::to_string(reports[i]["changes"].size()), std::to_string(reports[i]["collapsed"].get<std::size_t>()),
                        std::to_string(original.size()), format_double(test.p_value), manifest_.id});
      }
    }
  }
  write_text(out_ / "reports" / "harmony.csv", harmony_csv.str());
  write_text(out_ / "reports" / "harmony_seeds.csv", seeds_csv.str());
  write_text(out_ / "reports" / "devoicing.csv", devoicing_csv.str());
  write_text(out_ / "reports" / "perturb" / "summary.json", summary.dump(2) + "\n");
}

namespace {

struct CorrelationRows {
  std::ostringstream out;
  std::string manifest_id;

  void add(const std::string& analysis, const std::string& model, const std::string& subset, const std::string& group,
           const CorrelationResult& r) {
    csv::write_row(out, {analysis, model, subset, group, std::string(to_string(r.method)), csv::format_double(r.r),
                         std::to_string(r.n), format_p(r.p_value), manifest_id});
  }
  void add_value(const std::string& analysis, const std::string& model, const std::string& subset,
                 const std::string& group, const std::string& method, double r, std::size_t n, double p) {
    csv::write_row(out, {analysis, model, subset, group, method, csv::format_double(r), std::to_string(n), format_p(p),
                         manifest_id});
  }
  void both(const std::string& analysis, const std::string& model, const std::string& subset, const std::string& group,
            std::span<const double> x, std::span<const double> y) {
    add(analysis, model, subset, group, pearson(x, y));
    add(analysis, model, subset, group, spearman(x, y));
  }
};

}  // namespace

void Pipeline::correlate() {
  const auto data = load_prepared(out_);
  const auto features = load_feature_table(config_.features).table;
  const auto records = read_complexity_csv(out_ / "reports" / "complexity.csv");
  const auto scores = read_scores_csv(out_ / "reports" / "scores.csv");
  std::optional<FamilyMap> families;
  if (config_.families) families = read_family_map(*config_.families);

  CorrelationRows rows;
  rows.manifest_id = manifest_.id;
  csv::write_row(rows.out, {"analysis", "model_id", "subset", "group", "method", "r", "n", "p_value", "manifest_id"});

  ordered_json extra;
  extra["manifest_id"] = manifest_.id;
  for (const auto& spec : config_.model_specs()) {
    const auto& id = spec.id;
    std::vector<ComplexityRecord> recs;
    for (const auto& r : records)
      if (r.model_id == id) recs.push_back(r);
    std::vector<WordScore> sc;
    for (const auto& s : scores)
      if (s.model_id == id) sc.push_back(s);
    if (recs.size() < 3) {
      extra["skipped"].push_back(id + ": fewer than 3 languages");
      continue;
    }

    std::vector<double> bpp, len, bpw;
    for (const auto& r : recs) {
      bpp.push_back(r.bits_per_phoneme);
      len.push_back(r.avg_word_len);
      bpw.push_back(r.bits_per_word);
    }
    rows.both("language", id, "bits_per_phoneme", "", bpp, len);
    rows.both("language", id, "bits_per_word", "", bpw, len);

    const auto points = word_points(sc);
    const auto pw = per_word_correlation(points);
    rows.add("per_word", id, "pooled", "", pw.pooled_pearson);
    rows.add("per_word", id, "pooled", "", pw.pooled_spearman);
    rows.add_value("per_word", id, "language_mean", "", "spearman", pw.mean_language_spearman, pw.languages.size(),
                   std::nan(""));
    rows.add("per_word", id, "language_min", pw.min_language.language_id, pw.min_language.spearman);

    const auto trunc = truncated_bits(sc, config_.truncate);
    std::vector<double> tb;
    for (const auto& r : recs) tb.push_back(trunc.at(r.language_id));
    rows.both("truncated", id, "k=" + std::to_string(config_.truncate), "", tb, len);

    std::vector<double> pos, bits;
    for (const auto& p : positional_bits(sc)) {
      pos.push_back(static_cast<double>(p.position));
      bits.push_back(p.bits);
    }
    rows.both("position", id, "pooled", "", pos, bits);

    const auto fake = fake_language_test(points, config_.fake_permutations, derive_seed(config_.seed, "fake-language", 0));
    rows.add_value("fake_language", id, "permutations=" + std::to_string(fake.test.n_resamples), "", "spearman",
                   fake.test.observed, recs.size(), fake.test.p_value);

    if (families) {
      const auto agg = family_aggregate(recs, *families);
      rows.add("family", id, "bits_per_phoneme", "", agg.pearson);
      rows.add("family", id, "bits_per_phoneme", "", agg.spearman);
      for (const auto& f : intra_family(recs, *families)) {
        rows.add("intra_family", id, "bits_per_phoneme", f.family, f.pearson);
        rows.add("intra_family", id, "bits_per_phoneme", f.family, f.spearman);
      }
    }
  }

  const auto inv = inventory_baselines(data.lexicon, features);
  for (const auto& name : {"phonemes", "vowels", "consonants"}) {
    if (const auto it = inv.pearson.find(name); it != inv.pearson.end()) rows.add("inventory", "", name, "", it->second);
    if (const auto it = inv.spearman.find(name); it != inv.spearman.end()) rows.add("inventory", "", name, "", it->second);
  }
  std::ostringstream inv_csv;
  csv::write_row(inv_csv, {"language_id", "phonemes", "vowels", "consonants", "avg_word_len", "manifest_id"});
  for (const auto& c : inv.languages)
    csv::write_row(inv_csv, {c.language_id, std::to_string(c.phonemes), std::to_string(c.vowels),
                             std::to_string(c.consonants), csv::format_double(c.avg_word_len), manifest_.id});
  extra["inventory_warnings"] = inv.warnings;

  if (families) {
    std::ostringstream fam_csv;
    csv::write_row(fam_csv, {"model_id", "family", "n_languages", "bits_per_phoneme", "avg_word_len", "manifest_id"});
    for (const auto& spec : config_.model_specs()) {
      std::vector<ComplexityRecord> recs;
      for (const auto& r : records)
        if (r.model_id == spec.id) recs.push_back(r);
      if (recs.size() < 3) continue;
      for (const auto& f : family_aggregate(recs, *families).families)
        csv::write_row(fam_csv, {spec.id, f.family, std::to_string(f.n_languages), csv::format_double(f.bits_per_phoneme),
                                 csv::format_double(f.avg_word_len), manifest_.id});
    }
    write_text(out_ / "reports" / "families.csv", fam_csv.str());
  }
  write_text(out_ / "reports" / "correlations.csv", rows.out.str());
  write_text(out_ / "reports" / "inventory.csv", inv_csv.str());
  write_text(out_ / "reports" / "correlate_notes.json", extra.dump(2) + "\n");
}

void Pipeline::report() {
  const auto records = read_complexity_csv(out_ / "reports" / "complexity.csv");
  ordered_json summary;
  summary["manifest_id"] = manifest_.id;
  summary["software_version"] = software_version();
  ordered_json models = ordered_json::object();
  for (const auto& spec : config_.model_specs()) {
    std::vector<double> bpw;
    double bpp = 0.0, pooled = 0.0;
    for (const auto& r : records)
      if (r.model_id == spec.id) {
        bpw.push_back(r.bits_per_word);
        bpp += r.bits_per_phoneme;
        pooled += r.pooled_bits_per_phoneme;
      }
    if (bpw.empty()) continue;
    const double n = static_cast<double>(bpw.size());
    models[spec.id] = {{"languages", bpw.size()},
                       {"mean_bits_per_phoneme", bpp / n},
                       {"mean_pooled_bits_per_phoneme", pooled / n}};
    if (bpw.size() >= 2) {
      const auto d = density_summary(bpw);
      write_text(out_ / "reports" / "density" / (spec.id + ".csv"),
                 render([&](std::ostream& o) { write_density_csv(o, d, manifest_.id); }));
      models[spec.id]["bits_per_word_bandwidth"] = d.bandwidth;
    }
  }
  summary["models"] = models;
  const fs::path perturb_summary = out_ / "reports" / "perturb" / "summary.json";
  if (fs::exists(perturb_summary)) {
    const auto p = json::parse(read_text(perturb_summary));
    summary["harmony_languages_run"] = p.at("harmony_languages_run");
    summary["harmony_languages_missing"] = p.at("harmony_languages_missing");
    summary["notes"].push_back("harmony study covers every configured language present in the lexicon (" +
                               std::to_string(p.at("harmony_languages_run").size()) + " of " +
                               std::to_string(config_.harmony_languages.size()) + ")");
  }
  write_text(out_ / "reports" / "summary.json", summary.dump(2) + "\n");
}

}  // namespace phono
