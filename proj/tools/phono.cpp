#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "phono/corpus.hpp"
#include "phono/features.hpp"
#include "phono/fetch.hpp"
#include "phono/hash.hpp"
#include "phono/perturb.hpp"
#include "phono/pipeline.hpp"

namespace fs = std::filesystem;
using namespace phono;

namespace {

// Flags shared by the pipeline subcommands; unset ones leave the config alone.
struct Overrides {
  std::string config;
  std::string out = "artifacts";
  std::optional<std::size_t> jobs, folds;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> segment_mode, features;
  std::vector<std::string> exclude;
  std::vector<std::string> models, embeddings;
  bool shared = false;
  std::optional<double> train_frac;
  bool quiet = false;

  void add_common(CLI::App* cmd) {
    cmd->add_option("--config", config, "run config (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", out, "artifacts directory");
    cmd->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", seed, "global seed");
    cmd->add_option("--folds", folds, "cross-validation folds")->check(CLI::Range(3, 100000));
    cmd->add_option("--segment-mode", segment_mode, "pretokenized or unicode")
        ->check(CLI::IsMember({"pretokenized", "unicode"}));
    cmd->add_option("--exclude-lang", exclude, "languages to drop at ingest")->delimiter(',');
    cmd->add_option("--features", features, "feature table CSV")->check(CLI::ExistingFile);
    cmd->add_flag("--quiet", quiet, "no progress output");
  }

  void add_models(CLI::App* cmd) {
    cmd->add_option("--model", models, "unigram, trigram or lstm (repeatable)")
        ->check(CLI::IsMember({"unigram", "trigram", "lstm"}));
    cmd->add_option("--embedding", embeddings, "lookup, feature or concat (repeatable)")
        ->check(CLI::IsMember({"lookup", "feature", "concat"}));
    cmd->add_flag("--shared-embeddings", shared, "one embedding store across languages");
    cmd->add_option("--train-frac", train_frac, "fraction of each training fold")->check(CLI::Range(0.0, 1.0));
  }

  RunConfig apply() const {
    RunConfig c = RunConfig::load(config);
    if (jobs) c.jobs = *jobs;
    if (folds) c.folds = *folds;
    if (seed) c.seed = *seed;
    if (segment_mode) c.segment_mode = parse_segment_mode(*segment_mode);
    if (features) c.features = fs::absolute(*features);
    if (!exclude.empty()) c.exclude = {exclude.begin(), exclude.end()};
    if (!models.empty()) c.models = models;
    if (!embeddings.empty()) {
      c.embeddings.clear();
      for (const auto& e : embeddings) c.embeddings.push_back(parse_embedding_kind(e));
    }
    if (shared) c.shared_embeddings = true;
    if (train_frac) c.train_frac = *train_frac;
    c.validate();
    return c;
  }
};

int run_stages(const Overrides& o, const std::vector<std::string>& stages) {
  Pipeline::Log log;
  if (!o.quiet) log = [](const std::string& line) { std::cerr << line << '\n'; };
  Pipeline p(o.apply(), o.out, log);
  if (!o.quiet) std::cerr << "manifest " << p.manifest().id << '\n';
  // A single named stage is rerun on request; `pipeline` resumes.
  const bool force = stages.size() == 1;
  for (const auto& s : stages) p.run_stage(s, force);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Phonotactic complexity toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(software_version()));

  FetchOptions fetch;
  std::string fetch_sha, fetch_languages, fetch_cache;
  auto* fetch_cmd = app.add_subcommand("fetch", "download or copy a corpus, verify it and convert it to the lexicon TSV");
  fetch_cmd->add_option("--source", fetch.source, "URL or local path of the forms table")->required();
  fetch_cmd->add_option("--sha256", fetch_sha, "expected SHA-256 of the forms table");
  fetch_cmd->add_option("--languages", fetch_languages, "URL or path of the language table (for families.csv)");
  fetch_cmd->add_option("--out", fetch.out_dir, "output directory")->required();
  fetch_cmd->add_option("--cache-dir", fetch_cache, "cache directory (default $PHONO_CACHE_DIR)");
  fetch_cmd->add_flag("--offline", fetch.offline, "never use the network");

  Overrides common;
  std::vector<std::pair<CLI::App*, std::vector<std::string>>> stage_cmds;
  const auto stage_cmd = [&](const std::string& name, const std::string& help, std::vector<std::string> stages,
                             bool models) {
    auto* cmd = app.add_subcommand(name, help);
    common.add_common(cmd);
    if (models) common.add_models(cmd);
    stage_cmds.emplace_back(cmd, std::move(stages));
    return cmd;
  };
  stage_cmd("ingest", "load and segment the corpus into <out>/data", {"ingest"}, false);
  stage_cmd("split", "assign concepts to cross-validation folds", {"split"}, false);
  stage_cmd("train", "train every (language, fold, model)", {"train"}, true);
  stage_cmd("eval", "score held-out words; writes complexity.csv and scores.csv", {"eval"}, true);
  stage_cmd("correlate", "correlation, permutation and family analyses", {"correlate"}, true);
  stage_cmd("report", "density summaries and summary.json", {"report"}, true);
  stage_cmd("pipeline", "run every stage, skipping completed ones", Pipeline::stage_names(), true);

  // perturb: a single perturbation with --kind, else the perturbation studies.
  std::optional<std::string> kind, lang, voicing_map, input, output_dir;
  std::uint64_t perturb_seed = 0;
  Overrides perturb_common;
  auto* perturb_cmd = app.add_subcommand("perturb", "build artificial languages, or run the perturbation studies");
  perturb_cmd->add_option("--kind", kind, "devoice-reversal or harmony-scramble")
      ->check(CLI::IsMember({"devoice-reversal", "harmony-scramble"}));
  perturb_cmd->add_option("--lang", lang, "language to perturb");
  perturb_cmd->add_option("--seed", perturb_seed, "scramble seed");
  perturb_cmd->add_option("--voicing-map", voicing_map, "voicing map JSON")->check(CLI::ExistingFile);
  perturb_cmd->add_option("--input", input, "lexicon TSV (single perturbation)")->check(CLI::ExistingFile);
  perturb_cmd->add_option("--output-dir", output_dir, "where the perturbed TSV and change report go");
  perturb_cmd->add_option("--config", perturb_common.config, "run config (studies)");
  perturb_cmd->add_option("--out", perturb_common.out, "artifacts directory (studies)");
  perturb_cmd->add_option("--jobs", perturb_common.jobs, "worker threads")->check(CLI::PositiveNumber);
  perturb_cmd->add_option("--features", perturb_common.features, "feature table CSV")->check(CLI::ExistingFile);
  perturb_cmd->add_flag("--quiet", perturb_common.quiet, "no progress output");

  CLI11_PARSE(app, argc, argv);

  try {
    if (fetch_cmd->parsed()) {
      if (!fetch_sha.empty()) fetch.sha256 = fetch_sha;
      if (!fetch_languages.empty()) fetch.languages_source = fetch_languages;
      if (!fetch_cache.empty()) fetch.cache_dir = fetch_cache;
      const auto r = fetch_data(fetch);
      std::cout << "lexicon " << r.lexicon.string() << "\nsha256 " << r.sha256 << "\n"
                << (r.from_cache ? "source: cache\n" : "source: fetched\n");
      if (r.families) std::cout << "families " << r.families->string() << '\n';
      return 0;
    }
    for (const auto& [cmd, stages] : stage_cmds)
      if (cmd->parsed()) return run_stages(common, stages);

    if (perturb_cmd->parsed()) {
      if (!kind) {
        if (perturb_common.config.empty()) throw ConfigError("perturb: give --kind for one perturbation or --config for the studies");
        return run_stages(perturb_common, {"perturb"});
      }
      if (!lang) throw ConfigError("perturb: --lang is required with --kind");
      if (!output_dir) throw ConfigError("perturb: --output-dir is required with --kind");
      fs::path lexicon_path;
      if (input)
        lexicon_path = *input;
      else if (!perturb_common.config.empty())
        lexicon_path = fs::path(perturb_common.out) / "data" / "lexicon.tsv";
      else
        throw ConfigError("perturb: give --input or --config/--out");
      const auto lex = load_lexicon(lexicon_path, SegmentMode::Pretokenized).lexicon;
      PerturbedLexicon result;
      if (*kind == "devoice-reversal") {
        if (!voicing_map) throw ConfigError("perturb: devoice-reversal needs --voicing-map");
        result = reverse_devoicing(lex, *lang, load_voicing_map(*voicing_map));
      } else {
        std::optional<fs::path> features;
        if (perturb_common.features) features = *perturb_common.features;
        else if (!perturb_common.config.empty()) features = RunConfig::load(perturb_common.config).features;
        if (!features) throw ConfigError("perturb: harmony-scramble needs --features or --config");
        const auto table = load_feature_table(*features).table;
        result = scramble_harmony(lex, *lang, build_vowel_inventory(lex, *lang, table), perturb_seed, &table);
      }
      fs::create_directories(*output_dir);
      const fs::path out_tsv = fs::path(*output_dir) / (*lang + "." + *kind + ".tsv");
      const fs::path out_json = fs::path(*output_dir) / (*lang + "." + *kind + ".changes.json");
      save_lexicon(out_tsv, result.lexicon);
      auto report = change_report(result, *kind, *lang);
      if (*kind == "harmony-scramble") report["seed"] = perturb_seed;
      report["input_sha256"] = sha256_file(lexicon_path);
      std::ofstream(out_json) << report.dump(2) << '\n';
      std::cout << out_tsv.string() << '\n' << out_json.string() << '\n';
      return 0;
    }
  } catch (const StageError& e) {
    std::cerr << "phono: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "phono: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
