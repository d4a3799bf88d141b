// Writes the synthetic fixture lexicon and its family map.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "phono/corpus.hpp"
#include "phono/csv.hpp"
#include "phono/synth.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate the synthetic multi-language fixture"};
  std::string preset = "standard";
  std::filesystem::path out;
  std::uint64_t seed = 0;
  app.add_option("--preset", preset, "standard or toy")->check(CLI::IsMember({"standard", "toy"}));
  app.add_option("--seed", seed, "generator seed");
  app.add_option("--out", out, "output directory")->required();
  CLI11_PARSE(app, argc, argv);

  auto config = preset == "toy" ? phono::SynthConfig::toy() : phono::SynthConfig::standard();
  config.seed = seed;
  const auto corpus = phono::generate_synthetic(config);
  std::filesystem::create_directories(out);
  phono::save_lexicon(out / "lexicon.tsv", corpus.lexicon);
  std::ofstream fam(out / "families.csv", std::ios::binary);
  phono::csv::write_row(fam, {"language_id", "family"});
  for (const auto& [lang, family] : corpus.families) phono::csv::write_row(fam, {lang, family});
  std::cout << corpus.lexicon.languages().size() << " languages, " << corpus.lexicon.size() << " entries\n";
  return 0;
}
