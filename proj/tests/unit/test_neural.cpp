#include <cmath>
#include <numeric>

#include "doctest.h"
#include "phono/neural.hpp"

using namespace phono;

namespace {

FeatureTable toy_features() {
  // attributes: sonorant, nasal, vocalic
  return FeatureTable({"sonorant", "nasal", "vocalic"},
                      {{"a", {1, 0, 1}}, {"b", {0, 0, 0}}, {"m", {1, 1, 0}}, {"n", {1, 1, 0}}, {"r", {1, 0, 0}},
                       {"x", {0, 1, 0}}});
}

Vocabulary vocab_of(std::initializer_list<const char*> syms) {
  std::vector<Segment> v;
  for (const char* s : syms) v.emplace_back(s);
  return Vocabulary("toy", v);
}

NeuralParams small_params(EmbeddingKind kind, const Vocabulary& v, const FeatureTable* ft, std::uint64_t seed,
                          int dim = 4, int hidden = 5, int layers = 1) {
  std::vector<std::string> syms;
  for (const auto& s : v.symbols()) syms.push_back(s.str());
  syms.emplace_back("<s>");
  auto store = std::make_shared<EmbeddingStore>(EmbeddingSpec{kind, dim}, syms, ft);
  Rng rng(seed);
  store->initialize(rng);
  TrainConfig cfg;
  cfg.hidden = hidden;
  cfg.layers = layers;
  auto p = init_params(store, v, cfg, rng);
  // Non-zero biases so every gradient path is exercised.
  for (auto& l : p.layers)
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) += rng.uniform(-0.5, 0.5);
  for (Eigen::Index i = 0; i < p.b_out.size(); ++i) p.b_out(i) = rng.uniform(-0.5, 0.5);
  return p;
}

void zero_all(NeuralParams& p) {
  p.embeddings->lookup.setZero();
  p.embeddings->attributes.setZero();
  for (auto& l : p.layers) {
    l.w_input.setZero();
    l.w_recurrent.setZero();
    l.bias.setZero();
  }
  p.w_out.setZero();
  p.b_out.setZero();
}

std::vector<EncodedWord> repeat(const EncodedWord& w, int n) { return std::vector<EncodedWord>(n, w); }

}  // namespace

TEST_CASE("feature embeddings average the attribute vectors") {
  const auto ft = toy_features();
  EmbeddingStore store(EmbeddingSpec{EmbeddingKind::Feature, 3}, {"x", "m", "n", "<s>"}, &ft);
  Rng rng(2);
  store.initialize(rng);
  const auto nasal = *ft.attribute_index("nasal");
  const auto sonorant = *ft.attribute_index("sonorant");
  Eigen::VectorXd z(3);
  store.embed(0, z);
  CHECK((z - store.attributes.col(static_cast<Eigen::Index>(nasal))).norm() == 0.0);
  store.embed(1, z);
  const Eigen::VectorXd avg = (store.attributes.col(static_cast<Eigen::Index>(sonorant)) +
                               store.attributes.col(static_cast<Eigen::Index>(nasal))) /
                              2.0;
  CHECK((z - avg).norm() < 1e-15);
  Eigen::VectorXd zn(3);
  store.embed(2, zn);
  CHECK(z == zn);

  EmbeddingStore concat(EmbeddingSpec{EmbeddingKind::Concat, 3}, {"x", "m", "<s>"}, &ft);
  concat.initialize(rng);
  Eigen::VectorXd zc(6);
  concat.embed(1, zc);
  CHECK(zc.head(3) == concat.lookup.col(1));
  CHECK((zc.tail(3) - concat.attributes * concat.mixing.col(1)).norm() == 0.0);

  CHECK_THROWS_AS(EmbeddingStore(EmbeddingSpec{EmbeddingKind::Feature, 3}, {"b"}, &ft), NeuralError);
  CHECK_THROWS_AS(EmbeddingStore(EmbeddingSpec{EmbeddingKind::Feature, 3}, {"a"}, nullptr), NeuralError);
  CHECK_THROWS_AS((EmbeddingSpec{EmbeddingKind::Lookup, 0}.validate()), NeuralError);
}

TEST_CASE("zero parameters give uniform distributions") {
  const auto v = vocab_of({"a", "m", "r"});
  const auto ft = toy_features();
  auto p = small_params(EmbeddingKind::Concat, v, &ft, 1);
  zero_all(p);
  const auto r = forward(p, std::vector<SymbolId>{0, 1, 2});
  CHECK(r.distributions.cols() == 4);
  for (Eigen::Index t = 0; t < 4; ++t)
    for (Eigen::Index x = 0; x < 4; ++x) CHECK(r.distributions(x, t) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(r.log_probability == doctest::Approx(4 * std::log(0.25)));

  const auto report = gradient_check(p, std::vector<SymbolId>{0, 1, 2});
  CHECK(std::isfinite(report.max_relative_error));
  CHECK(report.max_relative_error < 1e-4);
}

TEST_CASE("scorer distributions are positive and normalized") {
  const auto v = vocab_of({"a", "m", "n", "r"});
  const auto ft = toy_features();
  for (auto kind : {EmbeddingKind::Lookup, EmbeddingKind::Feature, EmbeddingKind::Concat}) {
    const NeuralScorer scorer(v, small_params(kind, v, &ft, 4));
    Rng rng(9);
    for (int q = 0; q < 30; ++q) {
      std::vector<SymbolId> h(rng.uniform_index(6));
      for (auto& s : h) s = static_cast<SymbolId>(rng.uniform_index(4));
      const auto d = scorer.next_distribution(h);
      CHECK(d.size() == 5);
      CHECK(std::abs(std::accumulate(d.begin(), d.end(), 0.0) - 1.0) <= 1e-6);
      for (double x : d) CHECK(x > 0.0);
      const auto seq = scorer.sequence_probabilities(h);
      const auto generic = scorer.LanguageModel::sequence_probabilities(h);
      for (std::size_t i = 0; i < seq.size(); ++i) CHECK(seq[i] == doctest::Approx(generic[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("BPTT gradients match central differences") {
  const auto v = vocab_of({"a", "m", "n", "r"});
  const auto ft = toy_features();
  for (auto kind : {EmbeddingKind::Lookup, EmbeddingKind::Feature, EmbeddingKind::Concat}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      auto p = small_params(kind, v, &ft, 100 + seed, 4, 5, seed % 3 == 2 ? 2 : 1);
      const auto report = gradient_check(p, std::vector<SymbolId>{static_cast<SymbolId>(seed % 4), 2, 0});
      CAPTURE(to_string(kind));
      CAPTURE(seed);
      CHECK(report.max_relative_error < 1e-4);
      for (const char* group : {"lstm0.gate_i", "lstm0.gate_f", "lstm0.gate_g", "lstm0.gate_o", "output"})
        CHECK(report.per_group.count(group) == 1);
      if (kind != EmbeddingKind::Feature) CHECK(report.per_group.count("embedding.lookup") == 1);
      if (kind != EmbeddingKind::Lookup) CHECK(report.per_group.count("embedding.attributes") == 1);
    }
  }
}

TEST_CASE("dropout gradients match central differences on a fixed mask") {
  // Same dropout seed for analytic and numeric passes gives identical masks.
  const auto v = vocab_of({"a", "m"});
  auto p = small_params(EmbeddingKind::Lookup, v, nullptr, 3);
  const std::vector<SymbolId> w{0, 1, 1};
  auto grads = NeuralGrads::zeros_like(p);
  Rng r0(77);
  word_loss(p, w, &grads, &r0, 0.3);
  const double h = 1e-5;
  for (Eigen::Index i = 0; i < p.w_out.size(); ++i) {
    const double orig = p.w_out.data()[i];
    p.w_out.data()[i] = orig + h;
    Rng r1(77);
    const double plus = word_loss(p, w, nullptr, &r1, 0.3);
    p.w_out.data()[i] = orig - h;
    Rng r2(77);
    const double minus = word_loss(p, w, nullptr, &r2, 0.3);
    p.w_out.data()[i] = orig;
    const double num = (plus - minus) / (2 * h);
    const double a = grads.w_out.data()[i];
    CHECK(std::abs(a - num) / std::max(std::abs(a) + std::abs(num), 1e-6) < 1e-4);
  }
}

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.hidden = 16;
  c.dropout = 0.0;
  c.learning_rate = 0.02;
  c.batch_size = 10;
  c.max_epochs = 60;
  c.patience = 60;
  c.seed = 11;
  return c;
}

}  // namespace

TEST_CASE("a single-word language is memorized") {
  const auto v = vocab_of({"a", "m", "r"});
  const EncodedWord w{1, 0, 2, 0};
  const auto result = train_lstm(v, repeat(w, 20), repeat(w, 2), EmbeddingSpec{EmbeddingKind::Lookup, 8}, tiny_config());
  for (double p : forward(result.params, w).target_probabilities) CHECK(p >= 0.99);
}

TEST_CASE("{ab x 50} is learned below 0.1 bits per word") {
  const auto v = vocab_of({"a", "b"});
  const EncodedWord ab{0, 1};
  auto cfg = tiny_config();
  cfg.dropout = 0.3;
  const auto result = train_lstm(v, repeat(ab, 50), repeat(ab, 5), EmbeddingSpec{EmbeddingKind::Lookup, 8}, cfg);
  const double bits = -forward(result.params, ab).log_probability / std::log(2.0);
  CHECK(bits < 0.1);
}

namespace {

std::vector<EncodedWord> random_words(Rng& rng, std::size_t n, std::size_t k) {
  std::vector<EncodedWord> out(n);
  for (auto& w : out) {
    w.push_back(static_cast<SymbolId>(rng.uniform_index(k)));
    while (rng.bernoulli(0.7)) w.push_back(static_cast<SymbolId>((w.back() + 1 + rng.uniform_index(2)) % k));
  }
  return out;
}

}  // namespace

TEST_CASE("patience 0 stops at the first non-improving epoch and keeps the best") {
  const auto v = vocab_of({"a", "m", "n", "r"});
  Rng rng(4);
  const auto train = random_words(rng, 60, 4);
  const auto dev = random_words(rng, 20, 4);
  auto cfg = tiny_config();
  cfg.patience = 0;
  cfg.learning_rate = 0.5;  // large steps make an early non-improvement likely
  cfg.max_epochs = 40;
  const auto result = train_lstm(v, train, dev, EmbeddingSpec{EmbeddingKind::Lookup, 4}, cfg);
  const auto& log = result.log;
  REQUIRE(!log.epochs.empty());
  CHECK(log.epochs.front().improved);
  if (static_cast<int>(log.epochs.size()) < cfg.max_epochs) {
    CHECK_FALSE(log.epochs.back().improved);
    CHECK(log.best_epoch == static_cast<int>(log.epochs.size()) - 2);
    for (std::size_t e = 0; e + 1 < log.epochs.size(); ++e) CHECK(log.epochs[e].improved);
  }
  CHECK(mean_bits_per_phoneme(result.params, dev) == doctest::Approx(log.best_dev_bits_per_phoneme).epsilon(1e-12));
}

TEST_CASE("training is deterministic for a fixed seed") {
  const auto v = vocab_of({"a", "m", "n", "r"});
  Rng rng(5);
  const auto train = random_words(rng, 40, 4);
  const auto dev = random_words(rng, 10, 4);
  auto cfg = tiny_config();
  cfg.max_epochs = 5;
  cfg.dropout = 0.2;
  const auto ft = toy_features();
  const EmbeddingSpec spec{EmbeddingKind::Concat, 4};
  const auto a = train_lstm(v, train, dev, spec, cfg, &ft);
  const auto b = train_lstm(v, train, dev, spec, cfg, &ft);
  REQUIRE(a.log.epochs.size() == b.log.epochs.size());
  for (std::size_t e = 0; e < a.log.epochs.size(); ++e)
    CHECK(a.log.epochs[e].dev_bits_per_phoneme == b.log.epochs[e].dev_bits_per_phoneme);
  CHECK(a.params.w_out == b.params.w_out);
  CHECK(a.params.embeddings->lookup == b.params.embeddings->lookup);

  cfg.seed = 12;
  const auto c = train_lstm(v, train, dev, spec, cfg, &ft);
  CHECK_FALSE(c.params.w_out == a.params.w_out);
}

TEST_CASE("sharing with one language is the independent model") {
  const auto v = vocab_of({"a", "m", "n", "r"});
  Rng rng(6);
  auto cfg = tiny_config();
  cfg.max_epochs = 6;
  cfg.dropout = 0.1;
  LanguageTrainingData data{&v, random_words(rng, 40, 4), random_words(rng, 10, 4), cfg.seed};
  const EmbeddingSpec spec{EmbeddingKind::Lookup, 4};
  const auto independent = train_lstm(v, data.train, data.dev, spec, cfg);
  const auto shared = train_shared({data}, spec, cfg);
  REQUIRE(shared.logs.size() == 1);
  REQUIRE(shared.logs[0].epochs.size() == independent.log.epochs.size());
  for (std::size_t e = 0; e < independent.log.epochs.size(); ++e)
    CHECK(shared.logs[0].epochs[e].dev_bits_per_phoneme == independent.log.epochs[e].dev_bits_per_phoneme);
  CHECK(shared.params[0].w_out == independent.params.w_out);
  CHECK(shared.embeddings->lookup == independent.params.embeddings->lookup);
}

TEST_CASE("a duplicated language trains to the independent dev loss") {
  const auto v = vocab_of({"a", "m", "n", "r"});
  Rng rng(7);
  auto cfg = tiny_config();
  cfg.max_epochs = 25;
  cfg.patience = 4;
  cfg.dropout = 0.1;
  const auto train = random_words(rng, 80, 4);
  const auto dev = random_words(rng, 30, 4);
  const EmbeddingSpec spec{EmbeddingKind::Lookup, 4};
  const auto independent = train_lstm(v, train, dev, spec, cfg);
  const auto shared = train_shared({{&v, train, dev, 1}, {&v, train, dev, 2}}, spec, cfg);
  REQUIRE(shared.params.size() == 2);
  CHECK(shared.params[0].embeddings.get() == shared.embeddings.get());
  CHECK(shared.params[1].embeddings.get() == shared.embeddings.get());
  for (const auto& p : shared.params) {
    const double bits = mean_bits_per_phoneme(p, dev);
    CHECK(std::abs(bits - independent.log.best_dev_bits_per_phoneme) <= 0.05 * independent.log.best_dev_bits_per_phoneme);
  }
}

TEST_CASE("training preconditions") {
  const auto v = vocab_of({"a"});
  const EmbeddingSpec spec{EmbeddingKind::Lookup, 4};
  CHECK_THROWS_AS(train_lstm(v, {}, repeat({0}, 2), spec, tiny_config()), NeuralError);
  CHECK_THROWS_AS(train_lstm(v, repeat({0}, 2), {}, spec, tiny_config()), NeuralError);
  auto bad = tiny_config();
  bad.dropout = 1.0;
  CHECK_THROWS_AS(bad.validate(), NeuralError);
  CHECK_THROWS_AS(forward(small_params(EmbeddingKind::Lookup, v, nullptr, 1), std::vector<SymbolId>{1}), NeuralError);
}

TEST_CASE("checkpoints restore identical scores") {
  const auto v = vocab_of({"a", "m", "n", "r"});
  const auto ft = toy_features();
  const auto p = small_params(EmbeddingKind::Concat, v, &ft, 31);
  TrainConfig cfg;
  cfg.hidden = 5;
  const auto path = std::filesystem::temp_directory_path() / "phono_neural_test.ckpt";
  save_checkpoint(path, v, p, cfg, "lstm-concat");
  const auto loaded = load_checkpoint(path);
  CHECK(loaded.vocab == v);
  CHECK(loaded.model_id == "lstm-concat");
  CHECK(loaded.config.hidden == 5);
  const std::vector<SymbolId> w{3, 1, 0};
  CHECK(forward(loaded.params, w).log_probability == forward(p, w).log_probability);
  std::filesystem::remove(path);
}
