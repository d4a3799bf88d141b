#pragma once

// Phoneme-level LSTM language model trained from scratch: embedding
// variants (lookup, feature average, concatenation), full-word BPTT, Adam
// with plateau decay, early stopping, and optional cross-language sharing
// of the embedding store.

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "phono/features.hpp"
#include "phono/model.hpp"
#include "phono/ngram.hpp"
#include "phono/random.hpp"

namespace phono {

class NeuralError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class EmbeddingKind { Lookup, Feature, Concat };

EmbeddingKind parse_embedding_kind(std::string_view name);
std::string_view to_string(EmbeddingKind kind);

struct EmbeddingSpec {
  EmbeddingKind kind = EmbeddingKind::Lookup;
  int dim = 64;  // per sub-embedding

  int output_dim() const { return kind == EmbeddingKind::Concat ? 2 * dim : dim; }
  void validate() const;
};

struct TrainConfig {
  int hidden = 128;
  int layers = 1;
  double dropout = 0.3;  // on embeddings and before the output projection
  double learning_rate = 1e-2;
  double lr_decay = 0.5;  // applied on every non-improving dev evaluation
  int batch_size = 64;
  int max_epochs = 50;
  int patience = 10;
  std::uint64_t seed = 0;
  double clip_norm = 5.0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Embedding rows for a symbol space (phonemes plus "<s>"). Lookup rows are
/// columns of `lookup`; feature embeddings average the attribute columns of
/// `attributes` with the fixed weights in `mixing` (column r = a_r / sum(a_r)).
/// Shared between languages by shared_ptr in cross-language training.
class EmbeddingStore {
 public:
  EmbeddingStore(EmbeddingSpec spec, std::vector<std::string> symbols, const FeatureTable* features);

  // Rebuilds a store from saved blocks; shapes are checked against `spec`.
  static EmbeddingStore restore(EmbeddingSpec spec, std::vector<std::string> symbols, Eigen::MatrixXd lookup,
                                Eigen::MatrixXd attributes, Eigen::MatrixXd mixing);

  const EmbeddingSpec& spec() const { return spec_; }
  const std::vector<std::string>& symbols() const { return symbols_; }
  std::size_t rows() const { return symbols_.size(); }
  std::optional<std::size_t> row_of(std::string_view symbol) const;

  void initialize(Rng& rng);
  void embed(std::size_t row, Eigen::Ref<Eigen::VectorXd> out) const;

  Eigen::MatrixXd lookup;      // dim x rows
  Eigen::MatrixXd attributes;  // dim x n_attributes
  Eigen::MatrixXd mixing;      // n_attributes x rows, fixed

 private:
  EmbeddingStore() = default;

  EmbeddingSpec spec_;
  std::vector<std::string> symbols_;
};

struct LstmLayer {
  Eigen::MatrixXd w_input;      // 4H x input; gate blocks i, f, g, o
  Eigen::MatrixXd w_recurrent;  // 4H x H
  Eigen::VectorXd bias;         // 4H
};

struct NeuralParams {
  std::shared_ptr<EmbeddingStore> embeddings;
  std::vector<std::size_t> input_rows;  // local input id (phonemes, then bos) -> store row
  std::vector<LstmLayer> layers;
  Eigen::MatrixXd w_out;  // (|vocab| + 1) x H
  Eigen::VectorXd b_out;

  int hidden() const { return static_cast<int>(w_out.cols()); }
  std::size_t n_outcomes() const { return static_cast<std::size_t>(w_out.rows()); }
};

// Allocates shapes for `vocab` against `store` (every phoneme and "<s>" must
// have a store row) and draws the initial weights from `rng`.
NeuralParams init_params(std::shared_ptr<EmbeddingStore> store, const Vocabulary& vocab, const TrainConfig& config,
                         Rng& rng);

struct EmbeddingGrads {
  Eigen::MatrixXd lookup;
  Eigen::MatrixXd attributes;
};

struct NeuralGrads {
  EmbeddingGrads embeddings;
  std::vector<LstmLayer> layers;
  Eigen::MatrixXd w_out;
  Eigen::VectorXd b_out;

  static NeuralGrads zeros_like(const NeuralParams& params);
  void set_zero();
};

struct ForwardResult {
  std::vector<double> target_probabilities;  // m + 1 entries, the last for eos
  Eigen::MatrixXd distributions;             // n_outcomes x (m + 1)
  double log_probability = 0.0;              // natural log of q(word)
};

// Runs bos, x_1..x_m through the network with h_0 = 0 and emits m + 1
// distributions. Throws NeuralError on a non-finite activation.
ForwardResult forward(const NeuralParams& params, std::span<const SymbolId> word);

// Negative log-likelihood of one word (natural log). When `grads` is given
// the gradient is accumulated into it. Dropout is applied when `dropout_rng`
// is non-null and dropout > 0.
double word_loss(const NeuralParams& params, std::span<const SymbolId> word, NeuralGrads* grads, Rng* dropout_rng = nullptr,
                 double dropout = 0.0);

class NeuralScorer final : public LanguageModel {
 public:
  NeuralScorer(Vocabulary vocab, NeuralParams params, std::string model_id = "lstm");

  std::string model_id() const override { return model_id_; }
  const Vocabulary& vocabulary() const override { return vocab_; }
  std::vector<double> next_distribution(std::span<const SymbolId> history) const override;
  std::vector<double> sequence_probabilities(std::span<const SymbolId> word) const override;

  const NeuralParams& params() const { return params_; }

 private:
  Vocabulary vocab_;
  NeuralParams params_;
  std::string model_id_;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;  // mean nats per word over the epoch, with dropout
  double dev_bits_per_phoneme = 0.0;
  double learning_rate = 0.0;
  bool improved = false;
};

struct TrainingLog {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_dev_bits_per_phoneme = std::numeric_limits<double>::infinity();

  nlohmann::json to_json() const;
};

class DivergenceError : public NeuralError {
 public:
  DivergenceError(const std::string& what, TrainingLog log) : NeuralError(what), log_(std::move(log)) {}
  const TrainingLog& log() const { return log_; }

 private:
  TrainingLog log_;
};

struct TrainResult {
  NeuralParams params;
  TrainingLog log;
};

TrainResult train_lstm(const Vocabulary& vocab, std::span<const EncodedWord> train, std::span<const EncodedWord> dev,
                       const EmbeddingSpec& spec, const TrainConfig& config, const FeatureTable* features = nullptr);

struct LanguageTrainingData {
  const Vocabulary* vocab = nullptr;
  std::vector<EncodedWord> train;
  std::vector<EncodedWord> dev;
  std::uint64_t seed = 0;  // private initialization, shuffling and dropout
};

struct SharedTrainResult {
  std::shared_ptr<EmbeddingStore> embeddings;
  std::vector<NeuralParams> params;  // same order as the input languages
  std::vector<TrainingLog> logs;
};

// Language-specific LSTM and projection, one embedding store over the union
// of all symbols. Mini-batches are interleaved round-robin across languages;
// each language early-stops on its own dev set and then leaves the rotation.
// The store is initialized from config.seed.
SharedTrainResult train_shared(const std::vector<LanguageTrainingData>& languages, const EmbeddingSpec& spec,
                               const TrainConfig& config, const FeatureTable* features = nullptr);

// Mean over words of -log2 q(word) / (m + 1).
double mean_bits_per_phoneme(const NeuralParams& params, std::span<const EncodedWord> words);

struct GradientCheckReport {
  double max_relative_error = 0.0;
  std::map<std::string, double> per_group;  // group name -> max relative error
  std::size_t n_checked = 0;
};

// Compares the BPTT gradient of the word NLL with central finite
// differences over every trainable scalar. Relative error is
// |a - n| / max(|a| + |n|, 1e-6).
GradientCheckReport gradient_check(NeuralParams& params, std::span<const SymbolId> word, double step = 1e-5);

// Versioned little-endian binary checkpoint: config, vocabulary, embedding
// spec and every parameter block.
void save_checkpoint(const std::filesystem::path& path, const Vocabulary& vocab, const NeuralParams& params,
                     const TrainConfig& config, const std::string& model_id);

struct LoadedCheckpoint {
  Vocabulary vocab;
  NeuralParams params;
  TrainConfig config;
  std::string model_id;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace phono
