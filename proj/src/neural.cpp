#include "phono/neural.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>

namespace phono {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

EmbeddingKind parse_embedding_kind(std::string_view name) {
  if (name == "lookup") return EmbeddingKind::Lookup;
  if (name == "feature") return EmbeddingKind::Feature;
  if (name == "concat") return EmbeddingKind::Concat;
  throw NeuralError("unknown embedding kind '" + std::string(name) + "' (expected lookup, feature or concat)");
}

std::string_view to_string(EmbeddingKind kind) {
  switch (kind) {
    case EmbeddingKind::Lookup: return "lookup";
    case EmbeddingKind::Feature: return "feature";
    case EmbeddingKind::Concat: return "concat";
  }
  return "?";
}

void EmbeddingSpec::validate() const {
  if (dim < 1) throw NeuralError("embedding dimension must be >= 1");
}

void TrainConfig::validate() const {
  if (hidden < 1 || layers < 1 || batch_size < 1 || max_epochs < 1)
    throw NeuralError("hidden, layers, batch_size and max_epochs must be positive");
  if (patience < 0) throw NeuralError("patience must be non-negative");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw NeuralError("dropout must be in [0, 1)");
  if (!(learning_rate > 0.0) || !(lr_decay > 0.0 && lr_decay <= 1.0) || !(clip_norm > 0.0))
    throw NeuralError("learning_rate, lr_decay and clip_norm must be positive (lr_decay <= 1)");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"hidden", hidden},         {"layers", layers},         {"dropout", dropout},
          {"learning_rate", learning_rate}, {"lr_decay", lr_decay}, {"batch_size", batch_size},
          {"max_epochs", max_epochs}, {"patience", patience},     {"seed", seed},
          {"clip_norm", clip_norm}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.hidden = j.value("hidden", c.hidden);
  c.layers = j.value("layers", c.layers);
  c.dropout = j.value("dropout", c.dropout);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.lr_decay = j.value("lr_decay", c.lr_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.seed = j.value("seed", c.seed);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.validate();
  return c;
}

namespace {

void fill_uniform(MatrixXd& m, Rng& rng, double k) {
  for (Index j = 0; j < m.cols(); ++j)
    for (Index i = 0; i < m.rows(); ++i) m(i, j) = rng.uniform(-k, k);
}

bool uses_lookup(EmbeddingKind k) { return k != EmbeddingKind::Feature; }
bool uses_features(EmbeddingKind k) { return k != EmbeddingKind::Lookup; }

}  // namespace

EmbeddingStore::EmbeddingStore(EmbeddingSpec spec, std::vector<std::string> symbols, const FeatureTable* features)
    : spec_(spec), symbols_(std::move(symbols)) {
  spec_.validate();
  if (symbols_.empty()) throw NeuralError("embedding store needs at least one symbol");
  if (uses_lookup(spec_.kind)) lookup = MatrixXd::Zero(spec_.dim, static_cast<Index>(rows()));
  if (uses_features(spec_.kind)) {
    if (!features) throw NeuralError("feature embeddings need a feature table");
    const auto width = static_cast<Index>(features->width());
    attributes = MatrixXd::Zero(spec_.dim, width);
    mixing = MatrixXd::Zero(width, static_cast<Index>(rows()));
    for (std::size_t r = 0; r < rows(); ++r) {
      const auto v = feature_vector(*features, symbols_[r]);
      const double total = std::accumulate(v.begin(), v.end(), 0.0);
      if (total <= 0.0) throw NeuralError("all-zero attribute vector for '" + symbols_[r] + "'");
      for (Index k = 0; k < width; ++k) mixing(k, static_cast<Index>(r)) = v[static_cast<std::size_t>(k)] / total;
    }
  }
}

EmbeddingStore EmbeddingStore::restore(EmbeddingSpec spec, std::vector<std::string> symbols, MatrixXd lookup,
                                       MatrixXd attributes, MatrixXd mixing) {
  spec.validate();
  EmbeddingStore s;
  s.spec_ = spec;
  s.symbols_ = std::move(symbols);
  const auto rows = static_cast<Index>(s.symbols_.size());
  const bool lookup_ok = uses_lookup(spec.kind) ? lookup.rows() == spec.dim && lookup.cols() == rows : lookup.size() == 0;
  const bool feature_ok = uses_features(spec.kind) ? attributes.rows() == spec.dim && mixing.cols() == rows &&
                                                         mixing.rows() == attributes.cols()
                                                   : attributes.size() == 0;
  if (rows == 0 || !lookup_ok || !feature_ok) throw NeuralError("embedding blocks do not match the embedding spec");
  s.lookup = std::move(lookup);
  s.attributes = std::move(attributes);
  s.mixing = std::move(mixing);
  return s;
}

std::optional<std::size_t> EmbeddingStore::row_of(std::string_view symbol) const {
  for (std::size_t r = 0; r < symbols_.size(); ++r)
    if (symbols_[r] == symbol) return r;
  return std::nullopt;
}

void EmbeddingStore::initialize(Rng& rng) {
  if (lookup.size()) fill_uniform(lookup, rng, 0.1);
  if (attributes.size()) fill_uniform(attributes, rng, 0.1);
}

void EmbeddingStore::embed(std::size_t row, Eigen::Ref<VectorXd> out) const {
  const auto r = static_cast<Index>(row);
  const int d = spec_.dim;
  switch (spec_.kind) {
    case EmbeddingKind::Lookup: out = lookup.col(r); break;
    case EmbeddingKind::Feature: out = attributes * mixing.col(r); break;
    case EmbeddingKind::Concat:
      out.head(d) = lookup.col(r);
      out.tail(d) = attributes * mixing.col(r);
      break;
  }
}

NeuralParams init_params(std::shared_ptr<EmbeddingStore> store, const Vocabulary& vocab, const TrainConfig& config,
                         Rng& rng) {
  config.validate();
  NeuralParams p;
  p.embeddings = std::move(store);
  for (const auto& s : vocab.symbols()) {
    auto row = p.embeddings->row_of(s.str());
    if (!row) throw NeuralError("embedding store has no row for '" + s.str() + "'");
    p.input_rows.push_back(*row);
  }
  auto bos_row = p.embeddings->row_of(kBosSymbol);
  if (!bos_row) throw NeuralError("embedding store has no row for the beginning-of-word symbol");
  p.input_rows.push_back(*bos_row);

  const Index h = config.hidden;
  const double k = 1.0 / std::sqrt(static_cast<double>(h));
  Index in_dim = p.embeddings->spec().output_dim();
  for (int l = 0; l < config.layers; ++l) {
    LstmLayer layer;
    layer.w_input = MatrixXd(4 * h, in_dim);
    layer.w_recurrent = MatrixXd(4 * h, h);
    layer.bias = VectorXd::Zero(4 * h);
    fill_uniform(layer.w_input, rng, k);
    fill_uniform(layer.w_recurrent, rng, k);
    layer.bias.segment(h, h).setConstant(1.0);  // forget gate
    p.layers.push_back(std::move(layer));
    in_dim = h;
  }
  p.w_out = MatrixXd(static_cast<Index>(vocab.n_outcomes()), h);
  fill_uniform(p.w_out, rng, k);
  p.b_out = VectorXd::Zero(static_cast<Index>(vocab.n_outcomes()));
  return p;
}

NeuralGrads NeuralGrads::zeros_like(const NeuralParams& p) {
  NeuralGrads g;
  g.embeddings.lookup = MatrixXd::Zero(p.embeddings->lookup.rows(), p.embeddings->lookup.cols());
  g.embeddings.attributes = MatrixXd::Zero(p.embeddings->attributes.rows(), p.embeddings->attributes.cols());
  for (const auto& l : p.layers)
    g.layers.push_back({MatrixXd::Zero(l.w_input.rows(), l.w_input.cols()),
                        MatrixXd::Zero(l.w_recurrent.rows(), l.w_recurrent.cols()), VectorXd::Zero(l.bias.size())});
  g.w_out = MatrixXd::Zero(p.w_out.rows(), p.w_out.cols());
  g.b_out = VectorXd::Zero(p.b_out.size());
  return g;
}

void NeuralGrads::set_zero() {
  embeddings.lookup.setZero();
  embeddings.attributes.setZero();
  for (auto& l : layers) {
    l.w_input.setZero();
    l.w_recurrent.setZero();
    l.bias.setZero();
  }
  w_out.setZero();
  b_out.setZero();
}

namespace {

struct LayerCache {
  MatrixXd input;  // in_dim x T
  MatrixXd i, f, g, o, c, tc, h;
};

struct PassCache {
  std::vector<SymbolId> inputs;
  std::vector<SymbolId> targets;
  MatrixXd emb_mask;  // empty without dropout
  MatrixXd out_mask;
  std::vector<LayerCache> layers;
  MatrixXd top;        // top hidden after output dropout, H x T
  MatrixXd log_probs;  // n_outcomes x T
};

MatrixXd dropout_mask(Index rows, Index cols, double rate, Rng& rng) {
  MatrixXd mask(rows, cols);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) mask(i, j) = rng.bernoulli(rate) ? 0.0 : keep_scale;
  return mask;
}

void run_forward(const NeuralParams& p, std::span<const SymbolId> word, PassCache& cache, Rng* rng, double dropout) {
  const std::size_t n_phonemes = p.n_outcomes() - 1;
  const Index T = static_cast<Index>(word.size() + 1);
  cache.inputs.assign(1, static_cast<SymbolId>(n_phonemes));  // local bos input id
  cache.targets.clear();
  for (SymbolId s : word) {
    if (s >= n_phonemes) throw NeuralError("symbol id outside the model vocabulary: " + std::to_string(s));
    cache.inputs.push_back(s);
    cache.targets.push_back(s);
  }
  cache.targets.push_back(static_cast<SymbolId>(n_phonemes));  // eos

  const auto& store = *p.embeddings;
  const Index D = store.spec().output_dim();
  MatrixXd x(D, T);
  for (Index t = 0; t < T; ++t) store.embed(p.input_rows[cache.inputs[static_cast<std::size_t>(t)]], x.col(t));

  const bool use_dropout = rng != nullptr && dropout > 0.0;
  if (use_dropout) {
    cache.emb_mask = dropout_mask(D, T, dropout, *rng);
    x.array() *= cache.emb_mask.array();
  } else {
    cache.emb_mask.resize(0, 0);
  }

  cache.layers.resize(p.layers.size());
  const Index H = p.hidden();
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& layer = p.layers[l];
    auto& lc = cache.layers[l];
    lc.input = l == 0 ? x : cache.layers[l - 1].h;
    MatrixXd pre = layer.w_input * lc.input;
    pre.colwise() += layer.bias;
    for (auto* m : {&lc.i, &lc.f, &lc.g, &lc.o, &lc.c, &lc.tc, &lc.h}) m->resize(H, T);
    VectorXd h_prev = VectorXd::Zero(H);
    VectorXd c_prev = VectorXd::Zero(H);
    VectorXd a(4 * H);
    for (Index t = 0; t < T; ++t) {
      a.noalias() = pre.col(t);
      a.noalias() += layer.w_recurrent * h_prev;
      lc.i.col(t) = (1.0 / (1.0 + (-a.segment(0, H).array()).exp())).matrix();
      lc.f.col(t) = (1.0 / (1.0 + (-a.segment(H, H).array()).exp())).matrix();
      lc.g.col(t) = a.segment(2 * H, H).array().tanh().matrix();
      lc.o.col(t) = (1.0 / (1.0 + (-a.segment(3 * H, H).array()).exp())).matrix();
      lc.c.col(t) = (lc.f.col(t).array() * c_prev.array() + lc.i.col(t).array() * lc.g.col(t).array()).matrix();
      lc.tc.col(t) = lc.c.col(t).array().tanh().matrix();
      lc.h.col(t) = (lc.o.col(t).array() * lc.tc.col(t).array()).matrix();
      h_prev = lc.h.col(t);
      c_prev = lc.c.col(t);
    }
  }

  cache.top = cache.layers.back().h;
  if (use_dropout) {
    cache.out_mask = dropout_mask(H, T, dropout, *rng);
    cache.top.array() *= cache.out_mask.array();
  } else {
    cache.out_mask.resize(0, 0);
  }

  MatrixXd logits = p.w_out * cache.top;
  logits.colwise() += p.b_out;
  cache.log_probs.resize(logits.rows(), T);
  for (Index t = 0; t < T; ++t) {
    const double mx = logits.col(t).maxCoeff();
    const double lse = mx + std::log((logits.col(t).array() - mx).exp().sum());
    cache.log_probs.col(t) = logits.col(t).array() - lse;
  }
  if (!cache.log_probs.allFinite()) throw NeuralError("non-finite activation in forward pass");
}

void run_backward(const NeuralParams& p, const PassCache& cache, NeuralGrads& grads) {
  const Index T = static_cast<Index>(cache.targets.size());
  const Index H = p.hidden();

  MatrixXd dlogits = cache.log_probs.array().exp().matrix();
  for (Index t = 0; t < T; ++t) dlogits(cache.targets[static_cast<std::size_t>(t)], t) -= 1.0;
  grads.w_out.noalias() += dlogits * cache.top.transpose();
  grads.b_out += dlogits.rowwise().sum();
  MatrixXd dh_above = p.w_out.transpose() * dlogits;
  if (cache.out_mask.size()) dh_above.array() *= cache.out_mask.array();

  for (std::size_t li = p.layers.size(); li-- > 0;) {
    const auto& layer = p.layers[li];
    const auto& lc = cache.layers[li];
    auto& lg = grads.layers[li];
    MatrixXd da(4 * H, T);
    VectorXd dh_next = VectorXd::Zero(H);
    VectorXd dc_next = VectorXd::Zero(H);
    for (Index t = T - 1; t >= 0; --t) {
      const VectorXd dh = dh_above.col(t) + dh_next;
      const auto i = lc.i.col(t).array();
      const auto f = lc.f.col(t).array();
      const auto g = lc.g.col(t).array();
      const auto o = lc.o.col(t).array();
      const auto tc = lc.tc.col(t).array();
      const VectorXd dc = (dh.array() * o * (1.0 - tc * tc) + dc_next.array()).matrix();
      const VectorXd c_prev = t > 0 ? VectorXd(lc.c.col(t - 1)) : VectorXd::Zero(H);
      da.col(t).segment(0, H) = (dc.array() * g * i * (1.0 - i)).matrix();
      da.col(t).segment(H, H) = (dc.array() * c_prev.array() * f * (1.0 - f)).matrix();
      da.col(t).segment(2 * H, H) = (dc.array() * i * (1.0 - g * g)).matrix();
      da.col(t).segment(3 * H, H) = (dh.array() * tc * o * (1.0 - o)).matrix();
      dc_next = (dc.array() * f).matrix();
      dh_next.noalias() = layer.w_recurrent.transpose() * da.col(t);
    }
    lg.w_input.noalias() += da * lc.input.transpose();
    if (T > 1) lg.w_recurrent.noalias() += da.rightCols(T - 1) * lc.h.leftCols(T - 1).transpose();
    lg.bias += da.rowwise().sum();
    dh_above = layer.w_input.transpose() * da;
  }

  // dh_above now holds the gradient with respect to the (dropped-out) embeddings.
  MatrixXd demb = std::move(dh_above);
  if (cache.emb_mask.size()) demb.array() *= cache.emb_mask.array();
  const auto& store = *p.embeddings;
  const int d = store.spec().dim;
  for (Index t = 0; t < T; ++t) {
    const auto row = static_cast<Index>(p.input_rows[cache.inputs[static_cast<std::size_t>(t)]]);
    switch (store.spec().kind) {
      case EmbeddingKind::Lookup: grads.embeddings.lookup.col(row) += demb.col(t); break;
      case EmbeddingKind::Feature:
        grads.embeddings.attributes.noalias() += demb.col(t) * store.mixing.col(row).transpose();
        break;
      case EmbeddingKind::Concat:
        grads.embeddings.lookup.col(row) += demb.col(t).head(d);
        grads.embeddings.attributes.noalias() += demb.col(t).tail(d) * store.mixing.col(row).transpose();
        break;
    }
  }
}

double loss_from_cache(const PassCache& cache) {
  double loss = 0.0;
  for (std::size_t t = 0; t < cache.targets.size(); ++t)
    loss -= cache.log_probs(cache.targets[t], static_cast<Index>(t));
  return loss;
}

}  // namespace

ForwardResult forward(const NeuralParams& params, std::span<const SymbolId> word) {
  PassCache cache;
  run_forward(params, word, cache, nullptr, 0.0);
  ForwardResult r;
  r.distributions = cache.log_probs.array().exp().matrix();
  for (std::size_t t = 0; t < cache.targets.size(); ++t) {
    const double lp = cache.log_probs(cache.targets[t], static_cast<Index>(t));
    r.target_probabilities.push_back(std::exp(lp));
    r.log_probability += lp;
  }
  return r;
}

double word_loss(const NeuralParams& params, std::span<const SymbolId> word, NeuralGrads* grads, Rng* dropout_rng,
                 double dropout) {
  PassCache cache;
  run_forward(params, word, cache, dropout_rng, dropout);
  if (grads) run_backward(params, cache, *grads);
  return loss_from_cache(cache);
}

NeuralScorer::NeuralScorer(Vocabulary vocab, NeuralParams params, std::string model_id)
    : vocab_(std::move(vocab)), params_(std::move(params)), model_id_(std::move(model_id)) {
  if (params_.n_outcomes() != vocab_.n_outcomes())
    throw NeuralError("parameter shapes do not match the vocabulary of " + vocab_.language_id());
}

std::vector<double> NeuralScorer::next_distribution(std::span<const SymbolId> history) const {
  const auto r = forward(params_, history);
  const auto last = r.distributions.col(r.distributions.cols() - 1);
  return std::vector<double>(last.data(), last.data() + last.size());
}

std::vector<double> NeuralScorer::sequence_probabilities(std::span<const SymbolId> word) const {
  return forward(params_, word).target_probabilities;
}

double mean_bits_per_phoneme(const NeuralParams& params, std::span<const EncodedWord> words) {
  if (words.empty()) throw NeuralError("mean_bits_per_phoneme: no words");
  double total = 0.0;
  for (const auto& w : words) {
    const double nats = word_loss(params, w, nullptr);
    total += nats / std::log(2.0) / static_cast<double>(w.size() + 1);
  }
  return total / static_cast<double>(words.size());
}

nlohmann::json TrainingLog::to_json() const {
  nlohmann::json epochs_json = nlohmann::json::array();
  for (const auto& e : epochs)
    epochs_json.push_back({{"epoch", e.epoch},
                           {"train_loss", e.train_loss},
                           {"dev_bits_per_phoneme", e.dev_bits_per_phoneme},
                           {"learning_rate", e.learning_rate},
                           {"improved", e.improved}});
  return {{"best_epoch", best_epoch}, {"best_dev_bits_per_phoneme", best_dev_bits_per_phoneme}, {"epochs", epochs_json}};
}

namespace {

struct Block {
  std::string group;
  double* data;
  Index size;
  Index rows;  // for gate grouping of LSTM blocks
};

std::vector<Block> private_blocks(NeuralParams& p) {
  std::vector<Block> out;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& layer = p.layers[l];
    const std::string prefix = "lstm" + std::to_string(l);
    out.push_back({prefix + ".input", layer.w_input.data(), layer.w_input.size(), layer.w_input.rows()});
    out.push_back({prefix + ".recurrent", layer.w_recurrent.data(), layer.w_recurrent.size(), layer.w_recurrent.rows()});
    out.push_back({prefix + ".bias", layer.bias.data(), layer.bias.size(), layer.bias.size()});
  }
  out.push_back({"output.weight", p.w_out.data(), p.w_out.size(), p.w_out.rows()});
  out.push_back({"output.bias", p.b_out.data(), p.b_out.size(), p.b_out.size()});
  return out;
}

std::vector<Block> private_blocks(NeuralGrads& g) {
  std::vector<Block> out;
  for (std::size_t l = 0; l < g.layers.size(); ++l) {
    auto& layer = g.layers[l];
    const std::string prefix = "lstm" + std::to_string(l);
    out.push_back({prefix + ".input", layer.w_input.data(), layer.w_input.size(), layer.w_input.rows()});
    out.push_back({prefix + ".recurrent", layer.w_recurrent.data(), layer.w_recurrent.size(), layer.w_recurrent.rows()});
    out.push_back({prefix + ".bias", layer.bias.data(), layer.bias.size(), layer.bias.size()});
  }
  out.push_back({"output.weight", g.w_out.data(), g.w_out.size(), g.w_out.rows()});
  out.push_back({"output.bias", g.b_out.data(), g.b_out.size(), g.b_out.size()});
  return out;
}

std::vector<Block> store_blocks(EmbeddingStore& s) {
  std::vector<Block> out;
  if (s.lookup.size()) out.push_back({"embedding.lookup", s.lookup.data(), s.lookup.size(), s.lookup.rows()});
  if (s.attributes.size())
    out.push_back({"embedding.attributes", s.attributes.data(), s.attributes.size(), s.attributes.rows()});
  return out;
}

std::vector<Block> store_blocks(EmbeddingGrads& g) {
  std::vector<Block> out;
  if (g.lookup.size()) out.push_back({"embedding.lookup", g.lookup.data(), g.lookup.size(), g.lookup.rows()});
  if (g.attributes.size())
    out.push_back({"embedding.attributes", g.attributes.data(), g.attributes.size(), g.attributes.rows()});
  return out;
}

class Adam {
 public:
  void update(const std::vector<Block>& params, const std::vector<Block>& grads, double lr) {
    if (moments_.empty()) {
      for (const auto& b : params) moments_.push_back({VectorXd::Zero(b.size), VectorXd::Zero(b.size)});
    }
    ++step_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Eigen::Map<VectorXd> w(params[k].data, params[k].size);
      Eigen::Map<const VectorXd> g(grads[k].data, grads[k].size);
      auto& [m, v] = moments_[k];
      m = kBeta1 * m + (1.0 - kBeta1) * g;
      v = kBeta2 * v + (1.0 - kBeta2) * g.cwiseProduct(g);
      w.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + kEps);
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  std::vector<std::pair<VectorXd, VectorXd>> moments_;
  long step_ = 0;
};

struct Task {
  const LanguageTrainingData* data;
  NeuralParams params;
  NeuralParams best;
  NeuralGrads grads;
  Adam adam;
  Rng rng;
  double lr;
  int non_improving = 0;
  bool active = true;
  TrainingLog log;
};

std::vector<std::string> store_symbols(const std::vector<LanguageTrainingData>& languages) {
  std::set<std::string> all;
  for (const auto& l : languages)
    for (const auto& s : l.vocab->symbols()) all.insert(s.str());
  std::vector<std::string> out(all.begin(), all.end());
  out.emplace_back(kBosSymbol);
  return out;
}

void train_step(Task& task, EmbeddingStore& store, Adam& store_adam, std::span<const std::size_t> batch,
                const TrainConfig& config, double& epoch_loss) {
  task.grads.set_zero();
  for (std::size_t idx : batch)
    epoch_loss += word_loss(task.params, task.data->train[idx], &task.grads, &task.rng, config.dropout);

  auto pgrads = private_blocks(task.grads);
  auto sgrads = store_blocks(task.grads.embeddings);
  const double scale = 1.0 / static_cast<double>(batch.size());
  double sq = 0.0;
  for (auto* blocks : {&pgrads, &sgrads})
    for (auto& b : *blocks) {
      Eigen::Map<VectorXd> g(b.data, b.size);
      g *= scale;
      sq += g.squaredNorm();
    }
  const double norm = std::sqrt(sq);
  if (norm > config.clip_norm) {
    const double c = config.clip_norm / norm;
    for (auto* blocks : {&pgrads, &sgrads})
      for (auto& b : *blocks) Eigen::Map<VectorXd>(b.data, b.size) *= c;
  }
  task.adam.update(private_blocks(task.params), pgrads, task.lr);
  store_adam.update(store_blocks(store), sgrads, task.lr);
}

SharedTrainResult train_core(const std::vector<LanguageTrainingData>& languages, const EmbeddingSpec& spec,
                             const TrainConfig& config, const FeatureTable* features) {
  spec.validate();
  config.validate();
  if (languages.empty()) throw NeuralError("no languages to train");
  for (const auto& l : languages) {
    if (!l.vocab) throw NeuralError("language training data without a vocabulary");
    if (l.train.empty() || l.dev.empty())
      throw NeuralError("train and dev sets must be non-empty for " + l.vocab->language_id());
  }

  auto store = std::make_shared<EmbeddingStore>(spec, store_symbols(languages), features);
  {
    Rng init_rng(config.seed);
    store->initialize(init_rng);
  }
  const bool single = languages.size() == 1;
  std::optional<EmbeddingStore> best_store;
  Adam store_adam;

  std::vector<Task> tasks;
  tasks.reserve(languages.size());
  for (const auto& l : languages) {
    Rng rng(l.seed);
    auto params = init_params(store, *l.vocab, config, rng);
    auto grads = NeuralGrads::zeros_like(params);
    tasks.push_back(Task{&l, params, params, std::move(grads), Adam{}, std::move(rng), config.learning_rate, 0, true, {}});
  }

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::vector<Task*> active;
    for (auto& t : tasks)
      if (t.active) active.push_back(&t);
    if (active.empty()) break;

    std::vector<std::vector<std::size_t>> orders(active.size());
    std::size_t max_batches = 0;
    for (std::size_t k = 0; k < active.size(); ++k) {
      orders[k].resize(active[k]->data->train.size());
      std::iota(orders[k].begin(), orders[k].end(), std::size_t{0});
      active[k]->rng.shuffle(orders[k]);
      const auto n_batches = (orders[k].size() + config.batch_size - 1) / config.batch_size;
      max_batches = std::max(max_batches, n_batches);
    }
    std::vector<double> epoch_loss(active.size(), 0.0);
    for (std::size_t b = 0; b < max_batches; ++b) {
      for (std::size_t k = 0; k < active.size(); ++k) {
        const auto begin = b * static_cast<std::size_t>(config.batch_size);
        if (begin >= orders[k].size()) continue;
        const auto end = std::min(orders[k].size(), begin + config.batch_size);
        try {
          train_step(*active[k], *store, store_adam, std::span(orders[k]).subspan(begin, end - begin), config,
                     epoch_loss[k]);
        } catch (const NeuralError& e) {
          throw DivergenceError(active[k]->data->vocab->language_id() + ": " + e.what() + " at epoch " +
                                    std::to_string(epoch),
                                active[k]->log);
        }
      }
    }

    for (std::size_t k = 0; k < active.size(); ++k) {
      Task& task = *active[k];
      EpochRecord rec;
      rec.epoch = epoch;
      rec.train_loss = epoch_loss[k] / static_cast<double>(task.data->train.size());
      rec.learning_rate = task.lr;
      try {
        rec.dev_bits_per_phoneme = mean_bits_per_phoneme(task.params, task.data->dev);
      } catch (const NeuralError&) {
        rec.dev_bits_per_phoneme = std::numeric_limits<double>::quiet_NaN();
      }
      if (!std::isfinite(rec.dev_bits_per_phoneme) || !std::isfinite(rec.train_loss)) {
        task.log.epochs.push_back(rec);
        throw DivergenceError(task.data->vocab->language_id() + ": dev loss diverged at epoch " + std::to_string(epoch),
                              task.log);
      }
      rec.improved = rec.dev_bits_per_phoneme < task.log.best_dev_bits_per_phoneme;
      task.log.epochs.push_back(rec);
      if (rec.improved) {
        task.log.best_dev_bits_per_phoneme = rec.dev_bits_per_phoneme;
        task.log.best_epoch = epoch;
        task.best = task.params;
        task.non_improving = 0;
        if (single) best_store = *store;
      } else {
        task.lr *= config.lr_decay;
        if (++task.non_improving > config.patience) task.active = false;
      }
    }
  }

  if (single && best_store) *store = *best_store;
  SharedTrainResult result;
  result.embeddings = store;
  for (auto& t : tasks) {
    result.params.push_back(std::move(t.best));
    result.logs.push_back(std::move(t.log));
  }
  return result;
}

}  // namespace

TrainResult train_lstm(const Vocabulary& vocab, std::span<const EncodedWord> train, std::span<const EncodedWord> dev,
                       const EmbeddingSpec& spec, const TrainConfig& config, const FeatureTable* features) {
  std::vector<LanguageTrainingData> data(1);
  data[0].vocab = &vocab;
  data[0].train.assign(train.begin(), train.end());
  data[0].dev.assign(dev.begin(), dev.end());
  data[0].seed = config.seed;
  auto shared = train_core(data, spec, config, features);
  return {std::move(shared.params.front()), std::move(shared.logs.front())};
}

SharedTrainResult train_shared(const std::vector<LanguageTrainingData>& languages, const EmbeddingSpec& spec,
                               const TrainConfig& config, const FeatureTable* features) {
  return train_core(languages, spec, config, features);
}

GradientCheckReport gradient_check(NeuralParams& params, std::span<const SymbolId> word, double step) {
  auto grads = NeuralGrads::zeros_like(params);
  word_loss(params, word, &grads);

  GradientCheckReport report;
  auto check = [&](const std::vector<Block>& pblocks, const std::vector<Block>& gblocks) {
    for (std::size_t k = 0; k < pblocks.size(); ++k) {
      const auto& pb = pblocks[k];
      const auto& gb = gblocks[k];
      const bool lstm = pb.group.rfind("lstm", 0) == 0;
      const std::string layer = lstm ? pb.group.substr(0, pb.group.find('.')) : std::string();
      for (Index i = 0; i < pb.size; ++i) {
        const double original = pb.data[i];
        pb.data[i] = original + step;
        const double plus = word_loss(params, word, nullptr);
        pb.data[i] = original - step;
        const double minus = word_loss(params, word, nullptr);
        pb.data[i] = original;
        const double numeric = (plus - minus) / (2.0 * step);
        const double analytic = gb.data[i];
        const double rel = std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), 1e-6);
        std::string group = pb.group;
        if (lstm) {
          const Index H = pb.rows / 4;
          static constexpr const char* kGates[4] = {"i", "f", "g", "o"};
          group = layer + ".gate_" + kGates[(i % pb.rows) / H];
        } else if (group.rfind("output", 0) == 0) {
          group = "output";
        }
        auto& slot = report.per_group[group];
        slot = std::max(slot, rel);
        report.max_relative_error = std::max(report.max_relative_error, rel);
        ++report.n_checked;
      }
    }
  };
  check(store_blocks(*params.embeddings), store_blocks(grads.embeddings));
  check(private_blocks(params), private_blocks(grads));
  return report;
}

namespace {

constexpr char kCheckpointMagic[8] = {'P', 'H', 'O', 'N', 'O', 'L', 'M', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }
std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw NeuralError("truncated checkpoint");
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  const auto n = read_u64(in);
  if (n > (1u << 30)) throw NeuralError("corrupt checkpoint string length");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw NeuralError("truncated checkpoint");
  return s;
}

void write_matrix(std::ostream& out, const MatrixXd& m) {
  write_u64(out, static_cast<std::uint64_t>(m.rows()));
  write_u64(out, static_cast<std::uint64_t>(m.cols()));
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

MatrixXd read_matrix(std::istream& in) {
  const auto rows = static_cast<Index>(read_u64(in));
  const auto cols = static_cast<Index>(read_u64(in));
  if (rows < 0 || cols < 0 || rows * cols > (Index{1} << 28)) throw NeuralError("corrupt checkpoint matrix shape");
  MatrixXd m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  if (!in) throw NeuralError("truncated checkpoint");
  return m;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Vocabulary& vocab, const NeuralParams& params,
                     const TrainConfig& config, const std::string& model_id) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw NeuralError("cannot write checkpoint " + path.string());
  const auto& store = *params.embeddings;
  nlohmann::ordered_json header;
  header["model_id"] = model_id;
  header["language_id"] = vocab.language_id();
  std::vector<std::string> symbols;
  for (const auto& s : vocab.symbols()) symbols.push_back(s.str());
  header["symbols"] = symbols;
  header["config"] = config.to_json();
  header["embedding"] = {{"kind", to_string(store.spec().kind)}, {"dim", store.spec().dim}};
  header["store_symbols"] = store.symbols();
  header["input_rows"] = params.input_rows;
  header["layers"] = params.layers.size();

  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  write_u64(out, kCheckpointVersion);
  write_u64(out, vocab.fingerprint());
  write_string(out, header.dump());
  write_matrix(out, store.lookup);
  write_matrix(out, store.attributes);
  write_matrix(out, store.mixing);
  for (const auto& l : params.layers) {
    write_matrix(out, l.w_input);
    write_matrix(out, l.w_recurrent);
    write_matrix(out, l.bias);
  }
  write_matrix(out, params.w_out);
  write_matrix(out, params.b_out);
  if (!out) throw NeuralError("failed writing checkpoint " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NeuralError("cannot open checkpoint " + path.string());
  char magic[sizeof kCheckpointMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw NeuralError(path.string() + " is not a checkpoint");
  if (read_u64(in) != kCheckpointVersion) throw NeuralError("unsupported checkpoint version in " + path.string());
  const auto fingerprint = read_u64(in);
  const auto header = nlohmann::json::parse(read_string(in));

  std::vector<Segment> symbols;
  for (const auto& s : header.at("symbols")) symbols.emplace_back(s.get<std::string>());
  Vocabulary vocab(header.at("language_id").get<std::string>(), std::move(symbols));
  if (vocab.fingerprint() != fingerprint) throw NeuralError("vocabulary fingerprint mismatch in " + path.string());

  EmbeddingSpec spec{parse_embedding_kind(header.at("embedding").at("kind").get<std::string>()),
                     header.at("embedding").at("dim").get<int>()};
  auto lookup = read_matrix(in);
  auto attributes = read_matrix(in);
  auto mixing = read_matrix(in);
  NeuralParams params;
  params.embeddings = std::make_shared<EmbeddingStore>(
      EmbeddingStore::restore(spec, header.at("store_symbols").get<std::vector<std::string>>(), std::move(lookup),
                              std::move(attributes), std::move(mixing)));
  params.input_rows = header.at("input_rows").get<std::vector<std::size_t>>();
  const auto n_layers = header.at("layers").get<std::size_t>();
  for (std::size_t l = 0; l < n_layers; ++l) {
    LstmLayer layer;
    layer.w_input = read_matrix(in);
    layer.w_recurrent = read_matrix(in);
    layer.bias = read_matrix(in);
    params.layers.push_back(std::move(layer));
  }
  params.w_out = read_matrix(in);
  params.b_out = read_matrix(in);
  return {std::move(vocab), std::move(params), TrainConfig::from_json(header.at("config")),
          header.at("model_id").get<std::string>()};
}

}  // namespace phono
