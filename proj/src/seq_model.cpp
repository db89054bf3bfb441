#include "riskunc/seq_model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "riskunc/error.hpp"
#include "riskunc/ops.hpp"

namespace riskunc {

namespace {

using nlohmann::json;

constexpr std::array kBatchSizes = {32, 64, 128, 256, 512};
constexpr std::array kDenseEmbeddingDims = {16, 32, 64, 100, 128, 256, 512};
constexpr std::array kRnnDims = {16, 32, 64, 128, 256, 512, 1024};
constexpr std::array kHiddenDims = {0, 16, 32, 64, 128, 256, 512};

template <typename A>
bool contains(const A& set, int v) {
  return std::find(set.begin(), set.end(), v) != set.end();
}

// Stream tags for the per-model generators.
constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kTrainStream = 0x7A41;

}  // namespace

int ModelConfig::event_embedding_dim() const {
  return std::max(1, static_cast<int>(std::lround(embedding_dim_multiplier * dense_embedding_dim)));
}

void ModelConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be finite and >= 0");
  if (annealing_steps < 1) throw ConfigError("annealing_steps must be at least 1");
  if (!(prior_std > 0.0) || !std::isfinite(prior_std)) throw ConfigError("prior_std must be positive");
  if (dense_embedding_dim < 1) throw ConfigError("dense_embedding_dim must be at least 1");
  if (!(embedding_dim_multiplier > 0.0) || !std::isfinite(embedding_dim_multiplier)) {
    throw ConfigError("embedding_dim_multiplier must be positive");
  }
  if (rnn_dim < 1) throw ConfigError("rnn_dim must be at least 1");
  if (num_rnn_layers < 1 || num_rnn_layers > 3) throw ConfigError("num_rnn_layers must be 1, 2 or 3");
  if (hidden_layer_dim < 0) throw ConfigError("hidden_layer_dim must be >= 0");
  if (task.kind == TaskKind::kBinary && task.num_classes != 2) throw ConfigError("binary task has 2 classes");
  if (task.num_classes < 2) throw ConfigError("multiclass task needs at least 2 classes");
}

void ModelConfig::validate_search_ranges() const {
  validate();
  if (!contains(kBatchSizes, batch_size)) throw ConfigError("batch_size outside {32, 64, 128, 256, 512}");
  if (learning_rate < 1e-5 || learning_rate > 0.1) throw ConfigError("learning_rate outside [1e-5, 0.1]");
  if (annealing_steps > 1'000'000) throw ConfigError("annealing_steps outside [1, 1e6]");
  if (stochasticity.any()) IsotropicPrior::from_search_range(prior_std);
  if (!contains(kDenseEmbeddingDims, dense_embedding_dim)) throw ConfigError("dense_embedding_dim outside search set");
  if (embedding_dim_multiplier < 0.5 || embedding_dim_multiplier > 1.5) {
    throw ConfigError("embedding_dim_multiplier outside [0.5, 1.5]");
  }
  if (!contains(kRnnDims, rnn_dim)) throw ConfigError("rnn_dim outside search set");
  if (!contains(kHiddenDims, hidden_layer_dim)) throw ConfigError("hidden_layer_dim outside search set");
}

std::string ModelConfig::to_json() const {
  json j;
  j["batch_size"] = batch_size;
  j["learning_rate"] = learning_rate;
  j["annealing_steps"] = annealing_steps;
  j["prior_std"] = prior_std;
  j["dense_embedding_dim"] = dense_embedding_dim;
  j["embedding_dim_multiplier"] = embedding_dim_multiplier;
  j["rnn_dim"] = rnn_dim;
  j["num_rnn_layers"] = num_rnn_layers;
  j["hidden_layer_dim"] = hidden_layer_dim;
  j["stochasticity"] = {{"embeddings", stochasticity.embeddings},
                        {"rnn", stochasticity.rnn},
                        {"hidden", stochasticity.hidden},
                        {"output", stochasticity.output},
                        {"bias_uncertainty", stochasticity.bias_uncertainty}};
  j["task"] = {{"kind", task.kind == TaskKind::kBinary ? "binary" : "multiclass"}, {"num_classes", task.num_classes}};
  j["seed"] = seed;
  return j.dump();
}

ModelConfig ModelConfig::from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    ModelConfig c;
    c.batch_size = j.at("batch_size").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.annealing_steps = j.at("annealing_steps").get<std::int64_t>();
    c.prior_std = j.at("prior_std").get<double>();
    c.dense_embedding_dim = j.at("dense_embedding_dim").get<int>();
    c.embedding_dim_multiplier = j.at("embedding_dim_multiplier").get<double>();
    c.rnn_dim = j.at("rnn_dim").get<int>();
    c.num_rnn_layers = j.at("num_rnn_layers").get<int>();
    c.hidden_layer_dim = j.at("hidden_layer_dim").get<int>();
    const auto& s = j.at("stochasticity");
    c.stochasticity.embeddings = s.at("embeddings").get<bool>();
    c.stochasticity.rnn = s.at("rnn").get<bool>();
    c.stochasticity.hidden = s.at("hidden").get<bool>();
    c.stochasticity.output = s.at("output").get<bool>();
    c.stochasticity.bias_uncertainty = s.at("bias_uncertainty").get<bool>();
    const auto& t = j.at("task");
    const auto kind = t.at("kind").get<std::string>();
    if (kind != "binary" && kind != "multiclass") throw ConfigError("unknown task kind '" + kind + "'");
    c.task.kind = kind == "binary" ? TaskKind::kBinary : TaskKind::kMulticlass;
    c.task.num_classes = t.at("num_classes").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad model config: ") + e.what());
  }
}

ModelConfig paper_config(Variant variant) {
  ModelConfig c;
  c.stochasticity = stochasticity_for(variant);
  switch (variant) {
    case Variant::kDeterministic:
    case Variant::kDeterministicEnsemble:
      c.batch_size = 256, c.learning_rate = 3.035e-4, c.annealing_steps = 1, c.prior_std = 1.0;
      c.dense_embedding_dim = 32, c.embedding_dim_multiplier = 0.858, c.rnn_dim = 1024, c.hidden_layer_dim = 512;
      break;
    case Variant::kBayesianEmbeddings:
      c.batch_size = 256, c.learning_rate = 1.238e-3, c.annealing_steps = 972'200, c.prior_std = 0.292;
      c.dense_embedding_dim = 32, c.embedding_dim_multiplier = 0.858, c.rnn_dim = 1024, c.hidden_layer_dim = 512;
      break;
    case Variant::kBayesianOutput:
      c.batch_size = 256, c.learning_rate = 1.647e-4, c.annealing_steps = 878'200, c.prior_std = 0.149;
      c.dense_embedding_dim = 32, c.embedding_dim_multiplier = 0.858, c.rnn_dim = 1024, c.hidden_layer_dim = 512;
      break;
    case Variant::kBayesianHiddenOutput:
      c.batch_size = 256, c.learning_rate = 2.710e-4, c.annealing_steps = 991'200, c.prior_std = 0.149;
      c.dense_embedding_dim = 32, c.embedding_dim_multiplier = 0.858, c.rnn_dim = 1024, c.hidden_layer_dim = 512;
      break;
    case Variant::kBayesianRnnHiddenOutput:
      c.batch_size = 512, c.learning_rate = 1.488e-3, c.annealing_steps = 634'200, c.prior_std = 0.252;
      c.dense_embedding_dim = 32, c.embedding_dim_multiplier = 1.291, c.rnn_dim = 16, c.hidden_layer_dim = 0;
      c.stochasticity.bias_uncertainty = true;
      break;
    case Variant::kFullyBayesian:
      c.batch_size = 128, c.learning_rate = 1.265e-3, c.annealing_steps = 998'300, c.prior_std = 0.162;
      c.dense_embedding_dim = 256, c.embedding_dim_multiplier = 1.061, c.rnn_dim = 16, c.hidden_layer_dim = 0;
      c.stochasticity.bias_uncertainty = true;
      break;
  }
  c.num_rnn_layers = 1;
  return c;
}

ModelConfig desk_config(Variant variant) {
  ModelConfig c = paper_config(variant);
  c.batch_size = 64;
  c.learning_rate = 3e-3;
  c.annealing_steps = c.annealing_steps == 1 ? 1 : 2000;
  c.dense_embedding_dim = 16;
  c.rnn_dim = 32;
  c.hidden_layer_dim = c.hidden_layer_dim > 0 ? 32 : 0;
  return c;
}

EnsembleSpec EnsembleSpec::with_seed_base(const ModelConfig& base, std::size_t members, std::uint64_t seed_base) {
  EnsembleSpec spec{base, {}};
  for (std::size_t m = 0; m < members; ++m) spec.seeds.push_back(seed_base + m);
  return spec;
}

ModelConfig EnsembleSpec::member_config(std::size_t m) const {
  ModelConfig c = base;
  c.seed = seeds.at(m);
  return c;
}

std::vector<std::string> collect_ethnicities(const std::vector<PatientRecord>& records) {
  std::set<std::string> names;
  for (const auto& r : records) names.insert(r.context.ethnicity);
  return {names.begin(), names.end()};
}

SequenceModel::SequenceModel(ModelConfig config, std::size_t vocab_size, std::vector<std::string> ethnicities)
    : config_(std::move(config)), vocab_size_(vocab_size), ethnicities_(std::move(ethnicities)) {
  config_.validate();
  if (vocab_size_ == 0) throw ConfigError("model needs a non-empty vocabulary");
  std::sort(ethnicities_.begin(), ethnicities_.end());
  ethnicities_.erase(std::unique(ethnicities_.begin(), ethnicities_.end()), ethnicities_.end());

  Rng init = make_rng(config_.seed, {kInitStream});
  rng_ = make_rng(config_.seed, {kTrainStream});
  const IsotropicPrior prior(config_.prior_std);
  const auto& s = config_.stochasticity;
  const auto layer = [&](bool stochastic) { return LayerInit{prior, stochastic, s.bias_uncertainty}; };

  const auto e = static_cast<std::size_t>(config_.event_embedding_dim());
  const auto c = static_cast<std::size_t>(config_.dense_embedding_dim);
  const auto h = static_cast<std::size_t>(config_.rnn_dim);
  events_ = EmbeddingLayer(vocab_size_ + 1, e, layer(s.embeddings), init);
  gender_ = EmbeddingLayer(2, c, layer(s.embeddings), init);
  ethnicity_ = EmbeddingLayer(ethnicities_.size() + 1, c, layer(s.embeddings), init);
  for (int l = 0; l < config_.num_rnn_layers; ++l) lstm_.emplace_back(l == 0 ? e : h, h, layer(s.rnn), init);
  std::size_t head = h + 2 * c + 2;
  if (config_.hidden_layer_dim > 0) {
    hidden_.emplace(head, static_cast<std::size_t>(config_.hidden_layer_dim), layer(s.hidden), init);
    head = static_cast<std::size_t>(config_.hidden_layer_dim);
  }
  output_ = DenseLayer(head, config_.task.output_dim(), layer(s.output), init);
}

EncodedRecord SequenceModel::encode(const PatientRecord& record) const {
  EncodedRecord out;
  out.patient_id = record.patient_id;
  for (const auto& ev : record.events) {
    if (ev.feature_id < 0 || static_cast<std::size_t>(ev.feature_id) >= vocab_size_) {
      throw Error("vocabulary mismatch: patient " + record.patient_id + " has feature id " +
                  std::to_string(ev.feature_id) + " but the model vocabulary has " + std::to_string(vocab_size_) +
                  " tokens");
    }
  }
  out.days = day_bagging(record);
  if (record.context.gender == "F") {
    out.gender = 0;
  } else if (record.context.gender == "M") {
    out.gender = 1;
  } else {
    throw Error("patient " + record.patient_id + ": gender must be M or F");
  }
  const auto it = std::lower_bound(ethnicities_.begin(), ethnicities_.end(), record.context.ethnicity);
  out.ethnicity = static_cast<std::int32_t>(it != ethnicities_.end() && *it == record.context.ethnicity
                                                ? it - ethnicities_.begin()
                                                : static_cast<std::ptrdiff_t>(ethnicities_.size()));
  out.age_years = record.context.age_years;
  const int k = config_.task.num_classes;
  if (record.label < 0 || record.label >= k) {
    throw Error("patient " + record.patient_id + ": label " + std::to_string(record.label) + " outside [0, " +
                std::to_string(k) + ")");
  }
  out.label = record.label;
  return out;
}

std::vector<EncodedRecord> SequenceModel::encode(const std::vector<PatientRecord>& records) const {
  std::vector<EncodedRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(encode(r));
  return out;
}

ModelWeights SequenceModel::realize(const PassContext& ctx) const {
  ModelWeights w;
  w.events = events_.realize(ctx);
  w.gender = gender_.realize(ctx);
  w.ethnicity = ethnicity_.realize(ctx);
  for (const auto& l : lstm_) w.lstm.push_back(l.realize(ctx));
  if (hidden_) w.hidden = hidden_->realize(ctx);
  w.output = output_.realize(ctx);
  return w;
}

Tensor SequenceModel::logits(std::span<const EncodedRecord* const> batch, const ModelWeights& w) const {
  const std::size_t n = batch.size();
  if (n == 0) throw ShapeError("empty batch");
  const auto h = static_cast<std::size_t>(config_.rnn_dim);
  std::size_t max_days = 0;
  for (const auto* r : batch) max_days = std::max(max_days, r->days.size());

  std::vector<LstmState> states(lstm_.size(), LstmState{Tensor::zeros({n, h}), Tensor::zeros({n, h})});
  const auto empty_row = static_cast<std::int32_t>(vocab_size_);
  std::vector<std::vector<std::int32_t>> bags(n);
  std::vector<bool> active(n);
  for (std::size_t d = 0; d < max_days; ++d) {
    bool all_active = true;
    for (std::size_t i = 0; i < n; ++i) {
      active[i] = d < batch[i]->days.size();
      all_active = all_active && active[i];
      if (active[i]) {
        bags[i] = batch[i]->days[d];
      } else {
        bags[i].clear();
      }
    }
    Tensor x = bag_mean(w.events, bags, empty_row);
    for (std::size_t l = 0; l < lstm_.size(); ++l) {
      LstmState next = lstm_step(x, states[l], w.lstm[l]);
      if (all_active) {
        states[l] = next;
      } else {
        states[l] = {select_rows(active, next.h, states[l].h), select_rows(active, next.c, states[l].c)};
      }
      x = states[l].h;
    }
  }

  std::vector<std::int32_t> genders(n), eths(n);
  std::vector<double> extra(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    genders[i] = batch[i]->gender;
    eths[i] = batch[i]->ethnicity;
    extra[2 * i] = batch[i]->age_years / 100.0;
    extra[2 * i + 1] = is_neonate(batch[i]->age_years) ? 1.0 : 0.0;
  }
  const std::array parts = {states.back().h, gather_rows(w.gender, genders), gather_rows(w.ethnicity, eths),
                            Tensor::from({n, 2}, std::move(extra))};
  Tensor z = concat_cols(parts);
  if (w.hidden) z = relu(dense_forward(z, *w.hidden));
  return dense_forward(z, w.output);
}

Tensor SequenceModel::probabilities(const Tensor& logits) const {
  return config_.task.kind == TaskKind::kBinary ? sigmoid(logits) : softmax(logits);
}

Tensor SequenceModel::forward(std::span<const EncodedRecord* const> batch, const PassContext& ctx) const {
  return probabilities(logits(batch, realize(ctx)));
}

Tensor SequenceModel::kl() const {
  const IsotropicPrior p = prior();
  Tensor total = add(add(events_.kl(p), gender_.kl(p)), ethnicity_.kl(p));
  for (const auto& l : lstm_) total = add(total, l.kl(p));
  if (hidden_) total = add(total, hidden_->kl(p));
  return add(total, output_.kl(p));
}

std::vector<std::pair<std::string, Tensor>> SequenceModel::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  events_.collect("events", out);
  gender_.collect("gender", out);
  ethnicity_.collect("ethnicity", out);
  for (std::size_t l = 0; l < lstm_.size(); ++l) lstm_[l].collect("lstm" + std::to_string(l), out);
  if (hidden_) hidden_->collect("hidden", out);
  output_.collect("output", out);
  return out;
}

std::size_t SequenceModel::parameter_count() const {
  std::size_t total = 0;
  for (const auto& [name, t] : named_parameters()) total += t.size();
  return total;
}

void SequenceModel::assign(const std::vector<std::pair<std::string, std::vector<double>>>& values) {
  std::map<std::string, const std::vector<double>*> by_name;
  for (const auto& [name, v] : values) by_name[name] = &v;
  for (auto& [name, t] : named_parameters()) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw Error("missing parameter '" + name + "'");
    if (it->second->size() != t.size()) throw ShapeError("parameter '" + name + "' has the wrong size");
    std::copy(it->second->begin(), it->second->end(), t.mutable_data().begin());
  }
}

double kl_weight(std::int64_t step, std::int64_t annealing_steps) {
  if (annealing_steps < 1) throw ConfigError("annealing_steps must be at least 1");
  if (step <= 0) return 0.0;
  return std::min(1.0, static_cast<double>(step) / static_cast<double>(annealing_steps));
}

ElboTerms loss_elbo(const SequenceModel& model, std::span<const EncodedRecord* const> batch, std::int64_t global_step,
                    std::size_t train_size, const PassContext& ctx) {
  if (train_size == 0) throw ConfigError("train_size must be positive");
  std::vector<int> labels;
  labels.reserve(batch.size());
  for (const auto* r : batch) labels.push_back(r->label);
  const Tensor z = model.logits(batch, model.realize(ctx));
  const Tensor nll =
      model.config().task.kind == TaskKind::kBinary ? bce_with_logits(z, labels) : cross_entropy(z, labels);
  const Tensor kl = model.kl();
  ElboTerms out;
  out.beta = kl_weight(global_step, model.config().annealing_steps);
  out.nll = nll.item();
  out.kl = kl.item();
  out.loss = add(nll, affine(kl, out.beta / static_cast<double>(train_size)));
  return out;
}

}  // namespace riskunc
