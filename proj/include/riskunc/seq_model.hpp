#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "riskunc/bayes_layers.hpp"
#include "riskunc/cohort.hpp"
#include "riskunc/rng.hpp"
#include "riskunc/tensor.hpp"
#include "riskunc/uq.hpp"

namespace riskunc {

enum class TaskKind { kBinary, kMulticlass };

struct Task {
  TaskKind kind = TaskKind::kBinary;
  int num_classes = 2;

  static Task binary() { return {}; }
  static Task multiclass(int k) { return {TaskKind::kMulticlass, k}; }
  /// 1 for binary (a single logit), K otherwise.
  std::size_t output_dim() const { return kind == TaskKind::kBinary ? 1 : static_cast<std::size_t>(num_classes); }
  friend bool operator==(const Task&, const Task&) = default;
};

struct ModelConfig {
  int batch_size = 256;
  double learning_rate = 3.035e-4;
  std::int64_t annealing_steps = 1;
  double prior_std = 1.0;
  int dense_embedding_dim = 32;
  double embedding_dim_multiplier = 0.858;
  int rnn_dim = 1024;
  int num_rnn_layers = 1;
  int hidden_layer_dim = 512;  // 0 = no hidden layer
  StochasticityConfig stochasticity;
  Task task;
  std::uint64_t seed = 0;

  /// Event-embedding width: round(multiplier * dense_embedding_dim), at least 1.
  int event_embedding_dim() const;
  /// Structural checks; throws ConfigError.
  void validate() const;
  /// Additionally enforces the hyperparameter search ranges.
  void validate_search_ranges() const;

  std::string to_json() const;
  static ModelConfig from_json(std::string_view text);
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Tuned per-variant values, verbatim.
ModelConfig paper_config(Variant variant);
/// Scaled-down counterpart for CPU-speed runs.
ModelConfig desk_config(Variant variant);

struct EnsembleSpec {
  ModelConfig base;
  std::vector<std::uint64_t> seeds;

  static EnsembleSpec with_seed_base(const ModelConfig& base, std::size_t members, std::uint64_t seed_base);
  std::size_t size() const { return seeds.size(); }
  /// The base config with only the seed replaced.
  ModelConfig member_config(std::size_t m) const;
};

/// A record in model-ready form.
struct EncodedRecord {
  std::string patient_id;
  DayBlocks days;
  std::int32_t gender = 0;
  std::int32_t ethnicity = 0;
  double age_years = 0.0;
  int label = 0;
};

/// Realized weights for one forward pass.
struct ModelWeights {
  Tensor events;
  Tensor gender;
  Tensor ethnicity;
  std::vector<LstmWeights> lstm;
  std::optional<DenseWeights> hidden;
  DenseWeights output;
};

struct OptimizerState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::int64_t step = 0;
};

/// Sequential-event risk model: day-bagged event embeddings feed an LSTM
/// stack whose last state is joined with context embeddings, then a hidden
/// ReLU layer and an output layer producing logits.
class SequenceModel {
 public:
  SequenceModel(ModelConfig config, std::size_t vocab_size, std::vector<std::string> ethnicities);

  SequenceModel(SequenceModel&&) = default;
  SequenceModel& operator=(SequenceModel&&) = default;
  SequenceModel(const SequenceModel&) = delete;
  SequenceModel& operator=(const SequenceModel&) = delete;

  const ModelConfig& config() const { return config_; }
  std::size_t vocab_size() const { return vocab_size_; }
  const std::vector<std::string>& ethnicities() const { return ethnicities_; }
  IsotropicPrior prior() const { return IsotropicPrior(config_.prior_std); }

  /// Throws Error when a feature id lies outside the model's vocabulary.
  EncodedRecord encode(const PatientRecord& record) const;
  std::vector<EncodedRecord> encode(const std::vector<PatientRecord>& records) const;

  ModelWeights realize(const PassContext& ctx) const;
  Tensor logits(std::span<const EncodedRecord* const> batch, const ModelWeights& weights) const;
  /// Probabilities: n x 1 via sigmoid (binary) or n x K via softmax.
  Tensor forward(std::span<const EncodedRecord* const> batch, const PassContext& ctx) const;
  Tensor probabilities(const Tensor& logits) const;

  /// Sum of KL(q || prior) over every stochastic weight; zero if none.
  Tensor kl() const;

  /// Every learnable tensor with a stable name, in a fixed order.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::size_t parameter_count() const;

  const EmbeddingLayer& event_embeddings() const { return events_; }

  OptimizerState& optimizer() { return optimizer_; }
  const OptimizerState& optimizer() const { return optimizer_; }
  Rng& rng() { return rng_; }
  const Rng& rng() const { return rng_; }

  /// Replaces parameter values by name (shapes must match).
  void assign(const std::vector<std::pair<std::string, std::vector<double>>>& values);

 private:
  ModelConfig config_;
  std::size_t vocab_size_;
  std::vector<std::string> ethnicities_;
  EmbeddingLayer events_;  // vocab_size + 1 rows; the last is the no-events day vector
  EmbeddingLayer gender_;
  EmbeddingLayer ethnicity_;
  std::vector<LstmLayer> lstm_;
  std::optional<DenseLayer> hidden_;
  DenseLayer output_;
  OptimizerState optimizer_;
  Rng rng_;
};

/// Distinct ethnicity strings of `records`, sorted.
std::vector<std::string> collect_ethnicities(const std::vector<PatientRecord>& records);

// ---------------------------------------------------------------------------
// Objective and training

/// Linear KL warm-up min(1, step / annealing_steps), clamped to [0, 1].
double kl_weight(std::int64_t step, std::int64_t annealing_steps);

struct ElboTerms {
  Tensor loss;  // differentiable scalar
  double nll = 0.0;
  double kl = 0.0;
  double beta = 0.0;
};

/// Mean NLL over the batch plus beta(step) * KL / train_size.
ElboTerms loss_elbo(const SequenceModel& model, std::span<const EncodedRecord* const> batch, std::int64_t global_step,
                    std::size_t train_size, const PassContext& ctx);

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One Adam update of every parameter from its accumulated gradient, then
/// clears the gradients.
void adam_step(SequenceModel& model, double learning_rate, const AdamSettings& settings = {});

struct TrainOptions {
  int max_epochs = 30;
  int patience = 5;
  std::ostream* log = nullptr;  // one key=value line per epoch
};

struct EpochRecord {
  int epoch = 0;
  std::int64_t step = 0;
  double train_loss = 0.0;
  double train_nll = 0.0;
  double kl = 0.0;
  double beta = 0.0;
  double val_nll = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_val_nll = 0.0;
};

/// Adam training with one weight sample per step, early stopping on
/// validation NLL (posterior-mean weights) and restoration of the best epoch.
TrainHistory train(SequenceModel& model, const std::vector<PatientRecord>& train_records,
                   const std::vector<PatientRecord>& validation_records, const TrainOptions& options);

void write_epoch_record(std::ostream& out, const EpochRecord& record);

struct EnsembleMember {
  SequenceModel model;
  TrainHistory history;
};

/// Trains one model per seed, `threads` at a time. Members share nothing
/// mutable, so training order never affects a member.
std::vector<EnsembleMember> train_ensemble(const EnsembleSpec& spec, std::size_t vocab_size,
                                           const std::vector<std::string>& ethnicities,
                                           const std::vector<PatientRecord>& train_records,
                                           const std::vector<PatientRecord>& validation_records,
                                           const TrainOptions& options, std::size_t threads = 0);

// ---------------------------------------------------------------------------
// Prediction

enum class SamplingScheme {
  kPerExample,  // fresh weight draws for every example, keyed by patient id
  kGlobal,      // M realizations shared by every example
};

/// Posterior-mean (or point-weight) probabilities, one row per record.
ProbMatrix predict_mean(const SequenceModel& model, const std::vector<PatientRecord>& records,
                        std::size_t threads = 1);

/// M weight draws from one (Bayesian) model per record. M must be positive.
std::vector<PredictiveUncertainty> predict_samples(const SequenceModel& model,
                                                   const std::vector<PatientRecord>& records, std::size_t samples,
                                                   std::uint64_t root_seed,
                                                   SamplingScheme scheme = SamplingScheme::kPerExample,
                                                   std::size_t threads = 1);

/// One sample per ensemble member (posterior-mean weights).
std::vector<PredictiveUncertainty> predict_samples(std::span<const SequenceModel* const> ensemble,
                                                   const std::vector<PatientRecord>& records,
                                                   std::size_t threads = 1);

/// Regroups per-record uncertainty into per-sample score vectors of output
/// dimension `dim` (samples x records).
std::vector<std::vector<double>> sample_major(const std::vector<PredictiveUncertainty>& pus, std::size_t dim = 0);

}  // namespace riskunc
