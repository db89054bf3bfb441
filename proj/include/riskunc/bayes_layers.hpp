#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "riskunc/rng.hpp"
#include "riskunc/tensor.hpp"

namespace riskunc {

double softplus(double x);
/// Inverse of softplus on (0, inf).
double inverse_softplus(double y);

/// Mean-field Gaussian q(w) = N(mean, softplus(rho)^2) over one weight tensor.
struct GaussianPosterior {
  Tensor mean;
  Tensor rho;

  GaussianPosterior(Tensor mean_, Tensor rho_);
  std::vector<double> sigma() const;
};

/// Zero-mean isotropic Gaussian weight prior.
class IsotropicPrior {
 public:
  explicit IsotropicPrior(double std);
  /// Same, but enforces the tuning range [0.135, 1.0].
  static IsotropicPrior from_search_range(double std);
  double std() const noexcept { return std_; }

 private:
  double std_;
};

/// Which parts of the network carry weight uncertainty.
struct StochasticityConfig {
  bool embeddings = false;
  bool rnn = false;
  bool hidden = false;
  bool output = false;
  bool bias_uncertainty = false;

  bool any() const noexcept { return embeddings || rnn || hidden || output; }
  friend bool operator==(const StochasticityConfig&, const StochasticityConfig&) = default;
};

enum class Variant {
  kDeterministic,
  kDeterministicEnsemble,
  kBayesianEmbeddings,
  kBayesianOutput,
  kBayesianHiddenOutput,
  kBayesianRnnHiddenOutput,
  kFullyBayesian,
};

std::string_view variant_name(Variant v);
/// Accepts exactly the names returned by variant_name; throws ConfigError otherwise.
Variant parse_variant(std::string_view name);
std::span<const Variant> all_variants();
/// Flag assignment per variant. bias_uncertainty is left false; it is a
/// separate per-model hyperparameter.
StochasticityConfig stochasticity_for(Variant v);

enum class SampleMode { kSample, kMean };

/// Per-forward-pass sampling state. A stochastic weight is realized once
/// per pass from `rng`; in kMean mode the posterior mean is used.
struct PassContext {
  SampleMode mode = SampleMode::kMean;
  Rng* rng = nullptr;
};

/// Reparameterized draw mean + softplus(rho) * eps, eps ~ N(0, I).
/// Differentiable with respect to both mean and rho.
Tensor sample_weights(const GaussianPosterior& post, Rng& rng);

/// Closed-form KL(q || p) summed over all elements; a differentiable scalar.
Tensor kl_to_prior(const GaussianPosterior& post, const IsotropicPrior& prior);

/// Differential entropy of row `row` of a diagonal-Gaussian embedding table.
double embedding_entropy(const GaussianPosterior& table, std::size_t row);

/// A learnable weight tensor that is either a point estimate or a Gaussian posterior.
class VariationalWeight {
 public:
  VariationalWeight() = default;
  static VariationalWeight point(Tensor value);
  static VariationalWeight gaussian(Tensor mean, Tensor rho);

  bool stochastic() const noexcept { return rho_.defined(); }
  const Tensor& mean() const { return mean_; }
  const Tensor& rho() const { return rho_; }
  GaussianPosterior posterior() const;
  const Shape& shape() const { return mean_.shape(); }

  Tensor realize(const PassContext& ctx) const;
  /// Zero for point weights.
  Tensor kl(const IsotropicPrior& prior) const;
  /// Named learnable tensors ("<prefix>/mean", "<prefix>/rho").
  void collect(const std::string& prefix, std::vector<std::pair<std::string, Tensor>>& out) const;

 private:
  Tensor mean_;
  Tensor rho_;
};

/// Settings shared by layer constructors.
struct LayerInit {
  IsotropicPrior prior{1.0};
  bool stochastic = false;
  bool bias_uncertainty = false;
};

/// Uniform(-limit, limit) with limit = sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

/// Builds a weight from a mean initializer; stochastic weights start with
/// sigma = 0.1 * prior std.
VariationalWeight make_weight(Tensor mean, bool stochastic, const IsotropicPrior& prior);

class EmbeddingLayer {
 public:
  EmbeddingLayer() = default;
  EmbeddingLayer(std::size_t rows, std::size_t dim, const LayerInit& init, Rng& rng);
  explicit EmbeddingLayer(VariationalWeight table) : table_(std::move(table)) {}

  std::size_t rows() const { return table_.shape()[0]; }
  std::size_t dim() const { return table_.shape()[1]; }
  const VariationalWeight& table() const { return table_; }
  VariationalWeight& table() { return table_; }

  /// One realization of the whole table for this pass.
  Tensor realize(const PassContext& ctx) const { return table_.realize(ctx); }
  Tensor kl(const IsotropicPrior& prior) const { return table_.kl(prior); }
  void collect(const std::string& prefix, std::vector<std::pair<std::string, Tensor>>& out) const;

 private:
  VariationalWeight table_;
};

/// Rows of the embedding table for `ids`, all drawn from a single realization.
/// Throws IndexError for out-of-range ids.
Tensor embedding_lookup(const EmbeddingLayer& layer, std::span<const std::int32_t> ids, const PassContext& ctx);

struct DenseWeights {
  Tensor kernel;  // in x out
  Tensor bias;    // 1 x out
};

class DenseLayer {
 public:
  DenseLayer() = default;
  DenseLayer(std::size_t in, std::size_t out, const LayerInit& init, Rng& rng);
  DenseLayer(VariationalWeight kernel, VariationalWeight bias);

  std::size_t in_dim() const { return kernel_.shape()[0]; }
  std::size_t out_dim() const { return kernel_.shape()[1]; }
  DenseWeights realize(const PassContext& ctx) const;
  Tensor kl(const IsotropicPrior& prior) const;
  void collect(const std::string& prefix, std::vector<std::pair<std::string, Tensor>>& out) const;
  bool stochastic() const { return kernel_.stochastic(); }

 private:
  VariationalWeight kernel_;
  VariationalWeight bias_;
};

/// x W + b.
Tensor dense_forward(const Tensor& x, const DenseWeights& weights);

struct LstmWeights {
  Tensor kernel;     // in x 4H, gate blocks ordered i, f, g, o
  Tensor recurrent;  // H x 4H
  Tensor bias;       // 1 x 4H
};

struct LstmState {
  Tensor h;
  Tensor c;
};

class LstmLayer {
 public:
  LstmLayer() = default;
  LstmLayer(std::size_t in, std::size_t hidden, const LayerInit& init, Rng& rng);
  LstmLayer(VariationalWeight kernel, VariationalWeight recurrent, VariationalWeight bias);

  std::size_t in_dim() const { return kernel_.shape()[0]; }
  std::size_t hidden_dim() const { return recurrent_.shape()[0]; }
  LstmWeights realize(const PassContext& ctx) const;
  Tensor kl(const IsotropicPrior& prior) const;
  void collect(const std::string& prefix, std::vector<std::pair<std::string, Tensor>>& out) const;

 private:
  VariationalWeight kernel_;
  VariationalWeight recurrent_;
  VariationalWeight bias_;
};

/// One LSTM step: i, f, o = sigmoid, g = tanh, c' = f*c + i*g, h' = o*tanh(c').
LstmState lstm_step(const Tensor& x, const LstmState& prev, const LstmWeights& weights);

}  // namespace riskunc
