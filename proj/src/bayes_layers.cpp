#include "riskunc/bayes_layers.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "riskunc/error.hpp"
#include "riskunc/ops.hpp"

namespace riskunc {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double inverse_softplus(double y) {
  if (!(y > 0.0)) throw NumericError("inverse_softplus needs a positive argument");
  // log(exp(y) - 1) = y + log(1 - exp(-y))
  return y + std::log(-std::expm1(-y));
}

GaussianPosterior::GaussianPosterior(Tensor mean_, Tensor rho_) : mean(std::move(mean_)), rho(std::move(rho_)) {
  if (mean.shape() != rho.shape()) {
    throw ShapeError("posterior mean " + to_string(mean.shape()) + " and rho " + to_string(rho.shape()) + " differ");
  }
}

std::vector<double> GaussianPosterior::sigma() const {
  std::vector<double> out;
  out.reserve(rho.size());
  for (double r : rho.data()) out.push_back(softplus(r));
  return out;
}

IsotropicPrior::IsotropicPrior(double std) : std_(std) {
  if (!(std > 0.0) || !std::isfinite(std)) throw ConfigError("prior std must be positive and finite");
}

IsotropicPrior IsotropicPrior::from_search_range(double std) {
  if (std < 0.135 || std > 1.0) throw ConfigError("prior std " + std::to_string(std) + " outside [0.135, 1.0]");
  return IsotropicPrior(std);
}

namespace {

constexpr std::array kVariants = {
    Variant::kDeterministic,         Variant::kDeterministicEnsemble,   Variant::kBayesianEmbeddings,
    Variant::kBayesianOutput,        Variant::kBayesianHiddenOutput,    Variant::kBayesianRnnHiddenOutput,
    Variant::kFullyBayesian,
};

}  // namespace

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kDeterministic: return "deterministic";
    case Variant::kDeterministicEnsemble: return "deterministic-ensemble";
    case Variant::kBayesianEmbeddings: return "bayesian-embeddings";
    case Variant::kBayesianOutput: return "bayesian-output";
    case Variant::kBayesianHiddenOutput: return "bayesian-hidden-output";
    case Variant::kBayesianRnnHiddenOutput: return "bayesian-rnn-hidden-output";
    case Variant::kFullyBayesian: return "fully-bayesian";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  for (auto v : kVariants) {
    if (variant_name(v) == name) return v;
  }
  throw ConfigError("unknown model variant '" + std::string(name) + "'");
}

std::span<const Variant> all_variants() { return kVariants; }

StochasticityConfig stochasticity_for(Variant v) {
  StochasticityConfig s;
  switch (v) {
    case Variant::kDeterministic:
    case Variant::kDeterministicEnsemble: break;
    case Variant::kBayesianEmbeddings: s.embeddings = true; break;
    case Variant::kBayesianOutput: s.output = true; break;
    case Variant::kBayesianHiddenOutput: s.hidden = s.output = true; break;
    case Variant::kBayesianRnnHiddenOutput: s.rnn = s.hidden = s.output = true; break;
    case Variant::kFullyBayesian: s.embeddings = s.rnn = s.hidden = s.output = true; break;
  }
  return s;
}

Tensor sample_weights(const GaussianPosterior& post, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> eps(post.mean.size());
  for (auto& e : eps) e = normal(rng);
  auto noise = Tensor::from(post.mean.shape(), std::move(eps));
  return add(post.mean, mul(softplus(post.rho), noise));
}

Tensor kl_to_prior(const GaussianPosterior& post, const IsotropicPrior& prior) {
  const double sp = prior.std();
  const double sp2 = sp * sp;
  const auto mu = post.mean.data();
  const auto rho = post.rho.data();
  double total = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double s = softplus(rho[i]);
    if (!(s > 0.0)) throw NumericError("posterior scale underflowed to zero");
    total += std::log(sp) - std::log(s) + (s * s + mu[i] * mu[i]) / (2.0 * sp2) - 0.5;
  }
  auto pm = post.mean.node();
  auto pr = post.rho.node();
  auto rule = [pm, pr, sp2](detail::Node& self) {
    const double up = self.grad[0];
    if (pm->requires_grad) {
      auto& g = pm->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += up * pm->value[i] / sp2;
    }
    if (pr->requires_grad) {
      auto& g = pr->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double r = pr->value[i];
        const double s = softplus(r);
        const double ds_drho = 1.0 / (1.0 + std::exp(-r));
        g[i] += up * (s / sp2 - 1.0 / s) * ds_drho;
      }
    }
  };
  return custom_op({}, {total}, {pm, pr}, std::move(rule), "kl_to_prior");
}

double embedding_entropy(const GaussianPosterior& table, std::size_t row) {
  if (table.mean.rank() != 2) throw ShapeError("embedding table must be 2-D");
  const std::size_t rows = table.mean.dim(0), d = table.mean.dim(1);
  if (row >= rows) throw IndexError("embedding row " + std::to_string(row) + " out of range");
  const auto rho = table.rho.data();
  double h = 0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi * std::numbers::e);
  for (std::size_t j = 0; j < d; ++j) h += std::log(softplus(rho[row * d + j]));
  return h;
}

VariationalWeight VariationalWeight::point(Tensor value) {
  VariationalWeight w;
  value.set_requires_grad(true);
  w.mean_ = std::move(value);
  return w;
}

VariationalWeight VariationalWeight::gaussian(Tensor mean, Tensor rho) {
  GaussianPosterior check(mean, rho);
  VariationalWeight w;
  mean.set_requires_grad(true);
  rho.set_requires_grad(true);
  w.mean_ = std::move(mean);
  w.rho_ = std::move(rho);
  return w;
}

GaussianPosterior VariationalWeight::posterior() const {
  if (!stochastic()) throw Error("point weight has no posterior");
  return GaussianPosterior(mean_, rho_);
}

Tensor VariationalWeight::realize(const PassContext& ctx) const {
  if (!stochastic() || ctx.mode == SampleMode::kMean) return mean_;
  if (ctx.rng == nullptr) throw Error("sampling pass without a random stream");
  return sample_weights(posterior(), *ctx.rng);
}

Tensor VariationalWeight::kl(const IsotropicPrior& prior) const {
  if (!stochastic()) return Tensor::scalar(0.0);
  return kl_to_prior(posterior(), prior);
}

void VariationalWeight::collect(const std::string& prefix, std::vector<std::pair<std::string, Tensor>>& out) const {
  out.emplace_back(prefix + "/mean", mean_);
  if (stochastic()) out.emplace_back(prefix + "/rho", rho_);
}

Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> values(numel(shape));
  for (auto& v : values) v = dist(rng);
  return Tensor::from(std::move(shape), std::move(values));
}

VariationalWeight make_weight(Tensor mean, bool stochastic, const IsotropicPrior& prior) {
  if (!stochastic) return VariationalWeight::point(std::move(mean));
  auto rho = Tensor::full(mean.shape(), inverse_softplus(0.1 * prior.std()));
  return VariationalWeight::gaussian(std::move(mean), std::move(rho));
}

EmbeddingLayer::EmbeddingLayer(std::size_t rows, std::size_t dim, const LayerInit& init, Rng& rng)
    : table_(make_weight(glorot_uniform({rows, dim}, rows, dim, rng), init.stochastic, init.prior)) {}

void EmbeddingLayer::collect(const std::string& prefix, std::vector<std::pair<std::string, Tensor>>& out) const {
  table_.collect(prefix, out);
}

Tensor embedding_lookup(const EmbeddingLayer& layer, std::span<const std::int32_t> ids, const PassContext& ctx) {
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= layer.rows()) {
      throw IndexError("embedding id " + std::to_string(id) + " out of vocabulary range");
    }
  }
  return gather_rows(layer.realize(ctx), ids);
}

DenseLayer::DenseLayer(std::size_t in, std::size_t out, const LayerInit& init, Rng& rng)
    : kernel_(make_weight(glorot_uniform({in, out}, in, out, rng), init.stochastic, init.prior)),
      bias_(make_weight(Tensor::zeros({1, out}), init.stochastic && init.bias_uncertainty, init.prior)) {}

DenseLayer::DenseLayer(VariationalWeight kernel, VariationalWeight bias) : kernel_(std::move(kernel)), bias_(std::move(bias)) {
  if (kernel_.shape().size() != 2 || bias_.shape() != Shape{1, kernel_.shape()[1]}) {
    throw ShapeError("dense layer bias does not match kernel");
  }
}

DenseWeights DenseLayer::realize(const PassContext& ctx) const { return {kernel_.realize(ctx), bias_.realize(ctx)}; }

Tensor DenseLayer::kl(const IsotropicPrior& prior) const { return add(kernel_.kl(prior), bias_.kl(prior)); }

void DenseLayer::collect(const std::string& prefix, std::vector<std::pair<std::string, Tensor>>& out) const {
  kernel_.collect(prefix + "/kernel", out);
  bias_.collect(prefix + "/bias", out);
}

Tensor dense_forward(const Tensor& x, const DenseWeights& weights) {
  return add_row(matmul(x, weights.kernel), weights.bias);
}

LstmLayer::LstmLayer(std::size_t in, std::size_t hidden, const LayerInit& init, Rng& rng) {
  kernel_ = make_weight(glorot_uniform({in, 4 * hidden}, in, 4 * hidden, rng), init.stochastic, init.prior);
  recurrent_ =
      make_weight(glorot_uniform({hidden, 4 * hidden}, hidden, 4 * hidden, rng), init.stochastic, init.prior);
  // Forget-gate bias starts at one.
  auto bias = Tensor::zeros({1, 4 * hidden});
  auto b = bias.mutable_data();
  for (std::size_t j = hidden; j < 2 * hidden; ++j) b[j] = 1.0;
  bias_ = make_weight(std::move(bias), init.stochastic && init.bias_uncertainty, init.prior);
}

LstmLayer::LstmLayer(VariationalWeight kernel, VariationalWeight recurrent, VariationalWeight bias)
    : kernel_(std::move(kernel)), recurrent_(std::move(recurrent)), bias_(std::move(bias)) {
  const std::size_t h = recurrent_.shape()[0];
  if (recurrent_.shape() != Shape{h, 4 * h} || kernel_.shape().size() != 2 || kernel_.shape()[1] != 4 * h ||
      bias_.shape() != Shape{1, 4 * h}) {
    throw ShapeError("inconsistent LSTM weight shapes");
  }
}

LstmWeights LstmLayer::realize(const PassContext& ctx) const {
  return {kernel_.realize(ctx), recurrent_.realize(ctx), bias_.realize(ctx)};
}

Tensor LstmLayer::kl(const IsotropicPrior& prior) const {
  return add(add(kernel_.kl(prior), recurrent_.kl(prior)), bias_.kl(prior));
}

void LstmLayer::collect(const std::string& prefix, std::vector<std::pair<std::string, Tensor>>& out) const {
  kernel_.collect(prefix + "/kernel", out);
  recurrent_.collect(prefix + "/recurrent", out);
  bias_.collect(prefix + "/bias", out);
}

LstmState lstm_step(const Tensor& x, const LstmState& prev, const LstmWeights& weights) {
  const std::size_t hidden = weights.recurrent.dim(0);
  if (x.rank() != 2 || prev.h.rank() != 2 || prev.h.shape() != prev.c.shape() || prev.h.dim(1) != hidden ||
      prev.h.dim(0) != x.dim(0) || x.dim(1) != weights.kernel.dim(0)) {
    throw ShapeError("lstm_step: input " + to_string(x.shape()) + " / state " + to_string(prev.h.shape()) +
                     " do not match weights");
  }
  auto z = add_row(add(matmul(x, weights.kernel), matmul(prev.h, weights.recurrent)), weights.bias);
  auto i = sigmoid(slice_cols(z, 0, hidden));
  auto f = sigmoid(slice_cols(z, hidden, 2 * hidden));
  auto g = tanh(slice_cols(z, 2 * hidden, 3 * hidden));
  auto o = sigmoid(slice_cols(z, 3 * hidden, 4 * hidden));
  auto c = add(mul(f, prev.c), mul(i, g));
  auto h = mul(o, tanh(c));
  return {std::move(h), std::move(c)};
}

}  // namespace riskunc
