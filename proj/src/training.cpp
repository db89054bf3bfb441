#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "riskunc/error.hpp"
#include "riskunc/ops.hpp"
#include "riskunc/parallel.hpp"
#include "riskunc/seq_model.hpp"

namespace riskunc {

namespace {

constexpr std::size_t kEvalBatch = 256;
constexpr std::uint64_t kGlobalSampleStream = 0x61;

std::vector<const EncodedRecord*> pointers(const std::vector<EncodedRecord>& records) {
  std::vector<const EncodedRecord*> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(&r);
  return out;
}

// Probability rows for `batch` under fixed weights.
void append_rows(const SequenceModel& model, std::span<const EncodedRecord* const> batch, const ModelWeights& w,
                 ProbMatrix& out, std::size_t offset) {
  const Tensor p = model.probabilities(model.logits(batch, w));
  const std::size_t k = p.dim(1);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    out[offset + i].assign(p.data().begin() + static_cast<std::ptrdiff_t>(i * k),
                           p.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * k));
  }
}

ProbMatrix rows_with_weights(const SequenceModel& model, const std::vector<const EncodedRecord*>& ptrs,
                             const ModelWeights& w, std::size_t threads) {
  ProbMatrix out(ptrs.size());
  const std::size_t batches = (ptrs.size() + kEvalBatch - 1) / kEvalBatch;
  parallel_for(batches, threads, [&](std::size_t b) {
    NoGradGuard guard;
    const std::size_t lo = b * kEvalBatch;
    const std::size_t hi = std::min(ptrs.size(), lo + kEvalBatch);
    append_rows(model, std::span(ptrs).subspan(lo, hi - lo), w, out, lo);
  });
  return out;
}

ProbMatrix mean_rows(const SequenceModel& model, const std::vector<const EncodedRecord*>& ptrs, std::size_t threads) {
  ModelWeights w;
  {
    NoGradGuard guard;
    w = model.realize(PassContext{SampleMode::kMean, nullptr});
  }
  return rows_with_weights(model, ptrs, w, threads);
}

double matrix_nll(const SequenceModel& model, const ProbMatrix& rows, const std::vector<EncodedRecord>& records) {
  std::vector<int> labels;
  labels.reserve(records.size());
  for (const auto& r : records) labels.push_back(r.label);
  if (model.config().task.kind == TaskKind::kBinary) {
    std::vector<double> p;
    p.reserve(rows.size());
    for (const auto& row : rows) p.push_back(row[0]);
    return nll(p, labels);
  }
  return nll(rows, labels);
}

std::vector<std::vector<double>> snapshot(const SequenceModel& model) {
  std::vector<std::vector<double>> out;
  for (const auto& [name, t] : model.named_parameters()) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

void restore(const SequenceModel& model, const std::vector<std::vector<double>>& values) {
  const auto params = model.named_parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].second;
    std::copy(values[i].begin(), values[i].end(), t.mutable_data().begin());
  }
}

}  // namespace

void adam_step(SequenceModel& model, double learning_rate, const AdamSettings& settings) {
  const auto params = model.named_parameters();
  OptimizerState& state = model.optimizer();
  if (state.first_moment.empty()) {
    for (const auto& [name, t] : params) {
      state.first_moment.emplace_back(t.size(), 0.0);
      state.second_moment.emplace_back(t.size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) throw Error("optimizer state does not match the model");
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(settings.beta1, t);
  const double c2 = 1.0 - std::pow(settings.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor param = params[p].second;
    if (!param.has_grad()) continue;
    const std::vector<double> g = param.grad();
    auto& m = state.first_moment[p];
    auto& v = state.second_moment[p];
    auto value = param.mutable_data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = settings.beta1 * m[i] + (1.0 - settings.beta1) * g[i];
      v[i] = settings.beta2 * v[i] + (1.0 - settings.beta2) * g[i] * g[i];
      value[i] -= learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + settings.epsilon);
    }
    param.zero_grad();
  }
}

void write_epoch_record(std::ostream& out, const EpochRecord& r) {
  out << "epoch=" << r.epoch << " step=" << r.step << " train_loss=" << format_double(r.train_loss)
      << " train_nll=" << format_double(r.train_nll) << " kl=" << format_double(r.kl)
      << " beta=" << format_double(r.beta) << " val_nll=" << format_double(r.val_nll) << '\n';
}

TrainHistory train(SequenceModel& model, const std::vector<PatientRecord>& train_records,
                   const std::vector<PatientRecord>& validation_records, const TrainOptions& options) {
  if (train_records.empty()) throw ConfigError("training set is empty");
  if (options.max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
  if (options.patience < 1) throw ConfigError("patience must be at least 1");
  const auto train_set = model.encode(train_records);
  const auto val_set = model.encode(validation_records);
  const auto val_ptrs = pointers(val_set);
  const std::size_t n = train_set.size();
  const auto batch_size = static_cast<std::size_t>(model.config().batch_size);
  const bool stochastic = model.config().stochasticity.any();

  TrainHistory history;
  history.best_val_nll = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best = snapshot(model);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<const EncodedRecord*> batch;
  int since_best = 0;

  for (int epoch = 1; epoch <= options.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), model.rng());
    EpochRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0.0, nll_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t lo = 0; lo < n; lo += batch_size) {
      batch.clear();
      for (std::size_t i = lo; i < std::min(n, lo + batch_size); ++i) batch.push_back(&train_set[order[i]]);
      const std::int64_t step = model.optimizer().step + 1;
      ElboTerms terms;
      double loss_value = 0.0;
      try {
        const PassContext ctx{stochastic ? SampleMode::kSample : SampleMode::kMean, &model.rng()};
        terms = loss_elbo(model, batch, step, n, ctx);
        loss_value = terms.loss.item();
        backward(terms.loss);
      } catch (const NumericError& e) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
                           ": " + e.what());
      }
      adam_step(model, model.config().learning_rate);
      loss_sum += loss_value;
      nll_sum += terms.nll;
      rec.kl = terms.kl;
      rec.beta = terms.beta;
      ++batches;
    }
    rec.step = model.optimizer().step;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    rec.train_nll = nll_sum / static_cast<double>(batches);
    if (!std::isfinite(rec.train_loss)) {
      throw NumericError("non-finite training loss after epoch " + std::to_string(epoch));
    }
    rec.val_nll = val_set.empty() ? rec.train_nll : matrix_nll(model, mean_rows(model, val_ptrs, 1), val_set);
    history.epochs.push_back(rec);
    if (options.log != nullptr) write_epoch_record(*options.log, rec);

    if (rec.val_nll < history.best_val_nll || val_set.empty()) {
      history.best_val_nll = rec.val_nll;
      history.best_epoch = epoch;
      best = snapshot(model);
      since_best = 0;
    } else if (++since_best >= options.patience) {
      break;
    }
  }
  restore(model, best);
  return history;
}

std::vector<EnsembleMember> train_ensemble(const EnsembleSpec& spec, std::size_t vocab_size,
                                           const std::vector<std::string>& ethnicities,
                                           const std::vector<PatientRecord>& train_records,
                                           const std::vector<PatientRecord>& validation_records,
                                           const TrainOptions& options, std::size_t threads) {
  if (spec.size() == 0) throw ConfigError("ensemble needs at least one member");
  std::vector<std::optional<EnsembleMember>> slots(spec.size());
  parallel_for(spec.size(), threads, [&](std::size_t m) {
    SequenceModel model(spec.member_config(m), vocab_size, ethnicities);
    TrainOptions member_options = options;
    member_options.log = nullptr;
    TrainHistory history = train(model, train_records, validation_records, member_options);
    slots[m].emplace(EnsembleMember{std::move(model), std::move(history)});
  });
  std::vector<EnsembleMember> out;
  out.reserve(slots.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  if (options.log != nullptr) {
    for (std::size_t m = 0; m < out.size(); ++m) {
      for (const auto& rec : out[m].history.epochs) {
        *options.log << "member=" << m << ' ';
        write_epoch_record(*options.log, rec);
      }
    }
  }
  return out;
}

ProbMatrix predict_mean(const SequenceModel& model, const std::vector<PatientRecord>& records, std::size_t threads) {
  const auto encoded = model.encode(records);
  return mean_rows(model, pointers(encoded), threads);
}

std::vector<PredictiveUncertainty> predict_samples(const SequenceModel& model,
                                                   const std::vector<PatientRecord>& records, std::size_t samples,
                                                   std::uint64_t root_seed, SamplingScheme scheme,
                                                   std::size_t threads) {
  if (samples == 0) throw ConfigError("number of samples must be positive");
  const auto encoded = model.encode(records);
  const auto ptrs = pointers(encoded);
  std::vector<std::vector<std::vector<double>>> per_record(records.size(),
                                                           std::vector<std::vector<double>>(samples));
  if (scheme == SamplingScheme::kGlobal) {
    for (std::size_t m = 0; m < samples; ++m) {
      Rng rng = make_rng(root_seed, {kGlobalSampleStream, m});
      ModelWeights w;
      {
        NoGradGuard guard;
        w = model.realize(PassContext{SampleMode::kSample, &rng});
      }
      ProbMatrix rows = rows_with_weights(model, ptrs, w, threads);
      for (std::size_t i = 0; i < rows.size(); ++i) per_record[i][m] = std::move(rows[i]);
    }
  } else {
    parallel_for(records.size(), threads, [&](std::size_t i) {
      NoGradGuard guard;
      const auto& id = encoded[i].patient_id;
      const std::uint64_t key = fnv1a(id.data(), id.size());
      for (std::size_t m = 0; m < samples; ++m) {
        Rng rng = make_rng(root_seed, {key, m});
        const ModelWeights w = model.realize(PassContext{SampleMode::kSample, &rng});
        ProbMatrix row(1);
        append_rows(model, std::span(ptrs).subspan(i, 1), w, row, 0);
        per_record[i][m] = std::move(row[0]);
      }
    });
  }
  std::vector<PredictiveUncertainty> out;
  out.reserve(records.size());
  for (auto& s : per_record) out.emplace_back(std::move(s));
  return out;
}

std::vector<PredictiveUncertainty> predict_samples(std::span<const SequenceModel* const> ensemble,
                                                   const std::vector<PatientRecord>& records, std::size_t threads) {
  if (ensemble.empty()) throw ConfigError("ensemble is empty");
  std::vector<std::vector<std::vector<double>>> per_record(records.size(),
                                                           std::vector<std::vector<double>>(ensemble.size()));
  for (std::size_t m = 0; m < ensemble.size(); ++m) {
    ProbMatrix rows = predict_mean(*ensemble[m], records, threads);
    for (std::size_t i = 0; i < rows.size(); ++i) per_record[i][m] = std::move(rows[i]);
  }
  std::vector<PredictiveUncertainty> out;
  out.reserve(records.size());
  for (auto& s : per_record) out.emplace_back(std::move(s));
  return out;
}

std::vector<std::vector<double>> sample_major(const std::vector<PredictiveUncertainty>& pus, std::size_t dim) {
  if (pus.empty()) return {};
  const std::size_t m = pus.front().count();
  std::vector<std::vector<double>> out(m, std::vector<double>(pus.size()));
  for (std::size_t i = 0; i < pus.size(); ++i) {
    if (pus[i].count() != m) throw ShapeError("sample counts differ between records");
    for (std::size_t s = 0; s < m; ++s) out[s][i] = pus[i].samples()[s].at(dim);
  }
  return out;
}

}  // namespace riskunc
