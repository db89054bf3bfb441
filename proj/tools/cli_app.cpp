#include "cli_app.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "riskunc/checkpoint.hpp"
#include "riskunc/cohort.hpp"
#include "riskunc/decide.hpp"
#include "riskunc/error.hpp"
#include "riskunc/insight.hpp"
#include "riskunc/seq_model.hpp"
#include "riskunc/uq.hpp"

namespace riskunc::cli {

namespace fs = std::filesystem;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::string out;
  std::string profile = "desk";
  std::size_t threads = 0;
};

struct GenerateArgs {
  std::size_t n = 1000;
  std::size_t vocab_size = 300;
  int num_classes = 2;
  double positive_rate = 0.20;
  double neonate_rate = 0.10;
};

struct ModelOverrides {
  std::optional<int> batch_size;
  std::optional<double> learning_rate;
  std::optional<std::int64_t> annealing_steps;
  std::optional<double> prior_std;
  std::optional<int> rnn_dim;
  std::optional<int> rnn_layers;
  std::optional<int> hidden_dim;
  std::optional<int> embedding_dim;
  std::optional<bool> bias_uncertainty;
};

struct TrainArgs {
  std::string data;
  std::string variant = "deterministic";
  int num_classes = 2;
  int max_epochs = 30;
  int patience = 5;
  ModelOverrides overrides;
};

struct EnsembleArgs {
  TrainArgs train;
  std::size_t members = 10;
  std::optional<std::uint64_t> seed_base;
};

struct PredictArgs {
  std::string data;
  std::vector<std::string> checkpoints;
  std::string split = "test";
  std::size_t samples = 10;
  std::string sampling = "per-example";
};

struct EvaluateArgs {
  PredictArgs predict;
  std::size_t bootstrap = 1000;
  std::size_t bins = 10;
};

struct UncertaintyArgs {
  PredictArgs predict;
  std::string patient;
  std::size_t bins = 20;
};

struct DecideArgs {
  PredictArgs predict;
  double target_recall = 0.7;
};

struct SubgroupArgs {
  PredictArgs predict;
  std::string metric = "auc-pr";
  double target_recall = 0.7;
};

struct EmbeddingArgs {
  std::string data;
  std::string checkpoint;
  std::size_t top = 10;
  std::size_t bottom = 10;
};

// ---------------------------------------------------------------------------
// Data and model plumbing

struct Dataset {
  Vocabulary vocab;
  std::map<std::string, std::vector<PatientRecord>> splits;

  const std::vector<PatientRecord>& at(const std::string& name) const {
    const auto it = splits.find(name);
    if (it == splits.end()) throw ConfigError("unknown split '" + name + "'");
    return it->second;
  }
};

const std::vector<std::string> kSplitNames = {"train", "validation", "test"};

fs::path split_file(const fs::path& dir, const std::string& name) { return dir / (name + ".jsonl"); }

Dataset load_dataset(const std::string& dir, std::ostream& err) {
  if (dir.empty()) throw ConfigError("--data is required");
  Dataset d;
  d.vocab = Vocabulary::load(fs::path(dir) / "vocab.tsv");
  for (const auto& name : kSplitNames) {
    IngestResult r = ingest(split_file(dir, name), d.vocab, VocabMode::kFrozen);
    for (const auto& w : r.warnings) err << "warning: " << name << ": " << w << '\n';
    d.splits[name] = std::move(r.records);
  }
  return d;
}

std::vector<int> labels_of(const std::vector<PatientRecord>& records) {
  std::vector<int> y;
  y.reserve(records.size());
  for (const auto& r : records) y.push_back(r.label);
  return y;
}

fs::path prepare_out(const Globals& g) {
  if (g.out.empty()) throw ConfigError("--out is required");
  fs::create_directories(g.out);
  return g.out;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  return f;
}

void write_options(std::ostream& f, const CLI::App& app) {
  for (const CLI::Option* opt : app.get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "config") continue;
    std::vector<std::string> values = opt->count() > 0 ? opt->results() : std::vector<std::string>{};
    if (values.empty() && !opt->get_default_str().empty()) values.push_back(opt->get_default_str());
    f << name << '=';
    if (values.size() == 1) {
      f << '"' << values.front() << '"';
    } else {
      f << '[';
      for (std::size_t i = 0; i < values.size(); ++i) f << (i ? ", " : "") << '"' << values[i] << '"';
      f << ']';
    }
    f << '\n';
  }
}

// Globals followed by a section for the subcommand that ran; every option is
// listed with the value in effect.
void write_resolved_config(const CLI::App& app, const fs::path& dir) {
  auto f = open_out(dir / "run_config.ini");
  write_options(f, app);
  for (const CLI::App* sub : app.get_subcommands()) {
    f << '[' << sub->get_name() << "]\n";
    write_options(f, *sub);
  }
}

ModelConfig resolve_model_config(const TrainArgs& a, const Globals& g) {
  const Variant v = parse_variant(a.variant);
  ModelConfig c = g.profile == "paper" ? paper_config(v) : desk_config(v);
  const auto& o = a.overrides;
  if (o.batch_size) c.batch_size = *o.batch_size;
  if (o.learning_rate) c.learning_rate = *o.learning_rate;
  if (o.annealing_steps) c.annealing_steps = *o.annealing_steps;
  if (o.prior_std) c.prior_std = *o.prior_std;
  if (o.rnn_dim) c.rnn_dim = *o.rnn_dim;
  if (o.rnn_layers) c.num_rnn_layers = *o.rnn_layers;
  if (o.hidden_dim) c.hidden_layer_dim = *o.hidden_dim;
  if (o.embedding_dim) c.dense_embedding_dim = *o.embedding_dim;
  if (o.bias_uncertainty) c.stochasticity.bias_uncertainty = *o.bias_uncertainty;
  c.task = a.num_classes == 2 ? Task::binary() : Task::multiclass(a.num_classes);
  c.seed = g.seed;
  if (g.profile == "paper") {
    c.validate_search_ranges();
  } else {
    c.validate();
  }
  return c;
}

TrainOptions train_options(const TrainArgs& a) {
  TrainOptions o;
  o.max_epochs = a.max_epochs;
  o.patience = a.patience;
  return o;
}

std::vector<SequenceModel> load_models(const std::vector<std::string>& paths) {
  std::vector<fs::path> files;
  for (const auto& p : paths) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.path().extension() == ".ckpt") found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.emplace_back(p);
    }
  }
  if (files.empty()) throw ConfigError("no checkpoints given (--checkpoints)");
  std::vector<SequenceModel> models;
  for (const auto& f : files) models.push_back(load_checkpoint(f));
  for (const auto& m : models) {
    if (m.vocab_size() != models.front().vocab_size() || m.config().task != models.front().config().task) {
      throw Error("checkpoints disagree on vocabulary size or task");
    }
  }
  return models;
}

SamplingScheme parse_scheme(const std::string& s) {
  return s == "global" ? SamplingScheme::kGlobal : SamplingScheme::kPerExample;
}

// One predictive-uncertainty distribution per record: ensemble members for
// several checkpoints, weight draws for a single stochastic model, and a
// singleton for a single deterministic model.
std::vector<PredictiveUncertainty> predictions(const std::vector<SequenceModel>& models,
                                               const std::vector<PatientRecord>& records, const PredictArgs& a,
                                               const Globals& g, SamplingScheme scheme) {
  if (models.size() == 1) {
    const auto& m = models.front();
    if (m.config().stochasticity.any()) return predict_samples(m, records, a.samples, g.seed, scheme, g.threads);
  }
  std::vector<const SequenceModel*> ptrs;
  for (const auto& m : models) ptrs.push_back(&m);
  return predict_samples(ptrs, records, g.threads);
}

bool is_binary(const std::vector<SequenceModel>& models) {
  return models.front().config().task.kind == TaskKind::kBinary;
}

ProbMatrix marginal_matrix(const std::vector<PredictiveUncertainty>& pus) {
  ProbMatrix out;
  out.reserve(pus.size());
  for (const auto& pu : pus) out.push_back(marginalize(pu));
  return out;
}

std::vector<double> column(const ProbMatrix& m, std::size_t d = 0) {
  std::vector<double> out;
  out.reserve(m.size());
  for (const auto& row : m) out.push_back(row.at(d));
  return out;
}

double population_std(const std::vector<double>& v) { return std::sqrt(population_variance(v)); }

// ---------------------------------------------------------------------------
// Commands

void cmd_generate(const Globals& g, const GenerateArgs& a, const CLI::App& app, std::ostream& out) {
  const fs::path dir = prepare_out(g);
  SyntheticConfig sc;
  sc.n_patients = a.n;
  sc.vocab_size = a.vocab_size;
  sc.num_classes = a.num_classes;
  sc.positive_rate = a.positive_rate;
  sc.neonate_rate = a.neonate_rate;
  try {
    sc.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  Cohort cohort = generate_synthetic(sc, g.seed);
  const CohortSplit s = split(cohort.records, g.seed);
  cohort.vocabulary.count_from(s.train);
  cohort.vocabulary.save(dir / "vocab.tsv");
  save_records(split_file(dir, "train"), s.train, cohort.vocabulary);
  save_records(split_file(dir, "validation"), s.validation, cohort.vocabulary);
  save_records(split_file(dir, "test"), s.test, cohort.vocabulary);
  write_resolved_config(app, dir);
  out << "wrote " << s.train.size() << '/' << s.validation.size() << '/' << s.test.size()
      << " train/validation/test records and " << cohort.vocabulary.size() << " tokens to " << dir.string() << '\n';
}

void cmd_train(const Globals& g, const TrainArgs& a, const CLI::App& app, std::ostream& out, std::ostream& err) {
  const ModelConfig config = resolve_model_config(a, g);
  const fs::path dir = prepare_out(g);
  const Dataset d = load_dataset(a.data, err);
  SequenceModel model(config, d.vocab.size(), collect_ethnicities(d.at("train")));
  auto log = open_out(dir / "train_log.txt");
  TrainOptions options = train_options(a);
  options.log = &log;
  const TrainHistory h = train(model, d.at("train"), d.at("validation"), options);
  save_checkpoint(model, dir / "model.ckpt");
  write_resolved_config(app, dir);
  out << "trained " << a.variant << " for " << h.epochs.size() << " epochs; best epoch " << h.best_epoch
      << " (validation NLL " << format_double(h.best_val_nll) << ")\n";
}

void cmd_train_ensemble(const Globals& g, const EnsembleArgs& a, const CLI::App& app, std::ostream& out,
                        std::ostream& err) {
  if (a.members == 0) throw ConfigError("--m must be positive");
  const ModelConfig config = resolve_model_config(a.train, g);
  const fs::path dir = prepare_out(g);
  const Dataset d = load_dataset(a.train.data, err);
  const auto spec = EnsembleSpec::with_seed_base(config, a.members, a.seed_base.value_or(g.seed));
  auto log = open_out(dir / "train_log.txt");
  TrainOptions options = train_options(a.train);
  options.log = &log;
  const auto members =
      train_ensemble(spec, d.vocab.size(), collect_ethnicities(d.at("train")), d.at("train"), d.at("validation"),
                     options, g.threads);
  for (std::size_t m = 0; m < members.size(); ++m) {
    char name[32];
    std::snprintf(name, sizeof(name), "member_%03zu.ckpt", m);
    save_checkpoint(members[m].model, dir / name);
  }
  write_resolved_config(app, dir);
  out << "trained " << members.size() << " members into " << dir.string() << '\n';
}

struct NamedMetric {
  std::string name;
  std::function<std::optional<double>(std::span<const std::size_t>)> on_indices;
};

void cmd_evaluate(const Globals& g, const EvaluateArgs& a, const CLI::App& app, std::ostream& out,
                  std::ostream& err) {
  const fs::path dir = prepare_out(g);
  const Dataset d = load_dataset(a.predict.data, err);
  const auto models = load_models(a.predict.checkpoints);
  const auto& records = d.at(a.predict.split);
  const auto pus = predictions(models, records, a.predict, g, parse_scheme(a.predict.sampling));
  const auto y = labels_of(records);
  const ProbMatrix marginal = marginal_matrix(pus);
  const bool binary = is_binary(models);
  const std::size_t bins = a.bins;
  const std::size_t k = binary ? 2 : marginal.front().size();
  const std::size_t topk = std::min<std::size_t>(5, k);

  // Metric values over a subset of rows of `rows`.
  using RowsMetric = std::function<std::optional<double>(const ProbMatrix&, const std::vector<int>&)>;
  std::vector<std::pair<std::string, RowsMetric>> metrics;
  const auto guard = [](auto f) -> RowsMetric {
    return [f](const ProbMatrix& p, const std::vector<int>& labels) -> std::optional<double> {
      try {
        return f(p, labels);
      } catch (const Error&) {
        return std::nullopt;
      }
    };
  };
  if (binary) {
    metrics.emplace_back("auc_pr", guard([](const ProbMatrix& p, const std::vector<int>& l) {
                           const auto c = column(p);
                           if (std::count(l.begin(), l.end(), 1) == 0) throw Error("no positives");
                           return auc_pr(c, l);
                         }));
    metrics.emplace_back("auc_roc", guard([](const ProbMatrix& p, const std::vector<int>& l) {
                           return auc_roc(column(p), l);
                         }));
    metrics.emplace_back("nll", guard([](const ProbMatrix& p, const std::vector<int>& l) { return nll(column(p), l); }));
    metrics.emplace_back("ece", guard([bins](const ProbMatrix& p, const std::vector<int>& l) {
                           return ece(column(p), l, bins);
                         }));
    metrics.emplace_back("ace", guard([bins](const ProbMatrix& p, const std::vector<int>& l) {
                           return ace(column(p), l, bins);
                         }));
  } else {
    metrics.emplace_back("nll", guard([](const ProbMatrix& p, const std::vector<int>& l) { return nll(p, l); }));
    metrics.emplace_back("ece", guard([bins](const ProbMatrix& p, const std::vector<int>& l) { return ece(p, l, bins); }));
    metrics.emplace_back("ace", guard([bins](const ProbMatrix& p, const std::vector<int>& l) { return ace(p, l, bins); }));
    const std::string suffix = std::to_string(topk);
    metrics.emplace_back("top" + suffix + "_recall", guard([topk](const ProbMatrix& p, const std::vector<int>& l) {
                           return top_k(p, l, topk).recall;
                         }));
    metrics.emplace_back("top" + suffix + "_precision", guard([topk](const ProbMatrix& p, const std::vector<int>& l) {
                           return top_k(p, l, topk).precision;
                         }));
    metrics.emplace_back("top" + suffix + "_f1", guard([topk](const ProbMatrix& p, const std::vector<int>& l) {
                           return top_k(p, l, topk).f1;
                         }));
  }

  std::vector<MetricReport> reports;
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    const auto& [name, f] = metrics[i];
    MetricReport r{name, a.predict.split, 0.0, std::nullopt, std::nullopt};
    const auto value = f(marginal, y);
    if (!value) throw Error("metric " + name + " is undefined on split " + a.predict.split);
    r.value = *value;
    if (a.bootstrap > 0) {
      const ResampleMetric resample = [&](std::span<const std::size_t> idx) {
        ProbMatrix p;
        std::vector<int> l;
        p.reserve(idx.size());
        l.reserve(idx.size());
        for (auto j : idx) {
          p.push_back(marginal[j]);
          l.push_back(y[j]);
        }
        return f(p, l);
      };
      const BootstrapInterval ci = bootstrap_ci(records.size(), resample, a.bootstrap, derive_seed(g.seed, {i}));
      r.ci_lo = std::min(ci.lo, r.value);
      r.ci_hi = std::max(ci.hi, r.value);
    }
    reports.push_back(r);
  }
  {
    auto f = open_out(dir / "metrics.csv");
    write_metric_csv(f, reports);
  }

  // One row per ensemble member or posterior sample, then mean and std rows.
  const std::size_t m_count = pus.front().count();
  std::vector<std::vector<double>> table(m_count);
  for (std::size_t m = 0; m < m_count; ++m) {
    ProbMatrix rows;
    rows.reserve(pus.size());
    for (const auto& pu : pus) rows.push_back(pu.samples()[m]);
    for (const auto& [name, f] : metrics) table[m].push_back(f(rows, y).value_or(std::nan("")));
  }
  auto f = open_out(dir / "members.csv");
  f << "member";
  for (const auto& [name, fn] : metrics) f << ',' << name;
  f << '\n';
  for (std::size_t m = 0; m < m_count; ++m) {
    f << m;
    for (double v : table[m]) f << ',' << format_double(v);
    f << '\n';
  }
  for (const char* stat : {"mean", "std"}) {
    f << stat;
    for (std::size_t c = 0; c < metrics.size(); ++c) {
      std::vector<double> col;
      for (const auto& row : table) col.push_back(row[c]);
      double mean = 0.0;
      for (double v : col) mean += v;
      mean /= static_cast<double>(col.size());
      f << ',' << format_double(std::string(stat) == "mean" ? mean : population_std(col));
    }
    f << '\n';
  }
  write_resolved_config(app, dir);
  for (const auto& r : reports) out << r.metric << ' ' << format_double(r.value) << '\n';
}

void cmd_uncertainty(const Globals& g, const UncertaintyArgs& a, const CLI::App& app, std::ostream& out,
                     std::ostream& err) {
  const fs::path dir = prepare_out(g);
  const Dataset d = load_dataset(a.predict.data, err);
  const auto models = load_models(a.predict.checkpoints);
  std::vector<PatientRecord> records = d.at(a.predict.split);
  if (!a.patient.empty()) {
    std::erase_if(records, [&](const PatientRecord& r) { return r.patient_id != a.patient; });
    if (records.empty()) throw ConfigError("patient '" + a.patient + "' is not in split " + a.predict.split);
  }
  const auto pus = predictions(models, records, a.predict, g, parse_scheme(a.predict.sampling));
  const bool binary = is_binary(models);

  auto samples = open_out(dir / "uncertainty_samples.csv");
  samples << "patient_id,label,sample,class,lambda\n";
  auto summary = open_out(dir / "uncertainty_summary.csv");
  summary << "patient_id,label,class,mean,std,range\n";
  std::vector<double> means, stds, ranges;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& pu = pus[i];
    const auto& id = records[i].patient_id;
    const int label = records[i].label;
    for (std::size_t m = 0; m < pu.count(); ++m) {
      for (std::size_t c = 0; c < pu.dim(); ++c) {
        samples << id << ',' << label << ',' << m << ',' << (binary ? 1 : c) << ','
                << format_double(pu.samples()[m][c]) << '\n';
      }
    }
    const auto mean = marginalize(pu);
    const Dispersion disp = dispersion(pu);
    for (std::size_t c = 0; c < pu.dim(); ++c) {
      summary << id << ',' << label << ',' << (binary ? 1 : c) << ',' << format_double(mean[c]) << ','
              << format_double(disp.std[c]) << ',' << format_double(disp.range[c]) << '\n';
    }
    const std::size_t c = binary ? 0 : static_cast<std::size_t>(label);
    means.push_back(mean[c]);
    stds.push_back(disp.std[c]);
    ranges.push_back(disp.range[c]);
  }
  for (const auto& [name, values, hi] : {std::tuple{"mean", &means, 1.0}, std::tuple{"std", &stds, 0.5},
                                         std::tuple{"range", &ranges, 1.0}}) {
    auto f = open_out(dir / (std::string("hist_") + name + ".csv"));
    write_histogram_csv(f, histogram(*values, a.bins, 0.0, hi));
  }
  write_resolved_config(app, dir);
  out << "wrote uncertainty for " << records.size() << " patients (" << pus.front().count() << " samples each)\n";
}

// Per-sample scores for the validation and evaluated splits, with samples
// that are the same function on both (ensemble members or frozen draws).
struct PairedScores {
  std::vector<PredictiveUncertainty> validation;
  std::vector<PredictiveUncertainty> evaluated;
};

PairedScores paired_predictions(const std::vector<SequenceModel>& models, const Dataset& d, const PredictArgs& a,
                                const Globals& g) {
  if (!is_binary(models)) throw ConfigError("decision analysis needs a binary task");
  return {predictions(models, d.at("validation"), a, g, SamplingScheme::kGlobal),
          predictions(models, d.at(a.split), a, g, SamplingScheme::kGlobal)};
}

void cmd_decide(const Globals& g, const DecideArgs& a, const CLI::App& app, std::ostream& out, std::ostream& err) {
  const fs::path dir = prepare_out(g);
  const Dataset d = load_dataset(a.predict.data, err);
  const auto models = load_models(a.predict.checkpoints);
  const PairedScores s = paired_predictions(models, d, a.predict, g);
  const auto val_y = labels_of(d.at("validation"));
  const auto val_scores = sample_major(s.validation);
  const DecisionPolicy policy = calibrate_policy(val_scores, val_y, a.target_recall);
  const ThresholdChoice marginal_choice =
      optimize_threshold(column(marginal_matrix(s.validation)), val_y, a.target_recall);

  auto t = open_out(dir / "decide_thresholds.csv");
  t << "sample,threshold,val_precision,val_recall\n";
  for (std::size_t m = 0; m < val_scores.size(); ++m) {
    const ThresholdChoice c = optimize_threshold(val_scores[m], val_y, a.target_recall);
    t << m << ',' << format_double(c.threshold) << ',' << format_double(c.precision) << ','
      << format_double(c.recall) << '\n';
  }
  t << "marginal," << format_double(marginal_choice.threshold) << ',' << format_double(marginal_choice.precision)
    << ',' << format_double(marginal_choice.recall) << '\n';

  const auto& records = d.at(a.predict.split);
  auto f = open_out(dir / "decisions.csv");
  f << "patient_id,label,mean,std,phi,marginal_decision\n";
  std::size_t uncertain = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const double mean = marginalize(s.evaluated[i])[0];
    const DecisionDistribution dd = decision_distribution(s.evaluated[i], policy);
    uncertain += dd.agreement > 0.0 && dd.agreement < 1.0 ? 1 : 0;
    f << records[i].patient_id << ',' << records[i].label << ',' << format_double(mean) << ','
      << format_double(dispersion(s.evaluated[i]).std[0]) << ',' << format_double(dd.agreement) << ','
      << decide(mean, marginal_choice.threshold) << '\n';
  }
  write_resolved_config(app, dir);
  out << uncertain << " of " << records.size() << " patients have members disagreeing on the decision\n";
}

void cmd_subgroups(const Globals& g, const SubgroupArgs& a, const CLI::App& app, std::ostream& out,
                   std::ostream& err) {
  const fs::path dir = prepare_out(g);
  const Dataset d = load_dataset(a.predict.data, err);
  const auto models = load_models(a.predict.checkpoints);
  const PairedScores s = paired_predictions(models, d, a.predict, g);
  const auto& records = d.at(a.predict.split);
  const auto y = labels_of(records);
  const auto scores = sample_major(s.evaluated);
  SubsetMetric metric;
  if (a.metric == "auc-pr") {
    metric = guarded([](std::span<const double> p, std::span<const int> l) {
      if (std::count(l.begin(), l.end(), 1) == 0 || std::count(l.begin(), l.end(), 0) == 0) {
        throw Error("single class");
      }
      return auc_pr(p, l);
    });
  } else {
    metric = guarded([](std::span<const double> p, std::span<const int> l) { return auc_roc(p, l); });
  }
  const DecisionPolicy policy =
      calibrate_policy(sample_major(s.validation), labels_of(d.at("validation")), a.target_recall);
  std::vector<DecisionDistribution> decisions;
  for (const auto& pu : s.evaluated) decisions.push_back(decision_distribution(pu, policy));

  auto corr = open_out(dir / "subgroup_correlation.csv");
  corr << "partition,subgroup_a,subgroup_b,pearson_r\n";
  for (const auto& [pname, partition] :
       {std::pair{std::string("gender"), gender_partition(records)}, std::pair{std::string("age"), age_partition(records)}}) {
    const SubgroupReport report = stratified_metrics(scores, y, partition, metric);
    {
      auto f = open_out(dir / ("subgroups_" + pname + ".csv"));
      write_subgroup_csv(f, report, a.metric);
    }
    {
      auto f = open_out(dir / ("subgroup_uncertainty_" + pname + ".csv"));
      write_uncertainty_summary_csv(f, uncertainty_by_subgroup(s.evaluated, decisions, partition));
    }
    for (std::size_t ga = 0; ga < partition.names.size(); ++ga) {
      for (std::size_t gb = ga + 1; gb < partition.names.size(); ++gb) {
        corr << pname << ',' << partition.names[ga] << ',' << partition.names[gb] << ',';
        try {
          corr << format_double(cross_subgroup_correlation(report, ga, gb));
        } catch (const Error& e) {
          err << "note: " << pname << ' ' << partition.names[ga] << '/' << partition.names[gb] << ": " << e.what()
              << '\n';
        }
        corr << '\n';
      }
    }
  }
  write_resolved_config(app, dir);
  out << "wrote subgroup reports for " << records.size() << " patients\n";
}

void cmd_embeddings(const Globals& g, const EmbeddingArgs& a, const CLI::App& app, std::ostream& out) {
  const fs::path dir = prepare_out(g);
  if (a.data.empty()) throw ConfigError("--data is required");
  if (a.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  const Vocabulary vocab = Vocabulary::load(fs::path(a.data) / "vocab.tsv");
  const SequenceModel model = load_checkpoint(a.checkpoint);
  if (model.vocab_size() != vocab.size()) throw Error("checkpoint vocabulary does not match vocab.tsv");
  if (!model.config().stochasticity.embeddings) {
    throw ConfigError("embedding entropy needs a model with stochastic embeddings");
  }
  const EntropyRanking ranking = entropy_frequency_report(model.event_embeddings().table(), vocab);
  {
    auto f = open_out(dir / "embeddings_ranking.csv");
    write_entropy_csv(f, ranking.rows);
  }
  {
    auto f = open_out(dir / "embeddings_top.csv");
    write_entropy_csv(f, ranking.top(a.top));
  }
  {
    auto f = open_out(dir / "embeddings_bottom.csv");
    write_entropy_csv(f, ranking.bottom(a.bottom));
  }
  {
    auto f = open_out(dir / "embeddings_summary.txt");
    f << "tokens=" << ranking.rows.size() << "\npearson_entropy_log10_count=" << format_double(ranking.correlation)
      << '\n';
  }
  write_resolved_config(app, dir);
  out << "entropy vs log10(count+1) correlation " << format_double(ranking.correlation) << '\n';
}

// ---------------------------------------------------------------------------
// Option wiring

void add_model_options(CLI::App* sub, TrainArgs& a) {
  sub->add_option("--data", a.data, "Directory with train/validation/test .jsonl and vocab.tsv")->required();
  sub->add_option("--variant", a.variant, "Model variant")
      ->check(CLI::IsMember({"deterministic", "deterministic-ensemble", "bayesian-embeddings", "bayesian-output",
                             "bayesian-hidden-output", "bayesian-rnn-hidden-output", "fully-bayesian"}));
  sub->add_option("--num-classes", a.num_classes, "2 for binary, K > 2 for multiclass")->check(CLI::Range(2, 1000));
  sub->add_option("--max-epochs", a.max_epochs)->check(CLI::PositiveNumber);
  sub->add_option("--patience", a.patience)->check(CLI::PositiveNumber);
  auto& o = a.overrides;
  sub->add_option("--batch-size", o.batch_size);
  sub->add_option("--learning-rate", o.learning_rate);
  sub->add_option("--annealing-steps", o.annealing_steps);
  sub->add_option("--prior-std", o.prior_std);
  sub->add_option("--rnn-dim", o.rnn_dim);
  sub->add_option("--rnn-layers", o.rnn_layers);
  sub->add_option("--hidden-dim", o.hidden_dim);
  sub->add_option("--embedding-dim", o.embedding_dim);
  sub->add_option("--bias-uncertainty", o.bias_uncertainty);
}

void add_predict_options(CLI::App* sub, PredictArgs& a, const std::string& default_split) {
  a.split = default_split;
  sub->add_option("--data", a.data, "Dataset directory")->required();
  sub->add_option("--checkpoints", a.checkpoints, "Checkpoint files or directories of *.ckpt")->required();
  sub->add_option("--split", a.split)->check(CLI::IsMember({"train", "validation", "test"}));
  sub->add_option("--samples", a.samples, "Weight draws for a single Bayesian model")->check(CLI::PositiveNumber);
  sub->add_option("--sampling", a.sampling, "Bayesian sampling scheme")
      ->check(CLI::IsMember({"per-example", "global"}));
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Model-uncertainty pipeline for sequential risk prediction", "riskunc"};
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "INI configuration file");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--seed", g.seed, "Root random seed");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--profile", g.profile, "Configuration profile")->check(CLI::IsMember({"desk", "paper"}));
  app.add_option("--threads", g.threads, "Worker threads (0 = all cores)");

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Generate a synthetic cohort and split it");
  generate->add_option("--n", gen.n, "Number of patients")->check(CLI::Range(10, 10'000'000));
  generate->add_option("--vocab-size", gen.vocab_size)->check(CLI::PositiveNumber);
  generate->add_option("--num-classes", gen.num_classes)->check(CLI::Range(2, 1000));
  generate->add_option("--positive-rate", gen.positive_rate)->check(CLI::Range(0.0, 1.0));
  generate->add_option("--neonate-rate", gen.neonate_rate)->check(CLI::Range(0.0, 1.0));

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train one model");
  add_model_options(train_cmd, tr);

  EnsembleArgs ens;
  ens.train.variant = "deterministic-ensemble";
  auto* ens_cmd = app.add_subcommand("train-ensemble", "Train seed-varied ensemble members");
  add_model_options(ens_cmd, ens.train);
  ens_cmd->add_option("--m", ens.members, "Number of members")->check(CLI::PositiveNumber);
  ens_cmd->add_option("--seed-base", ens.seed_base, "Seed of member 0 (members use consecutive seeds)");

  EvaluateArgs ev;
  auto* eval_cmd = app.add_subcommand("evaluate", "Metrics of marginalized predictions with bootstrap CIs");
  add_predict_options(eval_cmd, ev.predict, "test");
  eval_cmd->add_option("--bootstrap", ev.bootstrap, "Bootstrap resamples (0 disables CIs)");
  eval_cmd->add_option("--bins", ev.bins, "Calibration bins")->check(CLI::PositiveNumber);

  UncertaintyArgs un;
  auto* unc_cmd = app.add_subcommand("uncertainty", "Per-patient predictive uncertainty samples");
  add_predict_options(unc_cmd, un.predict, "test");
  unc_cmd->add_option("--patient", un.patient, "Restrict to one patient id");
  unc_cmd->add_option("--bins", un.bins, "Histogram bins")->check(CLI::PositiveNumber);

  DecideArgs de;
  auto* dec_cmd = app.add_subcommand("decide", "Optimal-decision distributions at a target recall");
  add_predict_options(dec_cmd, de.predict, "test");
  dec_cmd->add_option("--target-recall", de.target_recall)->check(CLI::Range(0.0, 1.0));

  SubgroupArgs sg;
  auto* sub_cmd = app.add_subcommand("subgroups", "Subgroup-stratified metrics and uncertainty");
  add_predict_options(sub_cmd, sg.predict, "validation");
  sub_cmd->add_option("--metric", sg.metric)->check(CLI::IsMember({"auc-pr", "auc-roc"}));
  sub_cmd->add_option("--target-recall", sg.target_recall)->check(CLI::Range(0.0, 1.0));

  EmbeddingArgs em;
  auto* emb_cmd = app.add_subcommand("embeddings", "Token embedding entropy against training frequency");
  emb_cmd->add_option("--data", em.data, "Dataset directory (for vocab.tsv)")->required();
  emb_cmd->add_option("--checkpoint", em.checkpoint, "Checkpoint with stochastic embeddings")->required();
  emb_cmd->add_option("--top", em.top);
  emb_cmd->add_option("--bottom", em.bottom);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsageError;
  }

  try {
    if (*generate) {
      cmd_generate(g, gen, app, out);
    } else if (*train_cmd) {
      cmd_train(g, tr, app, out, err);
    } else if (*ens_cmd) {
      cmd_train_ensemble(g, ens, app, out, err);
    } else if (*eval_cmd) {
      cmd_evaluate(g, ev, app, out, err);
    } else if (*unc_cmd) {
      cmd_uncertainty(g, un, app, out, err);
    } else if (*dec_cmd) {
      if (de.target_recall <= 0.0) throw ConfigError("--target-recall must lie in (0, 1]");
      cmd_decide(g, de, app, out, err);
    } else if (*sub_cmd) {
      cmd_subgroups(g, sg, app, out, err);
    } else if (*emb_cmd) {
      cmd_embeddings(g, em, app, out);
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeFailure;
  }
  return kOk;
}

}  // namespace riskunc::cli
