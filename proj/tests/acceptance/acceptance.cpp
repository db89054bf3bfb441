// Acceptance run: one PASS/FAIL line per criterion. Exit status is the number
// of failing criteria (0 when all pass).

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cli_app.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "riskunc/bayes_layers.hpp"
#include "riskunc/checkpoint.hpp"
#include "riskunc/cohort.hpp"
#include "riskunc/decide.hpp"
#include "riskunc/insight.hpp"
#include "riskunc/ops.hpp"
#include "riskunc/seq_model.hpp"
#include "riskunc/uq.hpp"

namespace fs = std::filesystem;
using namespace riskunc;
using namespace riskunc::testing;

namespace {

// Tolerances.
constexpr double kOpTol = 1e-4;
constexpr double kEndToEndTol = 1e-3;
constexpr double kGradSeconds = 60.0;
constexpr double kKlTol = 0.01;
constexpr std::size_t kKlDraws = 1'000'000;
constexpr double kMetricTol = 1e-12;
constexpr double kTableTol = 5e-4;
constexpr double kVarianceSlack = 1e-12;
constexpr double kAucStdMax = 0.02;
constexpr double kWideRange = 0.2;
constexpr double kWideFractionMin = 0.05;
constexpr double kEnsembleMinutes = 30.0;
constexpr double kTargetRecall = 0.70;
constexpr double kNllRelative = 0.10;
constexpr double kEceSlack = 0.005;

// Cohort and training setup for the population-level checks.
constexpr std::size_t kCohortSize = 5000;
constexpr std::uint64_t kCohortSeed = 7;
constexpr std::size_t kMembers = 10;
constexpr std::uint64_t kSeedBase = 100;
constexpr std::size_t kPosteriorSamples = 10;
constexpr std::uint64_t kSampleSeed = 5;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(6) << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

bool same_bits(const ProbMatrix& a, const ProbMatrix& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!same_bits(a[i], b[i])) return false;
  }
  return true;
}

bool same_bits(const std::vector<PredictiveUncertainty>& a, const std::vector<PredictiveUncertainty>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!same_bits(a[i].samples(), b[i].samples())) return false;
  }
  return true;
}

std::vector<int> labels_of(const std::vector<PatientRecord>& records) {
  std::vector<int> y;
  for (const auto& r : records) y.push_back(r.label);
  return y;
}

// Every predictive distribution the run produces passes through here.
struct VarianceAudit {
  std::size_t checked = 0;
  std::size_t violations = 0;
  double worst_excess = -1.0;

  void check(const PredictiveUncertainty& pu) {
    for (std::size_t d = 0; d < pu.dim(); ++d) {
      const auto v = pu.component(d);
      const double m = marginalize(pu)[d];
      const double excess = population_variance(v) - m * (1.0 - m);
      worst_excess = std::max(worst_excess, excess);
      if (excess > kVarianceSlack) ++violations;
    }
    ++checked;
  }
  void check(const std::vector<PredictiveUncertainty>& pus) {
    for (const auto& pu : pus) check(pu);
  }
};

VarianceAudit audit;

// ---------------------------------------------------------------------------
// 1. Gradients

PatientRecord make_record(std::string id, std::vector<std::pair<double, int>> events, int label, double age,
                          std::string gender, std::string eth) {
  PatientRecord r;
  r.patient_id = std::move(id);
  r.context = {std::move(gender), age, std::move(eth)};
  for (auto [t, f] : events) r.events.push_back({t, f, {}});
  r.label = label;
  return r;
}

std::vector<Tensor> leaves_of(const std::vector<std::pair<std::string, Tensor>>& named) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : named) out.push_back(t);
  return out;
}

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(11);
  std::map<std::string, double> per_op;
  const auto note = [&](const std::string& name, double err) { per_op[name] = std::max(per_op[name], err); };

  // Primitive ops, each projected on a fixed random weight.
  for (UnaryOp op : {UnaryOp::kSigmoid, UnaryOp::kTanh, UnaryOp::kRelu, UnaryOp::kExp, UnaryOp::kLog,
                     UnaryOp::kSoftplus, UnaryOp::kSquare, UnaryOp::kNeg}) {
    Tensor x = random_tensor({3, 4}, rng, op == UnaryOp::kLog ? 0.2 : -2.0, 2.0);
    if (op == UnaryOp::kRelu) {
      for (auto& v : x.mutable_data()) v = std::abs(v) < 0.05 ? 0.3 : v;
    }
    const Tensor w = random_tensor({3, 4}, rng, -1, 1, false);
    note("unary", gradcheck([&] { return project(elementwise(op, x), w); }, {x}).worst);
  }
  for (BinaryOp op : {BinaryOp::kAdd, BinaryOp::kSub, BinaryOp::kMul}) {
    Tensor a = random_tensor({2, 5}, rng), b = random_tensor({2, 5}, rng);
    const Tensor w = random_tensor({2, 5}, rng, -1, 1, false);
    note("binary", gradcheck([&] { return project(elementwise(op, a, b), w); }, {a, b}).worst);
  }
  {
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng), row = random_tensor({1, 2}, rng);
    const Tensor w = random_tensor({3, 2}, rng, -1, 1, false);
    note("affine/matmul/add_row",
         gradcheck([&] { return project(add_row(matmul(affine(a, 1.7, -0.3), b), row), w); }, {a, b, row}).worst);
    Tensor z = random_tensor({3, 4}, rng, -3, 3);
    const Tensor wz = random_tensor({3, 4}, rng, -1, 1, false);
    note("softmax", gradcheck([&] { return project(softmax(z), wz); }, {z}).worst);
    note("log_softmax", gradcheck([&] { return project(log_softmax(z), wz); }, {z}).worst);
    for (ReduceOp op : {ReduceOp::kSum, ReduceOp::kMean, ReduceOp::kMax, ReduceOp::kMin}) {
      note("reduce", gradcheck([&] { return reduce(op, a); }, {a}).worst);
      for (std::size_t axis : {0u, 1u}) {
        const Tensor wr = random_tensor(reduce(op, a, axis).shape(), rng, -1, 1, false);
        note("reduce", gradcheck([&] { return project(reduce(op, a, axis), wr); }, {a}).worst);
      }
    }
    Tensor c = random_tensor({3, 2}, rng), d = random_tensor({3, 3}, rng), table = random_tensor({5, 3}, rng);
    const std::vector<std::int32_t> ids = {4, 0, 4};
    const std::vector<std::vector<std::int32_t>> bags = {{1, 2, 2}, {}, {0}};
    const Tensor w5 = random_tensor({3, 5}, rng, -1, 1, false), w3 = random_tensor({3, 3}, rng, -1, 1, false);
    const std::array<Tensor, 2> parts = {c, d};
    note("concat_cols", gradcheck([&] { return project(concat_cols(parts), w5); }, {c, d}).worst);
    note("slice_cols", gradcheck([&] { return project(slice_cols(d, 1, 3), slice_cols(w3, 0, 2)); }, {d}).worst);
    note("gather_rows", gradcheck([&] { return project(gather_rows(table, ids), w3); }, {table}).worst);
    note("bag_mean", gradcheck([&] { return project(bag_mean(table, bags, 3), w3); }, {table}).worst);
    Tensor u = random_tensor({3, 3}, rng), p = random_tensor({3, 3}, rng);
    note("select_rows", gradcheck([&] { return project(select_rows({true, false, true}, u, p), w3); }, {u, p}).worst);
    Tensor z1 = random_tensor({6, 1}, rng, -3, 3);
    const std::vector<int> y1 = {0, 1, 1, 0, 1, 0};
    note("bce_with_logits", gradcheck([&] { return bce_with_logits(z1, y1); }, {z1}).worst);
    Tensor z3 = random_tensor({4, 3}, rng, -3, 3);
    const std::vector<int> y3 = {2, 0, 1, 2};
    note("cross_entropy", gradcheck([&] { return cross_entropy(z3, y3); }, {z3}).worst);
  }

  // Layers at desk width, stochastic with bias uncertainty; a fixed noise
  // stream per evaluation keeps the sampled weights common to every probe.
  const ModelConfig desk = desk_config(Variant::kFullyBayesian);
  const LayerInit init{IsotropicPrior(0.4), true, true};
  const std::size_t emb = static_cast<std::size_t>(desk.event_embedding_dim());
  const std::size_t H = static_cast<std::size_t>(desk.rnn_dim);
  Rng layer_rng(3);
  {
    const EmbeddingLayer layer(21, emb, init, layer_rng);
    const std::vector<std::vector<std::int32_t>> bags = {{1, 4, 4, 9}, {}, {0, 20}};
    const Tensor w = random_tensor({3, emb}, rng, -1, 1, false);
    std::vector<std::pair<std::string, Tensor>> named;
    layer.collect("emb", named);
    note("embedding layer", gradcheck(
                                [&] {
                                  Rng noise(41);
                                  return project(bag_mean(layer.realize({SampleMode::kSample, &noise}), bags, 20), w);
                                },
                                leaves_of(named))
                                .worst);
  }
  {
    const DenseLayer layer(H, 24, init, layer_rng);
    Tensor x = random_tensor({2, H}, rng);
    const Tensor w = random_tensor({2, 24}, rng, -1, 1, false);
    std::vector<std::pair<std::string, Tensor>> named;
    layer.collect("dense", named);
    auto leaves = leaves_of(named);
    leaves.push_back(x);
    note("dense layer", gradcheck(
                            [&] {
                              Rng noise(42);
                              return project(relu(dense_forward(x, layer.realize({SampleMode::kSample, &noise}))), w);
                            },
                            leaves)
                            .worst);
  }
  {
    const LstmLayer layer(emb, H, init, layer_rng);
    std::vector<Tensor> xs;
    for (int t = 0; t < 4; ++t) xs.push_back(random_tensor({2, emb}, rng));
    const Tensor w = random_tensor({2, H}, rng, -1, 1, false);
    std::vector<std::pair<std::string, Tensor>> named;
    layer.collect("lstm", named);
    auto leaves = leaves_of(named);
    leaves.insert(leaves.end(), xs.begin(), xs.end());
    note("lstm layer", gradcheck(
                           [&] {
                             Rng noise(43);
                             const auto weights = layer.realize({SampleMode::kSample, &noise});
                             LstmState s{Tensor::zeros({2, H}), Tensor::zeros({2, H})};
                             for (const auto& x : xs) s = lstm_step(x, s, weights);
                             return project(s.h, w);
                           },
                           leaves, 1e-6, 64)
                           .worst);
    note("kl_to_prior", gradcheck([&] { return layer.kl(IsotropicPrior(0.4)); }, leaves_of(named), 1e-6, 64).worst);
  }
  {
    Tensor mu = random_tensor({4, 3}, rng), rho = random_tensor({4, 3}, rng, -3, 0);
    const Tensor w = random_tensor({4, 3}, rng, -1, 1, false);
    note("sample_weights", gradcheck(
                               [&] {
                                 Rng noise(44);
                                 return project(sample_weights(GaussianPosterior(mu, rho), noise), w);
                               },
                               {mu, rho})
                               .worst);
  }

  double worst_op = 0.0;
  std::string worst_name;
  for (const auto& [name, err] : per_op) {
    if (err >= worst_op) worst_op = err, worst_name = name;
  }

  // Full ELBO on a two-patient batch, averaged over ten fixed draws.
  const std::vector<PatientRecord> two = {
      make_record("a", {{2, 0}, {5, 3}, {30, 1}, {31, 7}, {80, 12}}, 1, 60, "F", "a"),
      make_record("b", {{1, 2}, {50, 2}, {52, 19}}, 0, 0.02, "M", "b")};
  double worst_e2e = 0.0;
  for (Variant v : {Variant::kFullyBayesian, Variant::kBayesianRnnHiddenOutput}) {
    ModelConfig cfg = desk_config(v);
    cfg.stochasticity.bias_uncertainty = true;
    cfg.seed = 9;
    SequenceModel model(cfg, 20, collect_ethnicities(two));
    const auto enc = model.encode(two);
    std::vector<const EncodedRecord*> batch;
    for (const auto& e : enc) batch.push_back(&e);
    const std::int64_t step = cfg.annealing_steps / 2;
    const auto f = [&] {
      Tensor total = Tensor::scalar(0.0);
      for (std::uint64_t draw = 0; draw < 10; ++draw) {
        Rng noise(1000 + draw);
        total = add(total, loss_elbo(model, batch, step, 50, {SampleMode::kSample, &noise}).loss);
      }
      return mul(total, Tensor::scalar(0.1));
    };
    worst_e2e = std::max(worst_e2e, gradcheck(f, leaves_of(model.named_parameters()), 1e-6, 12).worst);
  }

  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = worst_op < kOpTol && worst_e2e < kEndToEndTol && secs < kGradSeconds;
  o.detail = "worst per-op/layer rel err " + fmt(worst_op) + " (" + worst_name + ", tol " + fmt(kOpTol) +
             "), end-to-end ELBO " + fmt(worst_e2e) + " (tol " + fmt(kEndToEndTol) + "), " + fmt(secs) + " s";
  return o;
}

// ---------------------------------------------------------------------------
// 2. KL oracle

Outcome kl_oracle() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> mu_d(-1.0, 1.0), frac_d(0.05, 1.0), prior_d(0.135, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const double mu = mu_d(rng), prior = prior_d(rng), sigma = frac_d(rng) * prior;
    const GaussianPosterior post(Tensor::from({1}, {mu}), Tensor::from({1}, {inverse_softplus(sigma)}));
    const double closed = kl_to_prior(post, IsotropicPrior(prior)).item();
    worst = std::max(worst, std::abs(closed - monte_carlo_kl(mu, sigma, prior, kKlDraws, rng)));
  }
  bool zero = true;
  for (double rho : {-3.0, -1.2, 0.0, 0.4}) {
    const GaussianPosterior post(Tensor::zeros({3, 2}), Tensor::full({3, 2}, rho));
    zero = zero && kl_to_prior(post, IsotropicPrior(softplus(rho))).item() == 0.0;
  }
  return {worst <= kKlTol && zero, "max |closed - MC| over 20 triples " + fmt(worst) + " (tol " + fmt(kKlTol) +
                                       "), exact zero at q = p: " + (zero ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// 3. Metric oracles

Outcome metric_oracles() {
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  std::size_t threshold_mismatch = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + rng() % 199;
    const bool grid = t % 2 == 0;  // half the instances carry tied scores
    std::vector<double> p(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = grid ? std::round(u(rng) * 20.0) / 20.0 : u(rng);
      y[i] = u(rng) < p[i] ? 1 : 0;
    }
    if (std::count(y.begin(), y.end(), 1) == 0) y[0] = 1;
    if (std::count(y.begin(), y.end(), 0) == 0) y[n - 1] = 0;
    worst = std::max(worst, std::abs(ece(p, y) - ece_oracle(p, y, 10)));
    worst = std::max(worst, std::abs(ace(p, y) - ace_oracle(p, y, 10)));
    worst = std::max(worst, std::abs(auc_roc(p, y) - auc_oracle(p, y)));
    worst = std::max(worst, std::abs(auc_pr(p, y) - ap_oracle(p, y)));
    const double target = t % 5 == 0 ? 1.0 : u(rng);
    const auto got = optimize_threshold(p, y, target);
    const auto want = threshold_oracle(p, y, target);
    threshold_mismatch += got.threshold != want.threshold || got.precision != want.precision;
  }
  return {worst <= kMetricTol && threshold_mismatch == 0,
          "max real-valued deviation " + fmt(worst) + " (tol " + fmt(kMetricTol) + "), threshold mismatches " +
              std::to_string(threshold_mismatch) + "/100"};
}

// ---------------------------------------------------------------------------
// 4. Reported top-5 triple

Outcome table_triple() {
  const auto t = top_k_from_recall(0.7126, 5);
  const bool ok = std::abs(t.precision - 0.1425) <= kTableTol && std::abs(t.f1 - 0.2375) <= kTableTol;
  return {ok, "recall@5 0.7126 -> precision@5 " + fmt(t.precision) + ", F1 " + fmt(t.f1) + " (tol " +
                  fmt(kTableTol) + ")"};
}

// ---------------------------------------------------------------------------
// 6-10. Population-level properties on a synthetic cohort

struct CohortRun {
  Outcome ensemble, decision, bayes_vs_ensemble, entropy, determinism;
};

std::string cli_snapshot_diff(const fs::path& a, const fs::path& b) {
  const auto read = [](const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
      if (!e.is_regular_file() || e.path().filename() == "run_config.ini") continue;
      std::ifstream in(e.path(), std::ios::binary);
      std::stringstream s;
      s << in.rdbuf();
      files[fs::relative(e.path(), dir).string()] = s.str();
    }
    return files;
  };
  const auto x = read(a), y = read(b);
  if (x.empty()) return "no outputs";
  if (x != y) return "outputs differ";
  return "";
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "riskunc");
  std::vector<const char*> argv;
  for (const auto& s : args) argv.push_back(s.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != cli::kOk) std::cerr << err.str();
  return code;
}

CohortRun cohort_properties() {
  CohortRun run;
  SyntheticConfig sc;
  sc.n_patients = kCohortSize;
  const Cohort cohort = generate_synthetic(sc, kCohortSeed);
  const CohortSplit parts = split(cohort.records, kCohortSeed);
  const auto eth = collect_ethnicities(parts.train);
  Vocabulary vocab = cohort.vocabulary;
  vocab.count_from(parts.train);
  const auto y_val = labels_of(parts.validation);
  const auto y_test = labels_of(parts.test);
  const TrainOptions options;

  // Ensemble.
  const ModelConfig det = desk_config(Variant::kDeterministicEnsemble);
  const auto spec = EnsembleSpec::with_seed_base(det, kMembers, kSeedBase);
  auto t0 = std::chrono::steady_clock::now();
  const auto members = train_ensemble(spec, vocab.size(), eth, parts.train, parts.validation, options);
  const double ensemble_minutes = seconds_since(t0) / 60.0;
  std::cerr << "ensemble trained in " << fmt(ensemble_minutes) << " min\n";
  std::vector<const SequenceModel*> ptrs;
  for (const auto& m : members) ptrs.push_back(&m.model);
  const auto pu_val = predict_samples(ptrs, parts.validation);
  const auto pu_test = predict_samples(ptrs, parts.test);
  audit.check(pu_val);
  audit.check(pu_test);
  const auto member_scores = sample_major(pu_val);

  {
    std::vector<double> aucs;
    for (const auto& s : member_scores) aucs.push_back(auc_roc(s, y_val));
    const double auc_std = std::sqrt(population_variance(aucs));
    std::size_t pos = 0, wide = 0, neg = 0;
    double range_pos = 0, range_neg = 0;
    for (std::size_t i = 0; i < pu_val.size(); ++i) {
      const double r = dispersion(pu_val[i]).range[0];
      if (y_val[i] == 1) {
        ++pos, range_pos += r;
        wide += r > kWideRange;
      } else {
        ++neg, range_neg += r;
      }
    }
    const double wide_frac = static_cast<double>(wide) / pos;
    range_pos /= pos, range_neg /= neg;
    run.ensemble.pass = auc_std < kAucStdMax && wide_frac >= kWideFractionMin && range_neg < range_pos &&
                        ensemble_minutes < kEnsembleMinutes;
    run.ensemble.detail = "member AUC std " + fmt(auc_std) + " (< " + fmt(kAucStdMax) + "), positives with range > " +
                          fmt(kWideRange) + ": " + fmt(wide_frac) + " (>= " + fmt(kWideFractionMin) +
                          "), mean range neg " + fmt(range_neg) + " vs pos " + fmt(range_pos) + ", " +
                          fmt(ensemble_minutes) + " min";
  }

  {
    const auto policy = calibrate_policy(member_scores, y_val, kTargetRecall);
    double min_recall = 1.0;
    for (std::size_t m = 0; m < member_scores.size(); ++m) {
      double tp = 0, positives = 0;
      for (std::size_t i = 0; i < y_val.size(); ++i) {
        positives += y_val[i];
        tp += y_val[i] && decide(member_scores[m][i], policy.thresholds[m]);
      }
      min_recall = std::min(min_recall, tp / positives);
    }
    std::size_t uncertain = 0;
    for (const auto& pu : pu_test) {
      const double phi = decision_distribution(pu, policy).agreement;
      uncertain += phi > 0.2 && phi < 0.8;
    }
    run.decision.pass = min_recall >= kTargetRecall && uncertain > 0;
    run.decision.detail = "lowest member validation recall " + fmt(min_recall) + " (>= " + fmt(kTargetRecall) +
                          "), test patients with phi in (0.2, 0.8): " + std::to_string(uncertain) + "/" +
                          std::to_string(pu_test.size());
  }

  // Bayesian embeddings.
  ModelConfig bcfg = desk_config(Variant::kBayesianEmbeddings);
  bcfg.seed = kSeedBase;
  SequenceModel bayes(bcfg, vocab.size(), eth);
  t0 = std::chrono::steady_clock::now();
  train(bayes, parts.train, parts.validation, options);
  std::cerr << "bayesian-embeddings trained in " << fmt(seconds_since(t0)) << " s\n";
  const auto bayes_val = predict_samples(bayes, parts.validation, kPosteriorSamples, kSampleSeed);
  audit.check(bayes_val);
  audit.check(predict_samples(bayes, parts.test, kPosteriorSamples, kSampleSeed, SamplingScheme::kGlobal));

  {
    std::vector<double> ens_marg, bayes_marg;
    for (const auto& pu : pu_val) ens_marg.push_back(marginalize(pu)[0]);
    for (const auto& pu : bayes_val) bayes_marg.push_back(marginalize(pu)[0]);
    const double ens_nll = nll(ens_marg, y_val), bayes_nll = nll(bayes_marg, y_val);
    const double rel = std::abs(bayes_nll - ens_nll) / ens_nll;
    double member_ece = 0;
    for (const auto& s : member_scores) member_ece += ece(s, y_val);
    member_ece /= static_cast<double>(member_scores.size());
    const double marg_ece = ece(ens_marg, y_val);
    run.bayes_vs_ensemble.pass = rel <= kNllRelative && marg_ece <= member_ece + kEceSlack;
    run.bayes_vs_ensemble.detail = "marginalized NLL bayesian-embeddings " + fmt(bayes_nll) + " vs ensemble " +
                                   fmt(ens_nll) + " (rel " + fmt(rel) + ", <= " + fmt(kNllRelative) +
                                   "), ensemble ECE marginalized " + fmt(marg_ece) + " vs mean member " +
                                   fmt(member_ece) + " + " + fmt(kEceSlack);
  }

  {
    const auto report = entropy_frequency_report(bayes.event_embeddings().table(), vocab);
    run.entropy.pass = report.correlation < 0.0;
    run.entropy.detail = "Pearson r(entropy, log10(count + 1)) = " + fmt(report.correlation);
  }

  // Determinism: a lone rerun of member 0, checkpoint round-trips, CLI reruns.
  {
    std::vector<std::string> problems;
    SequenceModel again(spec.member_config(0), vocab.size(), eth);
    train(again, parts.train, parts.validation, options);
    if (serialize_checkpoint(again) != serialize_checkpoint(members[0].model)) problems.push_back("member rerun");

    const auto dir = fs::temp_directory_path() / "riskunc_acceptance";
    fs::remove_all(dir);
    fs::create_directories(dir);
    save_checkpoint(bayes, dir / "bayes.ckpt");
    const SequenceModel bayes_loaded = load_checkpoint(dir / "bayes.ckpt");
    if (!same_bits(predict_samples(bayes_loaded, parts.validation, kPosteriorSamples, kSampleSeed), bayes_val)) {
      problems.push_back("bayesian checkpoint predictions");
    }
    if (!same_bits(predict_mean(bayes_loaded, parts.test), predict_mean(bayes, parts.test))) {
      problems.push_back("bayesian checkpoint mean predictions");
    }
    const SequenceModel member_loaded = deserialize_checkpoint(serialize_checkpoint(members[3].model));
    if (!same_bits(predict_mean(member_loaded, parts.test), predict_mean(members[3].model, parts.test))) {
      problems.push_back("member checkpoint predictions");
    }

    for (const char* run_dir : {"run1", "run2"}) {
      const auto base = dir / run_dir;
      const auto data = (base / "data").string(), model = (base / "model").string();
      const bool ok =
          cli({"--seed", "11", "--out", data, "generate", "--n", "400", "--vocab-size", "40"}) == cli::kOk &&
          cli({"--seed", "11", "--out", model, "train", "--data", data, "--variant", "bayesian-embeddings",
               "--max-epochs", "2"}) == cli::kOk &&
          cli({"--seed", "11", "--out", (base / "eval").string(), "evaluate", "--data", data, "--checkpoints",
               model + "/model.ckpt", "--samples", "5", "--bootstrap", "100"}) == cli::kOk;
      if (!ok) problems.push_back(std::string("cli ") + run_dir);
    }
    const auto diff = cli_snapshot_diff(dir / "run1", dir / "run2");
    if (!diff.empty()) problems.push_back("cli " + diff);
    fs::remove_all(dir);

    run.determinism.pass = problems.empty();
    std::string joined;
    for (const auto& p : problems) joined += (joined.empty() ? "" : ", ") + p;
    run.determinism.detail = problems.empty() ? "member rerun, checkpoint round-trips and CLI reruns bit-identical"
                                              : "mismatch: " + joined;
  }
  return run;
}

// ---------------------------------------------------------------------------
// 5. Bounded variance over everything produced above plus random draws.

Outcome bounded_variance() {
  std::mt19937_64 rng(55);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 3000; ++t) {
    const std::size_t M = 1 + rng() % 40;
    const int mode = t % 4;
    if (mode == 3) {
      std::vector<std::vector<double>> samples(M, std::vector<double>(4));
      for (auto& s : samples) {
        double total = 0;
        for (auto& x : s) total += (x = std::pow(u(rng), 3));
        for (auto& x : s) x /= total;
      }
      audit.check(PredictiveUncertainty(samples));
      continue;
    }
    std::vector<double> v(M);
    for (auto& x : v) x = mode == 0 ? u(rng) : (mode == 1 ? (u(rng) < 0.5 ? 0.0 : 1.0) : std::pow(u(rng), 8));
    audit.check(PredictiveUncertainty::from_probabilities(v));
  }
  return {audit.violations == 0, std::to_string(audit.checked) + " predictive distributions checked, " +
                                     std::to_string(audit.violations) + " violations, max var - m(1-m) = " +
                                     fmt(audit.worst_excess) + " (slack " + fmt(kVarianceSlack) + ")"};
}

}  // namespace

int main() {
  std::array<Outcome, 10> results;
  std::cerr << "criterion 1 ...\n";
  results[0] = gradients();
  std::cerr << "criteria 2-4 ...\n";
  results[1] = kl_oracle();
  results[2] = metric_oracles();
  results[3] = table_triple();
  std::cerr << "criteria 6-10 (training on " << kCohortSize << " synthetic patients) ...\n";
  const auto run = cohort_properties();
  results[5] = run.ensemble;
  results[6] = run.decision;
  results[7] = run.bayes_vs_ensemble;
  results[8] = run.entropy;
  results[9] = run.determinism;
  results[4] = bounded_variance();

  int failures = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    std::cout << "criterion " << std::setw(2) << (i + 1) << ": " << (results[i].pass ? "PASS" : "FAIL") << "  "
              << results[i].detail << "\n";
    failures += !results[i].pass;
  }
  return failures;
}
