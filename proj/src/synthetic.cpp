#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "riskunc/cohort.hpp"
#include "riskunc/error.hpp"
#include "riskunc/rng.hpp"

namespace riskunc {

void SyntheticConfig::validate() const {
  if (n_patients == 0) throw ConfigError("n_patients must be positive");
  if (vocab_size < 2) throw ConfigError("vocab_size must be at least 2");
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (!(positive_rate > 0.0 && positive_rate < 1.0)) throw ConfigError("positive_rate must lie in (0, 1)");
  if (!(neonate_rate >= 0.0 && neonate_rate < 1.0)) throw ConfigError("neonate_rate must lie in [0, 1)");
  if (!(zipf_exponent > 0.0)) throw ConfigError("zipf_exponent must be positive");
  if (mean_extra_days < 0.0 || max_days < 1) throw ConfigError("invalid day-count settings");
  if (!(events_per_day > 0.0)) throw ConfigError("events_per_day must be positive");
  if (empty_record_rate < 0.0 || empty_record_rate >= 1.0) throw ConfigError("empty_record_rate must lie in [0, 1)");
  if (label_event_rate < 0.0 || token_signal < 0.0 || noise_scale < 0.0) {
    throw ConfigError("rates and scales must be non-negative");
  }
}

std::vector<double> zipf_probabilities(std::size_t vocab_size, double exponent) {
  std::vector<double> p(vocab_size);
  for (std::size_t j = 0; j < vocab_size; ++j) p[j] = std::pow(static_cast<double>(j + 1), -exponent);
  const double total = std::accumulate(p.begin(), p.end(), 0.0);
  for (auto& v : p) v /= total;
  return p;
}

namespace {

constexpr std::array<const char*, 3> kFamilies = {"med", "lab", "note"};
constexpr std::array<const char*, 5> kEthnicities = {"white", "black", "hispanic", "asian", "other"};
constexpr std::array<double, 5> kEthnicityWeights = {0.6, 0.15, 0.1, 0.08, 0.07};

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Draft {
  PatientRecord record;
  int days = 1;
  std::vector<double> class_score;  // latent score per class (one entry for binary)
};

std::string token_name(std::size_t id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s:%04zu", kFamilies[id % kFamilies.size()], id);
  return buf;
}

// Adds `count` events drawn from `dist` at uniform times over the record's days.
void add_events(Draft& d, std::size_t count, std::discrete_distribution<int>& dist, Rng& rng) {
  std::uniform_real_distribution<double> when(0.0, 24.0 * d.days);
  std::normal_distribution<double> lab_value(0.0, 1.0);
  for (std::size_t k = 0; k < count; ++k) {
    Event e;
    e.time_offset_hours = when(rng);
    e.feature_id = dist(rng);
    if (e.feature_id % 3 == 1) e.value = lab_value(rng);
    d.record.events.push_back(e);
  }
}

}  // namespace

Cohort generate_synthetic(const SyntheticConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t V = config.vocab_size;
  const int K = config.num_classes;
  const bool binary = K == 2;
  const int n_scores = binary ? 1 : K;

  Cohort cohort;
  for (std::size_t j = 0; j < V; ++j) cohort.vocabulary.add(token_name(j));

  // Per-token loadings, independent of token frequency.
  auto token_rng = make_rng(seed, {1});
  std::normal_distribution<double> std_normal(0.0, 1.0);
  std::vector<double> loadings(V * n_scores);
  for (auto& a : loadings) a = config.token_signal * std_normal(token_rng);

  const auto zipf = zipf_probabilities(V, config.zipf_exponent);
  std::discrete_distribution<int> base_tokens(zipf.begin(), zipf.end());

  auto rng = make_rng(seed, {2});
  std::bernoulli_distribution female(0.5);
  std::bernoulli_distribution neonate(config.neonate_rate);
  std::bernoulli_distribution empty_record(config.empty_record_rate);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> adult_age(62.0, 17.0);
  std::discrete_distribution<int> ethnicity(kEthnicityWeights.begin(), kEthnicityWeights.end());
  std::poisson_distribution<int> extra_days(config.mean_extra_days);
  std::poisson_distribution<int> per_day(config.events_per_day);

  std::vector<Draft> drafts(config.n_patients);
  for (std::size_t i = 0; i < config.n_patients; ++i) {
    auto& d = drafts[i];
    auto& r = d.record;
    char id[32];
    std::snprintf(id, sizeof id, "P%06zu", i);
    r.patient_id = id;
    r.context.gender = female(rng) ? "F" : "M";
    r.context.age_years = neonate(rng) ? unit(rng) * kNeonateMaxAgeYears * 0.999
                                       : std::clamp(adult_age(rng), 18.0, 95.0);
    r.context.ethnicity = kEthnicities[ethnicity(rng)];
    d.days = std::min(1 + extra_days(rng), config.max_days);

    if (!empty_record(rng)) {
      for (int day = 0; day < d.days; ++day) {
        const int n_events = per_day(rng);
        for (int k = 0; k < n_events; ++k) {
          Event e;
          e.time_offset_hours = 24.0 * (day + unit(rng));
          e.feature_id = base_tokens(rng);
          if (e.feature_id % 3 == 1) e.value = std_normal(rng);
          r.events.push_back(e);
        }
      }
    }

    // Latent score: age and gender effects, mean token loading, and noise whose
    // scale grows with age and is larger for women.
    const double age_norm = (r.context.age_years - 50.0) / 20.0;
    const double noise_sd =
        config.noise_scale * (0.5 + r.context.age_years / 60.0) * (r.context.gender == "F" ? 1.2 : 1.0);
    d.class_score.assign(n_scores, 0.0);
    for (int c = 0; c < n_scores; ++c) {
      double load = 0.0;
      for (const auto& e : r.events) load += loadings[e.feature_id * n_scores + c];
      if (!r.events.empty()) load /= std::sqrt(static_cast<double>(r.events.size()));
      const double context_effect = binary ? 0.8 * age_norm + (r.context.gender == "F" ? 0.15 : 0.0)
                                           : 0.3 * age_norm * (c % 2 == 0 ? 1.0 : -1.0);
      d.class_score[c] = context_effect + load + noise_sd * std_normal(rng);
    }
  }

  // Labels.
  std::vector<int> labels(config.n_patients, 0);
  if (binary) {
    // Intercept so that the mean risk equals the target rate, then exactly
    // round(rate * n) positives drawn without replacement with weights
    // proportional to the risk odds.
    double lo = -30.0, hi = 30.0;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      double mean_risk = 0.0;
      for (const auto& d : drafts) mean_risk += logistic(mid + d.class_score[0]);
      mean_risk /= static_cast<double>(drafts.size());
      (mean_risk < config.positive_rate ? lo : hi) = mid;
    }
    const double intercept = 0.5 * (lo + hi);
    const auto k = static_cast<std::size_t>(std::llround(config.positive_rate * static_cast<double>(drafts.size())));
    std::vector<std::pair<double, std::size_t>> keys(drafts.size());
    for (std::size_t i = 0; i < drafts.size(); ++i) {
      const double risk = logistic(intercept + drafts[i].class_score[0]);
      const double odds = std::max(risk / (1.0 - risk), 1e-300);
      // Efraimidis-Spirakis key, in log space: log(u) / w.
      const double u = std::max(unit(rng), 1e-300);
      keys[i] = {std::log(u) / odds, i};
    }
    std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(k), keys.end(),
                      [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
    for (std::size_t j = 0; j < k; ++j) labels[keys[j].second] = 1;
  } else {
    for (std::size_t i = 0; i < drafts.size(); ++i) {
      std::vector<double> w(K);
      const double top = *std::max_element(drafts[i].class_score.begin(), drafts[i].class_score.end());
      for (int c = 0; c < K; ++c) w[c] = std::exp(2.0 * (drafts[i].class_score[c] - top));
      std::discrete_distribution<int> cls(w.begin(), w.end());
      labels[i] = cls(rng);
    }
  }

  // Label-conditional events: tokens tilted toward the ones whose loading
  // agrees with the realized outcome.
  std::vector<std::discrete_distribution<int>> tilted;
  const int n_tilts = binary ? 2 : K;
  for (int c = 0; c < n_tilts; ++c) {
    std::vector<double> w(V);
    for (std::size_t j = 0; j < V; ++j) {
      const double a = binary ? loadings[j] * (c == 1 ? 1.0 : -1.0) : loadings[j * n_scores + c];
      w[j] = zipf[j] * std::exp(std::min(a, 5.0));
    }
    tilted.emplace_back(w.begin(), w.end());
  }
  std::poisson_distribution<int> label_events(config.label_event_rate);
  std::uniform_real_distribution<double> stay_extra(0.0, 1.0);
  for (std::size_t i = 0; i < drafts.size(); ++i) {
    auto& d = drafts[i];
    d.record.label = labels[i];
    if (config.label_event_rate > 0.0 && !d.record.events.empty()) {
      add_events(d, static_cast<std::size_t>(label_events(rng)), tilted[labels[i]], rng);
    }
    std::stable_sort(d.record.events.begin(), d.record.events.end(),
                     [](const Event& a, const Event& b) { return a.time_offset_hours < b.time_offset_hours; });
    d.record.length_of_stay_days = d.days - 1 + stay_extra(rng);
    cohort.records.push_back(std::move(d.record));
  }
  cohort.vocabulary.count_from(cohort.records);
  return cohort;
}

}  // namespace riskunc
