#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "riskunc/bayes_layers.hpp"
#include "riskunc/cohort.hpp"
#include "riskunc/decide.hpp"
#include "riskunc/uq.hpp"

namespace riskunc {

/// Metric of scores against labels; std::nullopt when undefined on the
/// subset (for example AUC on a single class).
using SubsetMetric = std::function<std::optional<double>(std::span<const double>, std::span<const int>)>;

/// Wraps a metric that throws on degenerate input.
SubsetMetric guarded(std::function<double(std::span<const double>, std::span<const int>)> metric);

struct SubgroupStats {
  std::size_t group = 0;
  std::string name;
  std::size_t count = 0;
  double prevalence = 0.0;                   // mean label; 0 for an empty group
  std::vector<std::optional<double>> values;  // one per model
  bool degenerate = false;                   // empty, single-class, or some model undefined
};

struct SubgroupReport {
  std::size_t models = 0;
  std::vector<SubgroupStats> groups;
};

/// Evaluates `metric` per (model, subgroup). member_scores is models x records.
SubgroupReport stratified_metrics(const std::vector<std::vector<double>>& member_scores, std::span<const int> labels,
                                  const Partition& partition, const SubsetMetric& metric);

/// Sample Pearson correlation; throws Error for fewer than 2 points or zero variance.
double pearson(std::span<const double> x, std::span<const double> y);

/// Correlation across models of the metric in group a against group b.
/// Needs at least 3 models and neither group flagged degenerate.
double cross_subgroup_correlation(const SubgroupReport& report, std::size_t a, std::size_t b);

struct UncertaintySummary {
  std::size_t group = 0;
  std::string name;
  std::size_t count = 0;
  double mean_std = 0.0;
  double mean_range = 0.0;
  double mean_decision_variance = 0.0;
};

/// Per-subgroup means of predictive std, range and phi (1 - phi). Decision
/// distributions are optional; when empty the variance column is 0.
std::vector<UncertaintySummary> uncertainty_by_subgroup(const std::vector<PredictiveUncertainty>& pus,
                                                        const std::vector<DecisionDistribution>& decisions,
                                                        const Partition& partition, std::size_t dim = 0);

struct EntropyRow {
  std::int32_t id = 0;
  std::string token;
  double entropy = 0.0;
  std::uint64_t count = 0;
};

struct EntropyRanking {
  std::vector<EntropyRow> rows;  // entropy descending, ties by id ascending
  double correlation = 0.0;      // Pearson r(entropy, log10(count + 1)); NaN if either side is constant

  std::vector<EntropyRow> top(std::size_t n) const;
  std::vector<EntropyRow> bottom(std::size_t n) const;
};

/// Ranks vocabulary tokens (rows 0..V-1 of the table) by embedding entropy.
/// Throws ConfigError when the table is not stochastic.
EntropyRanking entropy_frequency_report(const VariationalWeight& table, const Vocabulary& vocab);

void write_entropy_csv(std::ostream& out, const std::vector<EntropyRow>& rows);
void write_subgroup_csv(std::ostream& out, const SubgroupReport& report, const std::string& metric_name);
void write_uncertainty_summary_csv(std::ostream& out, const std::vector<UncertaintySummary>& rows);

}  // namespace riskunc
