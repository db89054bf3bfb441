#include "riskunc/insight.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "riskunc/error.hpp"

namespace riskunc {

SubsetMetric guarded(std::function<double(std::span<const double>, std::span<const int>)> metric) {
  return [metric = std::move(metric)](std::span<const double> s, std::span<const int> y) -> std::optional<double> {
    try {
      return metric(s, y);
    } catch (const Error&) {
      return std::nullopt;
    }
  };
}

SubgroupReport stratified_metrics(const std::vector<std::vector<double>>& member_scores, std::span<const int> labels,
                                  const Partition& partition, const SubsetMetric& metric) {
  if (partition.group_of.size() != labels.size()) throw ShapeError("partition does not cover the evaluated records");
  SubgroupReport report;
  report.models = member_scores.size();
  for (const auto& s : member_scores) {
    if (s.size() != labels.size()) throw ShapeError("member scores and labels differ in length");
  }
  for (std::size_t g = 0; g < partition.names.size(); ++g) {
    SubgroupStats stats;
    stats.group = g;
    stats.name = partition.names[g];
    const auto idx = partition.members(g);
    stats.count = idx.size();
    std::vector<int> y;
    for (auto i : idx) y.push_back(labels[i]);
    std::size_t positives = 0;
    for (int v : y) positives += v != 0 ? 1 : 0;
    stats.prevalence = idx.empty() ? 0.0 : static_cast<double>(positives) / static_cast<double>(idx.size());
    stats.degenerate = idx.empty() || positives == 0 || positives == idx.size();
    std::vector<double> s(idx.size());
    for (const auto& scores : member_scores) {
      std::optional<double> v;
      if (!idx.empty()) {
        for (std::size_t k = 0; k < idx.size(); ++k) s[k] = scores[idx[k]];
        v = metric(s, y);
      }
      if (!v) stats.degenerate = true;
      stats.values.push_back(v);
    }
    report.groups.push_back(std::move(stats));
  }
  return report;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("pearson: inputs differ in length");
  const std::size_t n = x.size();
  if (n < 2) throw Error("pearson needs at least two points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw Error("pearson: a constant input has no correlation");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double cross_subgroup_correlation(const SubgroupReport& report, std::size_t a, std::size_t b) {
  if (report.models < 3) throw Error("cross-subgroup correlation needs at least 3 models");
  const auto& ga = report.groups.at(a);
  const auto& gb = report.groups.at(b);
  if (ga.degenerate || gb.degenerate) throw Error("subgroup '" + (ga.degenerate ? ga.name : gb.name) + "' is degenerate");
  std::vector<double> x, y;
  for (std::size_t m = 0; m < report.models; ++m) {
    x.push_back(*ga.values[m]);
    y.push_back(*gb.values[m]);
  }
  return pearson(x, y);
}

std::vector<UncertaintySummary> uncertainty_by_subgroup(const std::vector<PredictiveUncertainty>& pus,
                                                        const std::vector<DecisionDistribution>& decisions,
                                                        const Partition& partition, std::size_t dim) {
  if (partition.group_of.size() != pus.size()) throw ShapeError("partition does not cover the evaluated records");
  if (!decisions.empty() && decisions.size() != pus.size()) throw ShapeError("one decision distribution per record");
  std::vector<UncertaintySummary> out;
  for (std::size_t g = 0; g < partition.names.size(); ++g) {
    UncertaintySummary s;
    s.group = g;
    s.name = partition.names[g];
    const auto idx = partition.members(g);
    s.count = idx.size();
    for (auto i : idx) {
      const Dispersion d = dispersion(pus[i]);
      s.mean_std += d.std.at(dim);
      s.mean_range += d.range.at(dim);
      if (!decisions.empty()) s.mean_decision_variance += decisions[i].variance();
    }
    if (!idx.empty()) {
      const auto n = static_cast<double>(idx.size());
      s.mean_std /= n;
      s.mean_range /= n;
      s.mean_decision_variance /= n;
    }
    out.push_back(s);
  }
  return out;
}

std::vector<EntropyRow> EntropyRanking::top(std::size_t n) const {
  return {rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(std::min(n, rows.size()))};
}

std::vector<EntropyRow> EntropyRanking::bottom(std::size_t n) const {
  return {rows.end() - static_cast<std::ptrdiff_t>(std::min(n, rows.size())), rows.end()};
}

EntropyRanking entropy_frequency_report(const VariationalWeight& table, const Vocabulary& vocab) {
  if (!table.stochastic()) throw ConfigError("entropy report needs stochastic embeddings");
  if (table.shape()[0] < vocab.size()) throw ShapeError("embedding table is smaller than the vocabulary");
  const GaussianPosterior post = table.posterior();
  EntropyRanking ranking;
  std::vector<double> entropy, logcount;
  for (std::size_t id = 0; id < vocab.size(); ++id) {
    const auto i = static_cast<std::int32_t>(id);
    EntropyRow row{i, vocab.token(i), embedding_entropy(post, id), vocab.count(i)};
    entropy.push_back(row.entropy);
    logcount.push_back(std::log10(static_cast<double>(row.count) + 1.0));
    ranking.rows.push_back(std::move(row));
  }
  std::sort(ranking.rows.begin(), ranking.rows.end(), [](const EntropyRow& a, const EntropyRow& b) {
    return a.entropy != b.entropy ? a.entropy > b.entropy : a.id < b.id;
  });
  const auto flat = [](const std::vector<double>& v) { return std::ranges::min(v) == std::ranges::max(v); };
  ranking.correlation = entropy.size() < 2 || flat(entropy) || flat(logcount)
                            ? std::numeric_limits<double>::quiet_NaN()
                            : pearson(entropy, logcount);
  return ranking;
}

void write_entropy_csv(std::ostream& out, const std::vector<EntropyRow>& rows) {
  out << "token,id,count,entropy\n";
  for (const auto& r : rows) out << r.token << ',' << r.id << ',' << r.count << ',' << format_double(r.entropy) << '\n';
}

void write_subgroup_csv(std::ostream& out, const SubgroupReport& report, const std::string& metric_name) {
  out << "metric,subgroup,count,prevalence,degenerate,model,value\n";
  for (const auto& g : report.groups) {
    for (std::size_t m = 0; m < g.values.size(); ++m) {
      out << metric_name << ',' << g.name << ',' << g.count << ',' << format_double(g.prevalence) << ','
          << (g.degenerate ? 1 : 0) << ',' << m << ',' << (g.values[m] ? format_double(*g.values[m]) : "") << '\n';
    }
  }
}

void write_uncertainty_summary_csv(std::ostream& out, const std::vector<UncertaintySummary>& rows) {
  out << "subgroup,count,mean_std,mean_range,mean_decision_variance\n";
  for (const auto& r : rows) {
    out << r.name << ',' << r.count << ',' << format_double(r.mean_std) << ',' << format_double(r.mean_range) << ','
        << format_double(r.mean_decision_variance) << '\n';
  }
}

}  // namespace riskunc
