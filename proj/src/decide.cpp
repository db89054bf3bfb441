#include "riskunc/decide.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "riskunc/error.hpp"

namespace riskunc {

ThresholdChoice optimize_threshold(std::span<const double> scores, std::span<const int> labels, double target_recall) {
  if (scores.size() != labels.size()) throw ShapeError("optimize_threshold: scores and labels differ in length");
  if (!(target_recall > 0.0 && target_recall <= 1.0)) throw ConfigError("target recall must lie in (0, 1]");
  const std::size_t n = scores.size();
  const auto positives =
      static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](int y) { return y != 0; }));
  if (positives == 0) throw Error("optimize_threshold: no positive examples");

  // Candidates are the distinct observed scores plus 0, swept from the top;
  // at candidate t the predicted-positive set is {score >= t}.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<double> candidates(scores.begin(), scores.end());
  candidates.push_back(0.0);
  std::sort(candidates.begin(), candidates.end(), std::greater<>());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  ThresholdChoice best;
  bool found = false;
  std::size_t tp = 0, fp = 0, next = 0;
  for (double t : candidates) {
    while (next < n && scores[order[next]] >= t) {
      (labels[order[next]] != 0 ? tp : fp) += 1;
      ++next;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(positives);
    if (recall < target_recall - kRecallSlack) continue;
    const double precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    // Candidates arrive in decreasing order, so strict improvement keeps the
    // highest threshold among equal precisions.
    if (!found || precision > best.precision) {
      best = {t, precision, recall};
      found = true;
    }
  }
  if (!found) throw Error("optimize_threshold: no feasible threshold");
  return best;
}

DecisionPolicy calibrate_policy(const std::vector<std::vector<double>>& member_scores, std::span<const int> labels,
                                double target_recall) {
  DecisionPolicy policy;
  policy.target_recall = target_recall;
  for (const auto& scores : member_scores) {
    policy.thresholds.push_back(optimize_threshold(scores, labels, target_recall).threshold);
  }
  return policy;
}

DecisionDistribution decision_distribution(const PredictiveUncertainty& pu, const DecisionPolicy& policy) {
  if (policy.thresholds.size() != pu.count()) {
    throw ShapeError("decision policy has " + std::to_string(policy.thresholds.size()) + " thresholds for " +
                     std::to_string(pu.count()) + " samples");
  }
  if (pu.dim() != 1) throw ShapeError("decision distributions are defined for binary tasks");
  DecisionDistribution out;
  std::size_t positive = 0;
  for (std::size_t m = 0; m < pu.count(); ++m) {
    const int d = decide(pu.samples()[m][0], policy.thresholds[m]);
    out.decisions.push_back(d);
    positive += static_cast<std::size_t>(d);
  }
  out.agreement = static_cast<double>(positive) / static_cast<double>(pu.count());
  return out;
}

CostMatrix::CostMatrix(std::size_t classes, std::vector<double> values) : classes_(classes), values_(std::move(values)) {
  if (classes_ == 0 || values_.size() != classes_ * classes_) throw ShapeError("cost matrix must be K x K");
  for (double v : values_) {
    if (!std::isfinite(v)) throw NumericError("cost matrix entries must be finite");
  }
}

CostMatrix CostMatrix::zero_one(std::size_t classes) {
  std::vector<double> v(classes * classes, 1.0);
  for (std::size_t k = 0; k < classes; ++k) v[k * classes + k] = 0.0;
  return CostMatrix(classes, std::move(v));
}

std::size_t bayes_decision(std::span<const double> probabilities, const CostMatrix& costs) {
  const std::size_t k = costs.classes();
  if (probabilities.size() != k) throw ShapeError("bayes_decision: probability vector does not match cost matrix");
  std::size_t best = 0;
  double best_cost = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    double expected = 0.0;
    for (std::size_t truth = 0; truth < k; ++truth) expected += costs.at(truth, j) * probabilities[truth];
    if (j == 0 || expected < best_cost) {
      best = j;
      best_cost = expected;
    }
  }
  return best;
}

}  // namespace riskunc
