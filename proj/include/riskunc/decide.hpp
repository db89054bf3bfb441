#pragma once

#include <span>
#include <vector>

#include "riskunc/uq.hpp"

namespace riskunc {

/// Recall comparisons accept values within this slack of the target.
inline constexpr double kRecallSlack = 1e-12;

struct ThresholdChoice {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

/// Highest-precision threshold among {observed scores} U {0} whose recall
/// (decision rule score >= t) reaches target_recall; ties go to the higher
/// threshold. Throws Error when there are no positives.
ThresholdChoice optimize_threshold(std::span<const double> scores, std::span<const int> labels, double target_recall);

/// 1 iff lambda >= threshold.
inline int decide(double lambda, double threshold) { return lambda >= threshold ? 1 : 0; }

/// One threshold per ensemble member (or posterior sample).
struct DecisionPolicy {
  std::vector<double> thresholds;
  double target_recall = 1.0;
};

/// Optimizes one threshold per row of `member_scores` (members x examples)
/// against shared labels.
DecisionPolicy calibrate_policy(const std::vector<std::vector<double>>& member_scores, std::span<const int> labels,
                                double target_recall);

struct DecisionDistribution {
  std::vector<int> decisions;
  double agreement = 0.0;  // phi = fraction of positive member decisions

  /// Bernoulli variance phi (1 - phi).
  double variance() const { return agreement * (1.0 - agreement); }
};

DecisionDistribution decision_distribution(const PredictiveUncertainty& pu, const DecisionPolicy& policy);

/// K x K costs; at(k, j) is the cost of predicting j when the truth is k.
class CostMatrix {
 public:
  CostMatrix(std::size_t classes, std::vector<double> values);
  /// 1 - I.
  static CostMatrix zero_one(std::size_t classes);

  std::size_t classes() const { return classes_; }
  double at(std::size_t truth, std::size_t predicted) const { return values_[truth * classes_ + predicted]; }

 private:
  std::size_t classes_;
  std::vector<double> values_;
};

/// argmin_j sum_k L(k, j) p_k, ties to the lowest index.
std::size_t bayes_decision(std::span<const double> probabilities, const CostMatrix& costs);

}  // namespace riskunc
