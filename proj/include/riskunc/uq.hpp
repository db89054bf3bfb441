#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace riskunc {

/// Rows of class probabilities, one row per example.
using ProbMatrix = std::vector<std::vector<double>>;

/// M sampled predictive-distribution parameter vectors for one example:
/// length 1 (positive-class probability) for binary tasks, a K-simplex point
/// otherwise.
class PredictiveUncertainty {
 public:
  explicit PredictiveUncertainty(std::vector<std::vector<double>> samples);
  /// Binary convenience: one probability per sample.
  static PredictiveUncertainty from_probabilities(std::span<const double> probabilities);

  std::size_t count() const { return samples_.size(); }
  std::size_t dim() const { return samples_.front().size(); }
  const std::vector<std::vector<double>>& samples() const { return samples_; }
  /// Values of output dimension d across samples.
  std::vector<double> component(std::size_t d) const;

 private:
  std::vector<std::vector<double>> samples_;
};

/// Monte-Carlo estimate of E[lambda | x]: elementwise mean of the samples.
std::vector<double> marginalize(const PredictiveUncertainty& pu);

struct Dispersion {
  std::vector<double> std;    // population (divide-by-M) standard deviation
  std::vector<double> range;  // max - min
};

Dispersion dispersion(const PredictiveUncertainty& pu);
double population_variance(std::span<const double> values);

// ---------------------------------------------------------------------------
// Calibration

enum class BinScheme { kEqualWidth, kEqualMass };

struct CalibrationBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  double accuracy = 0.0;
  double confidence = 0.0;
};

struct CalibrationBins {
  BinScheme scheme = BinScheme::kEqualWidth;
  std::vector<CalibrationBin> bins;
};

/// Reliability bins of confidences against 0/1 outcomes. Equal-width bins are
/// right-closed, (b/B, (b+1)/B], with 0 falling in the first bin. Equal-mass
/// bins split the examples sorted by (confidence, outcome) into B runs of
/// sizes differing by at most one.
CalibrationBins calibration_bins(std::span<const double> confidence, std::span<const int> outcome, std::size_t bins,
                                 BinScheme scheme);

/// Binary ECE over positive-class probabilities, equal-width bins.
double ece(std::span<const double> probabilities, std::span<const int> labels, std::size_t bins = 10);
/// Multiclass ECE: max-probability confidence against argmax correctness.
double ece(const ProbMatrix& probabilities, std::span<const int> labels, std::size_t bins = 10);
/// Binary ACE: mean |acc - conf| over non-empty equal-mass bins.
double ace(std::span<const double> probabilities, std::span<const int> labels, std::size_t bins = 10);
/// Multiclass ACE: per-class equal-mass binning, averaged over classes and bins.
double ace(const ProbMatrix& probabilities, std::span<const int> labels, std::size_t bins = 10);

// ---------------------------------------------------------------------------
// Ranking and likelihood

/// P(score of random positive > score of random negative), ties counted 1/2.
/// Throws Error unless both classes are present.
double auc_roc(std::span<const double> scores, std::span<const int> labels);
/// Average precision: sum over distinct thresholds of recall increment times
/// precision. Throws Error without positives.
double auc_pr(std::span<const double> scores, std::span<const int> labels);

inline constexpr double kProbabilityClip = 1e-12;
double nll(std::span<const double> probabilities, std::span<const int> labels);
double nll(const ProbMatrix& probabilities, std::span<const int> labels);

struct TopK {
  double recall = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
};

/// Single-label top-k metrics; ties between classes favour the lower index.
TopK top_k(const ProbMatrix& probabilities, std::span<const int> labels, std::size_t k);
/// Precision and F1 implied by a single-label recall@k.
TopK top_k_from_recall(double recall, std::size_t k);

// ---------------------------------------------------------------------------
// Bootstrap

/// Metric over a resample given as example indices; std::nullopt marks a
/// degenerate resample (for example a single class).
using ResampleMetric = std::function<std::optional<double>(std::span<const std::size_t> indices)>;

struct BootstrapInterval {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t used = 0;
  std::size_t skipped = 0;
};

/// Percentile 2.5/97.5 interval over n_boot resamples drawn with replacement.
/// Resample b uses its own stream derived from (seed, b); a degenerate
/// resample is redrawn up to 10 times, then skipped.
BootstrapInterval bootstrap_ci(std::size_t n, const ResampleMetric& metric, std::size_t n_boot = 1000,
                               std::uint64_t seed = 0);

/// Linear-interpolation percentile (q in [0, 100]) of unsorted values.
double percentile(std::vector<double> values, double q);

// ---------------------------------------------------------------------------
// Reports

struct MetricReport {
  std::string metric;
  std::string split;
  double value = 0.0;
  std::optional<double> ci_lo;
  std::optional<double> ci_hi;
};

/// Header "metric,split,value,ci_lo,ci_hi"; missing CI bounds are empty.
void write_metric_csv(std::ostream& out, const std::vector<MetricReport>& reports);

struct Histogram {
  std::vector<double> edges;  // bins + 1 edges
  std::vector<std::size_t> counts;
};

/// Equal-width histogram over [lo, hi]; values outside are clamped into the end bins.
Histogram histogram(std::span<const double> values, std::size_t bins, double lo, double hi);
/// Header "bin_left,bin_right,count".
void write_histogram_csv(std::ostream& out, const Histogram& h);

/// Shortest decimal form that reads back to the same double.
std::string format_double(double v);

}  // namespace riskunc
