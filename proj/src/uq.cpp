#include "riskunc/uq.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <ostream>

#include "riskunc/error.hpp"
#include "riskunc/rng.hpp"

namespace riskunc {

PredictiveUncertainty::PredictiveUncertainty(std::vector<std::vector<double>> samples) : samples_(std::move(samples)) {
  if (samples_.empty()) throw Error("predictive uncertainty needs at least one sample");
  const std::size_t d = samples_.front().size();
  if (d == 0) throw Error("empty predictive parameter vector");
  for (const auto& s : samples_) {
    if (s.size() != d) throw ShapeError("samples have different lengths");
    for (double v : s) {
      if (!(v >= 0.0 && v <= 1.0)) throw NumericError("predictive parameters must lie in [0, 1]");
    }
    if (d > 1) {
      const double total = std::accumulate(s.begin(), s.end(), 0.0);
      if (std::abs(total - 1.0) > 1e-9) throw NumericError("multiclass sample is not on the simplex");
    }
  }
}

PredictiveUncertainty PredictiveUncertainty::from_probabilities(std::span<const double> probabilities) {
  std::vector<std::vector<double>> s;
  s.reserve(probabilities.size());
  for (double p : probabilities) s.push_back({p});
  return PredictiveUncertainty(std::move(s));
}

std::vector<double> PredictiveUncertainty::component(std::size_t d) const {
  std::vector<double> out;
  out.reserve(samples_.size());
  for (const auto& s : samples_) out.push_back(s.at(d));
  return out;
}

std::vector<double> marginalize(const PredictiveUncertainty& pu) {
  std::vector<double> mean(pu.dim(), 0.0);
  for (const auto& s : pu.samples()) {
    for (std::size_t d = 0; d < mean.size(); ++d) mean[d] += s[d];
  }
  for (auto& m : mean) m /= static_cast<double>(pu.count());
  return mean;
}

double population_variance(std::span<const double> values) {
  if (values.empty()) throw Error("variance of an empty set");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double acc = 0.0;
  for (double v : values) acc += (v - mean) * (v - mean);
  return acc / n;
}

Dispersion dispersion(const PredictiveUncertainty& pu) {
  Dispersion out;
  for (std::size_t d = 0; d < pu.dim(); ++d) {
    const auto values = pu.component(d);
    out.std.push_back(std::sqrt(population_variance(values)));
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    out.range.push_back(*hi - *lo);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

void check_inputs(std::size_t n_pred, std::size_t n_labels, const char* what) {
  if (n_pred == 0) throw Error(std::string(what) + ": empty input");
  if (n_pred != n_labels) throw ShapeError(std::string(what) + ": predictions and labels differ in length");
}

void check_unit(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw NumericError("probability outside [0, 1]");
}

std::size_t argmax(const std::vector<double>& row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

double mean_abs_gap(const CalibrationBins& b, bool weighted, std::size_t total) {
  double acc = 0.0;
  std::size_t used = 0;
  for (const auto& bin : b.bins) {
    if (bin.count == 0) continue;
    const double gap = std::abs(bin.accuracy - bin.confidence);
    acc += weighted ? gap * static_cast<double>(bin.count) / static_cast<double>(total) : gap;
    ++used;
  }
  if (weighted) return acc;
  return used ? acc / static_cast<double>(used) : 0.0;
}

}  // namespace

CalibrationBins calibration_bins(std::span<const double> confidence, std::span<const int> outcome, std::size_t bins,
                                 BinScheme scheme) {
  check_inputs(confidence.size(), outcome.size(), "calibration_bins");
  if (bins == 0) throw ConfigError("number of bins must be positive");
  for (double p : confidence) check_unit(p);
  const std::size_t n = confidence.size();
  CalibrationBins out;
  out.scheme = scheme;
  out.bins.resize(bins);
  std::vector<double> conf_sum(bins, 0.0), hit_sum(bins, 0.0);

  if (scheme == BinScheme::kEqualWidth) {
    for (std::size_t b = 0; b < bins; ++b) {
      out.bins[b].lo = static_cast<double>(b) / static_cast<double>(bins);
      out.bins[b].hi = static_cast<double>(b + 1) / static_cast<double>(bins);
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double scaled = std::ceil(confidence[i] * static_cast<double>(bins));
      const auto b = static_cast<std::size_t>(std::clamp(scaled - 1.0, 0.0, static_cast<double>(bins - 1)));
      ++out.bins[b].count;
      conf_sum[b] += confidence[i];
      hit_sum[b] += outcome[i] != 0 ? 1.0 : 0.0;
    }
  } else {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (confidence[a] != confidence[b]) return confidence[a] < confidence[b];
      return (outcome[a] != 0) < (outcome[b] != 0);
    });
    for (std::size_t b = 0; b < bins; ++b) {
      const std::size_t begin = b * n / bins, end = (b + 1) * n / bins;
      out.bins[b].count = end - begin;
      for (std::size_t r = begin; r < end; ++r) {
        conf_sum[b] += confidence[order[r]];
        hit_sum[b] += outcome[order[r]] != 0 ? 1.0 : 0.0;
      }
      if (end > begin) {
        out.bins[b].lo = confidence[order[begin]];
        out.bins[b].hi = confidence[order[end - 1]];
      }
    }
    // Cover [0, 1] end to end.
    out.bins.front().lo = 0.0;
    out.bins.back().hi = 1.0;
  }
  for (std::size_t b = 0; b < bins; ++b) {
    if (out.bins[b].count == 0) continue;
    out.bins[b].accuracy = hit_sum[b] / static_cast<double>(out.bins[b].count);
    out.bins[b].confidence = conf_sum[b] / static_cast<double>(out.bins[b].count);
  }
  return out;
}

double ece(std::span<const double> probabilities, std::span<const int> labels, std::size_t bins) {
  const auto b = calibration_bins(probabilities, labels, bins, BinScheme::kEqualWidth);
  return mean_abs_gap(b, true, probabilities.size());
}

double ece(const ProbMatrix& probabilities, std::span<const int> labels, std::size_t bins) {
  check_inputs(probabilities.size(), labels.size(), "ece");
  std::vector<double> conf;
  std::vector<int> correct;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    const auto top = argmax(probabilities[i]);
    conf.push_back(probabilities[i][top]);
    correct.push_back(static_cast<int>(top) == labels[i] ? 1 : 0);
  }
  return ece(conf, correct, bins);
}

double ace(std::span<const double> probabilities, std::span<const int> labels, std::size_t bins) {
  const auto b = calibration_bins(probabilities, labels, bins, BinScheme::kEqualMass);
  return mean_abs_gap(b, false, probabilities.size());
}

double ace(const ProbMatrix& probabilities, std::span<const int> labels, std::size_t bins) {
  check_inputs(probabilities.size(), labels.size(), "ace");
  const std::size_t k = probabilities.front().size();
  double total = 0.0;
  std::vector<double> p(probabilities.size());
  std::vector<int> hit(probabilities.size());
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < probabilities.size(); ++i) {
      if (probabilities[i].size() != k) throw ShapeError("ace: ragged probability matrix");
      p[i] = probabilities[i][c];
      hit[i] = labels[i] == static_cast<int>(c) ? 1 : 0;
    }
    total += ace(p, hit, bins);
  }
  return total / static_cast<double>(k);
}

double auc_roc(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores.size(), labels.size(), "auc_roc");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Mann-Whitney U with mid-ranks for ties.
  double rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t r = i; r < j; ++r) {
      if (labels[order[r]] != 0) {
        rank_sum += mid_rank;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) throw Error("auc_roc needs both classes");
  const double p = static_cast<double>(positives);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(negatives));
}

double auc_pr(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores.size(), labels.size(), "auc_pr");
  const std::size_t n = scores.size();
  const auto positives =
      static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](int y) { return y != 0; }));
  if (positives == 0) throw Error("auc_pr needs at least one positive");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double ap = 0.0, prev_recall = 0.0;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] != 0 ? tp : fp) += 1;
      ++j;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(positives);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

double nll(std::span<const double> probabilities, std::span<const int> labels) {
  check_inputs(probabilities.size(), labels.size(), "nll");
  double total = 0.0;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    check_unit(probabilities[i]);
    const double p = std::clamp(probabilities[i], kProbabilityClip, 1.0 - kProbabilityClip);
    total -= labels[i] != 0 ? std::log(p) : std::log1p(-p);
  }
  return total / static_cast<double>(probabilities.size());
}

double nll(const ProbMatrix& probabilities, std::span<const int> labels) {
  check_inputs(probabilities.size(), labels.size(), "nll");
  double total = 0.0;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    const auto& row = probabilities[i];
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= row.size()) throw IndexError("nll: label out of range");
    const double p = std::clamp(row[labels[i]], kProbabilityClip, 1.0 - kProbabilityClip);
    total -= std::log(p);
  }
  return total / static_cast<double>(probabilities.size());
}

TopK top_k_from_recall(double recall, std::size_t k) {
  if (k == 0) throw ConfigError("k must be positive");
  TopK out;
  out.recall = recall;
  out.precision = recall / static_cast<double>(k);
  const double denom = out.precision + out.recall;
  out.f1 = denom > 0.0 ? 2.0 * out.precision * out.recall / denom : 0.0;
  return out;
}

TopK top_k(const ProbMatrix& probabilities, std::span<const int> labels, std::size_t k) {
  check_inputs(probabilities.size(), labels.size(), "top_k");
  const std::size_t classes = probabilities.front().size();
  if (k == 0 || k > classes) throw ConfigError("top_k: k must lie in [1, K]");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    const auto& row = probabilities[i];
    if (row.size() != classes) throw ShapeError("top_k: ragged probability matrix");
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) throw IndexError("top_k: label out of range");
    // Rank of the label: classes strictly better, or equal with a lower index.
    std::size_t ahead = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      if (row[c] > row[y] || (row[c] == row[y] && c < static_cast<std::size_t>(y))) ++ahead;
    }
    if (ahead < k) ++hits;
  }
  return top_k_from_recall(static_cast<double>(hits) / static_cast<double>(probabilities.size()), k);
}

// ---------------------------------------------------------------------------

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw Error("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

BootstrapInterval bootstrap_ci(std::size_t n, const ResampleMetric& metric, std::size_t n_boot, std::uint64_t seed) {
  if (n == 0) throw Error("bootstrap over an empty dataset");
  if (n_boot == 0) throw ConfigError("n_boot must be positive");
  constexpr int kAttempts = 10;
  std::vector<double> values;
  values.reserve(n_boot);
  BootstrapInterval out;
  std::vector<std::size_t> idx(n);
  for (std::size_t b = 0; b < n_boot; ++b) {
    auto rng = make_rng(seed, {0xB007u, b});
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    bool ok = false;
    for (int attempt = 0; attempt < kAttempts && !ok; ++attempt) {
      for (auto& i : idx) i = pick(rng);
      if (auto v = metric(idx)) {
        values.push_back(*v);
        ok = true;
      }
    }
    if (!ok) ++out.skipped;
  }
  out.used = values.size();
  if (values.empty()) throw Error("every bootstrap resample was degenerate");
  out.lo = percentile(values, 2.5);
  out.hi = percentile(values, 97.5);
  return out;
}

// ---------------------------------------------------------------------------

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_metric_csv(std::ostream& out, const std::vector<MetricReport>& reports) {
  out << "metric,split,value,ci_lo,ci_hi\n";
  for (const auto& r : reports) {
    out << r.metric << ',' << r.split << ',' << format_double(r.value) << ','
        << (r.ci_lo ? format_double(*r.ci_lo) : "") << ',' << (r.ci_hi ? format_double(*r.ci_hi) : "") << '\n';
  }
}

Histogram histogram(std::span<const double> values, std::size_t bins, double lo, double hi) {
  if (bins == 0 || !(hi > lo)) throw ConfigError("histogram needs bins > 0 and hi > lo");
  Histogram h;
  for (std::size_t b = 0; b <= bins; ++b) h.edges.push_back(lo + (hi - lo) * static_cast<double>(b) / bins);
  h.counts.assign(bins, 0);
  for (double v : values) {
    const double pos = (v - lo) / (hi - lo) * static_cast<double>(bins);
    const auto b = static_cast<std::size_t>(std::clamp(std::floor(pos), 0.0, static_cast<double>(bins - 1)));
    ++h.counts[b];
  }
  return h;
}

void write_histogram_csv(std::ostream& out, const Histogram& h) {
  out << "bin_left,bin_right,count\n";
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    out << format_double(h.edges[b]) << ',' << format_double(h.edges[b + 1]) << ',' << h.counts[b] << '\n';
  }
}

}  // namespace riskunc
