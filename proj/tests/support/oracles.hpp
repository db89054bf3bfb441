#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <utility>
#include <vector>

#include "riskunc/decide.hpp"

// Brute-force oracles, written from the metric definitions.

namespace riskunc::testing {

/// Equal-width bins, right-closed; 0 falls in the first bin.
inline double ece_oracle(const std::vector<double>& p, const std::vector<int>& y, std::size_t B) {
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const double lo = static_cast<double>(b) / B, hi = static_cast<double>(b + 1) / B;
    double n = 0, conf = 0, acc = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const bool in = (p[i] > lo && p[i] <= hi) || (b == 0 && p[i] == 0.0);
      if (!in) continue;
      n += 1, conf += p[i], acc += y[i];
    }
    if (n > 0) total += n / p.size() * std::abs(acc / n - conf / n);
  }
  return total;
}

/// Equal-mass bins over examples sorted by (confidence, outcome).
inline double ace_oracle(const std::vector<double>& p, const std::vector<int>& y, std::size_t B) {
  std::vector<std::pair<double, int>> v;
  for (std::size_t i = 0; i < p.size(); ++i) v.emplace_back(p[i], y[i]);
  std::sort(v.begin(), v.end());
  double total = 0;
  int used = 0;
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t s = b * v.size() / B, e = (b + 1) * v.size() / B;
    if (s == e) continue;
    double conf = 0, acc = 0;
    for (std::size_t r = s; r < e; ++r) conf += v[r].first, acc += v[r].second;
    total += std::abs(acc - conf) / static_cast<double>(e - s);
    ++used;
  }
  return total / used;
}

/// Fraction of (positive, negative) pairs ordered correctly, ties count half.
inline double auc_oracle(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      pairs += 1;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return wins / pairs;
}

/// Mean over positives of the precision among examples scored at least as high.
inline double ap_oracle(const std::vector<double>& s, const std::vector<int>& y) {
  double total = 0, positives = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    positives += 1;
    double above = 0, tp = 0;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (s[j] >= s[i]) above += 1, tp += y[j];
    }
    total += tp / above;
  }
  return total / positives;
}

/// Exhaustive search over {scores} U {0} for rule score >= t.
inline ThresholdChoice threshold_oracle(const std::vector<double>& s, const std::vector<int>& y, double target) {
  std::vector<double> cands = s;
  cands.push_back(0.0);
  double positives = 0;
  for (int v : y) positives += v;
  ThresholdChoice best{-1, -1, 0};
  for (double t : cands) {
    double tp = 0, pp = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] >= t) pp += 1, tp += y[i];
    }
    const double recall = tp / positives, precision = pp > 0 ? tp / pp : 0.0;
    if (recall + kRecallSlack < target) continue;
    if (precision > best.precision || (precision == best.precision && t > best.threshold)) best = {t, precision, recall};
  }
  return best;
}

/// Monte-Carlo KL(q || p) for scalar Gaussians: E_q[log q(w) - log p(w)], antithetic pairs.
inline double monte_carlo_kl(double mu, double sigma, double prior_std, std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> eps(0.0, 1.0);
  const auto log_ratio = [&](double e) {
    const double w = mu + sigma * e;
    const double log_q = -0.5 * e * e - std::log(sigma);
    const double log_p = -0.5 * (w / prior_std) * (w / prior_std) - std::log(prior_std);
    return log_q - log_p;
  };
  double total = 0.0;
  for (std::size_t i = 0; i < n / 2; ++i) {
    const double e = eps(rng);
    total += log_ratio(e) + log_ratio(-e);
  }
  return total / static_cast<double>(2 * (n / 2));
}

}  // namespace riskunc::testing
