#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "riskunc/error.hpp"
#include "riskunc/uq.hpp"

using namespace riskunc;
using namespace riskunc::testing;

namespace {

struct Labeled {
  std::vector<double> p;
  std::vector<int> y;
};

Labeled random_labeled(std::mt19937_64& rng, std::size_t n, bool grid = false) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Labeled d;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = grid ? std::round(u(rng) * 20.0) / 20.0 : u(rng);
    d.p.push_back(p);
    d.y.push_back(u(rng) < p ? 1 : 0);
  }
  if (std::count(d.y.begin(), d.y.end(), 1) == 0) d.y[0] = 1;
  if (std::count(d.y.begin(), d.y.end(), 0) == 0) d.y[0] = 0;
  return d;
}

}  // namespace

TEST(PredictiveUncertaintyType, ValidatesSamples) {
  EXPECT_THROW(PredictiveUncertainty({}), Error);
  EXPECT_THROW(PredictiveUncertainty({{0.2}, {0.3, 0.7}}), Error);
  EXPECT_THROW(PredictiveUncertainty(std::vector<std::vector<double>>{{1.2}}), Error);
  EXPECT_THROW(PredictiveUncertainty(std::vector<std::vector<double>>{{0.2, 0.7}}), Error);
  EXPECT_NO_THROW(PredictiveUncertainty({{0.2, 0.8}, {0.5, 0.5}}));
}

TEST(Marginalize, Examples) {
  const std::vector<double> same = {0.3, 0.3, 0.3};
  EXPECT_DOUBLE_EQ(marginalize(PredictiveUncertainty::from_probabilities(same))[0], 0.3);
  const std::vector<double> two = {0.2, 0.8};
  EXPECT_DOUBLE_EQ(marginalize(PredictiveUncertainty::from_probabilities(two))[0], 0.5);
  const auto m = marginalize(PredictiveUncertainty({{0.1, 0.2, 0.7}, {0.5, 0.25, 0.25}}));
  EXPECT_NEAR(m[0] + m[1] + m[2], 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(m[0], 0.3);
}

TEST(Marginalize, CommutesWithSamplePermutation) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> v(1 + rng() % 30);
    for (auto& x : v) x = u(rng);
    auto w = v;
    std::shuffle(w.begin(), w.end(), rng);
    EXPECT_NEAR(marginalize(PredictiveUncertainty::from_probabilities(v))[0],
                marginalize(PredictiveUncertainty::from_probabilities(w))[0], 1e-15);
  }
}

TEST(Dispersion, Examples) {
  const std::vector<double> one = {0.4};
  const auto d1 = dispersion(PredictiveUncertainty::from_probabilities(one));
  EXPECT_EQ(d1.std[0], 0.0);
  EXPECT_EQ(d1.range[0], 0.0);
  const std::vector<double> spread = {0.1, 0.675};
  EXPECT_NEAR(dispersion(PredictiveUncertainty::from_probabilities(spread)).range[0], 0.575, 1e-12);
  const std::vector<double> ends = {0.0, 1.0};
  const auto d2 = dispersion(PredictiveUncertainty::from_probabilities(ends));
  EXPECT_DOUBLE_EQ(d2.std[0], 0.5);
  EXPECT_DOUBLE_EQ(d2.range[0], 1.0);
}

TEST(Dispersion, BoundedVarianceLaw) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 2000; ++t) {
    std::vector<double> v(1 + rng() % 40);
    const int mode = t % 3;
    for (auto& x : v) x = mode == 0 ? u(rng) : (mode == 1 ? (u(rng) < 0.5 ? 0.0 : 1.0) : std::pow(u(rng), 8));
    const double m = marginalize(PredictiveUncertainty::from_probabilities(v))[0];
    EXPECT_LE(population_variance(v), m * (1 - m) + 1e-12);
  }
}

TEST(Ece, Examples) {
  EXPECT_EQ(ece(std::vector<double>{1, 1, 0, 0}, std::vector<int>{1, 1, 0, 0}), 0.0);
  EXPECT_NEAR(ece(std::vector<double>{0.9, 0.9, 0.6, 0.6}, std::vector<int>{1, 0, 1, 0}), 0.25, 1e-12);
  EXPECT_NEAR(ece(std::vector<double>(10, 0.3), std::vector<int>{1, 1, 1, 0, 0, 0, 0, 0, 0, 0}), 0.0, 1e-12);
  EXPECT_THROW(ece(std::vector<double>{}, std::vector<int>{}), Error);
  EXPECT_THROW(ece(std::vector<double>{0.2}, std::vector<int>{1, 0}), ShapeError);
}

TEST(Ece, RightClosedEdges) {
  for (int k = 0; k <= 10; ++k) {
    const std::vector<double> p = {k / 10.0};
    const auto bins = calibration_bins(p, std::vector<int>{1}, 10, BinScheme::kEqualWidth);
    const std::size_t expected = k == 0 ? 0 : k - 1;
    EXPECT_EQ(bins.bins[expected].count, 1u) << k;
  }
}

TEST(Ece, MatchesOracleAndIsPermutationInvariant) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 200; ++t) {
    auto d = random_labeled(rng, 1 + rng() % 80, t % 2 == 0);
    const std::size_t B = 1 + rng() % 15;
    const double v = ece(d.p, d.y, B);
    EXPECT_NEAR(v, ece_oracle(d.p, d.y, B), 1e-12);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    std::vector<std::size_t> perm(d.p.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Labeled s;
    for (auto i : perm) s.p.push_back(d.p[i]), s.y.push_back(d.y[i]);
    EXPECT_NEAR(ece(s.p, s.y, B), v, 1e-12);
  }
}

TEST(Ece, BinsPartitionTheInput) {
  std::mt19937_64 rng(4);
  for (auto scheme : {BinScheme::kEqualWidth, BinScheme::kEqualMass}) {
    const auto d = random_labeled(rng, 57);
    const auto b = calibration_bins(d.p, d.y, 10, scheme);
    std::size_t n = 0;
    for (const auto& bin : b.bins) n += bin.count;
    EXPECT_EQ(n, 57u);
    EXPECT_EQ(b.bins.front().lo, 0.0);
    EXPECT_EQ(b.bins.back().hi, 1.0);
  }
}

TEST(Ace, Examples) {
  EXPECT_NEAR(ace(std::vector<double>{0.9, 0.9, 0.6, 0.6}, std::vector<int>{1, 0, 1, 0}, 2), 0.25, 1e-12);
  // 0.25 on four examples, one positive; 0.75 on four, three positive.
  EXPECT_NEAR(ace(std::vector<double>{0.25, 0.25, 0.25, 0.25, 0.75, 0.75, 0.75, 0.75},
                  std::vector<int>{1, 0, 0, 0, 1, 1, 1, 0}, 2),
              0.0, 1e-12);
  EXPECT_EQ(ace(std::vector<double>{1, 1, 0, 0}, std::vector<int>{1, 1, 0, 0}, 2), 0.0);
}

TEST(Ace, EqualsEceWhenSchemesCoincide) {
  // Two equally populated bins in both schemes.
  const std::vector<double> p = {0.1, 0.2, 0.2, 0.15, 0.7, 0.8, 0.9, 0.75};
  const std::vector<int> y = {0, 1, 0, 0, 1, 1, 0, 1};
  EXPECT_NEAR(ace(p, y, 2), ece(p, y, 2), 1e-12);
}

TEST(Ace, MatchesOracleAndIsPermutationInvariant) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 200; ++t) {
    auto d = random_labeled(rng, 1 + rng() % 80, t % 2 == 0);
    const std::size_t B = 1 + rng() % 15;
    const double v = ace(d.p, d.y, B);
    EXPECT_NEAR(v, ace_oracle(d.p, d.y, B), 1e-12);
    auto q = d;
    std::vector<std::size_t> perm(d.p.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t i = 0; i < perm.size(); ++i) q.p[i] = d.p[perm[i]], q.y[i] = d.y[perm[i]];
    EXPECT_NEAR(ace(q.p, q.y, B), v, 1e-12);
  }
}

TEST(MulticlassCalibration, ConfidenceAndPerClassAverage) {
  const ProbMatrix p = {{0.7, 0.2, 0.1}, {0.1, 0.6, 0.3}, {0.2, 0.2, 0.6}, {0.5, 0.4, 0.1}};
  const std::vector<int> y = {0, 2, 2, 1};
  EXPECT_NEAR(ece(p, y, 10), ece_oracle({0.7, 0.6, 0.6, 0.5}, {1, 0, 1, 0}, 10), 1e-12);
  double per_class = 0;
  for (int c = 0; c < 3; ++c) {
    std::vector<double> pc;
    std::vector<int> yc;
    for (std::size_t i = 0; i < 4; ++i) pc.push_back(p[i][c]), yc.push_back(y[i] == c);
    per_class += ace_oracle(pc, yc, 2);
  }
  EXPECT_NEAR(ace(p, y, 2), per_class / 3, 1e-12);
  EXPECT_EQ(ece(ProbMatrix{{1, 0}, {0, 1}}, std::vector<int>{0, 1}), 0.0);
}

TEST(AucRoc, Examples) {
  EXPECT_NEAR(auc_roc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1}), 0.75, 1e-12);
  EXPECT_EQ(auc_roc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}), 1.0);
  EXPECT_EQ(auc_roc(std::vector<double>(6, 0.3), std::vector<int>{0, 1, 0, 1, 1, 0}), 0.5);
  EXPECT_THROW(auc_roc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), Error);
}

TEST(AucRoc, MatchesAllPairsOracleAndMonotoneInvariance) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 200; ++t) {
    const auto d = random_labeled(rng, 2 + rng() % 60, t % 2 == 0);
    const double v = auc_roc(d.p, d.y);
    EXPECT_NEAR(v, auc_oracle(d.p, d.y), 1e-12);
    std::vector<double> z;
    for (double x : d.p) z.push_back(std::exp(3 * x) - 7);
    EXPECT_NEAR(auc_roc(z, d.y), v, 1e-12);
  }
}

TEST(AucPr, Examples) {
  EXPECT_EQ(auc_pr(std::vector<double>{0.9, 0.8, 0.2, 0.1}, std::vector<int>{1, 1, 0, 0}), 1.0);
  EXPECT_NEAR(auc_pr(std::vector<double>{0.9, 0.8, 0.3, 0.2}, std::vector<int>{1, 0, 1, 0}), (1.0 + 2.0 / 3.0) / 2,
              1e-12);
  EXPECT_THROW(auc_pr(std::vector<double>{0.1, 0.2}, std::vector<int>{0, 0}), Error);
}

TEST(AucPr, MatchesPerPositiveOracle) {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 200; ++t) {
    const auto d = random_labeled(rng, 2 + rng() % 60);
    EXPECT_NEAR(auc_pr(d.p, d.y), ap_oracle(d.p, d.y), 1e-12);
  }
}

TEST(AucPr, RandomScoresApproachPrevalence) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0, 1);
  const std::size_t n = 20000;
  std::vector<double> s(n);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = u(rng), y[i] = u(rng) < 0.2;
  EXPECT_NEAR(auc_pr(s, y), 0.2, 0.015);
}

TEST(Nll, Examples) {
  EXPECT_NEAR(nll(std::vector<double>{1.0, 0.0}, std::vector<int>{1, 0}), 0.0, 1e-11);
  EXPECT_NEAR(nll(std::vector<double>{0.5}, std::vector<int>{1}), std::log(2.0), 1e-15);
  const std::vector<double> p = {0.9, 0.2, 0.65, 0.01, 0.5};
  const std::vector<int> y = {1, 0, 0, 1, 1};
  const double hand = -(std::log(0.9) + std::log(0.8) + std::log(0.35) + std::log(0.01) + std::log(0.5)) / 5;
  EXPECT_NEAR(nll(p, y), hand, 1e-12);
  EXPECT_NEAR(nll(std::vector<double>{0.0}, std::vector<int>{1}), -std::log(1e-12), 1e-6);
  EXPECT_NEAR(nll(ProbMatrix{{0.2, 0.5, 0.3}, {0.1, 0.1, 0.8}}, std::vector<int>{1, 2}),
              -(std::log(0.5) + std::log(0.8)) / 2, 1e-12);
  EXPECT_THROW(nll(ProbMatrix{{0.5, 0.5}}, std::vector<int>{2}), IndexError);
}

TEST(TopKMetrics, Examples) {
  const ProbMatrix p = {{0.5, 0.3, 0.2}, {0.1, 0.2, 0.7}, {0.4, 0.4, 0.2}};
  EXPECT_EQ(top_k(p, std::vector<int>{2, 0, 1}, 3).recall, 1.0);
  EXPECT_EQ(top_k(ProbMatrix{{0.1, 0.6, 0.3}}, std::vector<int>{2}, 2).recall, 1.0);
  // Tie between classes 0 and 1 goes to the lower index.
  EXPECT_EQ(top_k(p, std::vector<int>{0, 2, 1}, 1).recall, 2.0 / 3.0);
  EXPECT_THROW(top_k(p, std::vector<int>{0, 0, 0}, 4), ConfigError);
}

TEST(TopKMetrics, ReportedTripleIsInternallyConsistent) {
  const auto t = top_k_from_recall(0.7126, 5);
  EXPECT_NEAR(t.precision, 0.14252, 1e-12);
  EXPECT_NEAR(t.f1, 2 * 0.14252 * 0.7126 / (0.14252 + 0.7126), 1e-12);
  // Reported to four decimals as 0.1425 and 0.2375.
  EXPECT_NEAR(t.precision, 0.1425, 5e-5);
  EXPECT_NEAR(t.f1, 0.2375, 5e-5);
}

TEST(TopKMetrics, MatchesSortingOracle) {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> level(0, 4);
  for (int t = 0; t < 100; ++t) {
    const std::size_t K = 2 + rng() % 8, n = 1 + rng() % 40, k = 1 + rng() % K;
    ProbMatrix p(n, std::vector<double>(K));
    std::vector<int> y(n);
    double hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double total = 0;
      for (auto& v : p[i]) total += (v = 1 + level(rng));
      for (auto& v : p[i]) v /= total;
      y[i] = static_cast<int>(rng() % K);
      std::vector<std::size_t> order(K);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return p[i][a] > p[i][b]; });
      hits += std::find(order.begin(), order.begin() + k, static_cast<std::size_t>(y[i])) != order.begin() + k;
    }
    const auto r = top_k(p, y, k);
    EXPECT_EQ(r.recall, hits / n);
    // The exact identity precision * k == recall holds for the correctly rounded quotient.
    EXPECT_EQ(r.precision, r.recall / static_cast<double>(k));
  }
}

TEST(Bootstrap, ConstantMetricHasZeroWidth) {
  const auto ci = bootstrap_ci(50, [](auto) { return std::optional<double>(0.42); }, 200, 1);
  EXPECT_EQ(ci.lo, 0.42);
  EXPECT_EQ(ci.hi, 0.42);
  EXPECT_EQ(ci.used, 200u);
}

TEST(Bootstrap, SeededAndReproducible) {
  std::vector<double> x(100);
  std::mt19937_64 rng(10);
  std::normal_distribution<double> n(0, 1);
  for (auto& v : x) v = n(rng);
  const ResampleMetric mean = [&](std::span<const std::size_t> idx) {
    double s = 0;
    for (auto i : idx) s += x[i];
    return std::optional<double>(s / idx.size());
  };
  const auto a = bootstrap_ci(x.size(), mean, 300, 7), b = bootstrap_ci(x.size(), mean, 300, 7);
  EXPECT_EQ(a.lo, b.lo);
  EXPECT_EQ(a.hi, b.hi);
  EXPECT_LT(a.lo, a.hi);
}

TEST(Bootstrap, DegenerateResamplesAreRedrawnThenSkipped) {
  std::size_t calls = 0;
  const auto ci = bootstrap_ci(
      5,
      [&](auto) {
        ++calls;
        return calls % 3 == 0 ? std::optional<double>(1.0) : std::nullopt;
      },
      30, 3);
  EXPECT_EQ(ci.used, 30u);
  EXPECT_EQ(ci.skipped, 0u);
  const auto never = [](auto) { return std::optional<double>(); };
  EXPECT_THROW(bootstrap_ci(5, never, 4, 3), Error);
}

TEST(Bootstrap, MeanIntervalCoverage) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0, 1);
  int covered = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> x(500);
    for (auto& v : x) v = n(rng);
    const ResampleMetric mean = [&](std::span<const std::size_t> idx) {
      double s = 0;
      for (auto i : idx) s += x[i];
      return std::optional<double>(s / idx.size());
    };
    const auto ci = bootstrap_ci(x.size(), mean, 1000, static_cast<std::uint64_t>(trial));
    covered += ci.lo <= 0.0 && 0.0 <= ci.hi;
  }
  EXPECT_GE(covered, 93);
}

TEST(Percentile, LinearInterpolation) {
  EXPECT_DOUBLE_EQ(percentile({3, 1, 2, 4}, 50), 2.5);
  EXPECT_DOUBLE_EQ(percentile({5}, 97.5), 5);
  EXPECT_DOUBLE_EQ(percentile({0, 10}, 2.5), 0.25);
}

TEST(Reports, CsvFormats) {
  std::ostringstream out;
  write_metric_csv(out, {{"auc_roc", "test", 0.75, 0.7, 0.8}, {"nll", "test", 0.1, std::nullopt, std::nullopt}});
  EXPECT_EQ(out.str(), "metric,split,value,ci_lo,ci_hi\nauc_roc,test,0.75,0.7,0.8\nnll,test,0.1,,\n");
  const std::vector<double> v = {-1.0, 0.05, 0.5, 0.5, 1.0, 3.0};
  const auto h = histogram(v, 4, 0.0, 1.0);
  EXPECT_EQ(h.counts, (std::vector<std::size_t>{2, 0, 2, 2}));
  std::ostringstream hs;
  write_histogram_csv(hs, h);
  EXPECT_EQ(hs.str().substr(0, hs.str().find('\n')), "bin_left,bin_right,count");
  for (double d : {0.1, 1.0 / 3.0, 1e-300, 123456.789}) EXPECT_EQ(std::stod(format_double(d)), d);
}
