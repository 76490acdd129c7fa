#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "clinembed/error.hpp"
#include "clinembed/metrics.hpp"

using namespace clinembed;

namespace {

// Probability that a random positive outscores a random negative, ties half.
double pairwise_auroc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      pairs += 1.0;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return wins / pairs;
}

// Step-wise average precision: sum over distinct thresholds of
// (recall gain) x (precision at that threshold).
double threshold_ap(const std::vector<double>& s, const std::vector<int>& y) {
  const double positives = static_cast<double>(std::count(y.begin(), y.end(), 1));
  std::set<double, std::greater<>> thresholds(s.begin(), s.end());
  double ap = 0.0, prev_recall = 0.0;
  for (double t : thresholds) {
    double tp = 0.0, predicted = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] >= t) {
        predicted += 1.0;
        tp += y[i];
      }
    }
    const double recall = tp / positives;
    ap += (recall - prev_recall) * (tp / predicted);
    prev_recall = recall;
  }
  return ap;
}

}  // namespace

TEST(Metrics, WorkedExample) {
  const std::vector<double> s{0.9, 0.8, 0.3, 0.2};
  const std::vector<int> y{1, 0, 1, 0};
  EXPECT_DOUBLE_EQ(auroc(s, y), 0.75);
  EXPECT_NEAR(auprc(s, y), (1.0 + 2.0 / 3.0) / 2.0, 1e-15);
}

TEST(Metrics, PerfectAndInvertedRankings) {
  const std::vector<double> s{4, 3, 2, 1};
  EXPECT_EQ(auroc(s, std::vector<int>{1, 1, 0, 0}), 1.0);
  EXPECT_EQ(auprc(s, std::vector<int>{1, 1, 0, 0}), 1.0);
  EXPECT_EQ(auroc(s, std::vector<int>{0, 0, 1, 1}), 0.0);
  EXPECT_NEAR(auprc(s, std::vector<int>{0, 0, 1, 1}), (1.0 / 3.0 + 2.0 / 4.0) / 2.0, 1e-15);
}

TEST(Metrics, AllTiedScoresGiveBaseRates) {
  const std::vector<double> s(5, 0.4);
  const std::vector<int> y{1, 0, 0, 1, 0};
  EXPECT_EQ(auroc(s, y), 0.5);
  EXPECT_NEAR(auprc(s, y), 0.4, 1e-15);
}

TEST(Metrics, ExhaustiveAgreementWithOracles) {
  std::mt19937_64 rng(11);
  // Scores drawn from a small grid so ties are common.
  std::uniform_int_distribution<int> grid(0, 6);
  for (std::size_t n = 2; n <= 12; ++n) {
    std::vector<double> s(n);
    for (double& v : s) v = grid(rng) / 6.0;
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
      std::vector<int> y(n);
      for (std::size_t i = 0; i < n; ++i) y[i] = (mask >> i) & 1u;
      const int pos = std::count(y.begin(), y.end(), 1);
      if (pos == 0 || pos == static_cast<int>(n)) continue;
      ASSERT_NEAR(auroc(s, y), pairwise_auroc(s, y), 1e-12) << "n=" << n << " mask=" << mask;
      ASSERT_NEAR(auprc(s, y), threshold_ap(s, y), 1e-12) << "n=" << n << " mask=" << mask;
    }
  }
}

TEST(Metrics, NegatedScoresComplementAuroc) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> s(20), neg(20);
    std::vector<int> y(20);
    for (int i = 0; i < 20; ++i) {
      s[i] = nd(rng);
      neg[i] = -s[i];
      y[i] = i % 3 == 0;
    }
    EXPECT_NEAR(auroc(s, y) + auroc(neg, y), 1.0, 1e-12);
  }
}

TEST(Metrics, InvariantUnderMonotoneTransform) {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> nd;
  std::vector<double> s(50), t(50);
  std::vector<int> y(50);
  for (int i = 0; i < 50; ++i) {
    s[i] = nd(rng);
    t[i] = std::exp(3.0 * s[i]) + 1.0;
    y[i] = nd(rng) + s[i] > 0.5;
  }
  EXPECT_DOUBLE_EQ(auroc(s, y), auroc(t, y));
  EXPECT_DOUBLE_EQ(auprc(s, y), auprc(t, y));
}

TEST(Metrics, RandomScoresNearChance) {
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> u;
  std::vector<double> s(20000);
  std::vector<int> y(20000);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = u(rng);
    y[i] = u(rng) < 0.1;
  }
  EXPECT_NEAR(auroc(s, y), 0.5, 0.02);
  EXPECT_NEAR(auprc(s, y), 0.1, 0.02);
}

TEST(Metrics, InvalidInputsRaiseMetricError) {
  EXPECT_THROW(auroc(std::vector<double>{0.1}, std::vector<int>{1}), MetricError);
  EXPECT_THROW(auroc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), MetricError);
  EXPECT_THROW(auprc(std::vector<double>{0.1, 0.2}, std::vector<int>{0, 0}), MetricError);
  EXPECT_THROW(auroc(std::vector<double>{0.1, NAN}, std::vector<int>{1, 0}), MetricError);
  EXPECT_THROW(auprc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 2}), MetricError);
  EXPECT_THROW(auprc(std::vector<double>{0.1, 0.2}, std::vector<int>{1}), MetricError);
}

TEST(Summary, MeanAndSampleStd) {
  const std::vector<double> v{36.2, 36.4, 36.6};
  const RunSummary r = aggregate_runs(v);
  EXPECT_NEAR(r.mean, 36.4, 1e-12);
  EXPECT_NEAR(r.std, 0.2, 1e-12);
  EXPECT_EQ(format_summary(r), "36.4±0.2");
  EXPECT_THROW(aggregate_runs(std::vector<double>{1.0}), MetricError);
}

TEST(Summary, FormatParseRoundTrip) {
  const RunSummary r = parse_summary("91.6±0.1");
  EXPECT_DOUBLE_EQ(r.mean, 91.6);
  EXPECT_DOUBLE_EQ(r.std, 0.1);
  EXPECT_EQ(format_summary(r), "91.6±0.1");
  EXPECT_EQ(format_summary({8.66, 7.04}, 2), "8.66±7.04");
  EXPECT_THROW(parse_summary("91.6"), MetricError);
  EXPECT_THROW(parse_summary("x±0.1"), MetricError);
}
