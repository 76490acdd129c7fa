#pragma once

#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace clinembed {

/// Area under the ROC curve as the Mann-Whitney statistic: ties between a
/// positive and a negative count one half. Throws MetricError on a
/// single-class input, fewer than two entries, length mismatch or a
/// non-finite score.
double auroc(std::span<const double> scores, std::span<const int> labels);

/// Average precision. Scores are visited in descending order and equal
/// scores enter as one block; each block contributes
/// (recall gain) x (precision after the block).
double auprc(std::span<const double> scores, std::span<const int> labels);

struct RunSummary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1)
};

/// Requires at least two values.
RunSummary aggregate_runs(std::span<const double> values);

/// "36.4±0.2": both numbers with `decimals` digits after the point.
std::string format_summary(const RunSummary& summary, int decimals = 1);
RunSummary parse_summary(std::string_view text);

/// A [0, 1] metric expressed in percent, as aggregated in result tables.
inline double to_percent(double value) { return 100.0 * value; }

}  // namespace clinembed
