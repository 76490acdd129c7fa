#include "clinembed/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "clinembed/error.hpp"

namespace clinembed {
namespace {

// Returns the number of positives.
std::size_t check_inputs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw MetricError("scores and labels differ in length");
  if (scores.size() < 2) throw MetricError("need at least two scored labels");
  std::size_t positives = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw MetricError("non-finite score");
    if (labels[i] != 0 && labels[i] != 1) throw MetricError("labels must be 0 or 1");
    positives += static_cast<std::size_t>(labels[i]);
  }
  if (positives == 0 || positives == scores.size()) {
    throw MetricError("need at least one positive and one negative label");
  }
  return positives;
}

struct Block {
  double positives = 0.0;
  double negatives = 0.0;
};

// Groups of equal score, highest score first.
std::vector<Block> tie_blocks(std::span<const double> scores, std::span<const int> labels) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<Block> blocks;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i == 0 || scores[order[i]] != scores[order[i - 1]]) blocks.emplace_back();
    (labels[order[i]] == 1 ? blocks.back().positives : blocks.back().negatives) += 1.0;
  }
  return blocks;
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const int> labels) {
  const double positives = static_cast<double>(check_inputs(scores, labels));
  const double negatives = static_cast<double>(scores.size()) - positives;
  double negatives_below = negatives;
  double wins = 0.0;
  for (const Block& b : tie_blocks(scores, labels)) {
    negatives_below -= b.negatives;
    wins += b.positives * (negatives_below + 0.5 * b.negatives);
  }
  return wins / (positives * negatives);
}

double auprc(std::span<const double> scores, std::span<const int> labels) {
  const double positives = static_cast<double>(check_inputs(scores, labels));
  double seen = 0.0, hits = 0.0, ap = 0.0;
  for (const Block& b : tie_blocks(scores, labels)) {
    seen += b.positives + b.negatives;
    hits += b.positives;
    ap += (b.positives / positives) * (hits / seen);
  }
  return ap;
}

RunSummary aggregate_runs(std::span<const double> values) {
  if (values.size() < 2) throw MetricError("aggregate_runs needs at least two values");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

std::string format_summary(const RunSummary& summary, int decimals) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.*f±%.*f", decimals, summary.mean, decimals, summary.std);
  return buf;
}

RunSummary parse_summary(std::string_view text) {
  static constexpr std::string_view kSep = "±";
  const std::size_t at = text.find(kSep);
  if (at == std::string_view::npos) throw MetricError("missing '±' in summary");
  auto parse = [](std::string_view part) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (ec != std::errc() || ptr != part.data() + part.size()) {
      throw MetricError("malformed number '" + std::string(part) + "' in summary");
    }
    return v;
  };
  return {parse(text.substr(0, at)), parse(text.substr(at + kSep.size()))};
}

}  // namespace clinembed
