#include "clinembed/tsne.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>

#include "clinembed/error.hpp"

namespace clinembed {
namespace {

Tensor squared_distances(const Tensor& x) {
  const std::size_t n = x.dim(0);
  const std::size_t m = x.dim(1);
  Tensor d({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < m; ++c) {
        const double diff = x.at(i, c) - x.at(j, c);
        acc += diff * diff;
      }
      d.at(i, j) = acc;
      d.at(j, i) = acc;
    }
  }
  return d;
}

// Conditional row for precision beta; returns its entropy in nats.
double conditional_row(const Tensor& dist, std::size_t i, double beta, std::vector<double>& row) {
  const std::size_t n = dist.dim(0);
  double min_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    if (j != i) min_d = std::min(min_d, dist.at(i, j));
  }
  double z = 0.0;
  double weighted = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (j == i) {
      row[j] = 0.0;
      continue;
    }
    // Shifting by the nearest distance keeps the largest weight at 1.
    const double shifted = dist.at(i, j) - min_d;
    row[j] = std::exp(-beta * shifted);
    z += row[j];
    weighted += shifted * row[j];
  }
  for (double& p : row) p /= z;
  return std::log(z) + beta * weighted / z;
}

}  // namespace

void TsneConfig::validate() const {
  if (!(perplexity > 1.0)) throw ConfigError("perplexity must exceed 1");
  if (!(learning_rate > 0.0)) throw ConfigError("t-SNE learning rate must be > 0");
  if (!(exaggeration >= 1.0)) throw ConfigError("early exaggeration must be >= 1");
  if (!(init_std > 0.0)) throw ConfigError("t-SNE init_std must be > 0");
  if (!(entropy_tolerance > 0.0)) throw ConfigError("entropy tolerance must be > 0");
}

Affinities joint_probabilities(const Tensor& points, double perplexity, double tolerance) {
  if (points.rank() != 2) throw ShapeError("t-SNE expects an N x m point matrix");
  const std::size_t n = points.dim(0);
  if (!(perplexity > 1.0) || perplexity >= static_cast<double>(n - 1)) {
    throw ConfigError("perplexity must lie in (1, N - 1)");
  }
  const Tensor dist = squared_distances(points);
  const double target = std::log(perplexity);

  Affinities out;
  out.beta.assign(n, 1.0);
  out.entropy.assign(n, 0.0);
  Tensor cond({n, n});
  std::vector<double> row(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Bisection on log(beta): entropy decreases monotonically in beta.
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
    double beta = 1.0;
    double h = conditional_row(dist, i, beta, row);
    for (int it = 0; it < 200 && std::abs(h - target) > tolerance; ++it) {
      if (h > target) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = std::isinf(lo) ? beta * 0.5 : 0.5 * (beta + lo);
      }
      h = conditional_row(dist, i, beta, row);
    }
    out.beta[i] = beta;
    out.entropy[i] = h;
    std::copy(row.begin(), row.end(), cond.row(i).begin());
  }
  out.joint = Tensor({n, n});
  const double norm = 2.0 * static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.joint.at(i, j) = (cond.at(i, j) + cond.at(j, i)) / norm;
  }
  return out;
}

double tsne_kl(const Tensor& joint, const Tensor& coords) {
  const std::size_t n = coords.dim(0);
  const Tensor dist = squared_distances(coords);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j) z += 1.0 / (1.0 + dist.at(i, j));
    }
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double p = joint.at(i, j);
      if (i == j || p <= 0.0) continue;
      const double q = (1.0 / (1.0 + dist.at(i, j))) / z;
      kl += p * std::log(p / q);
    }
  }
  return kl;
}

TsneResult tsne(const Tensor& points, const TsneConfig& config) {
  config.validate();
  if (points.rank() != 2 || points.dim(0) < 5) throw ContractError("t-SNE needs at least 5 points");
  if (!points.all_finite()) throw ContractError("t-SNE input contains non-finite values");
  const std::size_t n = points.dim(0);
  std::mt19937_64 rng(config.seed);
  TsneResult result;

  if (config.perplexity >= static_cast<double>(n - 1) / 3.0) {
    result.warnings.push_back("perplexity " + std::to_string(config.perplexity) +
                              " is large for " + std::to_string(n) + " points");
  }
  Tensor input = points;
  {
    const Tensor dist = squared_distances(points);
    bool duplicate = false;
    for (std::size_t i = 0; i < n && !duplicate; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        if (dist.at(i, j) == 0.0) {
          duplicate = true;
          break;
        }
      }
    }
    if (duplicate) {
      std::normal_distribution<double> jitter(0.0, 1e-9);
      for (double& v : input.values()) v += jitter(rng);
      result.warnings.push_back("coincident input points; added 1e-9 jitter");
    }
  }
  result.affinities = joint_probabilities(input, config.perplexity, config.entropy_tolerance);
  const Tensor& P = result.affinities.joint;

  Tensor y({n, 2});
  std::normal_distribution<double> init(0.0, config.init_std);
  for (double& v : y.values()) v = init(rng);
  Tensor update({n, 2});
  Tensor gains = Tensor::full({n, 2}, 1.0);
  Tensor grad({n, 2});
  Tensor num({n, n});

  result.kl.push_back(tsne_kl(P, y));
  for (std::size_t it = 0; it < config.iterations; ++it) {
    const double exag = it < config.exaggeration_iterations ? config.exaggeration : 1.0;
    const double momentum = it < config.momentum_switch ? config.momentum : config.final_momentum;
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double dx = y.at(i, 0) - y.at(j, 0);
        const double dy = y.at(i, 1) - y.at(j, 1);
        const double q = 1.0 / (1.0 + dx * dx + dy * dy);
        num.at(i, j) = q;
        num.at(j, i) = q;
        z += 2.0 * q;
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      double gx = 0.0, gy = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double coeff = (exag * P.at(i, j) - num.at(i, j) / z) * num.at(i, j);
        gx += coeff * (y.at(i, 0) - y.at(j, 0));
        gy += coeff * (y.at(i, 1) - y.at(j, 1));
      }
      grad.at(i, 0) = 4.0 * gx;
      grad.at(i, 1) = 4.0 * gy;
    }
    for (std::size_t c = 0; c < y.size(); ++c) {
      const bool same_sign = (grad[c] > 0.0) == (update[c] > 0.0);
      gains[c] = same_sign ? gains[c] * 0.8 : gains[c] + 0.2;
      gains[c] = std::max(gains[c], 0.01);
      update[c] = momentum * update[c] - config.learning_rate * gains[c] * grad[c];
      y[c] += update[c];
    }
    for (std::size_t c = 0; c < 2; ++c) {
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += y.at(i, c);
      mean /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) y.at(i, c) -= mean;
    }
    result.kl.push_back(tsne_kl(P, y));
  }
  if (!y.all_finite()) throw NumericError("t-SNE produced non-finite coordinates");
  result.coords = std::move(y);
  return result;
}

double silhouette(const Tensor& coords, std::span<const int> labels) {
  const std::size_t n = coords.dim(0);
  if (labels.size() != n) throw ShapeError("one label per point is required");
  const Tensor dist = squared_distances(coords);
  std::map<int, std::size_t> sizes;
  for (int l : labels) ++sizes[l];
  if (sizes.size() < 2) throw ContractError("silhouette needs at least two clusters");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::map<int, double> sums;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) sums[labels[j]] += std::sqrt(dist.at(i, j));
    }
    const std::size_t own = sizes[labels[i]];
    if (own < 2) continue;  // singleton clusters score 0
    const double a = sums[labels[i]] / static_cast<double>(own - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [label, s] : sums) {
      if (label != labels[i]) b = std::min(b, s / static_cast<double>(sizes[label]));
    }
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

}  // namespace clinembed
