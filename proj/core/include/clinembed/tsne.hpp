#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "clinembed/tensor.hpp"

namespace clinembed {

struct TsneConfig {
  double perplexity = 15.0;
  std::size_t iterations = 1000;
  double learning_rate = 200.0;
  double momentum = 0.5;
  double final_momentum = 0.8;
  std::size_t momentum_switch = 250;
  double exaggeration = 4.0;
  std::size_t exaggeration_iterations = 100;
  double init_std = 1e-4;
  /// Bandwidth search stops once |H - log(perplexity)| is below this (nats).
  double entropy_tolerance = 1e-6;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Affinities {
  Tensor joint;                  // symmetric N x N, zero diagonal, sums to 1
  std::vector<double> beta;      // per point precision 1 / (2 sigma^2)
  std::vector<double> entropy;   // per point Shannon entropy of P(.|i), nats
};

/// Per-point Gaussian conditionals matched to the perplexity by bisection
/// on the precision, then symmetrised: P_ij = (p_j|i + p_i|j) / 2N.
Affinities joint_probabilities(const Tensor& points, double perplexity, double tolerance = 1e-6);

struct TsneResult {
  Tensor coords;                   // N x 2
  std::vector<double> kl;          // kl[0] at initialisation, then one per iteration
  Affinities affinities;
  std::vector<std::string> warnings;
};

/// Exact t-SNE with momentum, per-coordinate gains and early exaggeration.
/// Requires N >= 5 finite points (ContractError otherwise). Coincident
/// points receive 1e-9 seeded jitter and a warning.
TsneResult tsne(const Tensor& points, const TsneConfig& config = {});

/// KL(P || Q) for the Student-t affinities of `coords`.
double tsne_kl(const Tensor& joint, const Tensor& coords);

/// Mean silhouette coefficient of `coords` (rows) under integer `labels`.
double silhouette(const Tensor& coords, std::span<const int> labels);

}  // namespace clinembed
