#pragma once

#include <cstddef>
#include <cstdint>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "clinembed/dataset.hpp"

namespace clinembed {

/// A numerical vital driven by one latent factor.
struct NumericalGenerator {
  std::string name;
  std::size_t factor = 0;
  double loading = 1.0;
  double center = 0.0;  // raw-unit value at z = 0
  double spread = 1.0;  // raw units per unit z
  double label_weight = 0.0;
};

/// A categorical score obtained by discretising a noisy latent factor into
/// ordered severity levels; `code_order[level]` is the code written out.
struct CategoricalGenerator {
  std::string name;
  std::size_t factor = 0;
  double loading = 1.0;
  double noise = 0.5;
  std::size_t cardinality = 2;
  std::vector<double> cutpoints;        // empty = equal-probability bins
  std::vector<std::size_t> code_order;  // empty = identity
  double label_weight = 0.0;            // per unit of level / (cardinality - 1)
};

struct GeneratorSpec {
  std::size_t n_stays = 2000;
  std::size_t min_steps = 8;
  std::size_t max_steps = 32;
  std::size_t n_factors = 4;
  double ar_rho = 0.8;
  double noise = 0.6;
  double missing_rate = 0.1;
  double prevalence = 0.10;
  std::size_t horizon = 48;  // steps counted for the stay label
  std::uint64_t seed = 1;
  std::vector<NumericalGenerator> numerical;
  std::vector<CategoricalGenerator> categorical;

  /// Planted structure: {Temp, RR, HR} on factor 0, {SBP, DBP, MBP} on
  /// factor 1, OS (-) and FIO (+) on factor 2, GCS scores on factor 3 and
  /// CRR thresholded on low factor 1.
  static GeneratorSpec clinical_default();

  /// Schema implied by the feature lists (numerical first, then categorical).
  FeatureSchema schema() const;

  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys raise ConfigError.
  static GeneratorSpec from_json(const nlohmann::json& j);
};

/// Reproducible from `spec` alone, including its seed. The per-step label is
/// Bernoulli(sigmoid(w . x_t + b0)) with b0 bisected to hit the prevalence
/// target; the stay label is "any event within the first `horizon` steps".
Dataset generate_synthetic(const GeneratorSpec& spec);

}  // namespace clinembed
