#pragma once

#include <cstddef>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "clinembed/schema.hpp"
#include "clinembed/tensor.hpp"
#include "clinembed/tokenizer.hpp"

namespace clinembed {

/// One artificial embedding: a numerical feature at level "low", "mid" or
/// "high", or a categorical feature at a category code.
struct ProbePoint {
  std::string feature;
  std::string level;
  bool numerical = true;
  std::vector<double> vector;
};

/// -3 W + b, b and 3 W + b for every numerical feature, in schema order.
std::vector<ProbePoint> probe_numerical(const TokenizerParams& params, const FeatureSchema& schema);

/// W_cat[k][c] + b_cat[k] for every categorical feature and code.
std::vector<ProbePoint> probe_categorical(const TokenizerParams& params, const FeatureSchema& schema);

/// Rows of the probe vectors, in order.
Tensor probe_matrix(const std::vector<ProbePoint>& points);

/// A feature pair expected to move together (sign +1) or oppositely (-1).
struct PlantedPair {
  std::string a;
  std::string b;
  int sign = 1;
};

/// (Temp, RR), (RR, HR), (SBP, DBP) positive and (OS, FIO) negative.
std::vector<PlantedPair> default_planted_pairs();
/// `[{"a": "Temp", "b": "RR", "sign": 1}, ...]`; ConfigError when malformed.
std::vector<PlantedPair> planted_pairs_from_json(const nlohmann::json& j);

struct PairCosine {
  std::string a;
  std::string b;
  double cosine = 0.0;
  std::size_t rank = 0;  // 1 = largest cosine
};

struct PlantedResult {
  PlantedPair pair;
  double cosine = 0.0;
  std::size_t rank = 0;
  bool recovered = false;  // top quartile for sign +1, negative for sign -1
};

struct CorrelationReport {
  std::vector<PairCosine> pairs;  // every numerical pair, by descending cosine
  std::size_t top_quartile = 0;   // ranks 1..top_quartile form the top quartile
  std::vector<PlantedResult> planted;
  double mid_mean_distance = 0.0;  // among mid-level numerical points
  double all_mean_distance = 0.0;  // among all numerical points
  bool mid_clustered = false;

  nlohmann::json to_json() const;
};

/// Direction cosines cos(high - low) for all numerical feature pairs, the
/// planted pairs' standing among them, and the mid-level cluster check.
/// Throws SchemaError if a planted feature is not among the points.
CorrelationReport correlation_report(const std::vector<ProbePoint>& points,
                                     const std::vector<PlantedPair>& planted);

/// Writes `name,level,x,y` rows and a standalone SVG scatter (colour per
/// feature, marker per level: triangle-down low, circle mid, triangle-up
/// high; categorical codes drawn as squares). Throws IoError.
void emit_scatter(const std::vector<ProbePoint>& points, const Tensor& coords,
                  const std::filesystem::path& csv_path, const std::filesystem::path& svg_path);

}  // namespace clinembed
