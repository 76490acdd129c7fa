#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <vector>

#include "clinembed/schema.hpp"

namespace clinembed {

/// One patient stay: T x d values (row-major), a parallel missingness mask
/// and optional per-step / stay labels. Missing cells hold NaN until
/// imputation; the mask stays authoritative afterwards.
struct StayRecord {
  std::int64_t stay_id = 0;
  std::size_t steps = 0;
  std::vector<double> values;
  std::vector<std::uint8_t> missing;
  std::vector<std::uint8_t> step_labels;  // empty or one per step
  std::optional<bool> stay_label;

  std::span<const double> step(std::size_t t, std::size_t d) const {
    return std::span<const double>(values).subspan(t * d, d);
  }
  std::size_t missing_count(std::size_t t, std::size_t d) const;
};

struct Dataset {
  FeatureSchema schema;
  std::vector<StayRecord> stays;
  bool imputed = false;
  bool normalized = false;

  std::size_t total_steps() const;
};

/// Training-split statistics used by impute() and normalize().
struct FeatureStats {
  std::vector<double> mean;        // per schema index (numerical only)
  std::vector<double> std;         // population std (numerical only)
  std::vector<std::size_t> mode;   // per schema index (categorical only)
};

enum class Split { Train, Validation, Test };

/// Deterministic 70/15/15 assignment from a hash of (stay_id, seed).
Split split_of(std::int64_t stay_id, std::uint64_t seed);

struct SplitDataset {
  Dataset train;
  Dataset validation;
  Dataset test;
};

SplitDataset split_dataset(const Dataset& data, std::uint64_t seed);

/// Mean / std / mode over observed training cells. Throws SchemaError when a
/// feature has no observed value.
FeatureStats fit_statistics(const Dataset& train);

/// Missing numerical cells <- mean, categorical <- mode.
Dataset impute(Dataset data, const FeatureStats& stats);

/// Numerical cells <- (v - mean) / std. Throws SchemaError on zero std and
/// DataError if the dataset is already normalized.
Dataset normalize(Dataset data, const FeatureStats& stats);

/// Copies the fitted statistics into the schema's feature specs.
FeatureSchema with_statistics(const FeatureSchema& schema, const FeatureStats& stats);

struct StepRef {
  std::size_t stay = 0;
  std::size_t step = 0;
};

/// Steps eligible for self-supervised training: at most `max_missing`
/// missing cells.
std::vector<StepRef> filter_steps(const Dataset& data, std::size_t max_missing);

/// Split, fit statistics on the training split, then impute and normalize
/// all three splits with those statistics.
struct PreparedData {
  SplitDataset splits;
  FeatureStats stats;
  FeatureSchema schema;  // carries the fitted statistics
};
PreparedData prepare(const Dataset& raw, std::uint64_t split_seed);

/// CSV with header `stay_id,step,<feature names...>[,label][,stay_label]`.
/// Empty cells are missing values.
Dataset load_csv(const std::filesystem::path& path, const FeatureSchema& schema);
void write_csv(const Dataset& data, const std::filesystem::path& path);

nlohmann::json dataset_manifest(const Dataset& data, std::uint64_t split_seed);

}  // namespace clinembed
