#pragma once

#include <cstddef>
#include <limits>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

namespace clinembed {

enum class FeatureKind { Numerical, Categorical };

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::Numerical;
  std::size_t cardinality = 0;  // categorical only
  double mean = 0.0;            // numerical only
  double std = 1.0;             // numerical only
  std::size_t mode = 0;         // categorical only
};

inline constexpr std::size_t kNoSlot = std::numeric_limits<std::size_t>::max();

/// Ordered list of clinical features. Besides the raw specs it keeps the
/// index bookkeeping every model needs: which schema positions are
/// numerical, which are categorical, and where each categorical feature's
/// rows start in a stacked (sum of cardinalities) table.
class FeatureSchema {
 public:
  FeatureSchema() = default;
  /// Throws SchemaError unless d >= 2, both kinds are present, names are
  /// unique, cardinalities >= 2 and numerical std > 0.
  explicit FeatureSchema(std::vector<FeatureSpec> features);

  /// The 13 named features: 8 numerical vitals then 5 categorical scores.
  static FeatureSchema clinical_default();

  std::size_t size() const { return features_.size(); }
  const FeatureSpec& operator[](std::size_t i) const { return features_.at(i); }
  const std::vector<FeatureSpec>& features() const { return features_; }

  const std::vector<std::size_t>& numerical() const { return numerical_; }
  const std::vector<std::size_t>& categorical() const { return categorical_; }
  std::size_t numerical_slot(std::size_t feature) const { return slot_.at(feature); }
  std::size_t categorical_slot(std::size_t feature) const { return slot_.at(feature); }
  bool is_numerical(std::size_t feature) const {
    return features_.at(feature).kind == FeatureKind::Numerical;
  }

  /// Row offset of categorical slot `k` in the stacked category table.
  std::size_t category_offset(std::size_t k) const { return cat_offset_.at(k); }
  std::size_t total_categories() const { return total_categories_; }

  /// Throws SchemaError if no feature has this name.
  std::size_t index_of(const std::string& name) const;

  void set_numerical_stats(std::size_t feature, double mean, double std);
  void set_mode(std::size_t feature, std::size_t mode);

  /// Hex FNV-1a digest of names, kinds and cardinalities (not statistics).
  std::string hash() const;

  nlohmann::json to_json() const;
  static FeatureSchema from_json(const nlohmann::json& j);

 private:
  std::vector<FeatureSpec> features_;
  std::vector<std::size_t> numerical_;
  std::vector<std::size_t> categorical_;
  std::vector<std::size_t> slot_;
  std::vector<std::size_t> cat_offset_;
  std::size_t total_categories_ = 0;
};

/// Default missingness cap: the 15-of-18 rule scaled to d features.
std::size_t default_max_missing(std::size_t d);

}  // namespace clinembed
