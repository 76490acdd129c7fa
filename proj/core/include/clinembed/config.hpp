#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <vector>

#include "clinembed/downstream.hpp"
#include "clinembed/pretraining.hpp"
#include "clinembed/probe.hpp"
#include "clinembed/synthetic.hpp"
#include "clinembed/tsne.hpp"

namespace clinembed {

/// Every tunable of a run in one JSON document:
///
///   {"split_seed": 7, "seeds": [1, 2, 3], "generator": {...},
///    "pretrain": {"cbow": {...}, "mlm": {...}}, "finetune": {...},
///    "tsne": {...}, "planted": [...]}
///
/// Absent keys keep their defaults; unknown keys raise ConfigError.
struct RunConfig {
  std::uint64_t split_seed = 7;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  GeneratorSpec generator = GeneratorSpec::clinical_default();
  PretrainConfig cbow = PretrainConfig::defaults(Objective::Cbow);
  PretrainConfig mlm = PretrainConfig::defaults(Objective::Mlm);
  DownstreamConfig finetune;
  TsneConfig tsne;
  std::vector<PlantedPair> planted = default_planted_pairs();

  PretrainConfig& pretrain(Objective objective);
  const PretrainConfig& pretrain(Objective objective) const;

  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
};

/// Reads and parses a RunConfig file. A missing file is a ConfigError.
RunConfig load_run_config(const std::filesystem::path& path);

nlohmann::json tsne_config_to_json(const TsneConfig& config);
TsneConfig tsne_config_from_json(const nlohmann::json& j);

nlohmann::json planted_pairs_to_json(const std::vector<PlantedPair>& pairs);

}  // namespace clinembed
