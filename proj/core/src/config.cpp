#include "clinembed/config.hpp"


#include "clinembed/checkpoint.hpp"
#include "clinembed/error.hpp"
#include "json_util.hpp"

namespace clinembed {

using detail::reject_unknown;

PretrainConfig& RunConfig::pretrain(Objective objective) {
  return objective == Objective::Cbow ? cbow : mlm;
}

const PretrainConfig& RunConfig::pretrain(Objective objective) const {
  return objective == Objective::Cbow ? cbow : mlm;
}

void RunConfig::validate() const {
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  generator.validate();
  cbow.validate();
  mlm.validate();
  if (cbow.objective != Objective::Cbow || mlm.objective != Objective::Mlm) {
    throw ConfigError("pretraining configs are keyed by objective");
  }
  finetune.validate();
  tsne.validate();
}

nlohmann::json RunConfig::to_json() const {
  return {{"split_seed", split_seed},
          {"seeds", seeds},
          {"generator", generator.to_json()},
          {"pretrain", {{"cbow", cbow.to_json()}, {"mlm", mlm.to_json()}}},
          {"finetune", finetune.to_json()},
          {"tsne", tsne_config_to_json(tsne)},
          {"planted", planted_pairs_to_json(planted)}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  reject_unknown(j, {"split_seed", "seeds", "generator", "pretrain", "finetune", "tsne", "planted"},
                 "run config");
  RunConfig c;
  try {
    c.split_seed = j.value("split_seed", c.split_seed);
    c.seeds = j.value("seeds", c.seeds);
    if (j.contains("generator")) c.generator = GeneratorSpec::from_json(j.at("generator"));
    if (j.contains("pretrain")) {
      const nlohmann::json& p = j.at("pretrain");
      reject_unknown(p, {"cbow", "mlm"}, "pretrain");
      if (p.contains("cbow")) c.cbow = PretrainConfig::from_json(p.at("cbow"), Objective::Cbow);
      if (p.contains("mlm")) c.mlm = PretrainConfig::from_json(p.at("mlm"), Objective::Mlm);
    }
    if (j.contains("finetune")) c.finetune = DownstreamConfig::from_json(j.at("finetune"));
    if (j.contains("tsne")) c.tsne = tsne_config_from_json(j.at("tsne"));
    if (j.contains("planted")) c.planted = planted_pairs_from_json(j.at("planted"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed run config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) {
    throw ConfigError("config file not found: " + path.string());
  }
  return RunConfig::from_json(read_json_file(path));
}

nlohmann::json tsne_config_to_json(const TsneConfig& c) {
  return {{"perplexity", c.perplexity},
          {"iterations", c.iterations},
          {"learning_rate", c.learning_rate},
          {"momentum", c.momentum},
          {"final_momentum", c.final_momentum},
          {"momentum_switch", c.momentum_switch},
          {"exaggeration", c.exaggeration},
          {"exaggeration_iterations", c.exaggeration_iterations},
          {"init_std", c.init_std},
          {"entropy_tolerance", c.entropy_tolerance},
          {"seed", c.seed}};
}

TsneConfig tsne_config_from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"perplexity", "iterations", "learning_rate", "momentum", "final_momentum",
                  "momentum_switch", "exaggeration", "exaggeration_iterations", "init_std",
                  "entropy_tolerance", "seed"},
                 "tsne config");
  TsneConfig c;
  try {
    c.perplexity = j.value("perplexity", c.perplexity);
    c.iterations = j.value("iterations", c.iterations);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.momentum = j.value("momentum", c.momentum);
    c.final_momentum = j.value("final_momentum", c.final_momentum);
    c.momentum_switch = j.value("momentum_switch", c.momentum_switch);
    c.exaggeration = j.value("exaggeration", c.exaggeration);
    c.exaggeration_iterations = j.value("exaggeration_iterations", c.exaggeration_iterations);
    c.init_std = j.value("init_std", c.init_std);
    c.entropy_tolerance = j.value("entropy_tolerance", c.entropy_tolerance);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed tsne config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json planted_pairs_to_json(const std::vector<PlantedPair>& pairs) {
  nlohmann::json out = nlohmann::json::array();
  for (const PlantedPair& p : pairs) out.push_back({{"a", p.a}, {"b", p.b}, {"sign", p.sign}});
  return out;
}

}  // namespace clinembed
