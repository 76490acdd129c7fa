#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "clinembed/autodiff.hpp"
#include "clinembed/checkpoint.hpp"
#include "clinembed/dataset.hpp"
#include "clinembed/encoder.hpp"
#include "clinembed/optim.hpp"
#include "clinembed/schema.hpp"
#include "clinembed/tokenizer.hpp"

namespace clinembed {

enum class Objective { Cbow, Mlm };

std::string objective_name(Objective objective);
Objective parse_objective(const std::string& name);  // ConfigError on unknown names

struct PretrainConfig {
  Objective objective = Objective::Cbow;
  std::size_t batch = 256;
  double lr = 0.01;
  std::size_t dim = 256;
  std::size_t depth = 2;  // MLM feature-axis encoder
  std::size_t heads = 1;
  std::size_t ffn_mult = 4;
  double dropout = 0.0;
  std::size_t patience = 5;
  std::size_t max_epochs = 100;
  bool use_previous = false;     // CBOW only
  double validation_fraction = 0.1;
  std::size_t max_missing = 0;   // 0 = scaled 15-of-18 rule

  /// CBOW: batch 256, lr 0.01, dim 256. MLM: batch 512, lr 1e-4, dim 128,
  /// depth 2, heads 1.
  static PretrainConfig defaults(Objective objective);
  void validate() const;
  nlohmann::json to_json() const;
  /// Keys absent from `j` keep the objective's defaults.
  static PretrainConfig from_json(const nlohmann::json& j, Objective objective);
  EncoderConfig encoder_config() const;
};

/// Target features for one sample: `j` is the schema index of a numerical
/// feature, `k` the schema index of a categorical one.
struct TargetPick {
  std::size_t j = 0;
  std::size_t k = 0;
};

/// Uniform and independent over each kind. SchemaError if a kind is absent.
TargetPick pick_targets(std::mt19937_64& rng, const FeatureSchema& schema);

/// Prediction heads. The numerical head emits one output per numerical
/// feature and the target feature's slot is read; the categorical head
/// emits the stacked class logits and the softmax is restricted to the
/// target feature's classes.
struct HeadParams {
  Tensor num_weight;  // [m x n_num]
  Tensor num_bias;    // [n_num]
  Tensor cat_weight;  // [m x sum C]
  Tensor cat_bias;    // [sum C]
};

struct PretrainModel {
  Objective objective = Objective::Cbow;
  FeatureSchema schema;
  TokenizerParams tokenizer;
  EncoderConfig encoder_config;
  EncoderParams encoder;  // MLM only
  HeadParams heads;

  std::map<std::string, Tensor> to_named() const;
};

PretrainModel init_pretrain_model(const FeatureSchema& schema, const PretrainConfig& config,
                                  std::uint64_t seed);

struct PretrainVars {
  TokenizerVars tokenizer;
  EncoderVars encoder;
  Var num_weight, num_bias, cat_weight, cat_bias;
};

PretrainVars bind_pretrain(ParamBinder& binder, PretrainModel& model);

/// Batch of time steps, row-major [batch x d]. `previous` holds the
/// preceding step of the same stay and `first` marks steps without one.
struct StepBatch {
  std::size_t size = 0;
  std::vector<double> rows;
  std::vector<double> previous;
  std::vector<std::uint8_t> first;
  std::vector<TargetPick> picks;
};

struct LossVars {
  Var num;  // mean squared error over the batch
  Var cat;  // mean cross-entropy over the batch
};

/// e_sum^(j) = sum of embeddings except feature j; with `use_previous` the
/// previous step's embedding sum is added (a first step contributes its own
/// sum with the same exclusion, so the target never leaks).
LossVars cbow_loss(const PretrainVars& vars, const FeatureSchema& schema, const StepBatch& batch,
                   bool use_previous);

enum class Corruption { Mask, Random, Keep };

/// Corruption decided for the numerical and the categorical target.
struct CorruptionDraw {
  Corruption num = Corruption::Keep;
  Corruption cat = Corruption::Keep;
  std::vector<double> num_random;  // filled when num == Random
  std::vector<double> cat_random;  // filled when cat == Random
};

/// Each target independently: [MASK] with p 0.8, N(0, 1/m) vector with
/// p 0.1, unchanged with p 0.1.
CorruptionDraw draw_corruption(std::mt19937_64& rng, std::size_t m);

/// Applies `draw` to a d x m embedding set; untouched rows are copied
/// bitwise.
Tensor mlm_corrupt(const Tensor& embeddings, const TargetPick& pick, const CorruptionDraw& draw,
                   const Tensor& mask);

/// Corrupts the targets of every sample, encodes along the feature axis
/// without positions or masking and predicts the targets from their
/// contextual outputs.
LossVars mlm_loss(const PretrainVars& vars, const FeatureSchema& schema,
                  const EncoderConfig& encoder_config, const StepBatch& batch,
                  std::span<const CorruptionDraw> draws);

struct LossRecord {
  std::size_t epoch = 0;
  double train_num = 0.0;
  double train_cat = 0.0;
  double val_num = 0.0;
  double val_cat = 0.0;

  double val_total() const { return val_num + val_cat; }
};

struct PretrainResult {
  PretrainModel model;  // parameters of the best validation epoch
  std::vector<LossRecord> history;  // epoch 0 is the untrained model
  std::size_t best_epoch = 0;
  std::size_t train_samples = 0;
  std::size_t validation_samples = 0;
};

/// Minibatch Adam on the time steps of `train` that pass the missingness
/// filter, split 90/10 by stay into fitting and validation pools. Stops
/// when the validation total has not improved for `patience` epochs.
/// Throws DataError on an empty pool and NumericError (naming the step)
/// when the loss diverges.
PretrainResult pretrain(const Dataset& train, const PretrainConfig& config, std::uint64_t seed);

Checkpoint pretrain_checkpoint(const PretrainResult& result, const PretrainConfig& config,
                               std::uint64_t seed);
/// Restores a "tokenizer" or "mlm" checkpoint.
PretrainModel pretrain_model_from_checkpoint(const Checkpoint& ckpt);

void write_loss_csv(const std::vector<LossRecord>& history, const std::filesystem::path& path);

}  // namespace clinembed
