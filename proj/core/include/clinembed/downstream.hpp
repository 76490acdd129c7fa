#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clinembed/autodiff.hpp"
#include "clinembed/checkpoint.hpp"
#include "clinembed/dataset.hpp"
#include "clinembed/encoder.hpp"
#include "clinembed/optim.hpp"
#include "clinembed/tokenizer.hpp"

namespace clinembed {

enum class ModelKind { Transformer, Ftt, Cbow, Mlm };
enum class Task { PerStep, StayLevel };

std::string model_name(ModelKind model);
ModelKind parse_model(const std::string& name);  // ConfigError on unknown names
std::string task_name(Task task);
Task parse_task(const std::string& name);

struct DownstreamConfig {
  ModelKind model = ModelKind::Ftt;
  Task task = Task::PerStep;
  std::size_t batch = 16;
  double lr = 1e-4;
  std::size_t dim = 128;  // overridden by the pretrained tokenizer's dim
  std::size_t depth = 1;
  std::size_t heads = 1;
  std::size_t ffn_mult = 4;
  double dropout = 0.0;
  double label_fraction = 1.0;
  bool freeze_tokenizer = false;
  bool class_weighting = true;
  std::size_t patience = 5;
  std::size_t max_epochs = 100;
  std::size_t horizon = 48;   // steps visible to the stay-level task
  std::size_t max_seq = 512;  // position table length

  void validate() const;
  nlohmann::json to_json() const;
  /// Keys absent from `j` keep their defaults; unknown keys raise ConfigError.
  static DownstreamConfig from_json(const nlohmann::json& j);
  bool uses_tokenizer() const { return model != ModelKind::Transformer; }
  bool needs_checkpoint() const { return model == ModelKind::Cbow || model == ModelKind::Mlm; }
};

struct DownstreamModel {
  DownstreamConfig config;
  FeatureSchema schema;
  std::size_t dim = 0;
  TokenizerParams tokenizer;              // ftt, cbow, mlm
  EncoderConfig feature_encoder_config;   // mlm
  EncoderParams feature_encoder;          // mlm
  Tensor raw_weight;                      // transformer: [d x m]
  Tensor raw_bias;                        // transformer: [m]
  EncoderConfig time_encoder_config;
  EncoderParams time_encoder;             // with learned positions
  Tensor head_weight;                     // [m x 2]
  Tensor head_bias;                       // [2]

  std::map<std::string, Tensor> to_named() const;
};

/// Fresh parameters. Each parameter group draws from its own stream, so a
/// model differs from another of the same seed only in the groups that are
/// replaced by pretrained values. cbow/mlm require `pretrained`
/// (a "tokenizer" or "mlm" checkpoint); ftt may take one to initialise its
/// tokenizer. Throws SchemaError when the checkpoint does not fit.
DownstreamModel init_downstream(const FeatureSchema& schema, DownstreamConfig config,
                                std::uint64_t seed, const Checkpoint* pretrained = nullptr);

/// Coordinate-wise max over the d rows of a d x m embedding set.
Tensor pool_step(const Tensor& embeddings);

/// Padded stays: values [B x T_max x d] (padding rows repeat a valid row),
/// true lengths, and labels. For the stay-level task stays are cut to the
/// horizon first.
struct StayBatch {
  std::size_t size = 0;
  std::size_t max_len = 0;
  std::vector<double> values;
  std::vector<std::size_t> lengths;
  std::vector<std::uint8_t> step_labels;  // [B x T_max], 0 on padding
  std::vector<std::uint8_t> stay_labels;  // [B]
};

StayBatch make_stay_batch(const Dataset& data, std::span<const std::size_t> stays, Task task,
                          std::size_t horizon);

struct DownstreamVars {
  TokenizerVars tokenizer;
  EncoderVars feature_encoder;
  Var raw_weight, raw_bias;
  EncoderVars time_encoder;
  Var head_weight, head_bias;
};

DownstreamVars bind_downstream(ParamBinder& binder, DownstreamModel& model);

/// Logits: [B x T_max x 2] for per-step, [B x 2] for stay-level (read at the
/// last counted step). Throws DataError on an empty stay.
Var forward_stays(const DownstreamVars& vars, const DownstreamModel& model, const StayBatch& batch);

/// Class-weighted cross-entropy: sum(valid * w_y * CE) / sum(valid).
Var downstream_loss(Var logits, const StayBatch& batch, Task task,
                    const std::array<double, 2>& class_weight);

/// w_c = N / (2 N_c) over the task's labels in `train`; 1 when disabled or
/// when a class is absent.
std::array<double, 2> class_weights(const Dataset& train, Task task, std::size_t horizon,
                                    bool enabled);

/// Keeps floor(fraction * N) whole stays chosen by a seeded shuffle
/// (original order preserved). DataError when nothing remains.
Dataset subsample_labels(const Dataset& train, double fraction, std::uint64_t seed);

struct Scores {
  std::vector<double> scores;  // positive-class probability
  std::vector<int> labels;
};

/// Positive-class probabilities for every counted position of `data`.
Scores predict(DownstreamModel& model, const Dataset& data);

struct EvalResult {
  double auprc = 0.0;
  double auroc = 0.0;
};

EvalResult evaluate(DownstreamModel& model, const Dataset& data);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // 0 for the untrained epoch 0
  double val_auprc = 0.0;
  double val_auroc = 0.0;
};

struct FinetuneResult {
  DownstreamModel model;  // best validation AUPRC
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  std::size_t train_stays = 0;
  EvalResult validation;
  EvalResult test;
};

/// Subsamples `train` by the configured label fraction, trains with Adam
/// and early-stops on validation AUPRC (patience epochs without strict
/// improvement), then scores the best model on `test`.
FinetuneResult finetune(const Dataset& train, const Dataset& validation, const Dataset& test,
                        const DownstreamConfig& config, const Checkpoint* pretrained,
                        std::uint64_t seed);

Checkpoint downstream_checkpoint(const FinetuneResult& result, std::uint64_t seed);
DownstreamModel downstream_model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace clinembed
