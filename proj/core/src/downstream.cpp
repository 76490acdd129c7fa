#include "clinembed/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "clinembed/error.hpp"
#include "json_util.hpp"
#include "clinembed/metrics.hpp"
#include "clinembed/pretraining.hpp"
#include "clinembed/rng.hpp"

namespace clinembed {
namespace {

using detail::reject_unknown;

constexpr std::uint64_t kTokenizerStream = 11;
constexpr std::uint64_t kRawStream = 12;
constexpr std::uint64_t kTimeEncoderStream = 13;
constexpr std::uint64_t kHeadStream = 14;
constexpr std::uint64_t kEpochStream = 15;
constexpr std::uint64_t kLabelStream = 16;
constexpr std::size_t kEvalBatch = 64;

Tensor uniform(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = dist(rng);
  return t;
}


std::size_t counted_steps(const StayRecord& stay, Task task, std::size_t horizon) {
  return task == Task::StayLevel ? std::min(stay.steps, horizon) : stay.steps;
}

nlohmann::json encoder_config_json(const EncoderConfig& c) {
  return {{"depth", c.depth}, {"heads", c.heads}, {"dim", c.dim}, {"ffn_mult", c.ffn_mult}};
}

EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.depth = j.at("depth").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.dim = j.at("dim").get<std::size_t>();
  c.ffn_mult = j.at("ffn_mult").get<std::size_t>();
  return c;
}

}  // namespace

std::string model_name(ModelKind model) {
  switch (model) {
    case ModelKind::Transformer: return "transformer";
    case ModelKind::Ftt: return "ftt";
    case ModelKind::Cbow: return "cbow";
    case ModelKind::Mlm: return "mlm";
  }
  return "?";
}

ModelKind parse_model(const std::string& name) {
  if (name == "transformer") return ModelKind::Transformer;
  if (name == "ftt") return ModelKind::Ftt;
  if (name == "cbow") return ModelKind::Cbow;
  if (name == "mlm") return ModelKind::Mlm;
  throw ConfigError("unknown model '" + name + "' (expected transformer, ftt, cbow or mlm)");
}

std::string task_name(Task task) { return task == Task::PerStep ? "per_step" : "stay_level"; }

Task parse_task(const std::string& name) {
  if (name == "per_step") return Task::PerStep;
  if (name == "stay_level") return Task::StayLevel;
  throw ConfigError("unknown task '" + name + "' (expected per_step or stay_level)");
}

void DownstreamConfig::validate() const {
  if (batch < 1) throw ConfigError("fine-tuning batch must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("fine-tuning lr must be > 0");
  if (dim < 2) throw ConfigError("fine-tuning dim must be >= 2");
  if (!(label_fraction > 0.0 && label_fraction <= 1.0)) {
    throw ConfigError("label_fraction must lie in (0, 1]");
  }
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (horizon < 1) throw ConfigError("horizon must be >= 1");
  if (max_seq < 1) throw ConfigError("max_seq must be >= 1");
  if (dropout != 0.0) throw ConfigError("dropout is not supported; use 0.0");
  if (freeze_tokenizer && !uses_tokenizer()) {
    throw ConfigError("freeze_tokenizer needs a model with a feature tokenizer");
  }
  EncoderConfig e;
  e.depth = depth;
  e.heads = heads;
  e.dim = dim;
  e.ffn_mult = ffn_mult;
  e.validate();
}

nlohmann::json DownstreamConfig::to_json() const {
  return {{"model", model_name(model)},
          {"task", task_name(task)},
          {"batch", batch},
          {"lr", lr},
          {"dim", dim},
          {"depth", depth},
          {"heads", heads},
          {"ffn_mult", ffn_mult},
          {"dropout", dropout},
          {"label_fraction", label_fraction},
          {"freeze_tokenizer", freeze_tokenizer},
          {"class_weighting", class_weighting},
          {"patience", patience},
          {"max_epochs", max_epochs},
          {"horizon", horizon},
          {"max_seq", max_seq}};
}

DownstreamConfig DownstreamConfig::from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"model", "task", "batch", "lr", "dim", "depth", "heads", "ffn_mult", "dropout",
                  "label_fraction", "freeze_tokenizer", "class_weighting", "patience",
                  "max_epochs", "horizon", "max_seq"},
                 "fine-tuning config");
  try {
    DownstreamConfig c;
    if (j.contains("model")) c.model = parse_model(j.at("model").get<std::string>());
    if (j.contains("task")) c.task = parse_task(j.at("task").get<std::string>());
    c.batch = j.value("batch", c.batch);
    c.lr = j.value("lr", c.lr);
    c.dim = j.value("dim", c.dim);
    c.depth = j.value("depth", c.depth);
    c.heads = j.value("heads", c.heads);
    c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
    c.dropout = j.value("dropout", c.dropout);
    c.label_fraction = j.value("label_fraction", c.label_fraction);
    c.freeze_tokenizer = j.value("freeze_tokenizer", c.freeze_tokenizer);
    c.class_weighting = j.value("class_weighting", c.class_weighting);
    c.patience = j.value("patience", c.patience);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.horizon = j.value("horizon", c.horizon);
    c.max_seq = j.value("max_seq", c.max_seq);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed fine-tuning config: ") + e.what());
  }
}

std::map<std::string, Tensor> DownstreamModel::to_named() const {
  std::map<std::string, Tensor> out;
  if (config.uses_tokenizer()) out = tokenizer.to_named(schema);
  if (config.model == ModelKind::Mlm) out.merge(feature_encoder.to_named("feature_encoder"));
  if (config.model == ModelKind::Transformer) {
    out["raw.weight"] = raw_weight;
    out["raw.bias"] = raw_bias;
  }
  out.merge(time_encoder.to_named("time_encoder"));
  out["head.weight"] = head_weight;
  out["head.bias"] = head_bias;
  return out;
}

DownstreamModel init_downstream(const FeatureSchema& schema, DownstreamConfig config,
                                std::uint64_t seed, const Checkpoint* pretrained) {
  config.validate();
  if (config.needs_checkpoint() && pretrained == nullptr) {
    throw ConfigError("model " + model_name(config.model) + " needs a pretrained checkpoint");
  }
  if (pretrained != nullptr && !config.uses_tokenizer()) {
    throw ConfigError("the transformer model does not take a pretrained checkpoint");
  }
  std::optional<PretrainModel> source;
  if (pretrained != nullptr) {
    pretrained->require_schema(schema);
    source = pretrain_model_from_checkpoint(*pretrained);
    if (config.model == ModelKind::Mlm && source->objective != Objective::Mlm) {
      throw SchemaError("the mlm model needs an mlm checkpoint");
    }
    if (config.model == ModelKind::Cbow && source->objective != Objective::Cbow) {
      throw SchemaError("the cbow model needs a tokenizer checkpoint from cbow pretraining");
    }
    config.dim = source->tokenizer.dim;
    config.validate();
  }

  DownstreamModel model;
  model.config = config;
  model.schema = schema;
  model.dim = config.dim;
  const std::size_t m = config.dim;
  const std::size_t d = schema.size();

  // Every stream is consumed for every model kind so that shared parameter
  // groups coincide across kinds for one seed.
  model.tokenizer = init_tokenizer(schema, m, derive_seed(seed, {kTokenizerStream}));
  {
    std::mt19937_64 rng(derive_seed(seed, {kRawStream}));
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    model.raw_weight = uniform({d, m}, bound, rng);
    model.raw_bias = uniform({m}, bound, rng);
  }
  model.time_encoder_config.depth = config.depth;
  model.time_encoder_config.heads = config.heads;
  model.time_encoder_config.dim = m;
  model.time_encoder_config.ffn_mult = config.ffn_mult;
  model.time_encoder_config.max_seq = config.max_seq;
  model.time_encoder = init_encoder(model.time_encoder_config, derive_seed(seed, {kTimeEncoderStream}));
  {
    std::mt19937_64 rng(derive_seed(seed, {kHeadStream}));
    const double bound = 1.0 / std::sqrt(static_cast<double>(m));
    model.head_weight = uniform({m, 2}, bound, rng);
    model.head_bias = uniform({2}, bound, rng);
  }

  if (source) {
    model.tokenizer = source->tokenizer;
    if (config.model == ModelKind::Mlm) {
      model.feature_encoder_config = source->encoder_config;
      model.feature_encoder = source->encoder;
    }
  }
  if (!config.uses_tokenizer()) model.tokenizer = TokenizerParams{};
  if (config.model != ModelKind::Transformer) {
    model.raw_weight = Tensor();
    model.raw_bias = Tensor();
  }
  return model;
}

Tensor pool_step(const Tensor& embeddings) {
  if (embeddings.rank() != 2 || embeddings.dim(0) < 1) throw ShapeError("pool_step expects d x m with d >= 1");
  Tape tape;
  return max(tape.constant(embeddings), 0).value();
}

StayBatch make_stay_batch(const Dataset& data, std::span<const std::size_t> stays, Task task,
                          std::size_t horizon) {
  const std::size_t d = data.schema.size();
  StayBatch batch;
  batch.size = stays.size();
  for (std::size_t s : stays) {
    const StayRecord& stay = data.stays.at(s);
    if (stay.steps == 0) throw DataError("stay " + std::to_string(stay.stay_id) + " has no steps");
    batch.lengths.push_back(counted_steps(stay, task, horizon));
    batch.max_len = std::max(batch.max_len, batch.lengths.back());
  }
  const std::size_t T = batch.max_len;
  batch.values.reserve(batch.size * T * d);
  batch.step_labels.assign(batch.size * T, 0);
  for (std::size_t b = 0; b < batch.size; ++b) {
    const StayRecord& stay = data.stays[stays[b]];
    const std::size_t len = batch.lengths[b];
    for (std::size_t t = 0; t < T; ++t) {
      const auto row = stay.step(t < len ? t : 0, d);
      batch.values.insert(batch.values.end(), row.begin(), row.end());
    }
    if (task == Task::PerStep) {
      if (stay.step_labels.size() != stay.steps) {
        throw DataError("stay " + std::to_string(stay.stay_id) + " lacks per-step labels");
      }
      std::copy_n(stay.step_labels.begin(), len, batch.step_labels.begin() + static_cast<std::ptrdiff_t>(b * T));
    } else {
      if (!stay.stay_label) throw DataError("stay " + std::to_string(stay.stay_id) + " lacks a stay label");
      batch.stay_labels.push_back(*stay.stay_label ? 1 : 0);
    }
  }
  return batch;
}

DownstreamVars bind_downstream(ParamBinder& binder, DownstreamModel& model) {
  DownstreamVars vars;
  const DownstreamConfig& c = model.config;
  if (c.uses_tokenizer()) vars.tokenizer = bind_tokenizer(binder, model.tokenizer, !c.freeze_tokenizer);
  if (c.model == ModelKind::Mlm) {
    vars.feature_encoder = bind_encoder(binder, model.feature_encoder, "feature_encoder", true);
  }
  if (c.model == ModelKind::Transformer) {
    vars.raw_weight = binder.bind("raw.weight", model.raw_weight);
    vars.raw_bias = binder.bind("raw.bias", model.raw_bias);
  }
  vars.time_encoder = bind_encoder(binder, model.time_encoder, "time_encoder", true);
  vars.head_weight = binder.bind("head.weight", model.head_weight);
  vars.head_bias = binder.bind("head.bias", model.head_bias);
  return vars;
}

Var forward_stays(const DownstreamVars& vars, const DownstreamModel& model, const StayBatch& batch) {
  const std::size_t B = batch.size;
  const std::size_t T = batch.max_len;
  const std::size_t d = model.schema.size();
  const std::size_t m = model.dim;
  if (B == 0) throw DataError("empty stay batch");
  for (std::size_t len : batch.lengths) {
    if (len == 0) throw DataError("empty stay in batch");
  }
  if (batch.values.size() != B * T * d) throw ShapeError("stay batch values do not match B x T x d");
  Tape& tape = vars.head_weight.tape();
  const std::size_t rows = B * T;

  Var steps;
  if (model.config.model == ModelKind::Transformer) {
    steps = linear(tape.constant(Tensor({rows, d}, batch.values)), vars.raw_weight, vars.raw_bias);
  } else {
    Var e = tokenize_batch(vars.tokenizer, model.schema, batch.values, rows);
    if (model.config.model == ModelKind::Mlm) {
      e = encode(e, vars.feature_encoder, model.feature_encoder_config, false);
    }
    steps = max(e, 1);
  }
  const Var seq = add_positions(reshape(steps, {B, T, m}), vars.time_encoder.positions);
  const Var h = encode(seq, vars.time_encoder, model.time_encoder_config, true, batch.lengths);
  if (model.config.task == Task::PerStep) return linear(h, vars.head_weight, vars.head_bias);

  std::vector<std::size_t> last(B);
  for (std::size_t b = 0; b < B; ++b) last[b] = b * T + batch.lengths[b] - 1;
  return linear(gather(reshape(h, {rows, m}), std::move(last)), vars.head_weight, vars.head_bias);
}

Var downstream_loss(Var logits, const StayBatch& batch, Task task,
                    const std::array<double, 2>& class_weight) {
  Tape& tape = logits.tape();
  const Var logp = log_softmax(logits);
  Tensor weights(logits.shape());
  double count = 0.0;
  if (task == Task::PerStep) {
    const std::size_t T = batch.max_len;
    for (std::size_t b = 0; b < batch.size; ++b) {
      for (std::size_t t = 0; t < batch.lengths[b]; ++t) {
        const std::size_t y = batch.step_labels[b * T + t];
        weights[(b * T + t) * 2 + y] = class_weight[y];
        count += 1.0;
      }
    }
  } else {
    for (std::size_t b = 0; b < batch.size; ++b) {
      const std::size_t y = batch.stay_labels[b];
      weights[b * 2 + y] = class_weight[y];
      count += 1.0;
    }
  }
  return scale(sum_all(mul(logp, tape.constant(std::move(weights)))), -1.0 / count);
}

std::array<double, 2> class_weights(const Dataset& train, Task task, std::size_t horizon,
                                    bool enabled) {
  if (!enabled) return {1.0, 1.0};
  double counts[2] = {0.0, 0.0};
  for (const StayRecord& stay : train.stays) {
    if (task == Task::PerStep) {
      for (std::size_t t = 0; t < std::min(stay.steps, stay.step_labels.size()); ++t) {
        counts[stay.step_labels[t] ? 1 : 0] += 1.0;
      }
    } else if (stay.stay_label && counted_steps(stay, task, horizon) > 0) {
      counts[*stay.stay_label ? 1 : 0] += 1.0;
    }
  }
  const double n = counts[0] + counts[1];
  if (counts[0] == 0.0 || counts[1] == 0.0) return {1.0, 1.0};
  return {n / (2.0 * counts[0]), n / (2.0 * counts[1])};
}

Dataset subsample_labels(const Dataset& train, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("label fraction must lie in (0, 1]");
  if (fraction == 1.0) return train;
  const std::size_t n = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(train.stays.size())));
  if (n == 0) throw DataError("label fraction leaves no training stays");
  std::vector<std::size_t> order(train.stays.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng = make_rng(seed, {kLabelStream});
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(n);
  std::sort(order.begin(), order.end());
  Dataset out;
  out.schema = train.schema;
  out.imputed = train.imputed;
  out.normalized = train.normalized;
  for (std::size_t i : order) out.stays.push_back(train.stays[i]);
  return out;
}

Scores predict(DownstreamModel& model, const Dataset& data) {
  const Task task = model.config.task;
  Scores out;
  std::vector<std::size_t> all(data.stays.size());
  std::iota(all.begin(), all.end(), 0);
  for (std::size_t start = 0; start < all.size(); start += kEvalBatch) {
    const std::size_t n = std::min(kEvalBatch, all.size() - start);
    const StayBatch batch = make_stay_batch(data, std::span(all).subspan(start, n), task, model.config.horizon);
    Tape tape;
    ParamBinder binder(tape);
    const DownstreamVars vars = bind_downstream(binder, model);
    const Tensor& logp = log_softmax(forward_stays(vars, model, batch)).value();
    if (task == Task::PerStep) {
      const std::size_t T = batch.max_len;
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t t = 0; t < batch.lengths[b]; ++t) {
          out.scores.push_back(std::exp(logp[(b * T + t) * 2 + 1]));
          out.labels.push_back(batch.step_labels[b * T + t]);
        }
      }
    } else {
      for (std::size_t b = 0; b < n; ++b) {
        out.scores.push_back(std::exp(logp[b * 2 + 1]));
        out.labels.push_back(batch.stay_labels[b]);
      }
    }
  }
  return out;
}

EvalResult evaluate(DownstreamModel& model, const Dataset& data) {
  const Scores s = predict(model, data);
  return {auprc(s.scores, s.labels), auroc(s.scores, s.labels)};
}

FinetuneResult finetune(const Dataset& train, const Dataset& validation, const Dataset& test,
                        const DownstreamConfig& config, const Checkpoint* pretrained,
                        std::uint64_t seed) {
  config.validate();
  for (const Dataset* part : {&train, &validation, &test}) {
    if (!part->imputed || !part->normalized) {
      throw DataError("fine-tuning expects imputed and normalized datasets");
    }
  }
  const Dataset labeled = subsample_labels(train, config.label_fraction, seed);
  DownstreamModel model = init_downstream(train.schema, config, seed, pretrained);
  const std::array<double, 2> weights =
      class_weights(labeled, config.task, config.horizon, config.class_weighting);

  FinetuneResult result;
  result.train_stays = labeled.stays.size();
  EvalResult val = evaluate(model, validation);
  result.history.push_back({0, 0.0, val.auprc, val.auroc});
  DownstreamModel best = model;
  double best_auprc = val.auprc;
  result.validation = val;
  std::size_t since_best = 0;

  Adam adam(AdamConfig{config.lr, 0.9, 0.999, 1e-8});
  std::size_t global_step = 0;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::vector<std::size_t> order(labeled.stays.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng = make_rng(seed, {kEpochStream, epoch});
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::size_t n = std::min(config.batch, order.size() - start);
      const StayBatch batch =
          make_stay_batch(labeled, std::span(order).subspan(start, n), config.task, config.horizon);
      Tape tape;
      ParamBinder binder(tape);
      try {
        const DownstreamVars vars = bind_downstream(binder, model);
        const Var loss = downstream_loss(forward_stays(vars, model, batch), batch, config.task, weights);
        loss_sum += loss.value()[0];
        adam.step(binder, backward(tape, loss));
      } catch (const NumericError& e) {
        throw NumericError("fine-tuning diverged at step " + std::to_string(global_step) + " (epoch " +
                           std::to_string(epoch) + "): " + e.what());
      }
      ++global_step;
      ++batches;
    }
    val = evaluate(model, validation);
    result.history.push_back({epoch, loss_sum / static_cast<double>(batches), val.auprc, val.auroc});
    if (val.auprc > best_auprc) {
      best_auprc = val.auprc;
      best = model;
      result.best_epoch = epoch;
      result.validation = val;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  result.model = std::move(best);
  result.test = evaluate(result.model, test);
  return result;
}

Checkpoint downstream_checkpoint(const FinetuneResult& result, std::uint64_t seed) {
  const DownstreamModel& model = result.model;
  Checkpoint c;
  c.model_kind = "downstream";
  c.schema = model.schema;
  c.config = model.config.to_json();
  c.seed = seed;
  c.metadata = {{"epochs_run", result.history.size() - 1},
                {"best_epoch", result.best_epoch},
                {"best_val_auprc", result.validation.auprc},
                {"best_val_auroc", result.validation.auroc},
                {"test_auprc", result.test.auprc},
                {"test_auroc", result.test.auroc},
                {"train_stays", result.train_stays}};
  if (model.config.model == ModelKind::Mlm) {
    c.metadata["feature_encoder"] = encoder_config_json(model.feature_encoder_config);
  }
  c.parameters = model.to_named();
  return c;
}

DownstreamModel downstream_model_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.model_kind != "downstream") {
    throw SchemaError("checkpoint of kind '" + ckpt.model_kind + "' is not a fine-tuned model");
  }
  DownstreamModel model;
  try {
    model.config = DownstreamConfig::from_json(ckpt.config);
    if (model.config.model == ModelKind::Mlm) {
      model.feature_encoder_config = encoder_config_from_json(ckpt.metadata.at("feature_encoder"));
    }
  } catch (const ConfigError& e) {
    throw SchemaError(std::string("checkpoint config: ") + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("checkpoint metadata: ") + e.what());
  }
  model.schema = ckpt.schema;
  model.dim = model.config.dim;
  const std::size_t m = model.dim;
  auto fetch = [&](const std::string& name, Shape shape) {
    const Tensor& t = ckpt.parameter(name);
    if (t.shape() != shape) throw SchemaError("parameter " + name + " has wrong shape");
    return t;
  };
  if (model.config.uses_tokenizer()) {
    model.tokenizer = TokenizerParams::from_named(ckpt.parameters, ckpt.schema);
    if (model.tokenizer.dim != m) throw SchemaError("tokenizer dim disagrees with the model dim");
  }
  if (model.config.model == ModelKind::Mlm) {
    model.feature_encoder = EncoderParams::from_named(ckpt.parameters, "feature_encoder", model.feature_encoder_config);
  }
  if (model.config.model == ModelKind::Transformer) {
    model.raw_weight = fetch("raw.weight", {ckpt.schema.size(), m});
    model.raw_bias = fetch("raw.bias", {m});
  }
  model.time_encoder_config.depth = model.config.depth;
  model.time_encoder_config.heads = model.config.heads;
  model.time_encoder_config.dim = m;
  model.time_encoder_config.ffn_mult = model.config.ffn_mult;
  model.time_encoder_config.max_seq = model.config.max_seq;
  model.time_encoder = EncoderParams::from_named(ckpt.parameters, "time_encoder", model.time_encoder_config);
  model.head_weight = fetch("head.weight", {m, 2});
  model.head_bias = fetch("head.bias", {2});
  return model;
}

}  // namespace clinembed
