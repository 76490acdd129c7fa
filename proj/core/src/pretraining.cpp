#include "clinembed/pretraining.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>

#include "clinembed/error.hpp"
#include "json_util.hpp"
#include "clinembed/rng.hpp"

namespace clinembed {
namespace {

using detail::reject_unknown;

constexpr std::uint64_t kTokenizerStream = 1;
constexpr std::uint64_t kEncoderStream = 2;
constexpr std::uint64_t kHeadStream = 3;
constexpr std::uint64_t kValidationStream = 4;
constexpr std::uint64_t kEpochStream = 5;
constexpr std::uint64_t kPoolSalt = 0x5EEDF00DULL;

Tensor uniform(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = dist(rng);
  return t;
}


// Batched [B x m] summary of the embeddings selected by `selector`
// ([B x 1 x d] of zeros and ones).
Var select_sum(Var embeddings, Tensor selector) {
  Tape& tape = embeddings.tape();
  const Shape& s = embeddings.shape();
  const Var sel = tape.constant(std::move(selector));
  return reshape(matmul(sel, embeddings), {s[0], s[2]});
}

Tensor exclusion_selector(const StepBatch& batch, std::size_t d, bool numerical,
                          bool only_first_steps) {
  Tensor sel = Tensor::full({batch.size, 1, d}, 1.0);
  for (std::size_t b = 0; b < batch.size; ++b) {
    if (only_first_steps && !batch.first[b]) continue;
    const std::size_t target = numerical ? batch.picks[b].j : batch.picks[b].k;
    sel[b * d + target] = 0.0;
  }
  return sel;
}

LossVars head_losses(const PretrainVars& vars, const FeatureSchema& schema, const StepBatch& batch,
                     Var h_num, Var h_cat) {
  Tape& tape = h_num.tape();
  const std::size_t B = batch.size;
  const std::size_t d = schema.size();
  const std::size_t n_num = schema.numerical().size();
  const std::size_t total_c = schema.total_categories();

  Tensor slot({B, n_num});
  Tensor target({B});
  Tensor cls({B, total_c});
  SoftmaxMask ranges;
  for (std::size_t b = 0; b < B; ++b) {
    const TargetPick& p = batch.picks[b];
    slot[b * n_num + schema.numerical_slot(p.j)] = 1.0;
    target[b] = batch.rows[b * d + p.j];
    const std::size_t k = schema.categorical_slot(p.k);
    const std::size_t offset = schema.category_offset(k);
    cls[b * total_c + offset + category_code(batch.rows[b * d + p.k], schema[p.k])] = 1.0;
    ranges.row_ranges.emplace_back(offset, offset + schema[p.k].cardinality);
  }

  const Var pred_all = linear(h_num, vars.num_weight, vars.num_bias);
  const Var pred = sum(mul(pred_all, tape.constant(std::move(slot))), 1);
  const Var diff = sub(pred, tape.constant(std::move(target)));
  const Var l_num = mean_all(mul(diff, diff));

  const Var logits = linear(h_cat, vars.cat_weight, vars.cat_bias);
  const Var logp = log_softmax(logits, std::move(ranges));
  const Var l_cat =
      scale(sum_all(mul(logp, tape.constant(std::move(cls)))), -1.0 / static_cast<double>(B));
  return {l_num, l_cat};
}

void check_batch(const StepBatch& batch, std::size_t d, bool need_previous) {
  if (batch.size == 0) throw DataError("empty pretraining batch");
  if (batch.rows.size() != batch.size * d || batch.picks.size() != batch.size) {
    throw ShapeError("pretraining batch buffers do not match its size");
  }
  if (need_previous && (batch.previous.size() != batch.size * d || batch.first.size() != batch.size)) {
    throw ShapeError("pretraining batch lacks previous-step rows");
  }
}

// One time step eligible for pretraining.
struct Sample {
  std::size_t stay;
  std::size_t step;
};

struct Pool {
  const Dataset* data = nullptr;
  std::vector<Sample> samples;
};

StepBatch assemble(const Pool& pool, std::span<const std::size_t> order,
                   std::span<const TargetPick> picks) {
  const std::size_t d = pool.data->schema.size();
  StepBatch batch;
  batch.size = order.size();
  batch.rows.reserve(batch.size * d);
  batch.previous.reserve(batch.size * d);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const Sample& s = pool.samples[order[i]];
    const StayRecord& stay = pool.data->stays[s.stay];
    const auto row = stay.step(s.step, d);
    const auto prev = stay.step(s.step == 0 ? 0 : s.step - 1, d);
    batch.rows.insert(batch.rows.end(), row.begin(), row.end());
    batch.previous.insert(batch.previous.end(), prev.begin(), prev.end());
    batch.first.push_back(s.step == 0 ? 1 : 0);
    batch.picks.push_back(picks[i]);
  }
  return batch;
}

struct BatchLoss {
  double num = 0.0;
  double cat = 0.0;
};

class Runner {
 public:
  Runner(PretrainModel& model, const PretrainConfig& config) : model_(model), config_(config) {}

  // Builds the graph for one batch; `adam` non-null means train on it.
  BatchLoss run(const StepBatch& batch, std::span<const CorruptionDraw> draws, Adam* adam) {
    Tape tape;
    ParamBinder binder(tape);
    const PretrainVars vars = bind_pretrain(binder, model_);
    const LossVars loss =
        config_.objective == Objective::Cbow
            ? cbow_loss(vars, model_.schema, batch, config_.use_previous)
            : mlm_loss(vars, model_.schema, model_.encoder_config, batch, draws);
    const BatchLoss out{loss.num.value()[0], loss.cat.value()[0]};
    if (adam != nullptr) {
      const Var total = add(loss.num, loss.cat);
      adam->step(binder, backward(tape, total));
    }
    return out;
  }

 private:
  PretrainModel& model_;
  const PretrainConfig& config_;
};

struct EpochLoss {
  double num = 0.0;
  double cat = 0.0;
};

}  // namespace

std::string objective_name(Objective objective) {
  return objective == Objective::Cbow ? "cbow" : "mlm";
}

Objective parse_objective(const std::string& name) {
  if (name == "cbow") return Objective::Cbow;
  if (name == "mlm") return Objective::Mlm;
  throw ConfigError("unknown objective '" + name + "' (expected cbow or mlm)");
}

PretrainConfig PretrainConfig::defaults(Objective objective) {
  PretrainConfig c;
  c.objective = objective;
  if (objective == Objective::Mlm) {
    c.batch = 512;
    c.lr = 1e-4;
    c.dim = 128;
    c.depth = 2;
    c.heads = 1;
  }
  return c;
}

void PretrainConfig::validate() const {
  if (batch < 1) throw ConfigError("pretraining batch must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("pretraining lr must be > 0");
  if (dim < 2) throw ConfigError("pretraining dim must be >= 2");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("validation_fraction must lie in (0, 1)");
  }
  if (use_previous && objective != Objective::Cbow) {
    throw ConfigError("use_previous applies to the cbow objective only");
  }
  if (objective == Objective::Mlm) encoder_config().validate();
  if (dropout != 0.0) throw ConfigError("dropout is not supported; use 0.0");
}

EncoderConfig PretrainConfig::encoder_config() const {
  EncoderConfig e;
  e.depth = depth;
  e.heads = heads;
  e.dim = dim;
  e.ffn_mult = ffn_mult;
  e.dropout = dropout;
  e.max_seq = 0;
  return e;
}

nlohmann::json PretrainConfig::to_json() const {
  return {{"objective", objective_name(objective)},
          {"batch", batch},
          {"lr", lr},
          {"dim", dim},
          {"depth", depth},
          {"heads", heads},
          {"ffn_mult", ffn_mult},
          {"dropout", dropout},
          {"patience", patience},
          {"max_epochs", max_epochs},
          {"use_previous", use_previous},
          {"validation_fraction", validation_fraction},
          {"max_missing", max_missing}};
}

PretrainConfig PretrainConfig::from_json(const nlohmann::json& j, Objective objective) {
  reject_unknown(j,
                 {"objective", "batch", "lr", "dim", "depth", "heads", "ffn_mult", "dropout",
                  "patience", "max_epochs", "use_previous", "validation_fraction", "max_missing"},
                 "pretraining config");
  try {
    if (j.contains("objective") && parse_objective(j.at("objective").get<std::string>()) != objective) {
      throw ConfigError("pretraining config is for objective " + j.at("objective").get<std::string>());
    }
    PretrainConfig c = defaults(objective);
    c.batch = j.value("batch", c.batch);
    c.lr = j.value("lr", c.lr);
    c.dim = j.value("dim", c.dim);
    c.depth = j.value("depth", c.depth);
    c.heads = j.value("heads", c.heads);
    c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
    c.dropout = j.value("dropout", c.dropout);
    c.patience = j.value("patience", c.patience);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.use_previous = j.value("use_previous", c.use_previous);
    c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
    c.max_missing = j.value("max_missing", c.max_missing);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed pretraining config: ") + e.what());
  }
}

TargetPick pick_targets(std::mt19937_64& rng, const FeatureSchema& schema) {
  const auto& num = schema.numerical();
  const auto& cat = schema.categorical();
  if (num.empty() || cat.empty()) {
    throw SchemaError("target picking needs numerical and categorical features");
  }
  std::uniform_int_distribution<std::size_t> pick_num(0, num.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_cat(0, cat.size() - 1);
  TargetPick p;
  p.j = num[pick_num(rng)];
  p.k = cat[pick_cat(rng)];
  return p;
}

std::map<std::string, Tensor> PretrainModel::to_named() const {
  std::map<std::string, Tensor> out = tokenizer.to_named(schema);
  if (objective == Objective::Mlm) out.merge(encoder.to_named("mlm.encoder"));
  out["head.num.weight"] = heads.num_weight;
  out["head.num.bias"] = heads.num_bias;
  out["head.cat.weight"] = heads.cat_weight;
  out["head.cat.bias"] = heads.cat_bias;
  return out;
}

PretrainModel init_pretrain_model(const FeatureSchema& schema, const PretrainConfig& config,
                                  std::uint64_t seed) {
  config.validate();
  PretrainModel model;
  model.objective = config.objective;
  model.schema = schema;
  model.tokenizer = init_tokenizer(schema, config.dim, derive_seed(seed, {kTokenizerStream}));
  model.encoder_config = config.encoder_config();
  if (config.objective == Objective::Mlm) {
    model.encoder = init_encoder(model.encoder_config, derive_seed(seed, {kEncoderStream}));
  }
  std::mt19937_64 rng(derive_seed(seed, {kHeadStream}));
  const std::size_t m = config.dim;
  const double bound = 1.0 / std::sqrt(static_cast<double>(m));
  model.heads.num_weight = uniform({m, schema.numerical().size()}, bound, rng);
  model.heads.num_bias = uniform({schema.numerical().size()}, bound, rng);
  model.heads.cat_weight = uniform({m, schema.total_categories()}, bound, rng);
  model.heads.cat_bias = uniform({schema.total_categories()}, bound, rng);
  return model;
}

PretrainVars bind_pretrain(ParamBinder& binder, PretrainModel& model) {
  PretrainVars vars;
  vars.tokenizer = bind_tokenizer(binder, model.tokenizer, true);
  if (model.objective == Objective::Mlm) {
    vars.encoder = bind_encoder(binder, model.encoder, "mlm.encoder", true);
  }
  vars.num_weight = binder.bind("head.num.weight", model.heads.num_weight);
  vars.num_bias = binder.bind("head.num.bias", model.heads.num_bias);
  vars.cat_weight = binder.bind("head.cat.weight", model.heads.cat_weight);
  vars.cat_bias = binder.bind("head.cat.bias", model.heads.cat_bias);
  return vars;
}

LossVars cbow_loss(const PretrainVars& vars, const FeatureSchema& schema, const StepBatch& batch,
                   bool use_previous) {
  const std::size_t d = schema.size();
  check_batch(batch, d, use_previous);
  const Var e = tokenize_batch(vars.tokenizer, schema, batch.rows, batch.size);
  Var h_num = select_sum(e, exclusion_selector(batch, d, true, false));
  Var h_cat = select_sum(e, exclusion_selector(batch, d, false, false));
  if (use_previous) {
    const Var prev = tokenize_batch(vars.tokenizer, schema, batch.previous, batch.size);
    h_num = add(h_num, select_sum(prev, exclusion_selector(batch, d, true, true)));
    h_cat = add(h_cat, select_sum(prev, exclusion_selector(batch, d, false, true)));
  }
  return head_losses(vars, schema, batch, h_num, h_cat);
}

CorruptionDraw draw_corruption(std::mt19937_64& rng, std::size_t m) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(m));
  auto one = [&](Corruption& kind, std::vector<double>& random) {
    const double u = unit(rng);
    kind = u < 0.8 ? Corruption::Mask : (u < 0.9 ? Corruption::Random : Corruption::Keep);
    if (kind == Corruption::Random) {
      random.resize(m);
      for (double& v : random) v = normal(rng) * scale_factor;
    }
  };
  CorruptionDraw draw;
  one(draw.num, draw.num_random);
  one(draw.cat, draw.cat_random);
  return draw;
}

Tensor mlm_corrupt(const Tensor& embeddings, const TargetPick& pick, const CorruptionDraw& draw,
                   const Tensor& mask) {
  if (embeddings.rank() != 2 || mask.shape() != Shape{embeddings.dim(1)}) {
    throw ShapeError("mlm_corrupt expects d x m embeddings and an m-vector mask");
  }
  Tensor out = embeddings;
  auto apply = [&](std::size_t row, Corruption kind, const std::vector<double>& random) {
    auto dst = out.row(row);
    if (kind == Corruption::Mask) {
      std::copy(mask.values().begin(), mask.values().end(), dst.begin());
    } else if (kind == Corruption::Random) {
      if (random.size() != dst.size()) throw ShapeError("random corruption vector has wrong size");
      std::copy(random.begin(), random.end(), dst.begin());
    }
  };
  apply(pick.j, draw.num, draw.num_random);
  apply(pick.k, draw.cat, draw.cat_random);
  return out;
}

LossVars mlm_loss(const PretrainVars& vars, const FeatureSchema& schema,
                  const EncoderConfig& encoder_config, const StepBatch& batch,
                  std::span<const CorruptionDraw> draws) {
  const std::size_t d = schema.size();
  check_batch(batch, d, false);
  if (draws.size() != batch.size) throw ShapeError("one corruption draw per sample is required");
  const std::size_t B = batch.size;
  const std::size_t m = vars.tokenizer.mask.shape()[0];
  Tape& tape = vars.tokenizer.mask.tape();

  Tensor keep = Tensor::full({B, d, m}, 1.0);
  Tensor mask_rows({B * d, 1});
  Tensor random({B, d, m});
  for (std::size_t b = 0; b < B; ++b) {
    auto mark = [&](std::size_t feature, Corruption kind, const std::vector<double>& vec) {
      if (kind == Corruption::Keep) return;
      const std::size_t row = b * d + feature;
      std::fill_n(keep.values().begin() + static_cast<std::ptrdiff_t>(row * m), m, 0.0);
      if (kind == Corruption::Mask) {
        mask_rows[row] = 1.0;
      } else {
        std::copy(vec.begin(), vec.end(), random.values().begin() + static_cast<std::ptrdiff_t>(row * m));
      }
    };
    mark(batch.picks[b].j, draws[b].num, draws[b].num_random);
    mark(batch.picks[b].k, draws[b].cat, draws[b].cat_random);
  }

  const Var e = tokenize_batch(vars.tokenizer, schema, batch.rows, B);
  const Var masked = reshape(matmul(tape.constant(std::move(mask_rows)), reshape(vars.tokenizer.mask, {1, m})),
                             {B, d, m});
  const Var corrupted =
      add(add(mul(e, tape.constant(std::move(keep))), masked), tape.constant(std::move(random)));
  const Var f = reshape(encode(corrupted, vars.encoder, encoder_config, false), {B * d, m});

  std::vector<std::size_t> rows_j(B), rows_k(B);
  for (std::size_t b = 0; b < B; ++b) {
    rows_j[b] = b * d + batch.picks[b].j;
    rows_k[b] = b * d + batch.picks[b].k;
  }
  return head_losses(vars, schema, batch, gather(f, std::move(rows_j)), gather(f, std::move(rows_k)));
}

PretrainResult pretrain(const Dataset& train, const PretrainConfig& config, std::uint64_t seed) {
  config.validate();
  if (!train.imputed || !train.normalized) {
    throw DataError("pretraining expects an imputed and normalized dataset");
  }
  const FeatureSchema& schema = train.schema;
  const std::size_t max_missing =
      config.max_missing > 0 ? config.max_missing : default_max_missing(schema.size());

  Pool fit_pool{&train, {}};
  Pool val_pool{&train, {}};
  for (const StepRef& ref : filter_steps(train, max_missing)) {
    const std::uint64_t h =
        splitmix64(static_cast<std::uint64_t>(train.stays[ref.stay].stay_id) ^ kPoolSalt);
    Pool& pool = unit_from_hash(h) < config.validation_fraction ? val_pool : fit_pool;
    pool.samples.push_back({ref.stay, ref.step});
  }
  if (fit_pool.samples.empty() || val_pool.samples.empty()) {
    throw DataError("pretraining pool is empty after the missingness filter and stay split");
  }

  PretrainResult result;
  result.train_samples = fit_pool.samples.size();
  result.validation_samples = val_pool.samples.size();
  PretrainModel model = init_pretrain_model(schema, config, seed);
  const std::size_t m = config.dim;
  const bool mlm = config.objective == Objective::Mlm;

  // Validation picks and corruption are fixed for the whole run.
  std::vector<TargetPick> val_picks;
  std::vector<CorruptionDraw> val_draws;
  {
    std::mt19937_64 rng = make_rng(seed, {kValidationStream});
    for (std::size_t i = 0; i < val_pool.samples.size(); ++i) {
      val_picks.push_back(pick_targets(rng, schema));
      if (mlm) val_draws.push_back(draw_corruption(rng, m));
    }
  }

  Runner runner(model, config);
  auto evaluate = [&](const Pool& pool, std::span<const TargetPick> picks,
                      std::span<const CorruptionDraw> draws) {
    EpochLoss acc;
    std::vector<std::size_t> order(pool.samples.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::size_t n = std::min(config.batch, order.size() - start);
      const StepBatch batch = assemble(pool, std::span(order).subspan(start, n), picks.subspan(start, n));
      const BatchLoss l = runner.run(batch, mlm ? draws.subspan(start, n) : draws, nullptr);
      acc.num += l.num * static_cast<double>(n);
      acc.cat += l.cat * static_cast<double>(n);
    }
    acc.num /= static_cast<double>(order.size());
    acc.cat /= static_cast<double>(order.size());
    return acc;
  };

  // Epoch 0: the untrained model, with the training pool scored under the
  // first epoch's picks.
  std::vector<TargetPick> fit_picks(fit_pool.samples.size());
  std::vector<CorruptionDraw> fit_draws;
  auto draw_epoch = [&](std::size_t epoch, std::vector<std::size_t>& order) {
    std::mt19937_64 rng = make_rng(seed, {kEpochStream, epoch});
    order.resize(fit_pool.samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    fit_draws.clear();
    for (std::size_t i = 0; i < order.size(); ++i) {
      fit_picks[i] = pick_targets(rng, schema);
      if (mlm) fit_draws.push_back(draw_corruption(rng, m));
    }
  };

  std::vector<std::size_t> order;
  {
    draw_epoch(1, order);
    const EpochLoss tr = evaluate(fit_pool, fit_picks, fit_draws);
    const EpochLoss va = evaluate(val_pool, val_picks, val_draws);
    result.history.push_back({0, tr.num, tr.cat, va.num, va.cat});
  }

  PretrainModel best = model;
  double best_val = result.history[0].val_total();
  std::size_t since_best = 0;
  Adam adam(AdamConfig{config.lr, 0.9, 0.999, 1e-8});
  std::size_t global_step = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    draw_epoch(epoch, order);
    EpochLoss tr;
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::size_t n = std::min(config.batch, order.size() - start);
      const StepBatch batch =
          assemble(fit_pool, std::span(order).subspan(start, n), std::span(fit_picks).subspan(start, n));
      BatchLoss l;
      try {
        l = runner.run(batch, mlm ? std::span<const CorruptionDraw>(fit_draws).subspan(start, n)
                                  : std::span<const CorruptionDraw>(), &adam);
      } catch (const NumericError& e) {
        throw NumericError("pretraining diverged at step " + std::to_string(global_step) +
                           " (epoch " + std::to_string(epoch) + "): " + e.what());
      }
      ++global_step;
      tr.num += l.num * static_cast<double>(n);
      tr.cat += l.cat * static_cast<double>(n);
    }
    tr.num /= static_cast<double>(order.size());
    tr.cat /= static_cast<double>(order.size());
    EpochLoss va;
    try {
      va = evaluate(val_pool, val_picks, val_draws);
    } catch (const NumericError& e) {
      throw NumericError("pretraining diverged after step " + std::to_string(global_step) + ": " +
                         e.what());
    }
    result.history.push_back({epoch, tr.num, tr.cat, va.num, va.cat});
    if (result.history.back().val_total() < best_val) {
      best_val = result.history.back().val_total();
      best = model;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  result.model = std::move(best);
  return result;
}

Checkpoint pretrain_checkpoint(const PretrainResult& result, const PretrainConfig& config,
                               std::uint64_t seed) {
  Checkpoint c;
  c.model_kind = config.objective == Objective::Cbow ? "tokenizer" : "mlm";
  c.schema = result.model.schema;
  c.config = config.to_json();
  c.seed = seed;
  const LossRecord& best = result.history.at(result.best_epoch);
  c.metadata = {{"epochs_run", result.history.size() - 1},
                {"best_epoch", result.best_epoch},
                {"best_val_loss", best.val_total()},
                {"best_val_num", best.val_num},
                {"best_val_cat", best.val_cat},
                {"train_samples", result.train_samples},
                {"validation_samples", result.validation_samples}};
  c.parameters = result.model.to_named();
  return c;
}

PretrainModel pretrain_model_from_checkpoint(const Checkpoint& ckpt) {
  Objective objective;
  if (ckpt.model_kind == "tokenizer") {
    objective = Objective::Cbow;
  } else if (ckpt.model_kind == "mlm") {
    objective = Objective::Mlm;
  } else {
    throw SchemaError("checkpoint of kind '" + ckpt.model_kind + "' is not a pretrained model");
  }
  PretrainConfig config;
  try {
    config = PretrainConfig::from_json(ckpt.config, objective);
  } catch (const ConfigError& e) {
    throw SchemaError(std::string("checkpoint config: ") + e.what());
  }
  PretrainModel model;
  model.objective = objective;
  model.schema = ckpt.schema;
  model.tokenizer = TokenizerParams::from_named(ckpt.parameters, ckpt.schema);
  model.encoder_config = config.encoder_config();
  if (objective == Objective::Mlm) {
    model.encoder = EncoderParams::from_named(ckpt.parameters, "mlm.encoder", model.encoder_config);
  }
  auto fetch = [&](const std::string& name, Shape shape) {
    const Tensor& t = ckpt.parameter(name);
    if (t.shape() != shape) throw SchemaError("parameter " + name + " has wrong shape");
    return t;
  };
  const std::size_t m = model.tokenizer.dim;
  model.heads.num_weight = fetch("head.num.weight", {m, ckpt.schema.numerical().size()});
  model.heads.num_bias = fetch("head.num.bias", {ckpt.schema.numerical().size()});
  model.heads.cat_weight = fetch("head.cat.weight", {m, ckpt.schema.total_categories()});
  model.heads.cat_bias = fetch("head.cat.bias", {ckpt.schema.total_categories()});
  return model;
}

void write_loss_csv(const std::vector<LossRecord>& history, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "epoch,train_num,train_cat,val_num,val_cat\n";
  char buf[64];
  auto put = [&](double v) {
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    out.write(buf, ptr - buf);
  };
  for (const LossRecord& r : history) {
    out << r.epoch << ',';
    put(r.train_num);
    out << ',';
    put(r.train_cat);
    out << ',';
    put(r.val_num);
    out << ',';
    put(r.val_cat);
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace clinembed
