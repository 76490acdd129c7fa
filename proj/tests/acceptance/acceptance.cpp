// Acceptance runner. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails. Optional arguments select criteria by
// number, e.g. `clinembed_acceptance 1 3 8`.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "clinembed/autodiff.hpp"
#include "clinembed/config.hpp"
#include "clinembed/dataset.hpp"
#include "clinembed/downstream.hpp"
#include "clinembed/encoder.hpp"
#include "clinembed/error.hpp"
#include "clinembed/experiment.hpp"
#include "clinembed/metrics.hpp"
#include "clinembed/pretraining.hpp"
#include "clinembed/probe.hpp"
#include "clinembed/synthetic.hpp"
#include "clinembed/tsne.hpp"

using namespace clinembed;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

void progress(const std::string& line) { std::cerr << "  .. " << line << std::endl; }

Tensor gaussian(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = dist(rng);
  return t;
}

// ---- 1. gradient suite -----------------------------------------------------

constexpr std::uint64_t kGradSeeds = 20;
constexpr double kGradTolerance = 1e-4;

// Scalar loss with a distinct random weight on every output entry.
Var project(Var out, std::uint64_t seed) {
  std::mt19937_64 rng(seed * 7919 + 1);
  return sum_all(mul(out, out.tape().constant(gaussian(out.shape(), rng))));
}

struct OpCase {
  OpKind kind;
  std::string name;
  std::vector<Shape> shapes;
  std::function<Var(std::span<const Var>)> body;
};

std::vector<OpCase> op_cases() {
  SoftmaxMask causal;
  causal.causal = true;
  SoftmaxMask keys;
  keys.key_lengths = {2, 4};
  SoftmaxMask ranges;
  ranges.row_ranges = {{0, 2}, {1, 5}, {3, 4}};
  return {
      {OpKind::MatMul, "matmul 2d", {{3, 4}, {4, 5}}, [](auto v) { return matmul(v[0], v[1]); }},
      {OpKind::MatMul, "matmul batched", {{2, 3, 4}, {2, 4, 2}}, [](auto v) { return matmul(v[0], v[1]); }},
      {OpKind::MatMul, "matmul shared rhs", {{2, 3, 4}, {4, 5}}, [](auto v) { return matmul(v[0], v[1]); }},
      {OpKind::Add, "add", {{3, 4}, {3, 4}}, [](auto v) { return add(v[0], v[1]); }},
      {OpKind::Add, "add broadcast", {{2, 3, 4}, {4}}, [](auto v) { return add(v[0], v[1]); }},
      {OpKind::ScalarMul, "scale", {{3, 4}}, [](auto v) { return scale(v[0], -1.7); }},
      {OpKind::Mul, "mul", {{3, 4}, {3, 4}}, [](auto v) { return mul(v[0], v[1]); }},
      {OpKind::Concat, "concat", {{2, 3}, {2, 5}},
       [](auto v) { return concat(std::vector<Var>{v[0], v[1]}, 1); }},
      {OpKind::Slice, "slice", {{3, 6}}, [](auto v) { return slice(v[0], 1, 1, 4); }},
      {OpKind::Gather, "gather", {{5, 3}}, [](auto v) { return gather(v[0], {4, 0, 4, 2}); }},
      {OpKind::Sum, "sum", {{2, 3, 4}}, [](auto v) { return sum(v[0], 1); }},
      {OpKind::Mean, "mean", {{2, 3, 4}}, [](auto v) { return mean(v[0], 2); }},
      {OpKind::Max, "max", {{2, 5, 3}}, [](auto v) { return max(v[0], 1); }},
      {OpKind::Softmax, "softmax", {{3, 5}}, [](auto v) { return softmax(v[0]); }},
      {OpKind::Softmax, "softmax causal", {{2, 4, 4}}, [causal](auto v) { return softmax(v[0], causal); }},
      {OpKind::Softmax, "softmax key lengths", {{2, 3, 4}}, [keys](auto v) { return softmax(v[0], keys); }},
      {OpKind::LogSoftmax, "log_softmax", {{3, 5}}, [](auto v) { return log_softmax(v[0]); }},
      {OpKind::LogSoftmax, "log_softmax row ranges", {{3, 5}},
       [ranges](auto v) { return log_softmax(v[0], ranges); }},
      {OpKind::LayerNorm, "layer_norm", {{4, 6}, {6}, {6}},
       [](auto v) { return layer_norm(v[0], v[1], v[2]); }},
      {OpKind::Relu, "relu", {{4, 5}}, [](auto v) { return relu(v[0]); }},
      {OpKind::Gelu, "gelu", {{4, 5}}, [](auto v) { return gelu(v[0]); }},
      {OpKind::Sigmoid, "sigmoid", {{4, 5}}, [](auto v) { return sigmoid(v[0]); }},
      {OpKind::Transpose, "transpose", {{2, 3, 4}}, [](auto v) { return transpose(v[0]); }},
      {OpKind::Reshape, "reshape", {{2, 6}}, [](auto v) { return reshape(v[0], {3, 2, 2}); }},
  };
}

// Central differences over every entry of every trainable binding, taken
// through the model's own binding path so that every parameter is covered.
using ModelLoss = std::function<Var(Tape&, ParamBinder&)>;

double model_grad_error(const ModelLoss& build, double h = 1e-5) {
  Tape tape;
  ParamBinder binder(tape);
  const Var loss = build(tape, binder);
  const GradientMap grads = backward(tape, loss);
  auto value = [&]() {
    Tape t;
    ParamBinder b(t);
    return build(t, b).value()[0];
  };
  double worst = 0.0;
  for (const ParamBinder::Binding& bound : binder.bindings()) {
    if (!bound.trainable) continue;
    const Tensor& analytic = grads.at(bound.var);
    Tensor& param = *bound.param;
    for (std::size_t i = 0; i < param.size(); ++i) {
      const double saved = param[i];
      param[i] = saved + h;
      const double up = value();
      param[i] = saved - h;
      const double down = value();
      param[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i];
      worst = std::max(worst, std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)}));
    }
  }
  return worst;
}

FeatureSchema small_schema() {
  return FeatureSchema({{"a", FeatureKind::Numerical, 0, 0.0, 1.0, 0},
                        {"c", FeatureKind::Categorical, 3, 0.0, 1.0, 0},
                        {"b", FeatureKind::Numerical, 0, 0.0, 1.0, 0},
                        {"e", FeatureKind::Categorical, 2, 0.0, 1.0, 0},
                        {"f", FeatureKind::Numerical, 0, 0.0, 1.0, 0}});
}

double random_cell(const FeatureSchema& schema, std::size_t i, std::mt19937_64& rng) {
  if (schema.is_numerical(i)) return std::normal_distribution<double>(0.0, 1.0)(rng);
  return static_cast<double>(std::uniform_int_distribution<std::size_t>(0, schema[i].cardinality - 1)(rng));
}

StepBatch random_step_batch(const FeatureSchema& schema, std::size_t size, std::mt19937_64& rng) {
  const std::size_t d = schema.size();
  StepBatch batch;
  batch.size = size;
  for (std::size_t b = 0; b < size; ++b) {
    for (std::size_t i = 0; i < d; ++i) batch.rows.push_back(random_cell(schema, i, rng));
    batch.first.push_back(b % 2 == 0 ? 1 : 0);
    for (std::size_t i = 0; i < d; ++i) {
      batch.previous.push_back(batch.first.back() ? batch.rows[b * d + i] : random_cell(schema, i, rng));
    }
    batch.picks.push_back(pick_targets(rng, schema));
  }
  return batch;
}

Dataset random_stays(const FeatureSchema& schema, std::size_t n, std::size_t max_len, std::mt19937_64& rng) {
  Dataset data;
  data.schema = schema;
  data.imputed = true;
  data.normalized = true;
  std::bernoulli_distribution coin(0.4);
  for (std::size_t s = 0; s < n; ++s) {
    StayRecord stay;
    stay.stay_id = static_cast<std::int64_t>(s + 1);
    stay.steps = std::uniform_int_distribution<std::size_t>(1, max_len)(rng);
    for (std::size_t t = 0; t < stay.steps; ++t) {
      for (std::size_t i = 0; i < schema.size(); ++i) stay.values.push_back(random_cell(schema, i, rng));
      stay.step_labels.push_back(coin(rng) ? 1 : 0);
    }
    stay.missing.assign(stay.values.size(), 0);
    stay.stay_label = coin(rng);
    data.stays.push_back(std::move(stay));
  }
  return data;
}

PretrainConfig small_pretrain(Objective objective, std::size_t m) {
  PretrainConfig c = PretrainConfig::defaults(objective);
  c.dim = m;
  c.depth = 1;
  return c;
}

Verdict criterion_gradients() {
  const auto start = Clock::now();
  double worst = 0.0;
  std::string worst_case = "none";
  auto note = [&](double err, const std::string& what) {
    if (err > worst) {
      worst = err;
      worst_case = what;
    }
  };

  std::set<OpKind> covered;
  for (const OpCase& c : op_cases()) {
    covered.insert(c.kind);
    for (std::uint64_t seed = 1; seed <= kGradSeeds; ++seed) {
      std::mt19937_64 rng(seed);
      std::vector<Tensor> leaves;
      for (const Shape& s : c.shapes) leaves.push_back(gaussian(s, rng));
      note(grad_check([&](Tape&, std::span<const Var> v) { return project(c.body(v), seed); }, leaves),
           c.name);
    }
  }
  // Leaf has no rule of its own; every case above differentiates leaves.
  covered.insert(OpKind::Leaf);
  const std::size_t kinds = static_cast<std::size_t>(OpKind::Reshape) + 1;
  progress(fmt("op suite: %zu/%zu kinds, worst %.2e (%s)", covered.size(), kinds, worst, worst_case.c_str()));

  const FeatureSchema schema = small_schema();
  const std::size_t m = 8;
  for (std::uint64_t seed = 1; seed <= kGradSeeds; ++seed) {
    std::mt19937_64 rng(seed);
    for (bool use_previous : {false, true}) {
      PretrainModel model = init_pretrain_model(schema, small_pretrain(Objective::Cbow, m), seed);
      const StepBatch batch = random_step_batch(schema, 3, rng);
      note(model_grad_error([&](Tape&, ParamBinder& binder) {
             const LossVars l = cbow_loss(bind_pretrain(binder, model), schema, batch, use_previous);
             return add(l.num, l.cat);
           }),
           use_previous ? "cbow previous" : "cbow");
    }
    PretrainConfig mlm_config = small_pretrain(Objective::Mlm, m);
    mlm_config.heads = seed % 2 == 0 ? 2 : 1;
    PretrainModel mlm = init_pretrain_model(schema, mlm_config, seed);
    const StepBatch batch = random_step_batch(schema, 3, rng);
    std::vector<CorruptionDraw> draws;
    for (std::size_t b = 0; b < batch.size; ++b) draws.push_back(draw_corruption(rng, m));
    draws[0].num = Corruption::Mask;
    note(model_grad_error([&](Tape&, ParamBinder& binder) {
           const LossVars l = mlm_loss(bind_pretrain(binder, mlm), schema, mlm.encoder_config, batch, draws);
           return add(l.num, l.cat);
         }),
         "mlm");
  }
  progress(fmt("pretraining losses: worst so far %.2e (%s)", worst, worst_case.c_str()));

  for (std::uint64_t seed = 1; seed <= kGradSeeds; ++seed) {
    for (ModelKind kind : {ModelKind::Transformer, ModelKind::Ftt, ModelKind::Cbow, ModelKind::Mlm}) {
      std::mt19937_64 rng(seed * 31 + static_cast<std::uint64_t>(kind));
      DownstreamConfig config;
      config.model = kind;
      config.task = seed % 2 == 0 ? Task::StayLevel : Task::PerStep;
      config.dim = m;
      config.max_seq = 8;
      config.horizon = 3;
      std::optional<Checkpoint> init;
      if (kind == ModelKind::Cbow || kind == ModelKind::Mlm) {
        PretrainResult r;
        const PretrainConfig pc = small_pretrain(kind == ModelKind::Cbow ? Objective::Cbow : Objective::Mlm, m);
        r.model = init_pretrain_model(schema, pc, seed + 100);
        r.history.push_back(LossRecord{});
        init = pretrain_checkpoint(r, pc, seed + 100);
      }
      DownstreamModel model = init_downstream(schema, config, seed, init ? &*init : nullptr);
      const Dataset data = random_stays(schema, 2, 4, rng);
      const std::vector<std::size_t> all{0, 1};
      const StayBatch batch = make_stay_batch(data, all, config.task, config.horizon);
      const std::array<double, 2> weights{0.6, 2.5};
      note(model_grad_error([&](Tape&, ParamBinder& binder) {
             const DownstreamVars vars = bind_downstream(binder, model);
             return downstream_loss(forward_stays(vars, model, batch), batch, config.task, weights);
           }),
           "downstream " + model_name(kind) + " " + task_name(config.task));
    }
  }

  const double elapsed = seconds_since(start);
  const bool pass = covered.size() == kinds && worst < kGradTolerance && elapsed < 120.0;
  return {pass, fmt("%zu/%zu op kinds, %llu seeds, max relative error %.2e (%s), %.1f s", covered.size(), kinds,
                    static_cast<unsigned long long>(kGradSeeds), worst, worst_case.c_str(), elapsed)};
}

// ---- 2. corruption statistics --------------------------------------------

Verdict criterion_corruption() {
  std::mt19937_64 rng(20240601);
  const std::size_t draws = 10000;
  std::map<Corruption, double> num, cat;
  for (std::size_t i = 0; i < draws; ++i) {
    const CorruptionDraw d = draw_corruption(rng, 16);
    num[d.num] += 1.0;
    cat[d.cat] += 1.0;
  }
  double worst = 0.0;
  for (auto* counts : {&num, &cat}) {
    worst = std::max(worst, std::abs((*counts)[Corruption::Mask] / draws - 0.8));
    worst = std::max(worst, std::abs((*counts)[Corruption::Random] / draws - 0.1));
    worst = std::max(worst, std::abs((*counts)[Corruption::Keep] / draws - 0.1));
  }
  return {worst <= 0.02,
          fmt("numerical %.3f/%.3f/%.3f, categorical %.3f/%.3f/%.3f, max deviation %.4f",
              num[Corruption::Mask] / draws, num[Corruption::Random] / draws, num[Corruption::Keep] / draws,
              cat[Corruption::Mask] / draws, cat[Corruption::Random] / draws, cat[Corruption::Keep] / draws,
              worst)};
}

// ---- 3. metric oracles ------------------------------------------------------

double pair_count_auroc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1.0;
        wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
    }
  }
  return wins / pairs;
}

// Mean over positives of precision at that positive's rank (distinct scores).
double hand_ap(const std::vector<double>& s, const std::vector<int>& y) {
  std::vector<std::size_t> order(s.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  double hits = 0.0, total = 0.0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (y[order[r]] == 1) {
      hits += 1.0;
      total += hits / static_cast<double>(r + 1);
    }
  }
  return total / hits;
}

// Tied scores: one step per distinct threshold.
double threshold_ap(const std::vector<double>& s, const std::vector<int>& y) {
  const double positives = static_cast<double>(std::count(y.begin(), y.end(), 1));
  std::set<double, std::greater<>> thresholds(s.begin(), s.end());
  double ap = 0.0, previous_recall = 0.0;
  for (double t : thresholds) {
    double tp = 0.0, predicted = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] >= t) {
        predicted += 1.0;
        tp += y[i];
      }
    }
    ap += (tp / positives - previous_recall) * (tp / predicted);
    previous_recall = tp / positives;
  }
  return ap;
}

Verdict criterion_metrics() {
  const std::vector<double> ws{0.9, 0.8, 0.3, 0.2};
  const std::vector<int> wy{1, 0, 1, 0};
  const double w_roc = auroc(ws, wy);
  const double w_pr = auprc(ws, wy);
  bool pass = w_roc == 0.75 && std::abs(w_pr - 5.0 / 6.0) <= 1e-15;

  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> grid(0, 5);
  std::size_t cases = 0;
  double worst = 0.0;
  for (std::size_t n = 2; n <= 12; ++n) {
    std::vector<double> distinct(n), tied(n);
    for (std::size_t i = 0; i < n; ++i) distinct[i] = static_cast<double>(i) + 0.5;
    std::shuffle(distinct.begin(), distinct.end(), rng);
    for (double& v : tied) v = grid(rng) / 5.0;
    for (unsigned mask = 1; mask + 1 < (1u << n); ++mask) {
      std::vector<int> y(n);
      for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>((mask >> i) & 1u);
      worst = std::max(worst, std::abs(auroc(distinct, y) - pair_count_auroc(distinct, y)));
      worst = std::max(worst, std::abs(auprc(distinct, y) - hand_ap(distinct, y)));
      worst = std::max(worst, std::abs(auroc(tied, y) - pair_count_auroc(tied, y)));
      worst = std::max(worst, std::abs(auprc(tied, y) - threshold_ap(tied, y)));
      cases += 2;
    }
  }
  pass = pass && worst < 1e-12;
  return {pass, fmt("worked example auroc %.17g auprc %.17g; %zu exhaustive inputs, max |diff| %.2e", w_roc,
                    w_pr, cases, worst)};
}

// ---- 4-7. pretraining, downstream and probes on the default dataset --------

constexpr std::uint64_t kSeeds[] = {1, 2, 3};
constexpr std::size_t kCbowPretrainEpochs = 20;
constexpr std::size_t kMlmPretrainEpochs = 2;
constexpr std::size_t kCbowFinetuneEpochs = 10;
constexpr std::size_t kMlmFinetuneEpochs = 2;

struct PretrainRun {
  Objective objective;
  std::uint64_t seed;
  PretrainConfig config;
  PretrainResult result;
  double seconds;
};

struct Shared {
  std::optional<PreparedData> data;
  std::vector<PretrainRun> runs;  // cbow seeds then mlm seeds
  double cbow_seconds = 0.0;
  double mlm_seconds = 0.0;
};

const PreparedData& default_data(Shared& shared) {
  if (!shared.data) {
    const RunConfig defaults;
    shared.data = prepare(generate_synthetic(defaults.generator), defaults.split_seed);
    progress(fmt("default dataset: %zu train, %zu validation, %zu test stays",
                 shared.data->splits.train.stays.size(), shared.data->splits.validation.stays.size(),
                 shared.data->splits.test.stays.size()));
  }
  return *shared.data;
}

void run_pretraining(Shared& shared) {
  if (!shared.runs.empty()) return;
  const PreparedData& data = default_data(shared);
  for (Objective objective : {Objective::Cbow, Objective::Mlm}) {
    for (std::uint64_t seed : kSeeds) {
      PretrainConfig config = PretrainConfig::defaults(objective);
      config.max_epochs = objective == Objective::Cbow ? kCbowPretrainEpochs : kMlmPretrainEpochs;
      const auto start = Clock::now();
      PretrainResult result = pretrain(data.splits.train, config, seed);
      const double secs = seconds_since(start);
      (objective == Objective::Cbow ? shared.cbow_seconds : shared.mlm_seconds) += secs;
      progress(fmt("pretrain %s seed %llu: best epoch %zu, val total %.4f -> %.4f, %.1f s",
                   objective_name(objective).c_str(), static_cast<unsigned long long>(seed), result.best_epoch,
                   result.history.front().val_total(), result.history.at(result.best_epoch).val_total(), secs));
      shared.runs.push_back({objective, seed, config, std::move(result), secs});
    }
  }
}

const PretrainRun& find_run(const Shared& shared, Objective objective, std::uint64_t seed) {
  for (const PretrainRun& r : shared.runs) {
    if (r.objective == objective && r.seed == seed) return r;
  }
  throw ContractError("missing pretraining run");
}

Verdict criterion_pretraining(Shared& shared) {
  run_pretraining(shared);
  bool pass = true;
  std::string detail;
  for (Objective objective : {Objective::Cbow, Objective::Mlm}) {
    detail += objective_name(objective) + " improvement";
    for (std::uint64_t seed : kSeeds) {
      const PretrainResult& r = find_run(shared, objective, seed).result;
      const double gain = 1.0 - r.history.at(r.best_epoch).val_total() / r.history.front().val_total();
      pass = pass && gain >= 0.30;
      detail += fmt(" %.1f%%", 100.0 * gain);
    }
    const double secs = objective == Objective::Cbow ? shared.cbow_seconds : shared.mlm_seconds;
    pass = pass && secs < 600.0;
    detail += fmt(" (%.0f s); ", secs);
  }
  detail.resize(detail.size() - 2);
  return {pass, detail};
}

Verdict criterion_downstream(Shared& shared) {
  run_pretraining(shared);
  const PreparedData& data = default_data(shared);
  const auto start = Clock::now();
  std::map<ModelKind, std::vector<double>> auprc_by_model;
  for (std::uint64_t seed : kSeeds) {
    for (ModelKind kind : {ModelKind::Transformer, ModelKind::Ftt, ModelKind::Cbow, ModelKind::Mlm}) {
      DownstreamConfig config;
      config.model = kind;
      config.task = Task::PerStep;
      std::optional<Checkpoint> init;
      if (kind == ModelKind::Cbow || kind == ModelKind::Mlm) {
        const Objective objective = kind == ModelKind::Cbow ? Objective::Cbow : Objective::Mlm;
        const PretrainRun& run = find_run(shared, objective, seed);
        init = pretrain_checkpoint(run.result, run.config, seed);
        config.max_epochs = kind == ModelKind::Cbow ? kCbowFinetuneEpochs : kMlmFinetuneEpochs;
      }
      const auto run_start = Clock::now();
      const FinetuneResult r = finetune(data.splits.train, data.splits.validation, data.splits.test, config,
                                        init ? &*init : nullptr, seed);
      auprc_by_model[kind].push_back(r.test.auprc);
      progress(fmt("finetune %s seed %llu: best epoch %zu, test auprc %.4f auroc %.4f, %.1f s",
                   model_name(kind).c_str(), static_cast<unsigned long long>(seed), r.best_epoch, r.test.auprc,
                   r.test.auroc, seconds_since(run_start)));
    }
  }
  const double elapsed = seconds_since(start);
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  const double baseline = mean(auprc_by_model[ModelKind::Transformer]);
  bool pass = elapsed < 1800.0;
  std::string detail = fmt("mean test AUPRC transformer %.4f", baseline);
  for (ModelKind kind : {ModelKind::Ftt, ModelKind::Cbow, ModelKind::Mlm}) {
    const double m = mean(auprc_by_model[kind]);
    pass = pass && m >= baseline + 0.01;
    detail += fmt(", %s %.4f (%+.4f)", model_name(kind).c_str(), m, m - baseline);
  }
  detail += fmt("; %.0f s", elapsed);
  return {pass, detail};
}

CorrelationReport probe_report(const PretrainRun& run) {
  const std::vector<ProbePoint> points = probe_numerical(run.result.model.tokenizer, run.result.model.schema);
  return correlation_report(points, default_planted_pairs());
}

Verdict criterion_probe(Shared& shared) {
  run_pretraining(shared);
  std::size_t recovered_seeds = 0;
  std::string detail;
  for (std::uint64_t seed : kSeeds) {
    bool any = false;
    detail += fmt("seed %llu:", static_cast<unsigned long long>(seed));
    for (Objective objective : {Objective::Cbow, Objective::Mlm}) {
      const CorrelationReport report = probe_report(find_run(shared, objective, seed));
      bool all = true;
      std::string pairs;
      for (const PlantedResult& p : report.planted) {
        all = all && p.recovered;
        pairs += fmt(" %s/%s=%+.2f#%zu", p.pair.a.c_str(), p.pair.b.c_str(), p.cosine, p.rank);
      }
      progress(fmt("probe %s seed %llu (top quartile = ranks 1..%zu):%s", objective_name(objective).c_str(),
                   static_cast<unsigned long long>(seed), report.top_quartile, pairs.c_str()));
      detail += fmt(" %s %s", objective_name(objective).c_str(), all ? "yes" : "no");
      any = any || all;
    }
    detail += "; ";
    recovered_seeds += any ? 1 : 0;
  }
  detail += fmt("%zu/3 seeds recovered", recovered_seeds);
  return {recovered_seeds >= 2, detail};
}

Verdict criterion_clustering(Shared& shared) {
  run_pretraining(shared);
  bool pass = true;
  std::string detail;
  for (Objective objective : {Objective::Cbow, Objective::Mlm}) {
    std::size_t clustered = 0;
    detail += objective_name(objective) + " mid/all";
    for (std::uint64_t seed : kSeeds) {
      const CorrelationReport report = probe_report(find_run(shared, objective, seed));
      clustered += report.mid_clustered ? 1 : 0;
      detail += fmt(" %.3f/%.3f", report.mid_mean_distance, report.all_mean_distance);
    }
    pass = pass && clustered >= 2;
    detail += fmt(" (%zu/3); ", clustered);
  }
  detail.resize(detail.size() - 2);
  return {pass, detail};
}

// ---- 8. t-SNE ---------------------------------------------------------------

// Entropy of P(.|i) recomputed from the reported precision.
double entropy_from_beta(const Tensor& points, std::size_t i, double beta) {
  const std::size_t n = points.dim(0);
  std::vector<double> d2(n, 0.0);
  double min_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    if (j == i) continue;
    for (std::size_t c = 0; c < points.dim(1); ++c) {
      const double diff = points.at(i, c) - points.at(j, c);
      d2[j] += diff * diff;
    }
    min_d2 = std::min(min_d2, d2[j]);
  }
  double z = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (j != i) z += std::exp(-beta * (d2[j] - min_d2));
  }
  double h = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (j == i) continue;
    const double p = std::exp(-beta * (d2[j] - min_d2)) / z;
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

Verdict criterion_tsne() {
  bool pass = true;
  double worst_entropy = 0.0;
  std::size_t kl_decreased = 0;
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    std::mt19937_64 rng(500 + trial);
    // Probe-sized inputs (54 points) under the default schedule.
    const Tensor points = gaussian({54, 16}, rng);
    TsneConfig config;
    config.seed = trial;
    const TsneResult r = tsne(points, config);
    for (std::size_t i = 0; i < points.dim(0); ++i) {
      const double h = entropy_from_beta(points, i, r.affinities.beta[i]);
      worst_entropy = std::max(worst_entropy, std::abs(h - std::log(config.perplexity)));
    }
    kl_decreased += r.kl.back() < r.kl.front() ? 1 : 0;
  }
  pass = worst_entropy <= 1e-4 && kl_decreased == 10;

  std::mt19937_64 rng(77);
  Tensor blobs({40, 10});
  std::vector<int> labels(40);
  std::normal_distribution<double> noise(0.0, 0.5);
  for (std::size_t i = 0; i < 40; ++i) {
    labels[i] = i < 20 ? 0 : 1;
    for (std::size_t c = 0; c < 10; ++c) blobs.at(i, c) = (labels[i] == 0 ? -3.0 : 3.0) + noise(rng);
  }
  TsneConfig config;
  config.perplexity = 10.0;
  config.seed = 1;
  const double sil = silhouette(tsne(blobs, config).coords, labels);
  pass = pass && sil > 0.5;
  return {pass, fmt("max |H - log(perplexity)| %.2e, KL decreased %zu/10, two-cluster silhouette %.3f",
                    worst_entropy, kl_decreased, sil)};
}

// ---- 9. determinism ---------------------------------------------------------

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "clinembed");
  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != 0) progress("cli " + args[1] + " failed: " + err.str());
  return code;
}

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    std::ifstream in(entry.path(), std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    files[fs::relative(entry.path(), root).string()] = buf.str();
  }
  return files;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("clinembed_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Verdict criterion_determinism() {
  const fs::path root = scratch_dir("determinism");
  const fs::path config = root / "config.json";
  std::ofstream(config) << R"({
    "seeds": [1, 2],
    "generator": {"n_stays": 80, "max_steps": 12},
    "pretrain": {"cbow": {"dim": 8, "max_epochs": 2, "batch": 64},
                 "mlm": {"dim": 8, "depth": 1, "max_epochs": 2, "batch": 64}},
    "finetune": {"dim": 8, "max_epochs": 2, "max_seq": 16},
    "tsne": {"perplexity": 5, "iterations": 100}
  })";

  auto run_all = [&](const fs::path& out) {
    const std::string c = config.string();
    const std::string data = (out / "data").string();
    int bad = 0;
    bad += run_cli({"gen-data", "--config", c, "--out", data}) != 0;
    bad += run_cli({"pretrain", "--config", c, "--data", data, "--objective", "cbow", "--out", (out / "cbow").string()}) != 0;
    bad += run_cli({"pretrain", "--config", c, "--data", data, "--objective", "cbow", "--use-previous", "--out",
                    (out / "cbow_prev").string()}) != 0;
    bad += run_cli({"pretrain", "--config", c, "--data", data, "--objective", "mlm", "--out", (out / "mlm").string()}) != 0;
    bad += run_cli({"finetune", "--config", c, "--data", data, "--model", "transformer", "--out",
                    (out / "ft_transformer").string()}) != 0;
    bad += run_cli({"finetune", "--config", c, "--data", data, "--model", "mlm", "--from",
                    (out / "mlm" / "checkpoint.json").string(), "--task", "stay_level", "--out",
                    (out / "ft_mlm").string()}) != 0;
    bad += run_cli({"probe", "--config", c, "--from", (out / "cbow" / "checkpoint.json").string(), "--out",
                    (out / "probe").string()}) != 0;
    bad += run_cli({"replicate", "--config", c, "--data", data, "--suite", "ablation", "--out",
                    (out / "ablation").string()}) != 0;
    return bad;
  };

  const int failures = run_all(root / "a") + run_all(root / "b");
  const auto a = read_tree(root / "a");
  const auto b = read_tree(root / "b");
  std::size_t differing = 0;
  std::map<std::string, std::size_t> by_type;
  for (const auto& [name, content] : a) {
    const auto it = b.find(name);
    if (it == b.end() || it->second != content) {
      ++differing;
      progress("differs: " + name);
    }
    by_type[fs::path(name).extension().string()]++;
  }
  const bool has_all_kinds = by_type[".json"] > 0 && by_type[".csv"] > 0 && by_type[".svg"] > 0;
  fs::remove_all(root);
  return {failures == 0 && a.size() == b.size() && differing == 0 && has_all_kinds,
          fmt("%zu files per run (%zu json, %zu csv, %zu svg), %zu differ, %d command failures", a.size(),
              by_type[".json"], by_type[".csv"], by_type[".svg"], differing, failures)};
}

// ---- 10. label-fraction harness --------------------------------------------

Verdict criterion_labels() {
  const auto start = Clock::now();
  RunConfig config;
  config.generator.n_stays = 600;
  config.generator.max_steps = 24;
  for (PretrainConfig* p : {&config.cbow, &config.mlm}) {
    p->dim = 16;
    p->depth = 1;
    p->max_epochs = 2;
  }
  config.finetune.dim = 16;
  config.finetune.max_epochs = 2;
  config.finetune.max_seq = 24;
  const PreparedData data = prepare(generate_synthetic(config.generator), config.split_seed);
  const fs::path out = scratch_dir("labels");
  const SuiteResult r = run_suite(Suite::Labels, config, data, out, threads_from_env());

  std::set<std::tuple<std::string, double, std::uint64_t>> cells;
  for (const MetricsRow& row : r.rows) cells.insert({row.model, row.label_fraction, row.seed});
  bool pass = r.rows.size() == 48 && cells.size() == 48 && r.summary.size() == 16;

  // Header, rule, then 4 fractions x 4 models with the fraction shown once.
  std::vector<std::string> lines;
  std::istringstream table(r.table);
  for (std::string line; std::getline(table, line);) lines.push_back(line);
  pass = pass && lines.size() == 18 && lines[0] == "| Labels | Models | AUPRC | AUROC |" &&
         lines[1] == "|---|---|---|---|";
  const std::regex row_re(R"(\| (100%|50%|10%|1%)? \| (Transformer|FTT|CBOW|MLM) \| \d+\.\d±\d+\.\d \| \d+\.\d±\d+\.\d \|)");
  const char* fractions[] = {"100%", "50%", "10%", "1%"};
  const char* models[] = {"Transformer", "FTT", "CBOW", "MLM"};
  for (std::size_t i = 2; pass && i < lines.size(); ++i) {
    std::smatch m;
    const std::size_t k = i - 2;
    pass = std::regex_match(lines[i], m, row_re) &&
           m[1].str() == (k % 4 == 0 ? std::string(fractions[k / 4]) : std::string()) && m[2].str() == models[k % 4];
    if (!pass) progress("unexpected table row: " + lines[i]);
  }
  std::ifstream written(out / "table.md");
  std::stringstream buf;
  buf << written.rdbuf();
  pass = pass && buf.str() == r.table;
  std::cout << r.table;
  fs::remove_all(out);
  return {pass, fmt("%zu runs, %zu summary rows, %zu table lines, %.0f s", r.rows.size(), r.summary.size(),
                    lines.size(), seconds_since(start))};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  Shared shared;
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"gradient suite", criterion_gradients},
      {"corruption statistics", criterion_corruption},
      {"metric oracles", criterion_metrics},
      {"pretraining efficacy", [&] { return criterion_pretraining(shared); }},
      {"downstream direction", [&] { return criterion_downstream(shared); }},
      {"probe recovery", [&] { return criterion_probe(shared); }},
      {"mid-level clustering", [&] { return criterion_clustering(shared); }},
      {"t-SNE correctness", criterion_tsne},
      {"determinism", criterion_determinism},
      {"label-fraction harness", criterion_labels},
  };
  std::vector<std::string> lines;
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.count(number)) continue;
    std::cerr << "criterion " << number << ": " << criteria[i].first << std::endl;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    all = all && v.pass;
    lines.push_back(fmt("%s criterion %2d %-24s %s", v.pass ? "PASS" : "FAIL", number, criteria[i].first.c_str(),
                        v.detail.c_str()));
    std::cout << lines.back() << std::endl;
  }
  std::cout << "\nsummary\n";
  for (const std::string& line : lines) std::cout << line << '\n';
  return all ? 0 : 1;
}
