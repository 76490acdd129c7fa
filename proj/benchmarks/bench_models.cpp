#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "clinembed/dataset.hpp"
#include "clinembed/encoder.hpp"
#include "clinembed/pretraining.hpp"
#include "clinembed/synthetic.hpp"

namespace {

using namespace clinembed;

const PreparedData& prepared() {
  static const PreparedData data = [] {
    GeneratorSpec spec = GeneratorSpec::clinical_default();
    spec.n_stays = 100;
    return prepare(generate_synthetic(spec), 7);
  }();
  return data;
}

// Encoder over [B x 13 x 128], the per-step feature-axis shape used by MLM.
void BM_EncoderForwardBackward(benchmark::State& state) {
  EncoderConfig config;
  config.depth = 2;
  config.heads = 4;
  EncoderParams params = init_encoder(config, 1);
  const auto batch = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(2);
  std::normal_distribution<double> dist;
  Tensor x({batch, 13, config.dim});
  for (double& v : x.values()) v = dist(rng);
  for (auto _ : state) {
    Tape tape;
    ParamBinder binder(tape);
    const EncoderVars vars = bind_encoder(binder, params, "enc");
    const Var y = encode(tape.constant(x), vars, config, false);
    benchmark::DoNotOptimize(backward(tape, sum_all(y)));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EncoderForwardBackward)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

StepBatch make_batch(std::size_t size, std::mt19937_64& rng) {
  const PreparedData& data = prepared();
  const std::size_t d = data.schema.size();
  const auto& stays = data.splits.train.stays;
  StepBatch batch;
  batch.size = size;
  for (std::size_t i = 0; i < size; ++i) {
    const StayRecord& stay = stays[i % stays.size()];
    const std::size_t t = i % stay.steps;
    const auto row = stay.step(t, d);
    const auto prev = stay.step(t == 0 ? 0 : t - 1, d);
    batch.rows.insert(batch.rows.end(), row.begin(), row.end());
    batch.previous.insert(batch.previous.end(), prev.begin(), prev.end());
    batch.first.push_back(t == 0 ? 1 : 0);
    batch.picks.push_back(pick_targets(rng, data.schema));
  }
  return batch;
}

void BM_CbowStep(benchmark::State& state) {
  const PreparedData& data = prepared();
  const PretrainConfig config = PretrainConfig::defaults(Objective::Cbow);
  PretrainModel model = init_pretrain_model(data.schema, config, 1);
  std::mt19937_64 rng(3);
  const StepBatch batch = make_batch(static_cast<std::size_t>(state.range(0)), rng);
  for (auto _ : state) {
    Tape tape;
    ParamBinder binder(tape);
    const PretrainVars vars = bind_pretrain(binder, model);
    const LossVars loss = cbow_loss(vars, data.schema, batch, state.range(1) != 0);
    benchmark::DoNotOptimize(backward(tape, add(loss.num, loss.cat)));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_CbowStep)->Args({512, 0})->Args({512, 1})->Unit(benchmark::kMillisecond);

void BM_MlmStep(benchmark::State& state) {
  const PreparedData& data = prepared();
  const PretrainConfig config = PretrainConfig::defaults(Objective::Mlm);
  PretrainModel model = init_pretrain_model(data.schema, config, 1);
  std::mt19937_64 rng(4);
  const auto size = static_cast<std::size_t>(state.range(0));
  const StepBatch batch = make_batch(size, rng);
  std::vector<CorruptionDraw> draws;
  for (std::size_t i = 0; i < size; ++i) draws.push_back(draw_corruption(rng, model.encoder_config.dim));
  for (auto _ : state) {
    Tape tape;
    ParamBinder binder(tape);
    const PretrainVars vars = bind_pretrain(binder, model);
    const LossVars loss = mlm_loss(vars, data.schema, model.encoder_config, batch, draws);
    benchmark::DoNotOptimize(backward(tape, add(loss.num, loss.cat)));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MlmStep)->Arg(64)->Arg(512)->Unit(benchmark::kMillisecond);

}  // namespace
