#include "cli.hpp"

#include <CLI11.hpp>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "clinembed/checkpoint.hpp"
#include "clinembed/config.hpp"
#include "clinembed/dataset.hpp"
#include "clinembed/downstream.hpp"
#include "clinembed/error.hpp"
#include "clinembed/experiment.hpp"
#include "clinembed/pretraining.hpp"
#include "clinembed/probe.hpp"
#include "clinembed/synthetic.hpp"
#include "clinembed/tsne.hpp"

namespace clinembed::cli {
namespace {

namespace fs = std::filesystem;

struct Options {
  std::string config_path;
  std::string data_dir;
  std::string out_dir;
  std::vector<std::uint64_t> seeds;
  std::optional<std::size_t> max_epochs;

  // gen-data
  std::string spec_path;
  // pretrain
  std::string objective = "cbow";
  bool use_previous = false;
  // finetune
  std::string model = "ftt";
  std::string task = "per_step";
  std::optional<double> label_fraction;
  std::string from;
  // probe
  std::string planted_path;
  // replicate
  std::string suite = "core";
};

RunConfig load_config(const Options& o) {
  RunConfig config = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
  if (!o.seeds.empty()) config.seeds = o.seeds;
  if (o.max_epochs) {
    config.cbow.max_epochs = *o.max_epochs;
    config.mlm.max_epochs = *o.max_epochs;
    config.finetune.max_epochs = *o.max_epochs;
  }
  config.validate();
  return config;
}

std::uint64_t single_seed(const Options& o, std::uint64_t fallback) {
  if (o.seeds.size() > 1) throw ConfigError("this command takes a single --seed");
  return o.seeds.empty() ? fallback : o.seeds.front();
}

// Reads <dir>/schema.json and <dir>/data.csv, then splits and normalizes.
PreparedData load_data_dir(const std::string& dir, const RunConfig& config) {
  if (dir.empty()) throw ConfigError("--data is required");
  const fs::path root(dir);
  for (const char* name : {"schema.json", "data.csv"}) {
    if (!fs::is_regular_file(root / name)) {
      throw ConfigError("data directory " + dir + " has no " + name);
    }
  }
  const FeatureSchema schema = FeatureSchema::from_json(read_json_file(root / "schema.json"));
  return prepare(load_csv(root / "data.csv", schema), config.split_seed);
}

fs::path out_dir(const Options& o) {
  if (o.out_dir.empty()) throw ConfigError("--out is required");
  fs::create_directories(o.out_dir);
  return fs::path(o.out_dir);
}

Checkpoint load_from(const std::string& path) {
  if (!fs::is_regular_file(path)) throw ConfigError("checkpoint not found: " + path);
  return load_checkpoint(path);
}

std::string shortest(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

int cmd_gen_data(const Options& o, std::ostream& out) {
  RunConfig config = load_config(o);
  GeneratorSpec spec = o.spec_path.empty() ? config.generator : [&] {
    if (!fs::is_regular_file(o.spec_path)) throw ConfigError("spec file not found: " + o.spec_path);
    return GeneratorSpec::from_json(read_json_file(o.spec_path));
  }();
  if (!o.seeds.empty()) spec.seed = single_seed(o, spec.seed);
  spec.validate();
  const fs::path dir = out_dir(o);
  const Dataset data = generate_synthetic(spec);
  write_csv(data, dir / "data.csv");
  write_json_file(data.schema.to_json(), dir / "schema.json");
  write_json_file(spec.to_json(), dir / "generator.json");
  nlohmann::json manifest = dataset_manifest(data, config.split_seed);
  manifest["generator_seed"] = spec.seed;
  manifest["target_prevalence"] = spec.prevalence;
  write_json_file(manifest, dir / "manifest.json");
  out << "wrote " << data.stays.size() << " stays, " << manifest["n_features"].get<std::size_t>()
      << " features to " << dir.string() << '\n';
  return 0;
}

int cmd_pretrain(const Options& o, std::ostream& out, std::ostream& err) {
  RunConfig config = load_config(o);
  const Objective objective = parse_objective(o.objective);
  PretrainConfig pc = config.pretrain(objective);
  if (o.use_previous) {
    if (objective != Objective::Cbow) throw ConfigError("--use-previous applies to cbow only");
    pc.use_previous = true;
  }
  pc.validate();
  const std::uint64_t seed = single_seed(o, config.seeds.front());
  const PreparedData data = load_data_dir(o.data_dir, config);
  const fs::path dir = out_dir(o);
  err << "pretraining " << o.objective << " on " << data.splits.train.stays.size()
      << " training stays\n";
  const PretrainResult result = pretrain(data.splits.train, pc, seed);
  save_checkpoint(pretrain_checkpoint(result, pc, seed), dir / "checkpoint.json");
  write_loss_csv(result.history, dir / "loss.csv");
  const LossRecord& best = result.history[result.best_epoch];
  out << "best epoch " << result.best_epoch << " val loss " << shortest(best.val_total())
      << " (epoch 0: " << shortest(result.history.front().val_total()) << ")\n";
  return 0;
}

int cmd_finetune(const Options& o, std::ostream& out, std::ostream& err) {
  RunConfig config = load_config(o);
  DownstreamConfig dc = config.finetune;
  dc.model = parse_model(o.model);
  dc.task = parse_task(o.task);
  if (o.label_fraction) dc.label_fraction = *o.label_fraction;
  dc.validate();
  if (dc.needs_checkpoint() && o.from.empty()) {
    throw ConfigError("--model " + o.model + " requires a pretrained checkpoint (--from)");
  }
  if (dc.model == ModelKind::Transformer && !o.from.empty()) {
    throw ConfigError("--model transformer does not take a pretrained checkpoint");
  }
  std::optional<Checkpoint> pretrained;
  if (!o.from.empty()) pretrained = load_from(o.from);
  const PreparedData data = load_data_dir(o.data_dir, config);
  const fs::path dir = out_dir(o);
  const std::vector<std::uint64_t> seeds = o.seeds.empty() ? config.seeds : o.seeds;

  std::vector<MetricsRow> rows;
  for (std::uint64_t seed : seeds) {
    err << "fine-tuning " << o.model << " (" << o.task << ", seed " << seed << ")\n";
    const FinetuneResult r = finetune(data.splits.train, data.splits.validation, data.splits.test,
                                      dc, pretrained ? &*pretrained : nullptr, seed);
    save_checkpoint(downstream_checkpoint(r, seed), dir / ("model_seed" + std::to_string(seed) + ".json"));
    std::string history = "epoch,train_loss,val_auprc,val_auroc\n";
    for (const EpochRecord& e : r.history) {
      history += std::to_string(e.epoch) + ',' + shortest(e.train_loss) + ',' +
                 shortest(e.val_auprc) + ',' + shortest(e.val_auroc) + '\n';
    }
    write_text(dir / ("history_seed" + std::to_string(seed) + ".csv"), history);
    rows.push_back({model_name(dc.model), task_name(dc.task), dc.label_fraction, seed,
                    r.test.auprc, r.test.auroc});
    out << "seed " << seed << ": test auprc " << shortest(r.test.auprc) << " auroc "
        << shortest(r.test.auroc) << '\n';
  }
  write_metrics_csv(rows, dir / "metrics.csv");
  const std::vector<SummaryRow> summary = summarize(rows);
  write_summary_csv(summary, dir / "summary.csv");
  out << "auprc " << format_summary(summary.front().auprc) << " auroc "
      << format_summary(summary.front().auroc) << " (percent, " << rows.size() << " runs)\n";
  return 0;
}

int cmd_probe(const Options& o, std::ostream& out, std::ostream& err) {
  RunConfig config = load_config(o);
  if (o.from.empty()) throw ConfigError("--from is required");
  const Checkpoint ckpt = load_from(o.from);
  if (ckpt.parameters.find("tokenizer.mask") == ckpt.parameters.end()) {
    throw ConfigError("checkpoint " + o.from + " has no feature tokenizer");
  }
  std::vector<PlantedPair> planted = config.planted;
  if (!o.planted_path.empty()) {
    if (!fs::is_regular_file(o.planted_path)) {
      throw ConfigError("planted pairs file not found: " + o.planted_path);
    }
    planted = planted_pairs_from_json(read_json_file(o.planted_path));
  }
  TsneConfig tc = config.tsne;
  tc.seed = single_seed(o, tc.seed);
  tc.validate();
  const fs::path dir = out_dir(o);

  const TokenizerParams tokenizer = TokenizerParams::from_named(ckpt.parameters, ckpt.schema);
  std::vector<ProbePoint> points = probe_numerical(tokenizer, ckpt.schema);
  const CorrelationReport report = correlation_report(points, planted);
  const std::vector<ProbePoint> categorical = probe_categorical(tokenizer, ckpt.schema);
  points.insert(points.end(), categorical.begin(), categorical.end());
  const TsneResult embedding = tsne(probe_matrix(points), tc);
  for (const std::string& w : embedding.warnings) err << "warning: " << w << '\n';
  emit_scatter(points, embedding.coords, dir / "probe.csv", dir / "probe.svg");

  nlohmann::json j = report.to_json();
  j["checkpoint_kind"] = ckpt.model_kind;
  j["tsne"] = {{"config", tsne_config_to_json(tc)},
               {"initial_kl", embedding.kl.front()},
               {"final_kl", embedding.kl.back()},
               {"warnings", embedding.warnings}};
  write_json_file(j, dir / "report.json");
  std::size_t recovered = 0;
  for (const PlantedResult& p : report.planted) recovered += p.recovered ? 1 : 0;
  out << "planted pairs recovered " << recovered << '/' << report.planted.size()
      << ", mid-level clustered " << (report.mid_clustered ? "yes" : "no") << '\n';
  return 0;
}

int cmd_replicate(const Options& o, std::ostream& out, std::ostream& err) {
  RunConfig config = load_config(o);
  const Suite suite = parse_suite(o.suite);
  if (!o.seeds.empty()) config.seeds = o.seeds;
  const std::size_t threads = threads_from_env();
  const PreparedData data = load_data_dir(o.data_dir, config);
  const fs::path dir = out_dir(o);
  const SuitePlan plan = plan_suite(suite, config.seeds);
  err << "suite " << o.suite << ": " << plan.pretrain.size() << " pretraining runs, "
      << plan.cells.size() << " fine-tuning runs, " << threads << " worker(s)\n";
  const SuiteResult result = run_suite(suite, config, data, dir, threads, &err);
  out << result.table;
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Clinical feature embeddings: synthetic data, pretraining, fine-tuning, probing"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "Run configuration JSON");
    sub->add_option("--out", o.out_dir, "Output directory")->required();
  };
  auto add_data = [&](CLI::App* sub) {
    sub->add_option("--data", o.data_dir, "Directory written by gen-data")->required();
  };
  auto add_epochs = [&](CLI::App* sub) {
    sub->add_option("--max-epochs", o.max_epochs, "Cap on training epochs")
        ->check(CLI::PositiveNumber);
  };

  CLI::App* gen = app.add_subcommand("gen-data", "Generate a synthetic clinical dataset");
  add_common(gen);
  gen->add_option("--spec", o.spec_path, "Generator spec JSON");
  gen->add_option("--seed", o.seeds, "Generator seed");

  CLI::App* pre = app.add_subcommand("pretrain", "Pretrain feature embeddings (CBOW or MLM)");
  add_common(pre);
  add_data(pre);
  add_epochs(pre);
  pre->add_option("--objective", o.objective, "cbow or mlm");
  pre->add_flag("--use-previous", o.use_previous, "CBOW: add the previous step's embeddings");
  pre->add_option("--seed", o.seeds, "Run seed");

  CLI::App* fin = app.add_subcommand("finetune", "Fine-tune a downstream model");
  add_common(fin);
  add_data(fin);
  add_epochs(fin);
  fin->add_option("--model", o.model, "transformer, ftt, cbow or mlm");
  fin->add_option("--task", o.task, "per_step or stay_level");
  fin->add_option("--label-fraction", o.label_fraction, "Fraction of training stays with labels");
  fin->add_option("--from", o.from, "Pretrained checkpoint");
  fin->add_option("--seed", o.seeds, "Run seed (repeatable)");

  CLI::App* probe = app.add_subcommand("probe", "Probe a feature tokenizer with artificial values");
  add_common(probe);
  probe->add_option("--from", o.from, "Checkpoint holding a feature tokenizer")->required();
  probe->add_option("--planted", o.planted_path, "Planted pairs JSON");
  probe->add_option("--seed", o.seeds, "t-SNE seed");

  CLI::App* rep = app.add_subcommand("replicate", "Run an experiment suite");
  add_common(rep);
  add_data(rep);
  add_epochs(rep);
  rep->add_option("--suite", o.suite, "core, labels or ablation");
  rep->add_option("--seed", o.seeds, "Seeds (repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_gen_data(o, out);
    if (*pre) return cmd_pretrain(o, out, err);
    if (*fin) return cmd_finetune(o, out, err);
    if (*probe) return cmd_probe(o, out, err);
    if (*rep) return cmd_replicate(o, out, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const SchemaError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace clinembed::cli
