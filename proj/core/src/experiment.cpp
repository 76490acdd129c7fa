#include "clinembed/experiment.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

#include "clinembed/checkpoint.hpp"
#include "clinembed/error.hpp"

namespace clinembed {
namespace {

constexpr ModelKind kModels[] = {ModelKind::Transformer, ModelKind::Ftt, ModelKind::Cbow,
                                 ModelKind::Mlm};
constexpr double kLabelFractions[] = {1.0, 0.5, 0.1, 0.01};

std::string shortest(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string display_name(const std::string& model) {
  if (model == "transformer") return "Transformer";
  if (model == "ftt") return "FTT";
  if (model == "cbow") return "CBOW";
  if (model == "mlm") return "MLM";
  return model;
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

const SummaryRow* find_row(const std::vector<SummaryRow>& rows, const std::string& model,
                           const std::string& task, double fraction) {
  for (const SummaryRow& r : rows) {
    if (r.model == model && r.task == task && r.label_fraction == fraction) return &r;
  }
  return nullptr;
}

std::string cell(const SummaryRow* row, bool auprc) {
  if (row == nullptr) return "-";
  return format_summary(auprc ? row->auprc : row->auroc);
}

}  // namespace

std::string suite_name(Suite suite) {
  switch (suite) {
    case Suite::Core: return "core";
    case Suite::Labels: return "labels";
    case Suite::Ablation: return "ablation";
  }
  return "";
}

Suite parse_suite(const std::string& name) {
  if (name == "core") return Suite::Core;
  if (name == "labels") return Suite::Labels;
  if (name == "ablation") return Suite::Ablation;
  throw ConfigError("unknown suite '" + name + "' (expected core, labels or ablation)");
}

void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << "model,task,label_fraction,seed,auprc,auroc\n";
  for (const MetricsRow& r : rows) {
    out << r.model << ',' << r.task << ',' << shortest(r.label_fraction) << ',' << r.seed << ','
        << shortest(r.auprc) << ',' << shortest(r.auroc) << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<SummaryRow> summarize(const std::vector<MetricsRow>& rows) {
  std::vector<SummaryRow> out;
  std::vector<std::vector<double>> auprc, auroc;
  for (const MetricsRow& r : rows) {
    std::size_t i = 0;
    while (i < out.size() && !(out[i].model == r.model && out[i].task == r.task &&
                               out[i].label_fraction == r.label_fraction)) {
      ++i;
    }
    if (i == out.size()) {
      out.push_back({r.model, r.task, r.label_fraction, 0, {}, {}});
      auprc.emplace_back();
      auroc.emplace_back();
    }
    auprc[i].push_back(to_percent(r.auprc));
    auroc[i].push_back(to_percent(r.auroc));
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].runs = auprc[i].size();
    if (out[i].runs == 1) {
      out[i].auprc = {auprc[i][0], 0.0};
      out[i].auroc = {auroc[i][0], 0.0};
    } else {
      out[i].auprc = aggregate_runs(auprc[i]);
      out[i].auroc = aggregate_runs(auroc[i]);
    }
  }
  return out;
}

void write_summary_csv(const std::vector<SummaryRow>& rows, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << "model,task,label_fraction,runs,auprc,auroc\n";
  for (const SummaryRow& r : rows) {
    out << r.model << ',' << r.task << ',' << shortest(r.label_fraction) << ',' << r.runs << ','
        << format_summary(r.auprc) << ',' << format_summary(r.auroc) << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::string PretrainJob::key() const {
  return objective_name(objective) + (use_previous ? "_previous" : "") + "_seed" +
         std::to_string(seed);
}

std::string FinetuneCell::label() const {
  return model_name(model) + (use_previous ? "_previous" : "");
}

PretrainJob FinetuneCell::source() const {
  return {model == ModelKind::Mlm ? Objective::Mlm : Objective::Cbow, use_previous, seed};
}

SuitePlan plan_suite(Suite suite, const std::vector<std::uint64_t>& seeds) {
  SuitePlan plan;
  for (std::uint64_t seed : seeds) {
    if (suite == Suite::Ablation) {
      plan.pretrain.push_back({Objective::Cbow, false, seed});
      plan.pretrain.push_back({Objective::Cbow, true, seed});
    } else {
      plan.pretrain.push_back({Objective::Cbow, false, seed});
      plan.pretrain.push_back({Objective::Mlm, false, seed});
    }
  }
  switch (suite) {
    case Suite::Core:
      for (Task task : {Task::PerStep, Task::StayLevel}) {
        for (ModelKind model : kModels) {
          for (std::uint64_t seed : seeds) plan.cells.push_back({model, task, 1.0, seed, false});
        }
      }
      break;
    case Suite::Labels:
      for (double fraction : kLabelFractions) {
        for (ModelKind model : kModels) {
          for (std::uint64_t seed : seeds) {
            plan.cells.push_back({model, Task::PerStep, fraction, seed, false});
          }
        }
      }
      break;
    case Suite::Ablation:
      for (bool previous : {false, true}) {
        for (std::uint64_t seed : seeds) {
          plan.cells.push_back({ModelKind::Cbow, Task::PerStep, 1.0, seed, previous});
        }
      }
      break;
  }
  return plan;
}

std::size_t threads_from_env() {
  const char* raw = std::getenv("CLINEMBED_THREADS");
  if (raw == nullptr || *raw == '\0') return 1;
  const std::string text(raw);
  std::size_t value = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size() || value == 0) {
    throw ConfigError("CLINEMBED_THREADS must be a positive integer, got '" + text + "'");
  }
  return value;
}

void run_parallel(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::mutex mu;
    std::size_t next = 0;
    auto worker = [&] {
      for (;;) {
        std::size_t i;
        {
          std::lock_guard<std::mutex> lock(mu);
          if (next == n) return;
          i = next++;
        }
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(threads, n); ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

SuiteResult run_suite(Suite suite, const RunConfig& config, const PreparedData& data,
                      const std::filesystem::path& out_dir, std::size_t threads, std::ostream* log) {
  config.validate();
  const SuitePlan plan = plan_suite(suite, config.seeds);
  std::mutex log_mu;
  auto note = [&](const std::string& line) {
    if (log == nullptr) return;
    std::lock_guard<std::mutex> lock(log_mu);
    *log << line << std::endl;
  };

  std::filesystem::create_directories(out_dir / "checkpoints");
  std::filesystem::create_directories(out_dir / "losses");
  std::vector<std::optional<Checkpoint>> checkpoints(plan.pretrain.size());
  run_parallel(plan.pretrain.size(), threads, [&](std::size_t i) {
    const PretrainJob& job = plan.pretrain[i];
    PretrainConfig pc = config.pretrain(job.objective);
    pc.use_previous = job.use_previous;
    const PretrainResult result = pretrain(data.splits.train, pc, job.seed);
    Checkpoint ckpt = pretrain_checkpoint(result, pc, job.seed);
    save_checkpoint(ckpt, out_dir / "checkpoints" / (job.key() + ".json"));
    write_loss_csv(result.history, out_dir / "losses" / (job.key() + ".csv"));
    note("pretrain " + job.key() + ": best epoch " + std::to_string(result.best_epoch) + " of " +
         std::to_string(result.history.size() - 1));
    checkpoints[i] = std::move(ckpt);
  });

  auto checkpoint_for = [&](const PretrainJob& job) -> const Checkpoint& {
    for (std::size_t i = 0; i < plan.pretrain.size(); ++i) {
      const PretrainJob& p = plan.pretrain[i];
      if (p.objective == job.objective && p.use_previous == job.use_previous && p.seed == job.seed) {
        return *checkpoints[i];
      }
    }
    throw ContractError("no pretraining job for " + job.key());
  };

  SuiteResult result;
  result.rows.resize(plan.cells.size());
  run_parallel(plan.cells.size(), threads, [&](std::size_t i) {
    const FinetuneCell& c = plan.cells[i];
    DownstreamConfig dc = config.finetune;
    dc.model = c.model;
    dc.task = c.task;
    dc.label_fraction = c.label_fraction;
    const Checkpoint* pretrained = dc.needs_checkpoint() ? &checkpoint_for(c.source()) : nullptr;
    const FinetuneResult r = finetune(data.splits.train, data.splits.validation, data.splits.test,
                                      dc, pretrained, c.seed);
    result.rows[i] = {c.label(), task_name(c.task), c.label_fraction, c.seed, r.test.auprc,
                      r.test.auroc};
    note("finetune " + c.label() + " " + task_name(c.task) + " fraction " +
         shortest(c.label_fraction) + " seed " + std::to_string(c.seed) + ": test auprc " +
         shortest(r.test.auprc) + " auroc " + shortest(r.test.auroc));
  });

  result.summary = summarize(result.rows);
  result.table = format_table(suite, result.summary);
  write_metrics_csv(result.rows, out_dir / "metrics.csv");
  write_summary_csv(result.summary, out_dir / "summary.csv");
  std::ofstream table = open_out(out_dir / "table.md");
  table << result.table;
  if (!table) throw IoError("failed writing " + (out_dir / "table.md").string());
  return result;
}

std::string format_table(Suite suite, const std::vector<SummaryRow>& summary) {
  std::ostringstream out;
  const std::string per_step = task_name(Task::PerStep);
  const std::string stay = task_name(Task::StayLevel);
  switch (suite) {
    case Suite::Core:
      out << "| Model | Decompensation AUPRC | Decompensation AUROC | Mortality AUPRC | "
             "Mortality AUROC |\n";
      out << "|---|---|---|---|---|\n";
      for (ModelKind m : kModels) {
        const std::string name = model_name(m);
        const SummaryRow* a = find_row(summary, name, per_step, 1.0);
        const SummaryRow* b = find_row(summary, name, stay, 1.0);
        out << "| " << display_name(name) << " | " << cell(a, true) << " | " << cell(a, false)
            << " | " << cell(b, true) << " | " << cell(b, false) << " |\n";
      }
      break;
    case Suite::Labels:
      out << "| Labels | Models | AUPRC | AUROC |\n";
      out << "|---|---|---|---|\n";
      for (double fraction : kLabelFractions) {
        bool first = true;
        for (ModelKind m : kModels) {
          const std::string name = model_name(m);
          const SummaryRow* r = find_row(summary, name, per_step, fraction);
          char percent[16];
          std::snprintf(percent, sizeof percent, "%g%%", 100.0 * fraction);
          out << "| " << (first ? std::string(percent) : "") << " | "
              << display_name(name) << " | " << cell(r, true) << " | " << cell(r, false) << " |\n";
          first = false;
        }
      }
      break;
    case Suite::Ablation:
      out << "| Use_previous | AUPRC | AUROC |\n";
      out << "|---|---|---|\n";
      for (bool previous : {false, true}) {
        const SummaryRow* r = find_row(summary, previous ? "cbow_previous" : "cbow", per_step, 1.0);
        out << "| " << (previous ? "True" : "False") << " | " << cell(r, true) << " | "
            << cell(r, false) << " |\n";
      }
      break;
  }
  return out.str();
}

}  // namespace clinembed
