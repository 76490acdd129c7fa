#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "clinembed/config.hpp"
#include "clinembed/dataset.hpp"
#include "clinembed/metrics.hpp"

namespace clinembed {

enum class Suite { Core, Labels, Ablation };

std::string suite_name(Suite suite);
Suite parse_suite(const std::string& name);  // ConfigError on unknown names

/// One row of a metrics CSV.
struct MetricsRow {
  std::string model;
  std::string task;
  double label_fraction = 1.0;
  std::uint64_t seed = 0;
  double auprc = 0.0;
  double auroc = 0.0;
};

/// `model,task,label_fraction,seed,auprc,auroc`, metrics as fractions.
void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::filesystem::path& path);

/// Rows sharing (model, task, label_fraction), in first-seen order.
struct SummaryRow {
  std::string model;
  std::string task;
  double label_fraction = 1.0;
  std::size_t runs = 0;
  RunSummary auprc;  // percent
  RunSummary auroc;  // percent
};

std::vector<SummaryRow> summarize(const std::vector<MetricsRow>& rows);

/// `model,task,label_fraction,runs,auprc,auroc` with mean±std percentages.
void write_summary_csv(const std::vector<SummaryRow>& rows, const std::filesystem::path& path);

struct PretrainJob {
  Objective objective = Objective::Cbow;
  bool use_previous = false;
  std::uint64_t seed = 0;

  /// File stem, e.g. "cbow_seed1" or "cbow_previous_seed2".
  std::string key() const;
};

struct FinetuneCell {
  ModelKind model = ModelKind::Ftt;
  Task task = Task::PerStep;
  double label_fraction = 1.0;
  std::uint64_t seed = 0;
  bool use_previous = false;  // which CBOW checkpoint to start from

  /// Model column of the metrics CSV ("cbow_previous" for the ablation arm).
  std::string label() const;
  /// Pretraining job this cell starts from; only meaningful for cbow/mlm.
  PretrainJob source() const;
};

/// The runs a suite consists of:
///   core     4 models x {per_step, stay_level} x seeds
///   labels   4 models x {1.0, 0.5, 0.1, 0.01} x seeds (per-step)
///   ablation CBOW with use_previous in {false, true} x seeds (per-step)
/// plus the pretraining jobs those runs start from.
struct SuitePlan {
  std::vector<PretrainJob> pretrain;
  std::vector<FinetuneCell> cells;
};

SuitePlan plan_suite(Suite suite, const std::vector<std::uint64_t>& seeds);

/// CLINEMBED_THREADS, or 1 when unset. ConfigError unless a positive integer.
std::size_t threads_from_env();

/// Calls fn(0..n-1) on up to `threads` workers. Rethrows the exception of
/// the lowest failing index after all workers stop.
void run_parallel(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

struct SuiteResult {
  std::vector<MetricsRow> rows;  // plan order
  std::vector<SummaryRow> summary;
  std::string table;             // markdown
};

/// Runs a suite on prepared data. Writes under `out_dir`:
/// checkpoints/<job>.json, losses/<job>.csv, metrics.csv, summary.csv,
/// table.md. Independent runs execute on `threads` workers; outputs do not
/// depend on the worker count. Progress lines go to `log` when given.
SuiteResult run_suite(Suite suite, const RunConfig& config, const PreparedData& data,
                      const std::filesystem::path& out_dir, std::size_t threads,
                      std::ostream* log = nullptr);

/// Markdown table in the layout used for each suite: models by task for
/// core, label fraction then model for labels, use_previous for ablation.
std::string format_table(Suite suite, const std::vector<SummaryRow>& summary);

}  // namespace clinembed
