#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "tak/errors.hpp"
#include "tak/metrics.hpp"
#include "tak/taskvec.hpp"
#include "tak_bench/config.hpp"

namespace tak::bench {

/// A pipeline stage failed; what() names the stage.
class StageError : public Error {
 public:
  StageError(const std::string& stage, const std::string& what)
      : Error("stage '" + stage + "' failed: " + what), stage_(stage) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

struct RunOptions {
  bool serial = false;
  std::size_t workers = 0;  // 0: TAK_WORKERS, else hardware concurrency
  std::string command;      // recorded in the manifest
};

/// Worker count honoring --serial, an explicit count, then TAK_WORKERS.
std::size_t resolve_workers(const RunOptions& opts);

struct NegationRow {
  std::string task_id;
  double alpha = 0.0;
  double target = 0.0;
  double target_pretrained = 0.0;
  double control = 0.0;
  bool feasible = false;
};

struct NegationReport {
  std::size_t control_task = 0;
  double control_pretrained = 0.0;
  double keep_fraction = 0.95;
  std::vector<NegationRow> rows;

  double mean_target() const;
  std::string to_csv() const;
};

/// For every task but the control, the most negative grid α whose control
/// accuracy stays ≥ keep·pretrained; infeasible targets report α = 0.
NegationReport negate(const ModelFamily& family, const std::vector<TaskVector>& vectors, const EvalSuite& suite,
                      const std::vector<double>& grid, double keep_fraction = 0.95);

struct TaskSummary {
  std::string task_id;
  double pretrained = 0.0;
  double individual = 0.0;
  double merged_fixed = 0.0;
  double tau_norm = 0.0;
  double drift = 0.0;
  std::optional<double> auc;
};

struct AdditionSummary {
  double alpha = 1.0;
  double absolute = 0.0;    // percent
  double normalized = 0.0;  // percent
  std::vector<double> per_task;
};

struct PipelineSummary {
  std::string config_hash;
  std::vector<TaskSummary> tasks;
  std::optional<AdditionSummary> fixed;
  std::optional<AdditionSummary> best;
  std::vector<SweepRow> sweep;  // metric in percent
  std::optional<double> sweep_spread;
  std::optional<NegationReport> negation;
  std::optional<double> mean_xi;
  std::optional<double> mean_auc;
  std::size_t curvature_bytes = 0;
  std::string results_json;
};

/// Runs every stage of `cfg` and writes results.json, manifest.json, CSVs and
/// artifacts below `out_dir`. Throws StageError naming the failing stage.
PipelineSummary run_pipeline(const BenchConfig& cfg, const std::string& out_dir, const RunOptions& opts = {});

/// Per-layer shapes, spectra and storage of curvature files, plus the merge
/// bound when more than one file is given.
std::string inspect_curvature(const std::vector<std::string>& paths);

}  // namespace tak::bench
