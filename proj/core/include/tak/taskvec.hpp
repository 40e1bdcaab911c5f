#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tak/network.hpp"

namespace tak {

struct TaskVector {
  ParamVector delta;  // θ* − θ0
  std::string task_id;
  double default_alpha = 1.0;
  std::uint64_t anchor_hash = 0;  // hash_params(θ0); 0 means unknown
};

std::uint64_t hash_params(const ParamVector& p);

TaskVector make_task_vector(const ParamVector& theta0, const ParamVector& theta_star, const std::string& task_id);

struct ComposeOptions {
  /// Refuse vectors whose recorded anchor hash differs from θ0's.
  bool check_anchor = true;
};

/// θ0 + Σ α_t τ_t, summed in list order before adding θ0.
ParamVector compose(const ParamVector& theta0, const std::vector<std::pair<TaskVector, double>>& vectors,
                    const ComposeOptions& opts = {});

struct SweepRow {
  double alpha = 0.0;
  double metric = 0.0;
};

/// One evaluation of θ0 + α Σ τ_t per grid point, sorted by α.
std::vector<SweepRow> alpha_sweep(const ParamVector& theta0, const std::vector<TaskVector>& vectors,
                                  std::vector<double> alphas,
                                  const std::function<double(const ParamVector&)>& evaluator);

/// Checkpoint layout plus task_id, default α and anchor hash.
void save_task_vector(const std::string& path, const NetSpec& spec, const TaskVector& tv);
TaskVector load_task_vector(const std::string& path, NetSpec* spec = nullptr);

}  // namespace tak
