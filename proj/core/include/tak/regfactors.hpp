#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tak/curvature.hpp"

namespace tak {

/// Registry of per-task curvature, in registration order.
class FactorStore {
 public:
  /// Keyed by c.meta.task_id; duplicates and layout mismatches are rejected.
  void add(KfacCurvature c);
  /// Overrides the dataset-size weight of one task.
  void set_weight(const std::string& task_id, double w);

  std::size_t size() const noexcept { return entries_.size(); }
  bool contains(const std::string& task_id) const;
  const KfacCurvature& get(const std::string& task_id) const;
  std::vector<std::string> task_ids() const;

  /// λ_t for every task except `excluded`, in registration order. Automatic
  /// weights are |D_t| / Σ_{t≠t′}|D_t|; manual weights are normalized the same way.
  std::vector<std::pair<std::string, double>> weights(const std::string& excluded) const;

 private:
  std::vector<KfacCurvature> entries_;
  std::map<std::string, double> manual_;
};

enum class MergeMode { summed_b, scale_consistent };

std::string to_string(MergeMode m);
MergeMode merge_mode_from_string(const std::string& s);

struct MergedCurvature {
  KfacCurvature factors;
  MergeMode mode = MergeMode::summed_b;
  std::string excluded;
};

/// summed_b: B̄ = Σ B_t, Ā = Σ λ_t A_t. scale_consistent: both sums λ-weighted.
/// Exact blocks are accumulated as Σ λ_t G_t in either mode.
/// Throws EmptyMergeError when no task other than `excluded` is registered.
MergedCurvature merge(const FactorStore& store, const std::string& excluded, MergeMode mode = MergeMode::summed_b);

struct LayerMergeError {
  std::size_t layer = 0;
  double sigma_a = 0.0;
  double sigma_b = 0.0;
  double bound = 0.0;   // T·σ_A·σ_B
  double actual = 0.0;  // ‖E‖_F
};

struct MergeErrorReport {
  std::size_t n_tasks = 0;
  std::vector<LayerMergeError> layers;
  bool holds(double slack = 1e-8) const;
};

/// E = Σ_t B_t⊗A_t − (1/T)(Σ B_t)⊗(Σ A_t) over unweighted tasks, per layer.
/// Layers with more than 10⁶ weights raise CapacityError.
MergeErrorReport merge_error(const FactorStore& store, const std::string& excluded);

/// Block-diagonal restriction with `n_blocks` contiguous blocks of ⌊n/k⌋, the
/// last block taking the remainder. Throws DegenerateError when k > n.
KfacCurvature compress_block(const KfacCurvature& c, std::size_t n_blocks = 8);

struct RankSpec {
  std::size_t count = 0;
  double fraction = 0.0;  // used when count == 0
  static RankSpec of(std::size_t k) { return {k, 0.0}; }
  static RankSpec of_fraction(double f) { return {0, f}; }
  /// Rank for an n×n factor; fractions round to nearest, k > n clamps to n.
  std::size_t resolve(std::size_t n) const;
};

/// Top-k eigenpair reconstruction of every factor.
KfacCurvature compress_lowrank(const KfacCurvature& c, RankSpec rank);

/// Keeps ⌈keep·n(n+1)/2⌉ largest-magnitude upper-triangle entries per factor
/// (ties by (row, col)), mirrored. Throws ParameterError unless 0 < keep ≤ 1.
KfacCurvature compress_prune(const KfacCurvature& c, double keep_ratio);

/// Per-row int8 codes with scale max|row|/127.
KfacCurvature compress_quant8(const KfacCurvature& c);

Factor block_factor(const Matrix& m, std::size_t n_blocks);
Factor lowrank_factor(const Matrix& m, std::size_t k);
Factor prune_factor(const Matrix& m, double keep_ratio);
Factor quant8_factor(const Matrix& m);

std::vector<std::size_t> block_sizes(std::size_t n, std::size_t n_blocks);

}  // namespace tak
