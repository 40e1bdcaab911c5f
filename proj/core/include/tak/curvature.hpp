#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tak/criterion.hpp"
#include "tak/dataset.hpp"
#include "tak/factor.hpp"
#include "tak/network.hpp"

namespace tak {

enum class KfacVariant { exact, mc };

/// augmented: the bias is a constant-1 input column absorbed by A.
/// exact_group: A covers the weights only and each layer's bias gets a dense
/// exact GGN block.
enum class BiasMode { augmented, exact_group };

std::string to_string(KfacVariant v);
std::string to_string(BiasMode m);
BiasMode bias_mode_from_string(const std::string& s);

/// Which training examples feed the estimate.
struct SampleSpec {
  enum class Mode { all, fraction, count };
  Mode mode = Mode::fraction;
  double fraction = 0.33;
  std::size_t count = 128;

  static SampleSpec all() { return {Mode::all, 1.0, 0}; }
  static SampleSpec of_fraction(double f) { return {Mode::fraction, f, 0}; }
  static SampleSpec of_count(std::size_t n) { return {Mode::count, 1.0, n}; }
};

/// Ascending dataset indices selected by `spec` (seeded; sorted so
/// accumulation follows dataset order).
std::vector<std::size_t> select_samples(std::size_t n, const SampleSpec& spec, std::uint64_t seed);

struct KfacOptions {
  Criterion criterion = Criterion::squared;
  KfacVariant variant = KfacVariant::mc;
  std::size_t mc_samples = 1;
  std::uint64_t seed = 0;
  SampleSpec sample;
  BiasMode bias_mode = BiasMode::augmented;
};

struct CurvatureMeta {
  std::string task_id;
  std::string variant = "exact";  // "exact", "mc", or "merged"
  std::size_t mc_samples = 0;
  std::size_t n_samples = 0;
  std::size_t dataset_size = 0;
  Criterion criterion = Criterion::squared;
  BiasMode bias_mode = BiasMode::augmented;
  std::string merge_mode;  // set on merged curvature only
  std::string excluded;    // task left out of a merge
};

struct KfacLayer {
  Factor a;  // input covariance
  Factor b;  // output-gradient covariance
};

/// Dense GGN restricted to an arbitrary set of flat parameter indices.
struct ExactBlock {
  std::size_t layer = 0;
  std::vector<std::size_t> indices;
  Matrix g;
};

struct KfacCurvature {
  CurvatureMeta meta;
  ParamLayout layout;
  std::vector<KfacLayer> layers;
  std::vector<ExactBlock> exact_blocks;

  /// Shapes against `layout`, symmetry and PSD within `tol` (relative to scale).
  void validate(double tol = 1e-8) const;
  std::size_t storage_bytes() const;
};

struct ExactGGN {
  Matrix g;  // P×P
  CurvatureMeta meta;
};

/// (1/N) Σₙ Jₙᵀ ∇²cₙ Jₙ over all of `data`.
ExactGGN exact_ggn(const NetSpec& spec, const ParamVector& theta0, const Dataset& data, Criterion criterion,
                   std::size_t max_params = 5000);

KfacCurvature kfac(const NetSpec& spec, const ParamVector& theta0, const Dataset& data, const KfacOptions& opts);

/// Task-agnostic factors from a shared reference distribution.
KfacCurvature reference_kfac(const NetSpec& spec, const ParamVector& theta0, const Dataset& reference,
                             const KfacOptions& opts);

/// Diagonal of the exact GGN, without forming it.
ParamVector diag_ggn(const NetSpec& spec, const ParamVector& theta0, const Dataset& data, Criterion criterion);

/// Dense P×P view of the block-diagonal KFAC approximation (tests, small nets).
Matrix kfac_to_dense(const KfacCurvature& c);

/// Curvature file: JSON manifest (task_id, variant, n_samples, layer table with
/// per-factor scheme) followed by the factor payload blobs.
void save_curvature(const std::string& path, const KfacCurvature& c);
KfacCurvature load_curvature(const std::string& path);

}  // namespace tak
