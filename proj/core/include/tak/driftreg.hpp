#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "tak/curvature.hpp"
#include "tak/regfactors.hpp"

namespace tak {

/// Down-weighting of the output layer for wide backbones; not the default here.
inline constexpr double kLastLayerScalePreset = 0.1;

/// β times a quadratic form in τ built from stored curvature.
struct DriftPenalty {
  enum class Source { per_task, merged, diagonal, exact };

  Source source = Source::merged;
  std::vector<std::pair<double, KfacCurvature>> per_task;  // (λ_t, curvature)
  KfacCurvature merged;
  ParamVector diagonal;
  Matrix exact;  // P×P

  double beta = 1.0;
  double last_layer_scale = 1.0;
  std::size_t apply_every = 1;
  /// Multiply interval-applied gradients by apply_every.
  bool compensate = false;

  static DriftPenalty from_store(const FactorStore& store, const std::string& excluded, double beta);
  static DriftPenalty from_merged(const MergedCurvature& m, double beta);
  static DriftPenalty from_diagonal(ParamVector d, double beta);
  static DriftPenalty from_exact(const ExactGGN& g, double beta);

  /// Throws ParameterError for β < 0 or apply_every == 0.
  void validate() const;
};

double penalty(const DriftPenalty& p, const ParamVector& tau);
ParamVector penalty_grad(const DriftPenalty& p, const ParamVector& tau);
/// Value and gradient in one pass; `grad` is overwritten.
double penalty_with_grad(const DriftPenalty& p, const ParamVector& tau, ParamVector& grad);
/// penalty_grad on steps divisible by apply_every, zero otherwise.
ParamVector scheduled_penalty_grad(const DriftPenalty& p, const ParamVector& tau, std::size_t step);
/// Whether `step` is an application step.
bool penalty_applies(const DriftPenalty& p, std::size_t step);

}  // namespace tak
