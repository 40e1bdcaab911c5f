#pragma once

#include <memory>
#include <span>

#include "tak/network.hpp"

namespace tak {

/// Outputs and activations of the anchor θ0 on a fixed input set, reused
/// across epochs. Rows are addressed by dataset index.
struct AnchorCache {
  Matrix outputs;
  BatchActivations acts;
};

/// First-order Taylor model f(x,θ0) + J_θ f(x,θ0)(θ − θ0). The anchor is
/// immutable; fine-tuning only ever moves the displacement.
class LinearizedModel {
 public:
  LinearizedModel(NetSpec spec, ParamVector theta0);

  const NetSpec& spec() const noexcept { return spec_; }
  const ParamVector& anchor() const noexcept { return *theta0_; }

  /// Model output at displacement τ = θ − θ0.
  Matrix forward_displacement(const ParamVector& tau, const Matrix& x) const;
  /// J_θ f(x,θ0)ᵀ·upstream; independent of the current parameters.
  ParamVector backward(const Matrix& x, const Matrix& upstream) const;

  AnchorCache make_cache(const Matrix& x) const;
  Matrix forward_cached(const AnchorCache& cache, std::span<const std::size_t> rows, const ParamVector& tau) const;
  ParamVector backward_cached(const AnchorCache& cache, std::span<const std::size_t> rows,
                              const Matrix& upstream) const;

 private:
  NetSpec spec_;
  std::shared_ptr<const ParamVector> theta0_;
};

Matrix lin_forward(const LinearizedModel& m, const ParamVector& theta, const Matrix& x);
/// `theta` is accepted for contract symmetry and layout-checked only.
ParamVector lin_backward(const LinearizedModel& m, const ParamVector& theta, const Matrix& x, const Matrix& upstream);

}  // namespace tak
