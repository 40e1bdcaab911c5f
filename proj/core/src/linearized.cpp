#include "tak/linearized.hpp"

#include "tak/errors.hpp"

namespace tak {

LinearizedModel::LinearizedModel(NetSpec spec, ParamVector theta0)
    : spec_(std::move(spec)), theta0_(std::make_shared<const ParamVector>(std::move(theta0))) {
  require_layout(*theta0_, ParamLayout::from_spec(spec_), "LinearizedModel anchor");
}

Matrix LinearizedModel::forward_displacement(const ParamVector& tau, const Matrix& x) const {
  require_same_layout(tau, *theta0_, "lin_forward");
  BatchActivations acts;
  Matrix out = forward(spec_, *theta0_, x, &acts);
  out += jvp_from(spec_, *theta0_, acts, tau);
  return out;
}

ParamVector LinearizedModel::backward(const Matrix& x, const Matrix& upstream) const {
  return tak::backward(spec_, *theta0_, x, upstream).grad;
}

AnchorCache LinearizedModel::make_cache(const Matrix& x) const {
  AnchorCache c;
  c.outputs = forward(spec_, *theta0_, x, &c.acts);
  return c;
}

Matrix LinearizedModel::forward_cached(const AnchorCache& cache, std::span<const std::size_t> rows,
                                       const ParamVector& tau) const {
  require_same_layout(tau, *theta0_, "lin_forward");
  BatchActivations acts = gather_rows(cache.acts, rows);
  Matrix out = gather_rows(cache.outputs, rows);
  out += jvp_from(spec_, *theta0_, acts, tau);
  return out;
}

ParamVector LinearizedModel::backward_cached(const AnchorCache& cache, std::span<const std::size_t> rows,
                                             const Matrix& upstream) const {
  return backward_from(spec_, *theta0_, gather_rows(cache.acts, rows), upstream).grad;
}

Matrix lin_forward(const LinearizedModel& m, const ParamVector& theta, const Matrix& x) {
  require_same_layout(theta, m.anchor(), "lin_forward");
  return m.forward_displacement(theta - m.anchor(), x);
}

ParamVector lin_backward(const LinearizedModel& m, const ParamVector& theta, const Matrix& x, const Matrix& upstream) {
  require_same_layout(theta, m.anchor(), "lin_backward");
  return m.backward(x, upstream);
}

}  // namespace tak
