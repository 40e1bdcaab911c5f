#pragma once

// Shared fixtures and independent oracles for the unit tests.

#include <cmath>
#include <functional>

#include "tak/dataset.hpp"
#include "tak/linalg.hpp"
#include "tak/network.hpp"

namespace tak::testing {

inline Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Matrix m(r, c);
  for (auto& v : m.data()) v = scale * rng.normal();
  return m;
}

inline Matrix random_spd(Rng& rng, std::size_t n, double ridge = 0.0) {
  const Matrix g = random_matrix(rng, n, n + 2);
  Matrix s = matmul_nt(g, g);
  for (std::size_t i = 0; i < n; ++i) s(i, i) += ridge;
  return s;
}

inline ParamVector random_params(const NetSpec& spec, Rng& rng, double scale = 1.0) {
  ParamVector p = ParamVector::zeros(spec);
  for (auto& v : p.values()) v = scale * rng.normal();
  return p;
}

inline Dataset random_dataset(Rng& rng, std::size_t n, std::size_t d, std::size_t classes) {
  Dataset ds;
  ds.inputs = random_matrix(rng, n, d);
  for (std::size_t i = 0; i < n; ++i) ds.labels.push_back(rng.below(classes));
  ds.task_id = "rand";
  return ds;
}

/// Per-sample Jacobian C×P, one jvp per parameter direction.
inline Matrix jacobian(const NetSpec& spec, const ParamVector& theta, const Matrix& x_row) {
  const std::size_t P = theta.size();
  const std::size_t C = spec.output_dim();
  Matrix j(C, P);
  for (std::size_t p = 0; p < P; ++p) {
    ParamVector e = theta.zeros_like();
    e[p] = 1.0;
    const Matrix col = jvp(spec, theta, x_row, e);
    for (std::size_t c = 0; c < C; ++c) j(c, p) = col(0, c);
  }
  return j;
}

inline Matrix row_of(const Matrix& m, std::size_t i) {
  Matrix r(1, m.cols());
  for (std::size_t j = 0; j < m.cols(); ++j) r(0, j) = m(i, j);
  return r;
}

/// (1/N) Σ JₙᵀJₙ from materialized Jacobians.
inline Matrix gram_oracle(const NetSpec& spec, const ParamVector& theta, const Matrix& x) {
  const std::size_t P = theta.size();
  Matrix g(P, P);
  for (std::size_t n = 0; n < x.rows(); ++n) g += matmul_tn(jacobian(spec, theta, row_of(x, n)), jacobian(spec, theta, row_of(x, n)));
  g *= 1.0 / static_cast<double>(x.rows());
  return g;
}

/// Central differences of a scalar function of a flat vector.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, Vector x, double h = 1e-5) {
  Vector g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline double rel_error(std::span<const double> a, std::span<const double> b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

inline double rel_error(const Matrix& a, const Matrix& b) { return rel_error(a.data(), b.data()); }

}  // namespace tak::testing
