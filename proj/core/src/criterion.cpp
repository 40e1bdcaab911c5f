#include "tak/criterion.hpp"

#include <algorithm>
#include <cmath>

#include "tak/errors.hpp"

namespace tak {

std::string to_string(Criterion c) { return c == Criterion::squared ? "squared" : "cross_entropy"; }

Criterion criterion_from_string(const std::string& s) {
  if (s == "squared") return Criterion::squared;
  if (s == "cross_entropy") return Criterion::cross_entropy;
  throw ParameterError("unknown criterion '" + s + "'");
}

Vector softmax(std::span<const double> logits) {
  Vector p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double m = *std::max_element(p.begin(), p.end());
  double s = 0.0;
  for (double& v : p) {
    v = std::exp(v - m);
    s += v;
  }
  for (double& v : p) v /= s;
  return p;
}

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

LossResult criterion_loss(Criterion kind, const Matrix& outputs, std::span<const std::size_t> labels) {
  const std::size_t n = outputs.rows();
  const std::size_t c = outputs.cols();
  if (labels.size() != n) throw ShapeError("criterion_loss: labels and outputs differ in length");
  if (n == 0) throw EmptyDataError("criterion_loss: empty batch");
  LossResult r{0.0, Matrix(n, c)};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = labels[i];
    if (y >= c) throw DataError("label " + std::to_string(y) + " out of range for " + std::to_string(c) + " classes");
    auto f = outputs.row(i);
    auto g = r.grad.row(i);
    if (kind == Criterion::squared) {
      for (std::size_t k = 0; k < c; ++k) {
        const double d = f[k] - (k == y ? 1.0 : 0.0);
        r.loss += 0.5 * d * d;
        g[k] = d * inv_n;
      }
    } else {
      const double m = *std::max_element(f.begin(), f.end());
      double s = 0.0;
      for (double v : f) s += std::exp(v - m);
      const double log_z = m + std::log(s);
      r.loss += log_z - f[y];
      for (std::size_t k = 0; k < c; ++k) g[k] = (std::exp(f[k] - log_z) - (k == y ? 1.0 : 0.0)) * inv_n;
    }
  }
  r.loss *= inv_n;
  return r;
}

Matrix slice_columns(const Matrix& m, std::size_t offset, std::size_t n) {
  if (offset + n > m.cols()) throw ShapeError("slice_columns: slice exceeds width");
  Matrix out(m.rows(), n);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) = m(i, offset + j);
  return out;
}

Matrix embed_columns(const Matrix& part, std::size_t offset, std::size_t cols) {
  if (offset + part.cols() > cols) throw ShapeError("embed_columns: slice exceeds width");
  Matrix out(part.rows(), cols);
  for (std::size_t i = 0; i < part.rows(); ++i)
    for (std::size_t j = 0; j < part.cols(); ++j) out(i, offset + j) = part(i, j);
  return out;
}

}  // namespace tak
