#include "tak/factor.hpp"

#include <numeric>

#include "tak/errors.hpp"

namespace tak {

std::string to_string(FactorScheme s) {
  switch (s) {
    case FactorScheme::dense: return "dense";
    case FactorScheme::block: return "block";
    case FactorScheme::lowrank: return "lowrank";
    case FactorScheme::prune: return "prune";
    case FactorScheme::quant8: return "quant8";
  }
  return "dense";
}

FactorScheme factor_scheme_from_string(const std::string& s) {
  if (s == "dense" || s == "none") return FactorScheme::dense;
  if (s == "block") return FactorScheme::block;
  if (s == "lowrank") return FactorScheme::lowrank;
  if (s == "prune") return FactorScheme::prune;
  if (s == "quant8") return FactorScheme::quant8;
  throw ParameterError("unknown factor scheme '" + s + "'");
}

Factor Factor::dense(Matrix m) {
  if (!m.is_square()) throw ShapeError("factor must be square");
  Factor f;
  f.matrix = std::move(m);
  return f;
}

Factor Factor::from_blocks(const Matrix& full, std::vector<std::size_t> block_sizes) {
  const std::size_t n = full.rows();
  if (std::accumulate(block_sizes.begin(), block_sizes.end(), std::size_t{0}) != n) {
    throw ShapeError("block sizes do not cover the factor");
  }
  Factor f;
  f.scheme = FactorScheme::block;
  f.matrix = Matrix(n, n);
  std::size_t start = 0;
  for (std::size_t b : block_sizes) {
    for (std::size_t i = start; i < start + b; ++i)
      for (std::size_t j = start; j < start + b; ++j) f.matrix(i, j) = full(i, j);
    start += b;
  }
  f.block_sizes = std::move(block_sizes);
  return f;
}

Factor Factor::from_eigenpairs(Vector eigenvalues, Matrix eigenvectors) {
  const std::size_t n = eigenvectors.rows();
  const std::size_t k = eigenvalues.size();
  if (eigenvectors.cols() != k) throw ShapeError("eigenvector count does not match eigenvalues");
  Factor f;
  f.scheme = FactorScheme::lowrank;
  f.matrix = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < k; ++r) s += eigenvectors(i, r) * eigenvalues[r] * eigenvectors(j, r);
      f.matrix(i, j) = s;
      f.matrix(j, i) = s;
    }
  f.eigenvalues = std::move(eigenvalues);
  f.eigenvectors = std::move(eigenvectors);
  return f;
}

Factor Factor::from_coo(std::size_t n, std::vector<CooEntry> upper) {
  Factor f;
  f.scheme = FactorScheme::prune;
  f.matrix = Matrix(n, n);
  for (const auto& e : upper) {
    if (e.row >= n || e.col >= n || e.row > e.col) throw ShapeError("COO entry outside the upper triangle");
    f.matrix(e.row, e.col) = e.value;
    f.matrix(e.col, e.row) = e.value;
  }
  f.coo = std::move(upper);
  return f;
}

Matrix dequantize_rows(std::size_t n, std::span<const std::int8_t> q, std::span<const double> scales) {
  if (q.size() != n * n || scales.size() != n) throw ShapeError("quantized payload size mismatch");
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) m(i, j) = scales[i] * static_cast<double>(q[i * n + j]);
  return m;
}

Factor Factor::from_quant8(std::size_t n, std::vector<std::int8_t> q, Vector scales) {
  if (q.size() != n * n || scales.size() != n) throw ShapeError("quantized payload size mismatch");
  Factor f;
  f.scheme = FactorScheme::quant8;
  f.matrix = symmetrize(dequantize_rows(n, q, scales));
  f.q = std::move(q);
  f.scales = std::move(scales);
  return f;
}

std::size_t Factor::stored_entries() const {
  switch (scheme) {
    case FactorScheme::dense: return matrix.size();
    case FactorScheme::block: {
      std::size_t s = 0;
      for (std::size_t b : block_sizes) s += b * b;
      return s;
    }
    case FactorScheme::lowrank: return eigenvalues.size() + eigenvectors.size();
    case FactorScheme::prune: return coo.size();
    case FactorScheme::quant8: return q.size();
  }
  return matrix.size();
}

std::size_t Factor::storage_bytes() const {
  switch (scheme) {
    case FactorScheme::dense:
    case FactorScheme::block:
    case FactorScheme::lowrank: return stored_entries() * sizeof(double);
    case FactorScheme::prune: return coo.size() * (2 * sizeof(std::uint32_t) + sizeof(double));
    case FactorScheme::quant8: return q.size() + scales.size() * sizeof(double);
  }
  return 0;
}

}  // namespace tak
