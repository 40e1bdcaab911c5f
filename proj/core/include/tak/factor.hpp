#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tak/linalg.hpp"

namespace tak {

enum class FactorScheme { dense, block, lowrank, prune, quant8 };

std::string to_string(FactorScheme s);
FactorScheme factor_scheme_from_string(const std::string& s);

struct CooEntry {
  std::uint32_t row = 0;
  std::uint32_t col = 0;
  double value = 0.0;

  friend bool operator==(const CooEntry&, const CooEntry&) = default;
};

/// Row i of the result is scales[i]·q[i, :].
Matrix dequantize_rows(std::size_t n, std::span<const std::int8_t> q, std::span<const double> scales);

/// One Kronecker factor: the matrix used for evaluation plus the compact
/// payload it was reconstructed from. `matrix` is the dense reconstruction
/// of the payload (for quant8, the symmetric part of the dequantized rows).
struct Factor {
  Matrix matrix;
  FactorScheme scheme = FactorScheme::dense;

  std::vector<std::size_t> block_sizes;  // block: contiguous diagonal blocks
  Vector eigenvalues;                    // lowrank: top-k, descending
  Matrix eigenvectors;                   //          n×k
  std::vector<CooEntry> coo;             // prune: upper triangle (row <= col)
  std::vector<std::int8_t> q;            // quant8: n×n row-major
  Vector scales;                         //         per-row scale

  static Factor dense(Matrix m);
  static Factor from_blocks(const Matrix& full, std::vector<std::size_t> block_sizes);
  static Factor from_eigenpairs(Vector eigenvalues, Matrix eigenvectors);
  static Factor from_coo(std::size_t n, std::vector<CooEntry> upper);
  static Factor from_quant8(std::size_t n, std::vector<std::int8_t> q, Vector scales);

  std::size_t dim() const noexcept { return matrix.rows(); }
  /// Number of stored scalars in the payload.
  std::size_t stored_entries() const;
  /// Bytes occupied by the payload (f64 values, u32 indices, i8 codes).
  std::size_t storage_bytes() const;
};

}  // namespace tak
