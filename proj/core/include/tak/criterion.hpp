#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tak/linalg.hpp"

namespace tak {

enum class Criterion { squared, cross_entropy };

std::string to_string(Criterion c);
Criterion criterion_from_string(const std::string& s);

struct LossResult {
  double loss = 0.0;  // mean over the batch
  Matrix grad;        // ∂loss/∂outputs, N×C
};

/// Squared: ½‖f − onehot(y)‖². Cross-entropy: −log softmax(f)_y.
/// Throws DataError for labels outside [0, C).
LossResult criterion_loss(Criterion kind, const Matrix& outputs, std::span<const std::size_t> labels);

Vector softmax(std::span<const double> logits);

/// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> v);

/// Columns [offset, offset + n) of m.
Matrix slice_columns(const Matrix& m, std::size_t offset, std::size_t n);
/// Zero matrix of width `cols` with `part` written at column `offset`.
Matrix embed_columns(const Matrix& part, std::size_t offset, std::size_t cols);

}  // namespace tak
