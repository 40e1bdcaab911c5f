#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <iosfwd>
#include <random>
#include <span>
#include <vector>

namespace tak {

using Vector = std::vector<double>;

/// Dense row-major real matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> entries);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> d);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  bool is_square() const noexcept { return rows_ == cols_; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  Matrix& operator+=(const Matrix& other);
  Matrix& operator-=(const Matrix& other);
  Matrix& operator*=(double s);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(double s, Matrix a);

Matrix transpose(const Matrix& m);
Matrix matmul(const Matrix& a, const Matrix& b);
/// aᵀ·b without forming the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a·bᵀ without forming the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Vector matvec(const Matrix& a, std::span<const double> x);

/// Dense Kronecker product B⊗A. Only for tests and small diagnostics.
Matrix kron(const Matrix& b, const Matrix& a);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
double frobenius_norm(const Matrix& m);
double frobenius_inner(const Matrix& a, const Matrix& b);
double max_abs(const Matrix& m);
bool all_finite(std::span<const double> v);
bool is_symmetric(const Matrix& m, double tol);
Matrix symmetrize(const Matrix& m);

/// τᵀ(B⊗A)τ where τ is the row-major flattening of a D1×D2 matrix T,
/// evaluated as ⟨T, B·T·Aᵀ⟩ in O(D1·D2·(D1+D2)).
double kron_quadratic_form(const Matrix& b, const Matrix& a, std::span<const double> tau);

/// (B⊗A)τ = vec_r(B·T·Aᵀ).
Vector kron_matvec(const Matrix& b, const Matrix& a, std::span<const double> tau);

struct SymEig {
  Vector eigenvalues;  // descending
  Matrix eigenvectors; // column k pairs with eigenvalues[k]
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
/// Throws ContractError if `m` is not symmetric within 1e-8 (relative to its scale).
SymEig sym_eig(const Matrix& m);

double min_eigenvalue(const Matrix& m);

/// Seeded pseudorandom source. std::mt19937_64 is specified bit-exactly by the
/// standard; the derived draws below avoid the implementation-defined
/// std distributions so streams match across platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  /// Standard normal via Box–Muller.
  double normal();
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n);
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Matrix blob: 8-byte magic, u32 rows, u32 cols, then rows·cols f64, all little-endian.
void write_matrix(std::ostream& out, const Matrix& m);

}  // namespace tak
