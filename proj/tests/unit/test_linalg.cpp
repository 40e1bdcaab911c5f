#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "tak/errors.hpp"
#include "tak/linalg.hpp"
#include "tak/serialize.hpp"

using namespace tak;
using namespace tak::testing;

namespace {

Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j)
      for (std::size_t k = 0; k < a.cols(); ++k) c(i, j) += a(i, k) * b(k, j);
  return c;
}

}  // namespace

TEST_CASE("matmul variants agree with a triple loop") {
  Rng rng(1);
  const Matrix a = random_matrix(rng, 5, 7);
  const Matrix b = random_matrix(rng, 7, 3);
  CHECK(rel_error(matmul(a, b), naive_matmul(a, b)) < 1e-14);
  CHECK(rel_error(matmul_tn(transpose(a), b), naive_matmul(a, b)) < 1e-14);
  CHECK(rel_error(matmul_nt(a, transpose(b)), naive_matmul(a, b)) < 1e-14);
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("kron places b(i,j)·A blocks") {
  const Matrix b{{1, 2}, {3, 4}};
  const Matrix a{{0, 5}, {6, 7}};
  const Matrix k = kron(b, a);
  REQUIRE(k.rows() == 4);
  CHECK(k(0, 1) == 5);
  CHECK(k(1, 0) == 6);
  CHECK(k(0, 3) == 10);
  CHECK(k(3, 3) == 28);
  CHECK(k(2, 0) == 0);
}

TEST_CASE("row-major Kronecker identity") {
  Rng rng(2);
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t d1 = 2 + rng.below(4), d2 = 2 + rng.below(5);
    const Matrix b = random_spd(rng, d1);
    const Matrix a = random_spd(rng, d2);
    const Matrix t = random_matrix(rng, d1, d2);
    const Vector dense = matvec(kron(b, a), t.data());
    CHECK(rel_error(kron_matvec(b, a, t.data()), dense) < 1e-12);
    CHECK(kron_quadratic_form(b, a, t.data()) == doctest::Approx(dot(t.data(), dense)).epsilon(1e-12));
    // vec_r(B T Aᵀ) spelled out
    CHECK(rel_error(matmul(matmul(b, t), transpose(a)).data(), dense) < 1e-12);
  }
}

TEST_CASE("kron helpers reject mismatched sizes") {
  const Matrix b = Matrix::identity(2);
  const Matrix a = Matrix::identity(3);
  const Vector tau(5, 1.0);
  CHECK_THROWS_AS(kron_quadratic_form(b, a, tau), ShapeError);
}

TEST_CASE("sym_eig reconstructs and orders eigenvalues") {
  Rng rng(3);
  const Matrix s = random_spd(rng, 6, 0.1);
  const SymEig e = sym_eig(s);
  for (std::size_t k = 1; k < 6; ++k) CHECK(e.eigenvalues[k - 1] >= e.eigenvalues[k]);
  const Matrix l = Matrix::diagonal(e.eigenvalues);
  const Matrix rec = matmul_nt(matmul(e.eigenvectors, l), e.eigenvectors);
  CHECK(rel_error(rec, s) < 1e-12);
  const Matrix qtq = matmul_tn(e.eigenvectors, e.eigenvectors);
  CHECK(rel_error(qtq, Matrix::identity(6)) < 1e-12);
  CHECK(min_eigenvalue(s) == doctest::Approx(e.eigenvalues.back()));
}

TEST_CASE("sym_eig of a diagonal matrix") {
  const Vector d{3.0, -1.0, 2.0};
  const SymEig e = sym_eig(Matrix::diagonal(d));
  CHECK(e.eigenvalues[0] == doctest::Approx(3.0));
  CHECK(e.eigenvalues[1] == doctest::Approx(2.0));
  CHECK(e.eigenvalues[2] == doctest::Approx(-1.0));
}

TEST_CASE("sym_eig rejects asymmetric input") {
  CHECK_THROWS_AS(sym_eig(Matrix{{1, 2}, {0, 1}}), ContractError);
}

TEST_CASE("symmetrize and is_symmetric") {
  const Matrix m{{1, 2}, {4, 3}};
  CHECK_FALSE(is_symmetric(m, 1e-12));
  const Matrix s = symmetrize(m);
  CHECK(is_symmetric(s, 0.0));
  CHECK(s(0, 1) == 3.0);
}

TEST_CASE("Rng streams are reproducible") {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    const double x = a.normal();
    CHECK(x == b.normal());
  }
  CHECK(a.next_u64() != c.next_u64());
  Rng r(5);
  auto p = r.permutation(50);
  std::sort(p.begin(), p.end());
  for (std::size_t i = 0; i < 50; ++i) CHECK(p[i] == i);
  double mean = 0.0;
  Rng u(9);
  for (int i = 0; i < 20000; ++i) mean += u.uniform();
  CHECK(mean / 20000 == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("matrix blob round trip") {
  Rng rng(4);
  const Matrix m = random_matrix(rng, 3, 4);
  std::stringstream ss;
  write_matrix(ss, m);
  CHECK(read_matrix(ss) == m);
}

TEST_CASE("fnv1a64 reference value") {
  const std::string s = "a";
  CHECK(fnv1a64({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()}) == 0xaf63dc4c8601ec8cULL);
  CHECK(hex64(0xabcULL) == "0000000000000abc");
}
