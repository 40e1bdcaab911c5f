#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "helpers.hpp"
#include "tak/criterion.hpp"
#include "tak/curvature.hpp"
#include "tak/errors.hpp"
#include "tak/regfactors.hpp"

using namespace tak;
using namespace tak::testing;

namespace {

/// (1/N) Σ Jᵀ (diag p − ppᵀ) J at θ's softmax.
Matrix ce_ggn_oracle(const NetSpec& spec, const ParamVector& th, const Matrix& x) {
  const std::size_t P = th.size();
  Matrix g(P, P);
  const Matrix f = forward(spec, th, x);
  for (std::size_t n = 0; n < x.rows(); ++n) {
    const Matrix j = jacobian(spec, th, row_of(x, n));
    const Vector p = softmax(f.row(n));
    Matrix h(p.size(), p.size());
    for (std::size_t a = 0; a < p.size(); ++a)
      for (std::size_t b = 0; b < p.size(); ++b) h(a, b) = (a == b ? p[a] : 0.0) - p[a] * p[b];
    g += matmul_tn(j, matmul(h, j));
  }
  g *= 1.0 / static_cast<double>(x.rows());
  return g;
}

KfacOptions exact_all(Criterion c = Criterion::squared) {
  KfacOptions o;
  o.criterion = c;
  o.variant = KfacVariant::exact;
  o.sample = SampleSpec::all();
  return o;
}

std::string tmp(const char* name) { return (std::filesystem::temp_directory_path() / name).string(); }

}  // namespace

TEST_CASE("squared-loss GGN equals the Jacobian Gram matrix") {
  Rng rng(30);
  const NetSpec spec = NetSpec::mlp({3, 4, 2}, Activation::tanh);
  const ParamVector th = random_params(spec, rng, 0.7);
  const Dataset d = random_dataset(rng, 7, 3, 2);
  const ExactGGN g = exact_ggn(spec, th, d, Criterion::squared);
  CHECK(rel_error(g.g, gram_oracle(spec, th, d.inputs)) < 1e-10);
}

TEST_CASE("cross-entropy GGN uses the softmax Hessian") {
  Rng rng(31);
  const NetSpec spec = NetSpec::mlp({2, 3, 3}, Activation::tanh);
  const ParamVector th = random_params(spec, rng, 0.7);
  const Dataset d = random_dataset(rng, 5, 2, 3);
  CHECK(rel_error(exact_ggn(spec, th, d, Criterion::cross_entropy).g, ce_ggn_oracle(spec, th, d.inputs)) < 1e-10);
}

TEST_CASE("exact GGN guards") {
  Rng rng(32);
  const NetSpec spec = NetSpec::mlp({3, 4, 2}, Activation::tanh);
  const ParamVector th = random_params(spec, rng);
  Dataset empty;
  empty.inputs = Matrix(0, 3);
  CHECK_THROWS_AS(exact_ggn(spec, th, empty, Criterion::squared), EmptyDataError);
  CHECK_THROWS_AS(exact_ggn(spec, th, random_dataset(rng, 2, 3, 2), Criterion::squared, 10), CapacityError);
}

TEST_CASE("diag_ggn matches the exact diagonal") {
  Rng rng(33);
  const NetSpec spec = NetSpec::mlp({3, 5, 3}, Activation::tanh);
  const ParamVector th = random_params(spec, rng, 0.6);
  const Dataset d = random_dataset(rng, 6, 3, 3);
  for (Criterion c : {Criterion::squared, Criterion::cross_entropy}) {
    const Matrix g = exact_ggn(spec, th, d, c).g;
    const ParamVector diag = diag_ggn(spec, th, d, c);
    for (std::size_t i = 0; i < th.size(); ++i) CHECK(diag[i] == doctest::Approx(g(i, i)).epsilon(1e-8));
  }
}

TEST_CASE("diag_ggn of a linear model at x = (1, 0)") {
  const NetSpec spec = NetSpec::mlp({2, 2}, Activation::identity, false);
  Dataset d;
  d.inputs = Matrix{{1.0, 0.0}};
  d.labels = {0};
  const ParamVector diag = diag_ggn(spec, ParamVector::zeros(spec), d, Criterion::squared);
  CHECK(diag.vector() == Vector{1.0, 0.0, 1.0, 0.0});
  d.inputs = Matrix{{0.0, 0.0}};
  const ParamVector zero = diag_ggn(spec, ParamVector::zeros(spec), d, Criterion::squared);
  CHECK(zero.vector() == Vector{0.0, 0.0, 0.0, 0.0});
}

TEST_CASE("single-datum single-layer KFAC is exact") {
  Rng rng(34);
  for (Criterion c : {Criterion::squared, Criterion::cross_entropy}) {
    const NetSpec spec = NetSpec::mlp({4, 3}, Activation::tanh);
    const ParamVector th = random_params(spec, rng);
    const Dataset d = random_dataset(rng, 1, 4, 3);
    const KfacCurvature k = kfac(spec, th, d, exact_all(c));
    const Matrix dense = kron(k.layers[0].b.matrix, k.layers[0].a.matrix);
    CHECK(rel_error(dense, exact_ggn(spec, th, d, c).g) < 1e-10);
    CHECK(rel_error(kfac_to_dense(k), dense) == 0.0);
  }
}

TEST_CASE("KFAC factors by hand for a linear layer") {
  // f = W x + b with squared loss: B = I, A = mean of [x,1][x,1]ᵀ.
  const NetSpec spec = NetSpec::mlp({2, 2}, Activation::identity);
  Dataset d;
  d.inputs = Matrix{{1.0, 2.0}, {3.0, 0.0}};
  d.labels = {0, 1};
  const KfacCurvature k = kfac(spec, ParamVector::zeros(spec), d, exact_all());
  const Matrix a_expected{{5.0, 1.0, 2.0}, {1.0, 2.0, 1.0}, {2.0, 1.0, 1.0}};
  CHECK(rel_error(k.layers[0].a.matrix, a_expected) < 1e-15);
  CHECK(rel_error(k.layers[0].b.matrix, Matrix::identity(2)) < 1e-15);
}

TEST_CASE("KFAC factors are symmetric PSD") {
  Rng rng(35);
  const NetSpec spec = NetSpec::mlp({3, 6, 4, 2}, Activation::tanh);
  const ParamVector th = random_params(spec, rng);
  const Dataset d = random_dataset(rng, 40, 3, 2);
  for (KfacVariant v : {KfacVariant::exact, KfacVariant::mc}) {
    for (BiasMode bm : {BiasMode::augmented, BiasMode::exact_group}) {
      KfacOptions o = exact_all(Criterion::cross_entropy);
      o.variant = v;
      o.bias_mode = bm;
      const KfacCurvature k = kfac(spec, th, d, o);
      CHECK_NOTHROW(k.validate());
      for (const auto& l : k.layers) {
        CHECK(min_eigenvalue(l.a.matrix) >= -1e-8);
        CHECK(min_eigenvalue(l.b.matrix) >= -1e-8);
      }
      for (const auto& eb : k.exact_blocks) CHECK(min_eigenvalue(eb.g) >= -1e-8);
      CHECK(k.exact_blocks.size() == (bm == BiasMode::exact_group ? 3u : 0u));
    }
  }
}

TEST_CASE("MC B factor converges to the exact one") {
  Rng rng(36);
  const NetSpec spec = NetSpec::mlp({3, 5}, Activation::tanh);
  const ParamVector th = random_params(spec, rng);
  const Dataset d = random_dataset(rng, 6, 3, 5);
  for (Criterion c : {Criterion::squared, Criterion::cross_entropy}) {
    const Matrix exact = kfac(spec, th, d, exact_all(c)).layers[0].b.matrix;
    std::vector<double> err;
    for (std::size_t m : {1, 16, 256, 4096}) {
      double e = 0.0;
      for (std::uint64_t s = 0; s < 10; ++s) {
        KfacOptions o = exact_all(c);
        o.variant = KfacVariant::mc;
        o.mc_samples = m;
        o.seed = s;
        e += rel_error(kfac(spec, th, d, o).layers[0].b.matrix, exact);
      }
      err.push_back(e / 10.0);
    }
    for (std::size_t i = 1; i < err.size(); ++i) CHECK(err[i] < err[i - 1]);
    CHECK(err.back() < 0.05);
  }
}

TEST_CASE("sample selection") {
  const auto all = select_samples(10, SampleSpec::all(), 1);
  CHECK(all.size() == 10);
  const auto frac = select_samples(100, SampleSpec::of_fraction(0.33), 1);
  CHECK(frac.size() == 33);
  CHECK(std::is_sorted(frac.begin(), frac.end()));
  CHECK(select_samples(100, SampleSpec::of_fraction(0.33), 1) == frac);
  CHECK(select_samples(5, SampleSpec::of_count(128), 1).size() == 5);
  CHECK_THROWS_AS(select_samples(5, SampleSpec::of_fraction(0.0), 1), ParameterError);
}

TEST_CASE("reference curvature carries the reference id") {
  Rng rng(37);
  const NetSpec spec = NetSpec::mlp({2, 3, 2}, Activation::tanh);
  Dataset ref = random_dataset(rng, 8, 2, 2);
  const KfacCurvature k = reference_kfac(spec, random_params(spec, rng), ref, exact_all());
  CHECK(k.meta.task_id == "reference");
}

TEST_CASE("curvature file round trip for every scheme") {
  Rng rng(38);
  const NetSpec spec = NetSpec::mlp({9, 16, 3}, Activation::tanh);
  const ParamVector th = random_params(spec, rng);
  const Dataset d = random_dataset(rng, 20, 9, 3);
  KfacOptions o = exact_all();
  o.bias_mode = BiasMode::exact_group;
  const KfacCurvature base = kfac(spec, th, d, o);
  const std::vector<KfacCurvature> variants{base, compress_block(base, 2), compress_lowrank(base, RankSpec::of(2)),
                                            compress_prune(base, 0.3), compress_quant8(base)};
  for (const auto& c : variants) {
    const std::string path = tmp("tak_unit_curv.tak");
    save_curvature(path, c);
    const KfacCurvature r = load_curvature(path);
    REQUIRE(r.layers.size() == c.layers.size());
    for (std::size_t l = 0; l < c.layers.size(); ++l) {
      CHECK(r.layers[l].a.matrix == c.layers[l].a.matrix);
      CHECK(r.layers[l].b.matrix == c.layers[l].b.matrix);
      CHECK(r.layers[l].a.scheme == c.layers[l].a.scheme);
      CHECK(r.layers[l].a.storage_bytes() == c.layers[l].a.storage_bytes());
    }
    CHECK(r.exact_blocks.size() == c.exact_blocks.size());
    CHECK(r.meta.n_samples == c.meta.n_samples);
    std::filesystem::remove(path);
  }
}

TEST_CASE("corrupt curvature file raises FormatError") {
  Rng rng(39);
  const NetSpec spec = NetSpec::mlp({2, 3, 2}, Activation::tanh);
  const KfacCurvature c = kfac(spec, random_params(spec, rng), random_dataset(rng, 5, 2, 2), exact_all());
  const std::string path = tmp("tak_unit_corrupt.tak");
  save_curvature(path, c);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 5);
  CHECK_THROWS_AS(load_curvature(path), FormatError);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << "garbage";
  }
  CHECK_THROWS_AS(load_curvature(path), FormatError);
  std::filesystem::remove(path);
}
