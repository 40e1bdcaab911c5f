#include "doctest.h"
#include "helpers.hpp"
#include "tak/criterion.hpp"
#include "tak/errors.hpp"
#include "tak/linearized.hpp"

using namespace tak;
using namespace tak::testing;

TEST_CASE("criterion gradients match central differences") {
  Rng rng(20);
  for (Criterion kind : {Criterion::squared, Criterion::cross_entropy}) {
    const Matrix f = random_matrix(rng, 5, 4);
    const std::vector<std::size_t> y{0, 3, 1, 1, 2};
    const LossResult r = criterion_loss(kind, f, y);
    const Vector fd = fd_gradient(
        [&](const Vector& v) { return criterion_loss(kind, Matrix(5, 4, v), y).loss; }, f.values());
    CHECK(rel_error(r.grad.data(), fd) < 1e-8);
  }
}

TEST_CASE("criterion values by hand") {
  const Matrix f{{0.0, 0.0}};
  const std::vector<std::size_t> y{1};
  CHECK(criterion_loss(Criterion::cross_entropy, f, y).loss == doctest::Approx(std::log(2.0)));
  // ½(0−0)² + ½(0−1)²
  CHECK(criterion_loss(Criterion::squared, f, y).loss == doctest::Approx(0.5));
  CHECK_THROWS_AS(criterion_loss(Criterion::squared, f, std::vector<std::size_t>{2}), DataError);
}

TEST_CASE("softmax is stable and argmax breaks ties low") {
  const Vector p = softmax(std::vector<double>{1000.0, 1000.0});
  CHECK(p[0] == doctest::Approx(0.5));
  CHECK(argmax(std::vector<double>{1.0, 3.0, 3.0}) == 1);
}

TEST_CASE("linearized model at zero displacement is the anchor") {
  Rng rng(21);
  const NetSpec spec = NetSpec::mlp({3, 5, 2}, Activation::tanh);
  const ParamVector th0 = random_params(spec, rng, 0.5);
  const LinearizedModel m(spec, th0);
  const Matrix x = random_matrix(rng, 4, 3);
  CHECK(m.forward_displacement(th0.zeros_like(), x) == forward(spec, th0, x));
  CHECK(lin_forward(m, th0, x) == forward(spec, th0, x));
}

TEST_CASE("linearized outputs are affine in the displacement") {
  Rng rng(22);
  const NetSpec spec = NetSpec::mlp({3, 4, 2}, Activation::tanh);
  const ParamVector th0 = random_params(spec, rng, 0.5);
  const LinearizedModel m(spec, th0);
  const Matrix x = random_matrix(rng, 4, 3);
  const ParamVector a = random_params(spec, rng), b = random_params(spec, rng);
  const Matrix f0 = m.forward_displacement(th0.zeros_like(), x);
  const Matrix lhs = m.forward_displacement(2.0 * a + b, x) - f0;
  const Matrix rhs = 2.0 * (m.forward_displacement(a, x) - f0) + (m.forward_displacement(b, x) - f0);
  CHECK(rel_error(lhs, rhs) < 1e-12);
  CHECK(rel_error(m.forward_displacement(a, x) - f0, jvp(spec, th0, x, a)) < 1e-13);
}

TEST_CASE("linearized gradient does not depend on the current parameters") {
  Rng rng(23);
  const NetSpec spec = NetSpec::mlp({3, 4, 3}, Activation::tanh);
  const ParamVector th0 = random_params(spec, rng, 0.5);
  const LinearizedModel m(spec, th0);
  const Matrix x = random_matrix(rng, 6, 3);
  const std::vector<std::size_t> y{0, 1, 2, 0, 1, 2};
  auto criterion_grad_at = [&](const ParamVector& theta) {
    // Upstream fixed from θ0's outputs so only the Jacobian could differ.
    const Matrix up = criterion_loss(Criterion::squared, forward(spec, th0, x), y).grad;
    return lin_backward(m, theta, x, up);
  };
  const ParamVector g1 = criterion_grad_at(th0);
  const ParamVector g2 = criterion_grad_at(th0 + random_params(spec, rng));
  CHECK(g1 == g2);
}

TEST_CASE("linearized backward matches central differences of the linear model") {
  Rng rng(24);
  const NetSpec spec = NetSpec::mlp({2, 5, 3}, Activation::tanh);
  const ParamVector th0 = random_params(spec, rng, 0.5);
  const LinearizedModel m(spec, th0);
  const Matrix x = random_matrix(rng, 5, 2);
  const std::vector<std::size_t> y{0, 2, 1, 1, 0};
  const ParamVector tau = random_params(spec, rng, 0.1);
  const LossResult r = criterion_loss(Criterion::cross_entropy, m.forward_displacement(tau, x), y);
  const ParamVector g = m.backward(x, r.grad);
  const Vector fd = fd_gradient(
      [&](const Vector& v) {
        return criterion_loss(Criterion::cross_entropy, m.forward_displacement(ParamVector(tau.layout(), v), x), y).loss;
      },
      tau.vector());
  CHECK(rel_error(g.values(), fd) < 1e-7);
}

TEST_CASE("anchor cache reproduces uncached passes") {
  Rng rng(25);
  const NetSpec spec = NetSpec::mlp({3, 4, 2}, Activation::tanh);
  const ParamVector th0 = random_params(spec, rng, 0.5);
  const LinearizedModel m(spec, th0);
  const Matrix x = random_matrix(rng, 8, 3);
  const AnchorCache cache = m.make_cache(x);
  const std::vector<std::size_t> rows{6, 1, 3};
  const ParamVector tau = random_params(spec, rng);
  const Matrix xb = gather_rows(x, rows);
  CHECK(rel_error(m.forward_cached(cache, rows, tau), m.forward_displacement(tau, xb)) < 1e-14);
  const Matrix up = random_matrix(rng, 3, 2);
  CHECK(rel_error(m.backward_cached(cache, rows, up).values(), m.backward(xb, up).values()) < 1e-14);
}
