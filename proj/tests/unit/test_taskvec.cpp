#include <filesystem>

#include "doctest.h"
#include "helpers.hpp"
#include "tak/errors.hpp"
#include "tak/taskvec.hpp"

using namespace tak;
using namespace tak::testing;

TEST_CASE("task vector is the parameter difference") {
  Rng rng(80);
  const NetSpec spec = NetSpec::mlp({3, 4, 2}, Activation::tanh);
  const ParamVector th0 = random_params(spec, rng), th1 = random_params(spec, rng);
  const TaskVector tv = make_task_vector(th0, th1, "t0");
  CHECK(tv.delta == th1 - th0);
  CHECK(tv.anchor_hash == hash_params(th0));
  CHECK(rel_error(compose(th0, {{tv, 1.0}}).values(), th1.values()) < 1e-15);
}

TEST_CASE("compose sums scaled vectors") {
  Rng rng(81);
  const NetSpec spec = NetSpec::mlp({2, 3, 2}, Activation::tanh);
  const ParamVector th0 = random_params(spec, rng);
  const TaskVector a = make_task_vector(th0, random_params(spec, rng), "a");
  const TaskVector b = make_task_vector(th0, random_params(spec, rng), "b");
  const ParamVector got = compose(th0, {{a, 0.5}, {b, -2.0}});
  for (std::size_t i = 0; i < th0.size(); ++i)
    CHECK(got[i] == doctest::Approx(th0[i] + 0.5 * a.delta[i] - 2.0 * b.delta[i]));
  CHECK(compose(th0, {}) == th0);
}

TEST_CASE("adding then negating a vector recovers the anchor") {
  Rng rng(82);
  const NetSpec spec = NetSpec::mlp({4, 8, 3}, Activation::tanh);
  const ParamVector th0 = random_params(spec, rng);
  const TaskVector tv = make_task_vector(th0, random_params(spec, rng), "t");
  const ParamVector back = compose(th0, {{tv, 1.0}, {tv, -1.0}});
  for (std::size_t i = 0; i < th0.size(); ++i) CHECK(std::abs(back[i] - th0[i]) <= 1e-12);
}

TEST_CASE("compose refuses a foreign anchor") {
  Rng rng(83);
  const NetSpec spec = NetSpec::mlp({2, 3, 2}, Activation::tanh);
  const ParamVector th0 = random_params(spec, rng), other = random_params(spec, rng);
  const TaskVector tv = make_task_vector(other, random_params(spec, rng), "t");
  CHECK_THROWS_AS(compose(th0, {{tv, 1.0}}), ContractError);
  CHECK_NOTHROW(compose(th0, {{tv, 1.0}}, ComposeOptions{false}));
  TaskVector unknown = tv;
  unknown.anchor_hash = 0;
  CHECK_NOTHROW(compose(th0, {{unknown, 1.0}}));
  CHECK_THROWS_AS(compose(th0, {{unknown, NAN}}), ParameterError);
  const ParamVector wrong = ParamVector::zeros(NetSpec::mlp({2, 4, 2}, Activation::tanh));
  CHECK_THROWS_AS(compose(wrong, {{unknown, 1.0}}, ComposeOptions{false}), ShapeError);
}

TEST_CASE("alpha sweep is sorted and evaluates each point") {
  Rng rng(84);
  const NetSpec spec = NetSpec::mlp({2, 2}, Activation::identity);
  const ParamVector th0 = random_params(spec, rng);
  const TaskVector tv = make_task_vector(th0, random_params(spec, rng), "t");
  const auto rows = alpha_sweep(th0, {tv}, {1.0, 0.0, 0.5},
                                [&](const ParamVector& p) { return (p - th0).values()[0] / tv.delta[0]; });
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].alpha == 0.0);
  CHECK(rows[1].metric == doctest::Approx(0.5));
  CHECK(rows[2].metric == doctest::Approx(1.0));
  CHECK_THROWS_AS(alpha_sweep(th0, {tv}, {}, [](const ParamVector&) { return 0.0; }), ParameterError);
}

TEST_CASE("task vector file round trip") {
  Rng rng(85);
  const NetSpec spec = NetSpec::mlp({3, 4, 2}, Activation::relu);
  const ParamVector th0 = random_params(spec, rng);
  TaskVector tv = make_task_vector(th0, random_params(spec, rng), "task7");
  tv.default_alpha = 0.3;
  const auto path = (std::filesystem::temp_directory_path() / "tak_unit_tv.tak").string();
  save_task_vector(path, spec, tv);
  NetSpec loaded_spec;
  const TaskVector r = load_task_vector(path, &loaded_spec);
  CHECK(loaded_spec == spec);
  CHECK(r.delta == tv.delta);
  CHECK(r.task_id == "task7");
  CHECK(r.default_alpha == 0.3);
  CHECK(r.anchor_hash == tv.anchor_hash);
  std::filesystem::remove(path);
}
