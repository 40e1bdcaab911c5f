#include <benchmark/benchmark.h>

#include "tak/curvature.hpp"
#include "tak/driftreg.hpp"
#include "tak/linalg.hpp"
#include "tak/network.hpp"
#include "tak/regfactors.hpp"

using namespace tak;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  Matrix m(r, c);
  for (auto& v : m.data()) v = rng.normal();
  return m;
}

Matrix random_spd(Rng& rng, std::size_t n) {
  const Matrix g = random_matrix(rng, n, n + 2);
  return matmul_nt(g, g);
}

ParamVector random_params(const NetSpec& spec, Rng& rng, double scale) {
  ParamVector p = ParamVector::zeros(spec);
  for (auto& v : p.values()) v = scale * rng.normal();
  return p;
}

Dataset random_dataset(Rng& rng, std::size_t n, std::size_t d, std::size_t classes) {
  Dataset ds;
  ds.inputs = random_matrix(rng, n, d);
  for (std::size_t i = 0; i < n; ++i) ds.labels.push_back(rng.below(classes));
  return ds;
}

const NetSpec kNet = NetSpec::mlp({16, 64, 64, 12}, Activation::tanh);

}  // namespace

static void BM_KronQuadraticForm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Matrix b = random_spd(rng, n), a = random_spd(rng, n + 1);
  const Matrix t = random_matrix(rng, n, n + 1);
  for (auto _ : state) benchmark::DoNotOptimize(kron_quadratic_form(b, a, t.data()));
}
BENCHMARK(BM_KronQuadraticForm)->RangeMultiplier(2)->Range(8, 128);

static void BM_Forward(benchmark::State& state) {
  Rng rng(2);
  const ParamVector th = random_params(kNet, rng, 0.2);
  const Matrix x = random_matrix(rng, static_cast<std::size_t>(state.range(0)), 16);
  for (auto _ : state) benchmark::DoNotOptimize(forward(kNet, th, x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(64)->Arg(512);

static void BM_Jvp(benchmark::State& state) {
  Rng rng(3);
  const ParamVector th = random_params(kNet, rng, 0.2), v = random_params(kNet, rng, 1.0);
  const Matrix x = random_matrix(rng, static_cast<std::size_t>(state.range(0)), 16);
  for (auto _ : state) benchmark::DoNotOptimize(jvp(kNet, th, x, v));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Jvp)->Arg(64)->Arg(512);

static void BM_Kfac(benchmark::State& state) {
  Rng rng(4);
  const ParamVector th = random_params(kNet, rng, 0.2);
  const Dataset d = random_dataset(rng, static_cast<std::size_t>(state.range(0)), 16, 12);
  KfacOptions o;
  o.sample = SampleSpec::all();
  o.variant = state.range(1) ? KfacVariant::exact : KfacVariant::mc;
  for (auto _ : state) benchmark::DoNotOptimize(kfac(kNet, th, d, o));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Kfac)->ArgNames({"n", "exact"})->Args({256, 0})->Args({256, 1});

static void BM_PenaltyGrad(benchmark::State& state) {
  Rng rng(5);
  const ParamVector th = random_params(kNet, rng, 0.2), tau = random_params(kNet, rng, 0.1);
  KfacOptions o;
  o.sample = SampleSpec::all();
  FactorStore store;
  for (long t = 0; t < state.range(0); ++t) {
    KfacCurvature c = kfac(kNet, th, random_dataset(rng, 32, 16, 12), o);
    c.meta.task_id = "t" + std::to_string(t);
    store.add(c);
  }
  const DriftPenalty p = state.range(1) ? DriftPenalty::from_merged(merge(store, ""), 0.01)
                                        : DriftPenalty::from_store(store, "", 0.01);
  ParamVector g;
  for (auto _ : state) benchmark::DoNotOptimize(penalty_with_grad(p, tau, g));
}
BENCHMARK(BM_PenaltyGrad)->ArgNames({"T", "merged"})->ArgsProduct({{2, 4, 8}, {0, 1}});

static void BM_Merge(benchmark::State& state) {
  Rng rng(6);
  const ParamVector th = random_params(kNet, rng, 0.2);
  KfacOptions o;
  o.sample = SampleSpec::all();
  FactorStore store;
  for (long t = 0; t < state.range(0); ++t) {
    KfacCurvature c = kfac(kNet, th, random_dataset(rng, 32, 16, 12), o);
    c.meta.task_id = "t" + std::to_string(t);
    store.add(c);
  }
  for (auto _ : state) benchmark::DoNotOptimize(merge(store, "t0"));
}
BENCHMARK(BM_Merge)->Arg(4)->Arg(16);
BENCHMARK_MAIN();
