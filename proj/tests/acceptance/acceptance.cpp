// One PASS/FAIL line per acceptance criterion; exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "tak/criterion.hpp"
#include "tak/curvature.hpp"
#include "tak/driftreg.hpp"
#include "tak/linearized.hpp"
#include "tak/metrics.hpp"
#include "tak/regfactors.hpp"
#include "tak/serialize.hpp"
#include "tak/synthtasks.hpp"
#include "tak_bench/config.hpp"
#include "tak_bench/pipeline.hpp"

using namespace tak;
using namespace tak::testing;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const char* name, const std::function<Verdict()>& check) {
  Verdict v;
  try {
    v = check();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  if (!v.pass) ++failures;
  std::printf("%s  %2d  %-28s %s\n", v.pass ? "PASS" : "FAIL", id, name, v.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

KfacOptions exact_opts() {
  KfacOptions o;
  o.variant = KfacVariant::exact;
  o.sample = SampleSpec::all();
  return o;
}

NetSpec random_spec(Rng& rng, std::size_t max_width) {
  std::vector<std::size_t> dims{2 + rng.below(max_width - 1)};
  const std::size_t depth = 1 + rng.below(3);
  for (std::size_t l = 0; l < depth; ++l) dims.push_back(2 + rng.below(max_width - 1));
  return NetSpec::mlp(dims, Activation::tanh);
}

// Paired pipeline runs ------------------------------------------------------

const std::vector<std::uint64_t> kSeeds{0, 1, 2};

struct Variant {
  std::string name;
  std::vector<std::string> overrides;
};

const std::vector<Variant> kVariants{
    {"tak", {}},
    {"baseline", {"penalty.beta=0"}},
    {"per_task", {"penalty.source=\"per_task\""}},
    {"block8", {"penalty.compression.scheme=\"block\"", "penalty.compression.blocks=8"}},
    {"every4", {"penalty.apply_every=4"}},
    {"every16", {"penalty.apply_every=16"}},
};

std::map<std::string, std::vector<bench::PipelineSummary>> runs;
double paired_seconds = 0.0;

fs::path work_dir() { return fs::temp_directory_path() / "tak_acceptance"; }

void run_variants() {
  fs::remove_all(work_dir());
  for (const auto& v : kVariants) {
    for (std::uint64_t s : kSeeds) {
      bench::BenchConfig cfg;
      cfg.seed = s;
      for (const auto& o : v.overrides) cfg.apply_override(o);
      const auto t0 = Clock::now();
      runs[v.name].push_back(bench::run_pipeline(cfg, (work_dir() / (v.name + "_s" + std::to_string(s))).string()));
      if (v.name == "tak" || v.name == "baseline") paired_seconds += seconds_since(t0);
    }
  }
}

double mean_of(const std::string& variant, const std::function<double(const bench::PipelineSummary&)>& f) {
  double s = 0.0;
  for (const auto& r : runs.at(variant)) s += f(r);
  return s / static_cast<double>(runs.at(variant).size());
}

double merged_abs(const bench::PipelineSummary& r) { return r.fixed->absolute; }
double merged_norm(const bench::PipelineSummary& r) { return r.fixed->normalized; }

std::string per_seed(const std::string& variant, const std::function<double(const bench::PipelineSummary&)>& f,
                     const char* spec = "%.2f") {
  std::string out;
  for (const auto& r : runs.at(variant)) out += (out.empty() ? "" : "/") + fmt(spec, f(r));
  return out;
}

// Criteria -------------------------------------------------------------------

Verdict gram_identity() {
  const auto t0 = Clock::now();
  Rng rng(1001);
  double worst = 0.0;
  std::size_t nets = 0;
  while (nets < 8) {
    const NetSpec spec = random_spec(rng, 12);
    if (ParamLayout::from_spec(spec).total > 500) continue;
    const ParamVector th = random_params(spec, rng, 0.7);
    const Dataset d = random_dataset(rng, 1 + rng.below(32), spec.input_dim(), spec.output_dim());
    worst = std::max(worst, rel_error(exact_ggn(spec, th, d, Criterion::squared).g, gram_oracle(spec, th, d.inputs)));
    ++nets;
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-10 && t < 5.0, fmt("max rel err %.2e over %zu nets, %.2f s", worst, nets, t)};
}

Verdict drift_identity() {
  const auto t0 = Clock::now();
  Rng rng(1002);
  double worst = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    const NetSpec spec = random_spec(rng, 8);
    const ParamVector th0 = random_params(spec, rng, 0.7);
    const LinearizedModel m(spec, th0);
    const Dataset d = random_dataset(rng, 1 + rng.below(16), spec.input_dim(), spec.output_dim());
    const ParamVector tt = random_params(spec, rng), tu = random_params(spec, rng);
    const double at = rng.uniform() * 2.0, au = 0.1 + rng.uniform() * 2.0;
    const Matrix g = exact_ggn(spec, th0, d, Criterion::squared).g;
    const double expected = au * au * dot(tu.values(), matvec(g, tu.values()));
    const double got = representation_drift(m, tt, tu, at, au, d);
    worst = std::max(worst, std::abs(got - expected) / std::abs(expected));
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-8 && t < 5.0, fmt("max rel err %.2e over 20 instances, %.2f s", worst, t)};
}

Verdict kron_identity() {
  const auto t0 = Clock::now();
  Rng rng(1003);
  double worst = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t d1 = 1 + rng.below(12), d2 = 1 + rng.below(12);
    const Matrix b = random_spd(rng, d1), a = random_spd(rng, d2);
    const Matrix tau = random_matrix(rng, d1, d2);
    const double dense = dot(tau.data(), matvec(kron(b, a), tau.data()));
    worst = std::max(worst, std::abs(kron_quadratic_form(b, a, tau.data()) - dense) / std::abs(dense));
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-10 && t < 1.0, fmt("max rel err %.2e over 50 triples, %.3f s", worst, t)};
}

Verdict single_datum() {
  Rng rng(1004);
  double worst = 0.0;
  for (int rep = 0; rep < 10; ++rep) {
    const NetSpec spec = NetSpec::mlp({2 + rng.below(8), 2 + rng.below(8)}, Activation::tanh);
    const ParamVector th = random_params(spec, rng);
    const Dataset d = random_dataset(rng, 1, spec.input_dim(), spec.output_dim());
    const KfacCurvature k = kfac(spec, th, d, exact_opts());
    worst = std::max(worst, rel_error(kron(k.layers[0].b.matrix, k.layers[0].a.matrix),
                                      exact_ggn(spec, th, d, Criterion::squared).g));
  }
  return {worst <= 1e-10, fmt("max rel err %.2e over 10 layers", worst)};
}

Verdict mc_estimator() {
  Rng rng(1005);
  const NetSpec spec = NetSpec::mlp({4, 5}, Activation::tanh);
  const ParamVector th = random_params(spec, rng);
  const Dataset d = random_dataset(rng, 16, 4, 5);
  const Matrix exact = kfac(spec, th, d, exact_opts()).layers[0].b.matrix;
  auto err = [&](std::size_t m, std::uint64_t seed) {
    KfacOptions o = exact_opts();
    o.variant = KfacVariant::mc;
    o.mc_samples = m;
    o.seed = seed;
    return rel_error(kfac(spec, th, d, o).layers[0].b.matrix, exact);
  };
  const double fixed = err(4096, 7);
  double e1 = 0.0, e16 = 0.0, e4096 = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    e1 += err(1, s) / 10.0;
    e16 += err(16, s) / 10.0;
    e4096 += err(4096, s) / 10.0;
  }
  return {fixed <= 0.05 && e4096 < e16 && e16 < e1,
          fmt("M=4096 err %.4f; seed-mean M=1/16/4096: %.3f/%.3f/%.4f", fixed, e1, e16, e4096)};
}

Verdict merge_bound() {
  Rng rng(1006);
  std::size_t held = 0;
  double worst_ratio = 0.0, worst_mismatch = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const NetSpec spec = NetSpec::mlp({1 + rng.below(3), 1 + rng.below(4)}, Activation::tanh);
    const ParamLayout layout = ParamLayout::from_spec(spec);
    const std::size_t na = layout.layers[0].cols(), nb = layout.layers[0].out_dim;
    FactorStore store;
    Matrix sum_a(na, na), sum_b(nb, nb), e(na * nb, na * nb);
    for (int t = 0; t < 5; ++t) {
      KfacCurvature c;
      c.meta.task_id = "t" + std::to_string(t);
      c.meta.dataset_size = 1;
      c.layout = layout;
      const Matrix a = random_spd(rng, na, 0.0), b = random_spd(rng, nb, 0.0);
      c.layers.push_back({Factor::dense(a), Factor::dense(b)});
      store.add(c);
      e += kron(b, a);
      sum_a += a;
      sum_b += b;
    }
    e -= 0.2 * kron(sum_b, sum_a);
    const double actual = frobenius_norm(e);
    const LayerMergeError le = merge_error(store, "").layers[0];
    held += actual <= le.bound * (1.0 + 1e-12);
    worst_ratio = std::max(worst_ratio, actual / le.bound);
    worst_mismatch = std::max(worst_mismatch, std::abs(actual - le.actual) / std::max(actual, 1e-300));
  }
  // Identical factors.
  bool zero = true;
  for (int trial = 0; trial < 20; ++trial) {
    const NetSpec spec = NetSpec::mlp({1 + rng.below(3), 1 + rng.below(4)}, Activation::tanh);
    const ParamLayout layout = ParamLayout::from_spec(spec);
    const Matrix a = random_spd(rng, layout.layers[0].cols()), b = random_spd(rng, layout.layers[0].out_dim);
    FactorStore store;
    for (int t = 0; t < 5; ++t) {
      KfacCurvature c;
      c.meta.task_id = "t" + std::to_string(t);
      c.meta.dataset_size = 1;
      c.layout = layout;
      c.layers.push_back({Factor::dense(a), Factor::dense(b)});
      store.add(c);
    }
    zero = zero && merge_error(store, "").layers[0].actual == 0.0;
  }
  return {held == 100 && zero && worst_mismatch < 1e-8,
          fmt("bound held %zu/100, max ||E||/bound %.3f, identical sets give E=0: %s", held, worst_ratio,
              zero ? "yes" : "no")};
}

Verdict gradient_checks() {
  Rng rng(1007);
  double w_pen = 0.0, w_back = 0.0, w_lin = 0.0, w_crit = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    const NetSpec spec = random_spec(rng, 6);
    const ParamVector th = random_params(spec, rng, 0.7);
    const Matrix x = random_matrix(rng, 1 + rng.below(6), spec.input_dim());
    const Dataset d = random_dataset(rng, 4, spec.input_dim(), spec.output_dim());

    // penalty_grad on merged KFAC from two tasks
    FactorStore store;
    for (int t = 0; t < 2; ++t) {
      KfacCurvature c = kfac(spec, th, random_dataset(rng, 5, spec.input_dim(), spec.output_dim()), exact_opts());
      c.meta.task_id = "t" + std::to_string(t);
      store.add(c);
    }
    const DriftPenalty p = DriftPenalty::from_merged(merge(store, ""), 0.5);
    const ParamVector tau = random_params(spec, rng, 0.5);
    const Vector fd_pen = fd_gradient([&](const Vector& v) { return penalty(p, ParamVector(tau.layout(), v)); },
                                      tau.vector());
    w_pen = std::max(w_pen, rel_error(penalty_grad(p, tau).values(), fd_pen));

    // backward
    const Matrix up = random_matrix(rng, x.rows(), spec.output_dim());
    const Vector fd_back = fd_gradient(
        [&](const Vector& v) { return frobenius_inner(forward(spec, ParamVector(th.layout(), v), x), up); },
        th.vector());
    w_back = std::max(w_back, rel_error(backward(spec, th, x, up).grad.values(), fd_back));

    // lin_backward through the criterion
    const LinearizedModel m(spec, th);
    const Criterion kind = rep % 2 ? Criterion::cross_entropy : Criterion::squared;
    auto lin_loss = [&](const ParamVector& t) { return criterion_loss(kind, m.forward_displacement(t, d.inputs), d.labels); };
    const ParamVector g_lin = lin_backward(m, th + tau, d.inputs, lin_loss(tau).grad);
    const Vector fd_lin =
        fd_gradient([&](const Vector& v) { return lin_loss(ParamVector(tau.layout(), v)).loss; }, tau.vector());
    w_lin = std::max(w_lin, rel_error(g_lin.values(), fd_lin));

    // criterion gradients
    const Matrix f = random_matrix(rng, 5, spec.output_dim());
    std::vector<std::size_t> y;
    for (int i = 0; i < 5; ++i) y.push_back(rng.below(spec.output_dim()));
    const LossResult lr = criterion_loss(kind, f, y);
    const Vector fd_crit = fd_gradient(
        [&](const Vector& v) { return criterion_loss(kind, Matrix(f.rows(), f.cols(), v), y).loss; }, f.values());
    w_crit = std::max(w_crit, rel_error(lr.grad.data(), fd_crit));
  }
  const double worst = std::max({w_pen, w_back, w_lin, w_crit});
  return {worst <= 1e-6,
          fmt("max rel err penalty %.1e, backward %.1e, lin_backward %.1e, criterion %.1e", w_pen, w_back, w_lin, w_crit)};
}

Verdict addition() {
  const double tak = mean_of("tak", merged_abs), base = mean_of("baseline", merged_abs);
  const double norm = mean_of("tak", merged_norm);
  return {tak - base >= 5.0 && norm >= 95.0 && paired_seconds < 600.0,
          fmt("TAK %.2f vs baseline %.2f (seeds %s vs %s), normalized %.1f%%, %.0f s", tak, base,
              per_seed("tak", merged_abs).c_str(), per_seed("baseline", merged_abs).c_str(), norm, paired_seconds)};
}

Verdict alpha_robustness() {
  auto spread = [](const bench::PipelineSummary& r) { return *r.sweep_spread; };
  bool every_seed = true;
  for (std::size_t i = 0; i < kSeeds.size(); ++i)
    every_seed = every_seed && spread(runs["tak"][i]) < spread(runs["baseline"][i]);
  const double tak = mean_of("tak", spread), base = mean_of("baseline", spread);
  return {every_seed && tak < base, fmt("spread TAK %s vs baseline %s points", per_seed("tak", spread).c_str(),
                                        per_seed("baseline", spread).c_str())};
}

Verdict negation() {
  auto target = [](const bench::PipelineSummary& r) { return 100.0 * r.negation->mean_target(); };
  bool control_ok = true;
  for (const auto& r : runs["tak"])
    for (const auto& row : r.negation->rows)
      control_ok = control_ok && row.feasible && row.control >= r.negation->keep_fraction * r.negation->control_pretrained;
  const double chance = 100.0 / static_cast<double>(bench::BenchConfig().suite.classes_per_task);
  const double tak = mean_of("tak", target), base = mean_of("baseline", target);
  return {control_ok && tak <= chance + 10.0 && base > tak,
          fmt("target acc TAK %.1f vs baseline %.1f (chance %.1f), control kept: %s", tak, base, chance,
              control_ok ? "yes" : "no")};
}

Verdict localization() {
  auto a = [](const bench::PipelineSummary& r) { return *r.mean_auc; };
  const double tak = mean_of("tak", a), base = mean_of("baseline", a);
  return {tak >= 0.9 && tak >= base, fmt("AUC TAK %.3f vs baseline %.3f", tak, base)};
}

Verdict merged_vs_per_task() {
  const double merged = mean_of("tak", merged_abs), naive = mean_of("per_task", merged_abs);

  // Per-step cost of the merged penalty as the task count grows.
  const NetSpec spec = bench::BenchConfig().network_spec();
  Rng rng(1012);
  const ParamVector th = random_params(spec, rng, 0.3);
  const ParamVector tau = random_params(spec, rng, 0.1);
  KfacOptions o = exact_opts();
  std::vector<DriftPenalty> pens;
  FactorStore store;
  for (std::size_t t = 0; t < 8; ++t) {
    KfacCurvature c = kfac(spec, th, random_dataset(rng, 32, spec.input_dim(), spec.output_dim()), o);
    c.meta.task_id = "t" + std::to_string(t);
    store.add(c);
    if (t == 1 || t == 3 || t == 7) pens.push_back(DriftPenalty::from_merged(merge(store, ""), 0.01));
  }
  // Calls are interleaved one at a time so load spikes hit every T alike.
  std::vector<std::vector<double>> samples(pens.size());
  ParamVector g;
  double sink = 0.0;
  for (int round = 0; round < 1000; ++round) {
    for (std::size_t i = 0; i < pens.size(); ++i) {
      const auto t0 = Clock::now();
      sink += penalty_with_grad(pens[i], tau, g);
      samples[i].push_back(seconds_since(t0));
    }
  }
  std::vector<double> best;
  for (auto& v : samples) {
    std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
    best.push_back(v[v.size() / 2]);
  }
  const auto [lo, hi] = std::minmax_element(best.begin(), best.end());
  const double variation = (*hi - *lo) / *lo;
  return {std::abs(merged - naive) <= 2.0 && variation <= 0.10 && std::isfinite(sink),
          fmt("merged %.2f vs per-task %.2f; median penalty step %.1f/%.1f/%.1f us at T=2/4/8 (%.1f%% spread)", merged, naive,
              1e6 * best[0], 1e6 * best[1], 1e6 * best[2], 100.0 * variation)};
}

Verdict compression() {
  // Storage on divisible dimensions.
  const NetSpec spec = NetSpec::mlp({64, 64, 32}, Activation::tanh, false);
  Rng rng(1013);
  const KfacCurvature c = kfac(spec, random_params(spec, rng, 0.2), random_dataset(rng, 16, 64, 32), exact_opts());
  const double saved = 1.0 - static_cast<double>(compress_block(c, 8).storage_bytes()) / static_cast<double>(c.storage_bytes());

  const double full = mean_of("tak", merged_abs), block = mean_of("block8", merged_abs);

  // Factor-level properties over 50 random factors per scheme.
  bool lowrank_ok = true, prune_ok = true, quant_ok = true;
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t n = 2 + rng.below(15);
    const Matrix m = random_spd(rng, n);
    const SymEig e = sym_eig(m);
    const double scale = frobenius_norm(m);
    double prev = INFINITY;
    for (std::size_t k = 1; k <= n; ++k) {
      const double err = frobenius_norm(m - lowrank_factor(m, k).matrix);
      double tail = 0.0;
      for (std::size_t i = k; i < n; ++i) tail += e.eigenvalues[i] * e.eigenvalues[i];
      lowrank_ok = lowrank_ok && std::abs(err - std::sqrt(tail)) <= 1e-10 * scale && err <= prev + 1e-10 * scale;
      prev = err;
    }

    const double keep = 0.05 + 0.9 * rng.uniform();
    const Factor pf = prune_factor(m, keep);
    const std::size_t upper = n * (n + 1) / 2;
    double min_kept = INFINITY;
    for (const auto& entry : pf.coo) min_kept = std::min(min_kept, std::abs(entry.value));
    std::size_t above = 0;
    double dropped = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i; j < n; ++j) {
        above += std::abs(m(i, j)) > min_kept;
        if (pf.matrix(i, j) == 0.0) dropped = std::max(dropped, std::abs(m(i, j)));
      }
    prune_ok = prune_ok && pf.coo.size() == static_cast<std::size_t>(std::ceil(keep * upper - 1e-9 * keep * upper)) &&
               above <= pf.coo.size() && dropped <= min_kept && is_symmetric(pf.matrix, 0.0);

    const Factor qf = quant8_factor(m);
    const Matrix rows = dequantize_rows(n, qf.q, qf.scales);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) quant_ok = quant_ok && std::abs(rows(i, j) - m(i, j)) <= 0.5 * qf.scales[i] * (1 + 1e-12);
    quant_ok = quant_ok && is_symmetric(qf.matrix, 0.0) && min_eigenvalue(qf.matrix) >= -1e-2 * scale;
  }
  return {std::abs(saved - 0.875) < 1e-15 && full - block <= 2.0 && lowrank_ok && prune_ok && quant_ok,
          fmt("block-8 saves %.1f%%, accuracy %.2f -> %.2f; lowrank %s, prune %s, quant8 %s", 100.0 * saved, full, block,
              lowrank_ok ? "ok" : "bad", prune_ok ? "ok" : "bad", quant_ok ? "ok" : "bad")};
}

Verdict interval() {
  const double a1 = mean_of("tak", merged_abs), a4 = mean_of("every4", merged_abs), a16 = mean_of("every16", merged_abs);
  return {a1 >= a4 && a4 >= a16 && a1 - a16 <= 3.0, fmt("apply_every 1/4/16: %.2f/%.2f/%.2f (seed mean)", a1, a4, a16)};
}

Verdict determinism() {
  bench::BenchConfig cfg;
  bench::RunOptions opts;
  opts.serial = true;
  const fs::path a = work_dir() / "serial_a", b = work_dir() / "serial_b";
  bench::run_pipeline(cfg, a.string(), opts);
  bench::run_pipeline(cfg, b.string(), opts);
  const auto ba = read_file_bytes((a / "results.json").string());
  const auto bb = read_file_bytes((b / "results.json").string());
  const auto parallel = read_file_bytes((work_dir() / "tak_s0" / "results.json").string());
  return {ba == bb && !ba.empty(), fmt("results.json %zu bytes, serial runs identical: %s, parallel run identical: %s",
                                       ba.size(), ba == bb ? "yes" : "no", ba == parallel ? "yes" : "no")};
}

}  // namespace

int main() {
  report(1, "gram-ggn identity", gram_identity);
  report(2, "drift identity", drift_identity);
  report(3, "kronecker quadratic form", kron_identity);
  report(4, "kfac single-datum exactness", single_datum);
  report(5, "mc estimator", mc_estimator);
  report(6, "merge bound", merge_bound);
  report(7, "gradient checks", gradient_checks);

  bool ran = true;
  try {
    run_variants();
  } catch (const std::exception& e) {
    std::printf("pipeline runs failed: %s\n", e.what());
    ran = false;
  }
  auto paired = [&](int id, const char* name, Verdict (*f)()) {
    report(id, name, ran ? std::function<Verdict()>(f) : [] { return Verdict{false, "pipeline runs failed"}; });
  };
  paired(8, "end-to-end addition", addition);
  paired(9, "alpha robustness", alpha_robustness);
  paired(10, "negation", negation);
  paired(11, "task localization", localization);
  paired(12, "merged vs per-task penalty", merged_vs_per_task);
  paired(13, "compression", compression);
  paired(14, "penalty interval", interval);
  report(15, "determinism", determinism);

  std::printf("%d of 15 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
