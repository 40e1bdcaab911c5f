#include "tak_bench/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <map>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "tak/curvature.hpp"
#include "tak/driftreg.hpp"
#include "tak/linearized.hpp"
#include "tak/serialize.hpp"
#include "tak/synthtasks.hpp"

namespace tak::bench {

namespace fs = std::filesystem;
using nlohmann::json;

std::size_t resolve_workers(const RunOptions& opts) {
  if (opts.serial) return 1;
  if (opts.workers > 0) return opts.workers;
  if (const char* env = std::getenv("TAK_WORKERS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n > 0) return static_cast<std::size_t>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

double NegationReport::mean_target() const {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rows) s += r.target;
  return s / static_cast<double>(rows.size());
}

std::string NegationReport::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "task_id,alpha,target,target_pretrained,control,feasible\n";
  for (const auto& r : rows)
    out << r.task_id << ',' << r.alpha << ',' << r.target << ',' << r.target_pretrained << ',' << r.control << ','
        << (r.feasible ? 1 : 0) << '\n';
  return out.str();
}

NegationReport negate(const ModelFamily& family, const std::vector<TaskVector>& vectors, const EvalSuite& suite,
                      const std::vector<double>& grid, double keep_fraction) {
  suite.validate();
  if (vectors.size() != suite.tests.size()) throw ShapeError("negate: one task vector per test set expected");
  if (grid.empty()) throw ParameterError("negate: empty α grid");
  NegationReport rep;
  rep.control_task = suite.control_task;
  rep.control_pretrained = suite.pretrained.at(suite.control_task);
  rep.keep_fraction = keep_fraction;
  const Dataset& control = suite.tests[suite.control_task];
  const double floor = keep_fraction * rep.control_pretrained;

  std::vector<double> sorted = grid;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t t = 0; t < vectors.size(); ++t) {
    if (t == suite.control_task) continue;
    NegationRow row;
    row.task_id = vectors[t].task_id;
    row.target_pretrained = suite.pretrained[t];
    for (double a : sorted) {
      const ParamVector v = a * vectors[t].delta;
      const double c = accuracy(family(v, control.inputs), control);
      if (c >= floor) {
        row.alpha = a;
        row.control = c;
        row.target = accuracy(family(v, suite.tests[t].inputs), suite.tests[t]);
        row.feasible = true;
        break;
      }
    }
    if (!row.feasible) {
      const ParamVector zero = vectors[t].delta.zeros_like();
      row.alpha = 0.0;
      row.control = accuracy(family(zero, control.inputs), control);
      row.target = accuracy(family(zero, suite.tests[t].inputs), suite.tests[t]);
    }
    rep.rows.push_back(row);
  }
  return rep;
}

namespace {

template <typename F>
void parallel_for(std::size_t n, std::size_t workers, F&& body) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          body(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::string file_hash(const fs::path& p) {
  const auto bytes = read_file_bytes(p.string());
  return hex64(fnv1a64(bytes));
}

std::string text_hash(const std::string& s) {
  return hex64(fnv1a64({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()}));
}

/// Files written by the run, keyed by path relative to the output directory.
class Artifacts {
 public:
  explicit Artifacts(fs::path root) : root_(std::move(root)) {}

  void put(const std::string& stage, const std::string& rel) {
    entries_[rel] = {stage, file_hash(root_ / rel)};
  }

  void put_tree(const std::string& stage, const std::string& rel_dir) {
    std::vector<std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root_ / rel_dir))
      if (e.is_regular_file()) files.push_back(fs::relative(e.path(), root_).generic_string());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) put(stage, f);
  }

  /// Re-hashes every artifact of `stage` before a dependent stage uses it.
  void require(const std::string& stage) const {
    for (const auto& [rel, e] : entries_) {
      if (e.stage != stage) continue;
      if (!fs::exists(root_ / rel)) throw StageError(stage, "artifact " + rel + " is missing");
      if (file_hash(root_ / rel) != e.hash) throw StageError(stage, "artifact " + rel + " changed on disk");
    }
  }

  json to_json() const {
    json a = json::array();
    for (const auto& [rel, e] : entries_) a.push_back({{"path", rel}, {"stage", e.stage}, {"fnv1a64", e.hash}});
    return a;
  }

 private:
  struct Entry {
    std::string stage;
    std::string hash;
  };
  fs::path root_;
  std::map<std::string, Entry> entries_;
};

template <typename F>
auto stage(const std::string& name, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

KfacCurvature compress(const KfacCurvature& c, const PenaltySection& p) {
  switch (p.compression) {
    case Compression::none: return c;
    case Compression::block: return compress_block(c, p.blocks);
    case Compression::lowrank:
      return compress_lowrank(c, p.rank > 0 ? RankSpec::of(p.rank) : RankSpec::of_fraction(p.rank_fraction));
    case Compression::prune: return compress_prune(c, p.keep);
    case Compression::quant8: return compress_quant8(c);
  }
  return c;
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json addition_json(const std::optional<AdditionSummary>& a) {
  if (!a) return nullptr;
  return {{"alpha", a->alpha}, {"absolute", a->absolute}, {"normalized", a->normalized}, {"per_task", a->per_task}};
}

std::vector<std::size_t> others(std::size_t n, std::size_t skip) {
  std::vector<std::size_t> o;
  for (std::size_t u = 0; u < n; ++u)
    if (u != skip) o.push_back(u);
  return o;
}

}  // namespace

PipelineSummary run_pipeline(const BenchConfig& cfg, const std::string& out_dir, const RunOptions& opts) {
  const auto t_start = std::chrono::steady_clock::now();
  const fs::path root(out_dir);
  fs::create_directories(root);
  const std::size_t workers = resolve_workers(opts);
  const std::size_t T = cfg.suite.n_tasks;
  Artifacts artifacts(root);
  json timing;
  auto lap = [&, last = t_start](const std::string& name) mutable {
    const auto now = std::chrono::steady_clock::now();
    timing[name] = std::chrono::duration<double>(now - last).count();
    last = now;
  };

  // Content-addressed stage keys: each folds the upstream key into its own section.
  const json full = json::parse(cfg.to_json());
  auto key_of = [&](const std::string& parent, std::initializer_list<const char*> sections) {
    json j = {{"parent", parent}};
    for (const char* s : sections) j[s] = full.at(s);
    return text_hash(j.dump());
  };
  json keys;
  keys["suite"] = key_of("", {"seed", "suite"});
  keys["pretrain"] = key_of(keys["suite"].get<std::string>(), {"network", "pretrain"});
  keys["curvature"] = key_of(keys["pretrain"].get<std::string>(), {"curvature", "penalty"});
  keys["finetune"] = key_of(keys["curvature"].get<std::string>(), {"finetune"});
  keys["evaluate"] = key_of(keys["finetune"].get<std::string>(), {"alpha", "sweep", "negation", "disentangle", "localize"});

  const Suite suite = stage("gen", [&] {
    Suite s = generate_suite(cfg.suite);
    save_suite((root / "suite").string(), s);
    artifacts.put_tree("gen", "suite");
    return s;
  });
  lap("gen");

  const NetSpec spec = cfg.network_spec();
  const ParamVector theta0 = stage("pretrain", [&] {
    artifacts.require("gen");
    ParamVector th = pretrain(spec, suite.pretrain, cfg.pretrain);
    save_checkpoint((root / "theta0.tak").string(), spec, th);
    artifacts.put("pretrain", "theta0.tak");
    return th;
  });
  lap("pretrain");

  const PenaltySection& pen = cfg.penalty;
  const bool kfac_source = pen.active() && (pen.source == PenaltySource::merged || pen.source == PenaltySource::per_task);
  FactorStore store;
  std::vector<ParamVector> diagonals;
  std::size_t curvature_bytes = 0;
  stage("kfac", [&] {
    artifacts.require("pretrain");
    if (kfac_source) {
      std::vector<KfacCurvature> curv(T);
      parallel_for(T, workers, [&](std::size_t t) {
        KfacOptions ko = cfg.curvature.kfac;
        ko.seed = cfg.seed + t;
        curv[t] = compress(kfac(spec, theta0, suite.train[t], ko), pen);
      });
      fs::create_directories(root / "curvature");
      for (auto& c : curv) {
        const std::string rel = "curvature/" + c.meta.task_id + ".tak";
        save_curvature((root / rel).string(), c);
        artifacts.put("kfac", rel);
        curvature_bytes += c.storage_bytes();
        store.add(std::move(c));
      }
    } else if (pen.active()) {
      diagonals.resize(T);
      parallel_for(T, workers, [&](std::size_t t) {
        diagonals[t] = diag_ggn(spec, theta0, suite.train[t], cfg.curvature.kfac.criterion);
      });
      fs::create_directories(root / "curvature");
      for (std::size_t t = 0; t < T; ++t) {
        const std::string rel = "curvature/" + suite.train[t].task_id + ".diag.tak";
        save_checkpoint((root / rel).string(), spec, diagonals[t]);
        artifacts.put("kfac", rel);
        curvature_bytes += diagonals[t].size() * sizeof(double);
      }
    }
  });
  lap("kfac");

  std::vector<TrainReport> reports(T);
  stage("finetune", [&] {
    artifacts.require("pretrain");
    artifacts.require("kfac");
    parallel_for(T, workers, [&](std::size_t t) {
      TrainConfig tc = cfg.train_config(t);
      const std::string& id = suite.train[t].task_id;
      if (pen.active()) {
        DriftPenalty p;
        if (pen.source == PenaltySource::merged) {
          p = DriftPenalty::from_merged(merge(store, id, pen.merge_mode), pen.beta);
        } else if (pen.source == PenaltySource::per_task) {
          p = DriftPenalty::from_store(store, id, pen.beta);
        } else {
          ParamVector d = theta0.zeros_like();
          double total = 0.0;
          for (std::size_t u : others(T, t)) total += static_cast<double>(suite.train[u].size());
          for (std::size_t u : others(T, t)) d.axpy(static_cast<double>(suite.train[u].size()) / total, diagonals[u]);
          p = DriftPenalty::from_diagonal(std::move(d), pen.beta);
        }
        p.apply_every = pen.apply_every;
        p.compensate = pen.compensate;
        p.last_layer_scale = pen.last_layer_scale;
        tc.penalty = std::move(p);
      }
      reports[t] = finetune(spec, theta0, suite.train[t], tc);
    });
    fs::create_directories(root / "vectors");
    fs::create_directories(root / "curves");
    for (std::size_t t = 0; t < T; ++t) {
      const std::string& id = suite.train[t].task_id;
      save_task_vector((root / "vectors" / (id + ".tak")).string(), spec, reports[t].tau);
      artifacts.put("finetune", "vectors/" + id + ".tak");
      write_text_file((root / "curves" / (id + ".csv")).string(), reports[t].curves_csv());
    }
  });
  lap("finetune");

  PipelineSummary sum;
  sum.config_hash = cfg.hash();
  sum.curvature_bytes = curvature_bytes;
  json results;
  stage("evaluate", [&] {
    artifacts.require("finetune");
    const LinearizedModel lin(spec, theta0);
    const ModelFamily family =
        cfg.finetune.regime == Regime::linearized ? linearized_family(lin) : network_family(spec, theta0);
    std::vector<TaskVector> tvs;
    for (const auto& r : reports) tvs.push_back(r.tau);
    const std::uint64_t anchor = hash_params(theta0);
    for (const auto& tv : tvs)
      if (tv.anchor_hash != anchor) throw ContractError("task vector '" + tv.task_id + "' has a foreign anchor");

    auto acc = [&](const ParamVector& tau, const Dataset& d) { return accuracy(family(tau, d.inputs), d); };
    auto summed = [&](double alpha) {
      ParamVector s = theta0.zeros_like();
      for (const auto& tv : tvs) s.axpy(alpha, tv.delta);
      return s;
    };

    EvalSuite es;
    es.tests = suite.test;
    for (std::size_t t = 0; t < T; ++t) {
      es.pretrained.push_back(acc(theta0.zeros_like(), suite.test[t]));
      es.individual.push_back(acc(tvs[t].delta, suite.test[t]));
    }
    es.control_task = cfg.negation.control < 0 ? T - 1 : static_cast<std::size_t>(cfg.negation.control);
    es.validate();

    auto addition = [&](double alpha) {
      AdditionSummary a;
      a.alpha = alpha;
      const ParamVector s = summed(alpha);
      double mean = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        a.per_task.push_back(acc(s, suite.test[t]));
        mean += a.per_task.back();
      }
      a.absolute = 100.0 * mean / static_cast<double>(T);
      a.normalized = normalized_accuracy(a.per_task, es.individual);
      return a;
    };

    const AdditionSummary fixed = addition(cfg.alpha.fixed);
    if (cfg.alpha.policy != AlphaPolicy::best) sum.fixed = fixed;
    if (cfg.alpha.policy != AlphaPolicy::fixed) {
      double best_alpha = cfg.alpha.grid.front();
      double best_val = -1.0;
      for (double a : cfg.alpha.grid) {
        const ParamVector s = summed(a);
        double v = 0.0;
        for (std::size_t t = 0; t < T; ++t) v += acc(s, suite.val[t]);
        if (v > best_val) {
          best_val = v;
          best_alpha = a;
        }
      }
      sum.best = addition(best_alpha);
    }

    std::vector<double> drift(T, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
      const auto o = others(T, t);
      for (std::size_t u : o) drift[t] += representation_drift(lin, tvs[t].delta, tvs[u].delta, 1.0, 1.0, suite.test[t]);
      if (!o.empty()) drift[t] /= static_cast<double>(o.size());
    }

    if (cfg.sweep.enabled) {
      // Sweep displacements from a zero origin; anchors were checked above.
      std::vector<TaskVector> detached = tvs;
      for (auto& tv : detached) tv.anchor_hash = 0;
      sum.sweep = alpha_sweep(theta0.zeros_like(), detached, cfg.sweep.grid, [&](const ParamVector& tau) {
        double m = 0.0;
        for (std::size_t t = 0; t < T; ++t) m += acc(tau, suite.test[t]);
        return 100.0 * m / static_cast<double>(T);
      });
      double lo = sum.sweep.front().metric, hi = lo;
      std::ostringstream csv;
      csv.precision(17);
      csv << "alpha,absolute\n";
      for (const auto& r : sum.sweep) {
        lo = std::min(lo, r.metric);
        hi = std::max(hi, r.metric);
        csv << r.alpha << ',' << r.metric << '\n';
      }
      sum.sweep_spread = hi - lo;
      write_text_file((root / "sweep.csv").string(), csv.str());
    }

    if (cfg.negation.enabled) {
      sum.negation = negate(family, tvs, es, cfg.negation.grid, cfg.negation.keep_fraction);
      write_text_file((root / "negation.csv").string(), sum.negation->to_csv());
    }

    if (cfg.disentangle.enabled) {
      const auto& d = cfg.disentangle;
      const std::size_t n = d.grid_size;
      std::vector<double> grid;
      for (std::size_t i = 0; i < n; ++i)
        grid.push_back(n == 1 ? 0.0 : d.max_alpha * static_cast<double>(i) / static_cast<double>(n - 1));
      const auto map = disentanglement_map(family, tvs[d.task_a].delta, tvs[d.task_b].delta, grid, grid,
                                           suite.test[d.task_a], suite.test[d.task_b]);
      sum.mean_xi = map.mean();
      write_text_file((root / "disentangle.csv").string(), map.to_csv());
    }

    std::vector<std::optional<double>> aucs(T);
    if (cfg.localize.enabled) {
      fs::create_directories(root / "normalcy");
      double m = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        std::vector<Dataset> outl;
        for (std::size_t u : others(T, t)) outl.push_back(suite.test[u]);
        const auto r = normalcy_scores(spec, theta0, tvs[t].delta, suite.test[t], concat(outl, "outliers"));
        aucs[t] = r.auc;
        m += r.auc;
        write_text_file((root / "normalcy" / (tvs[t].task_id + ".csv")).string(), r.to_csv());
      }
      sum.mean_auc = m / static_cast<double>(T);
    }

    json tasks = json::array();
    for (std::size_t t = 0; t < T; ++t) {
      TaskSummary ts{tvs[t].task_id, es.pretrained[t], es.individual[t], fixed.per_task[t],
                     norm2(tvs[t].delta.values()), drift[t], aucs[t]};
      sum.tasks.push_back(ts);
      const auto& rep = reports[t];
      tasks.push_back({{"task_id", ts.task_id},
                       {"pretrained", ts.pretrained},
                       {"individual", ts.individual},
                       {"merged_fixed", sum.fixed ? json(ts.merged_fixed) : json(nullptr)},
                       {"tau_norm", ts.tau_norm},
                       {"drift", ts.drift},
                       {"auc", optional_number(ts.auc)},
                       {"steps", rep.steps},
                       {"final_loss", rep.loss_curve.empty() ? json(nullptr) : json(rep.loss_curve.back())},
                       {"final_penalty", pen.active() && !rep.penalty_curve.empty() ? json(rep.penalty_curve.back())
                                                                                     : json(nullptr)}});
    }

    results["schema"] = kSchemaVersion;
    results["config_hash"] = sum.config_hash;
    results["seed"] = cfg.seed;
    results["regime"] = to_string(cfg.finetune.regime);
    results["penalty"] = {{"source", to_string(pen.source)},
                          {"beta", pen.beta},
                          {"active", pen.active()},
                          {"compression", to_string(pen.compression)},
                          {"apply_every", pen.apply_every}};
    results["tasks"] = tasks;
    results["addition"] = {{"fixed", addition_json(sum.fixed)}, {"best", addition_json(sum.best)}};
    if (cfg.sweep.enabled) {
      json rows = json::array();
      for (const auto& r : sum.sweep) rows.push_back({{"alpha", r.alpha}, {"absolute", r.metric}});
      results["sweep"] = {{"rows", rows}, {"spread", *sum.sweep_spread}};
    } else {
      results["sweep"] = nullptr;
    }
    if (sum.negation) {
      json rows = json::array();
      for (const auto& r : sum.negation->rows)
        rows.push_back({{"task_id", r.task_id},
                        {"alpha", r.alpha},
                        {"target", r.target},
                        {"target_pretrained", r.target_pretrained},
                        {"control", r.control},
                        {"feasible", r.feasible}});
      results["negation"] = {{"control_task", sum.negation->control_task},
                             {"control_pretrained", sum.negation->control_pretrained},
                             {"keep_fraction", sum.negation->keep_fraction},
                             {"mean_target", sum.negation->mean_target()},
                             {"rows", rows}};
    } else {
      results["negation"] = nullptr;
    }
    results["disentanglement"] =
        sum.mean_xi ? json{{"task_a", cfg.disentangle.task_a},
                           {"task_b", cfg.disentangle.task_b},
                           {"grid_size", cfg.disentangle.grid_size},
                           {"mean_xi", *sum.mean_xi}}
                    : json(nullptr);
    results["localization"] = sum.mean_auc ? json{{"mean_auc", *sum.mean_auc}} : json(nullptr);
    results["curvature"] = pen.active() ? json{{"files", T}, {"storage_bytes", curvature_bytes}} : json(nullptr);
  });
  lap("evaluate");

  sum.results_json = results.dump(2) + "\n";
  write_text_file((root / "results.json").string(), sum.results_json);
  write_text_file((root / "config.json").string(), cfg.to_json() + "\n");

  json manifest;
  manifest["format"] = "tak-run-manifest";
  manifest["config_hash"] = sum.config_hash;
  manifest["command"] = opts.command;
  manifest["seeds"] = {{"suite", cfg.seed},
                       {"pretrain", cfg.pretrain.seed},
                       {"kfac", cfg.seed},
                       {"finetune", cfg.seed * 100}};
  manifest["stages"] = keys;
  manifest["artifacts"] = artifacts.to_json();
  manifest["results_fnv1a64"] = text_hash(sum.results_json);
  write_text_file((root / "manifest.json").string(), manifest.dump(2) + "\n");

  timing["total"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  timing["workers"] = workers;
  write_text_file((root / "timing.json").string(), timing.dump(2) + "\n");
  return sum;
}

std::string inspect_curvature(const std::vector<std::string>& paths) {
  std::ostringstream out;
  out.precision(6);
  FactorStore store;
  for (const auto& path : paths) {
    const KfacCurvature c = load_curvature(path);
    out << path << ": task " << c.meta.task_id << ", variant " << c.meta.variant << ", " << c.meta.n_samples
        << " samples, " << c.layers.size() << " layers, " << c.exact_blocks.size() << " exact blocks\n";
    out << "layer  factor  dim  scheme   eig_min       eig_max       trace         bytes\n";
    for (std::size_t l = 0; l < c.layers.size(); ++l) {
      for (const auto* f : {&c.layers[l].a, &c.layers[l].b}) {
        const SymEig e = sym_eig(f->matrix);
        double tr = 0.0;
        for (std::size_t i = 0; i < f->dim(); ++i) tr += f->matrix(i, i);
        out << l << "      " << (f == &c.layers[l].a ? 'A' : 'B') << "       " << f->dim() << "  " << to_string(f->scheme)
            << "  " << e.eigenvalues.back() << "  " << e.eigenvalues.front() << "  " << tr << "  "
            << f->storage_bytes() << '\n';
      }
    }
    const double full = static_cast<double>(c.storage_bytes());
    out << "storage bytes: stored " << c.storage_bytes();
    auto ratio = [&](const char* name, auto&& make) {
      try {
        const std::size_t b = make().storage_bytes();
        out << ", " << name << ' ' << b << " (ratio " << static_cast<double>(b) / full << ')';
      } catch (const Error&) {
        out << ", " << name << " n/a";
      }
    };
    ratio("block8", [&] { return compress_block(c, 8); });
    ratio("lowrank25%", [&] { return compress_lowrank(c, RankSpec::of_fraction(0.25)); });
    ratio("prune10%", [&] { return compress_prune(c, 0.1); });
    ratio("quant8", [&] { return compress_quant8(c); });
    out << '\n';
    if (paths.size() > 1) store.add(c);
  }
  if (paths.size() > 1) {
    const MergeErrorReport r = merge_error(store, "");
    out << "merge error over " << r.n_tasks << " tasks\n";
    out << "layer  sigma_a       sigma_b       bound         actual        holds\n";
    for (const auto& l : r.layers)
      out << l.layer << "      " << l.sigma_a << "  " << l.sigma_b << "  " << l.bound << "  " << l.actual << "  "
          << (l.actual <= l.bound + 1e-8 ? "yes" : "no") << '\n';
  }
  return out.str();
}

}  // namespace tak::bench
