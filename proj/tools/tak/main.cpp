#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tak/curvature.hpp"
#include "tak/driftreg.hpp"
#include "tak/errors.hpp"
#include "tak/linearized.hpp"
#include "tak/metrics.hpp"
#include "tak/regfactors.hpp"
#include "tak/serialize.hpp"
#include "tak/synthtasks.hpp"
#include "tak/taskvec.hpp"
#include "tak/training.hpp"
#include "tak_bench/config.hpp"
#include "tak_bench/pipeline.hpp"

namespace {

using namespace tak;
using bench::BenchConfig;
using nlohmann::json;

/// --config FILE plus repeated --set a.b=v, resolved flag > file > default.
struct ConfigArgs {
  std::string file;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", file, "JSON config file");
    cmd->add_option("--set", overrides, "Override a config field, e.g. --set finetune.lr=0.01");
  }

  BenchConfig resolve(const std::vector<std::string>& extra = {}) const {
    BenchConfig c = file.empty() ? BenchConfig{} : BenchConfig::from_file(file);
    for (const auto& o : overrides) c.apply_override(o);
    for (const auto& o : extra) c.apply_override(o);
    return c;
  }
};

std::size_t task_index(const Suite& s, const std::string& id) {
  for (std::size_t t = 0; t < s.tasks.size(); ++t)
    if (s.tasks[t].task_id == id) return t;
  throw ParameterError("suite has no task '" + id + "'");
}

std::vector<TaskVector> load_vectors(const std::vector<std::string>& paths) {
  std::vector<TaskVector> tvs;
  for (const auto& p : paths) tvs.push_back(load_task_vector(p));
  return tvs;
}

ModelFamily family_for(const BenchConfig& cfg, const Checkpoint& ck) {
  if (cfg.finetune.regime == Regime::linearized) return linearized_family(LinearizedModel(ck.spec, ck.theta));
  return network_family(ck.spec, ck.theta);
}

/// Test sets matching the vectors' task ids, in the vectors' order.
std::vector<Dataset> tests_for(const Suite& s, const std::vector<TaskVector>& tvs) {
  std::vector<Dataset> out;
  for (const auto& tv : tvs) out.push_back(s.test[task_index(s, tv.task_id)]);
  return out;
}

void write_or_print(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
  } else {
    write_text_file(path, text);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Task arithmetic with dataless drift regularization"};
  app.require_subcommand(1);

  std::string out, suite_dir, theta0_path, task, exclude, csv, penalty_path, control_id;
  std::vector<std::string> vectors, files;
  std::vector<double> alphas;
  double beta = 0.0, alpha = 1.0;
  bool serial = false;
  std::size_t workers = 0;
  std::string mode = "summed_b";

  auto need = [](CLI::Option* o) { return o->required(); };

  ConfigArgs gen_cfg;
  auto* gen = app.add_subcommand("gen", "Generate the synthetic task suite");
  gen_cfg.attach(gen);
  need(gen->add_option("--out", out, "Output directory"));

  ConfigArgs pre_cfg;
  auto* pre = app.add_subcommand("pretrain", "Pretrain θ0 on the suite's pretraining split");
  pre_cfg.attach(pre);
  need(pre->add_option("--suite", suite_dir, "Suite directory"));
  need(pre->add_option("--out", out, "Checkpoint to write"));

  ConfigArgs kfac_cfg;
  auto* kf = app.add_subcommand("kfac", "Estimate KFAC curvature of one task at θ0");
  kfac_cfg.attach(kf);
  need(kf->add_option("--suite", suite_dir, "Suite directory"));
  need(kf->add_option("--theta0", theta0_path, "Anchor checkpoint"));
  need(kf->add_option("--task", task, "Task id"));
  need(kf->add_option("--out", out, "Curvature file to write"));

  auto* mk = app.add_subcommand("merge-kfac", "Merge per-task curvature files");
  need(mk->add_option("files", files, "Curvature files"));
  mk->add_option("--exclude", exclude, "Task left out of the merge");
  mk->add_option("--mode", mode, "summed_b or scale_consistent");
  need(mk->add_option("--out", out, "Merged curvature file"));

  ConfigArgs ft_cfg;
  auto* ft = app.add_subcommand("finetune", "Fine-tune one task, optionally with a drift penalty");
  ft_cfg.attach(ft);
  need(ft->add_option("--suite", suite_dir, "Suite directory"));
  need(ft->add_option("--theta0", theta0_path, "Anchor checkpoint"));
  need(ft->add_option("--task", task, "Task id"));
  ft->add_option("--penalty", penalty_path, "Merged curvature file used as the penalty");
  ft->add_option("--beta", beta, "Penalty strength (default: config penalty.beta)");
  ft->add_option("--curves", csv, "Write step,loss,penalty CSV here");
  need(ft->add_option("--out", out, "Task vector file"));

  auto* comp = app.add_subcommand("compose", "θ0 + Σ α τ as a checkpoint");
  need(comp->add_option("--theta0", theta0_path, "Anchor checkpoint"));
  need(comp->add_option("--vectors", vectors, "Task vector files"));
  comp->add_option("--alpha", alphas, "One α for all vectors, or one per vector");
  need(comp->add_option("--out", out, "Checkpoint to write"));

  ConfigArgs ev_cfg;
  auto* ev = app.add_subcommand("eval", "Merged accuracy of Σ α τ on each task");
  ev_cfg.attach(ev);
  need(ev->add_option("--suite", suite_dir, "Suite directory"));
  need(ev->add_option("--theta0", theta0_path, "Anchor checkpoint"));
  need(ev->add_option("--vectors", vectors, "Task vector files"));
  ev->add_option("--alpha", alpha, "Scaling coefficient");

  ConfigArgs sw_cfg;
  auto* sw = app.add_subcommand("sweep", "Mean accuracy over a uniform α grid");
  sw_cfg.attach(sw);
  need(sw->add_option("--suite", suite_dir, "Suite directory"));
  need(sw->add_option("--theta0", theta0_path, "Anchor checkpoint"));
  need(sw->add_option("--vectors", vectors, "Task vector files"));
  sw->add_option("--grid", alphas, "α values (default: config sweep.grid)");
  sw->add_option("--csv", csv, "Output CSV (default: stdout)");

  ConfigArgs dis_cfg;
  auto* dis = app.add_subcommand("disentangle", "Disentanglement error map of two task vectors");
  dis_cfg.attach(dis);
  need(dis->add_option("--suite", suite_dir, "Suite directory"));
  need(dis->add_option("--theta0", theta0_path, "Anchor checkpoint"));
  need(dis->add_option("--vectors", vectors, "Exactly two task vector files"))->expected(2);
  dis->add_option("--csv", csv, "Output CSV (default: stdout)");

  auto* loc = app.add_subcommand("localize", "Normalcy scores of one task vector");
  need(loc->add_option("--suite", suite_dir, "Suite directory"));
  need(loc->add_option("--theta0", theta0_path, "Anchor checkpoint"));
  need(loc->add_option("--vector", task, "Task vector file"));
  loc->add_option("--csv", csv, "Output CSV (default: stdout)");

  ConfigArgs neg_cfg;
  auto* neg = app.add_subcommand("negate", "Most negative α keeping control accuracy");
  neg_cfg.attach(neg);
  need(neg->add_option("--suite", suite_dir, "Suite directory"));
  need(neg->add_option("--theta0", theta0_path, "Anchor checkpoint"));
  need(neg->add_option("--vectors", vectors, "Task vector files, control included"));
  need(neg->add_option("--control", control_id, "Control task id"));
  neg->add_option("--csv", csv, "Output CSV (default: stdout)");

  ConfigArgs pipe_cfg;
  std::string pipe_file;
  auto* pipe = app.add_subcommand("pipeline", "Run every stage from one config");
  need(pipe->add_option("config", pipe_file, "JSON config file"));
  pipe->add_option("--set", pipe_cfg.overrides, "Override a config field");
  need(pipe->add_option("--out", out, "Output directory"));
  pipe->add_flag("--serial", serial, "Single worker, deterministic path");
  pipe->add_option("--workers", workers, "Worker threads (default: TAK_WORKERS or all cores)");

  auto* ins = app.add_subcommand("inspect", "Summarize curvature files");
  need(ins->add_option("files", files, "Curvature files"));

  CLI11_PARSE(app, argc, argv);

  std::string command;
  for (int i = 0; i < argc; ++i) command += (i ? " " : "") + std::string(argv[i]);

  try {
    if (gen->parsed()) {
      const BenchConfig cfg = gen_cfg.resolve();
      save_suite(out, generate_suite(cfg.suite));
    } else if (pre->parsed()) {
      const BenchConfig cfg = pre_cfg.resolve();
      const Suite s = load_suite(suite_dir);
      const NetSpec spec = suite_network(s.config, cfg.network.hidden, cfg.network.activation);
      save_checkpoint(out, spec, pretrain(spec, s.pretrain, cfg.pretrain));
    } else if (kf->parsed()) {
      const BenchConfig cfg = kfac_cfg.resolve();
      const Suite s = load_suite(suite_dir);
      const Checkpoint ck = load_checkpoint(theta0_path);
      const std::size_t t = task_index(s, task);
      KfacOptions ko = cfg.curvature.kfac;
      ko.seed = cfg.seed + t;
      save_curvature(out, kfac(ck.spec, ck.theta, s.train[t], ko));
    } else if (mk->parsed()) {
      FactorStore store;
      for (const auto& f : files) store.add(load_curvature(f));
      save_curvature(out, merge(store, exclude, merge_mode_from_string(mode)).factors);
    } else if (ft->parsed()) {
      const BenchConfig cfg = ft_cfg.resolve();
      const Suite s = load_suite(suite_dir);
      const Checkpoint ck = load_checkpoint(theta0_path);
      const std::size_t t = task_index(s, task);
      TrainConfig tc = cfg.train_config(t);
      if (!penalty_path.empty()) {
        MergedCurvature m;
        m.factors = load_curvature(penalty_path);
        m.excluded = m.factors.meta.excluded;
        DriftPenalty p = DriftPenalty::from_merged(m, ft->count("--beta") ? beta : cfg.penalty.beta);
        p.apply_every = cfg.penalty.apply_every;
        p.compensate = cfg.penalty.compensate;
        p.last_layer_scale = cfg.penalty.last_layer_scale;
        tc.penalty = std::move(p);
      }
      const TrainReport rep = finetune(ck.spec, ck.theta, s.train[t], tc);
      save_task_vector(out, ck.spec, rep.tau);
      if (!csv.empty()) write_text_file(csv, rep.curves_csv());
      json summary = json::parse(rep.to_json(true));
      summary.erase("loss_curve");
      summary.erase("penalty_curve");
      std::cout << summary.dump(2) << '\n';
    } else if (comp->parsed()) {
      const Checkpoint ck = load_checkpoint(theta0_path);
      const auto tvs = load_vectors(vectors);
      if (alphas.size() > 1 && alphas.size() != tvs.size()) throw ParameterError("give one α or one per vector");
      std::vector<std::pair<TaskVector, double>> terms;
      for (std::size_t i = 0; i < tvs.size(); ++i)
        terms.emplace_back(tvs[i], alphas.empty() ? tvs[i].default_alpha : alphas[alphas.size() == 1 ? 0 : i]);
      save_checkpoint(out, ck.spec, compose(ck.theta, terms));
    } else if (ev->parsed()) {
      const BenchConfig cfg = ev_cfg.resolve();
      const Suite s = load_suite(suite_dir);
      const Checkpoint ck = load_checkpoint(theta0_path);
      const auto tvs = load_vectors(vectors);
      const auto tests = tests_for(s, tvs);
      const ModelFamily fam = family_for(cfg, ck);
      ParamVector sum = ck.theta.zeros_like();
      for (const auto& tv : tvs) sum.axpy(alpha, tv.delta);
      std::vector<double> merged, individual;
      json tasks = json::array();
      for (std::size_t i = 0; i < tvs.size(); ++i) {
        merged.push_back(accuracy(fam(sum, tests[i].inputs), tests[i]));
        individual.push_back(accuracy(fam(tvs[i].delta, tests[i].inputs), tests[i]));
        tasks.push_back({{"task_id", tvs[i].task_id}, {"merged", merged[i]}, {"individual", individual[i]}});
      }
      double mean = 0.0;
      for (double m : merged) mean += m;
      json j = {{"alpha", alpha},
                {"absolute", 100.0 * mean / static_cast<double>(merged.size())},
                {"normalized", normalized_accuracy(merged, individual)},
                {"tasks", tasks}};
      std::cout << j.dump(2) << '\n';
    } else if (sw->parsed()) {
      const BenchConfig cfg = sw_cfg.resolve();
      const Suite s = load_suite(suite_dir);
      const Checkpoint ck = load_checkpoint(theta0_path);
      const auto tvs = load_vectors(vectors);
      const auto tests = tests_for(s, tvs);
      const ModelFamily fam = family_for(cfg, ck);
      const std::uint64_t anchor = hash_params(ck.theta);
      std::vector<TaskVector> detached = tvs;
      for (auto& tv : detached) {
        if (tv.anchor_hash != 0 && tv.anchor_hash != anchor)
          throw ContractError("task vector '" + tv.task_id + "' was built on a different anchor");
        tv.anchor_hash = 0;
      }
      const auto rows = alpha_sweep(ck.theta.zeros_like(), detached, alphas.empty() ? cfg.sweep.grid : alphas,
                                    [&](const ParamVector& tau) {
                                      double m = 0.0;
                                      for (const auto& d : tests) m += accuracy(fam(tau, d.inputs), d);
                                      return 100.0 * m / static_cast<double>(tests.size());
                                    });
      std::ostringstream o;
      o.precision(17);
      o << "alpha,absolute\n";
      for (const auto& r : rows) o << r.alpha << ',' << r.metric << '\n';
      write_or_print(csv, o.str());
    } else if (dis->parsed()) {
      const BenchConfig cfg = dis_cfg.resolve();
      const Suite s = load_suite(suite_dir);
      const Checkpoint ck = load_checkpoint(theta0_path);
      const auto tvs = load_vectors(vectors);
      const auto tests = tests_for(s, tvs);
      std::vector<double> grid;
      const std::size_t n = cfg.disentangle.grid_size;
      for (std::size_t i = 0; i < n; ++i)
        grid.push_back(n == 1 ? 0.0 : cfg.disentangle.max_alpha * static_cast<double>(i) / static_cast<double>(n - 1));
      const auto map =
          disentanglement_map(family_for(cfg, ck), tvs[0].delta, tvs[1].delta, grid, grid, tests[0], tests[1]);
      write_or_print(csv, map.to_csv());
      std::cerr << "mean xi " << map.mean() << '\n';
    } else if (loc->parsed()) {
      const Suite s = load_suite(suite_dir);
      const Checkpoint ck = load_checkpoint(theta0_path);
      const TaskVector tv = load_task_vector(task);
      const std::size_t t = task_index(s, tv.task_id);
      std::vector<Dataset> outl;
      for (std::size_t u = 0; u < s.test.size(); ++u)
        if (u != t) outl.push_back(s.test[u]);
      const auto r = normalcy_scores(ck.spec, ck.theta, tv.delta, s.test[t], concat(outl, "outliers"));
      write_or_print(csv, r.to_csv());
      std::cerr << "auc " << r.auc << '\n';
    } else if (neg->parsed()) {
      const BenchConfig cfg = neg_cfg.resolve();
      const Suite s = load_suite(suite_dir);
      const Checkpoint ck = load_checkpoint(theta0_path);
      const auto tvs = load_vectors(vectors);
      const ModelFamily fam = family_for(cfg, ck);
      EvalSuite es;
      es.tests = tests_for(s, tvs);
      es.control_task = tvs.size();
      for (std::size_t i = 0; i < tvs.size(); ++i) {
        if (tvs[i].task_id == control_id) es.control_task = i;
        es.pretrained.push_back(accuracy(fam(ck.theta.zeros_like(), es.tests[i].inputs), es.tests[i]));
        es.individual.push_back(accuracy(fam(tvs[i].delta, es.tests[i].inputs), es.tests[i]));
      }
      if (es.control_task == tvs.size()) throw ParameterError("control task '" + control_id + "' has no vector");
      write_or_print(csv, bench::negate(fam, tvs, es, cfg.negation.grid, cfg.negation.keep_fraction).to_csv());
    } else if (pipe->parsed()) {
      BenchConfig cfg = BenchConfig::from_file(pipe_file);
      for (const auto& o : pipe_cfg.overrides) cfg.apply_override(o);
      bench::RunOptions ro;
      ro.serial = serial;
      ro.workers = workers;
      ro.command = command;
      const auto sum = bench::run_pipeline(cfg, out, ro);
      std::cout << sum.results_json;
    } else if (ins->parsed()) {
      std::cout << bench::inspect_curvature(files);
    }
  } catch (const ConfigError& e) {
    std::cerr << "tak: " << e.what() << '\n';
    return 2;
  } catch (const bench::StageError& e) {
    std::cerr << "tak: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "tak: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
