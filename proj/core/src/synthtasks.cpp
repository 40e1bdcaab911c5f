#include "tak/synthtasks.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "json_io.hpp"
#include "tak/errors.hpp"
#include "tak/serialize.hpp"

namespace tak {

std::string to_string(Geometry g) { return g == Geometry::disjoint_regions ? "disjoint_regions" : "rotated_shared"; }

Geometry geometry_from_string(const std::string& s) {
  if (s == "disjoint_regions") return Geometry::disjoint_regions;
  if (s == "rotated_shared") return Geometry::rotated_shared;
  throw ParameterError("unknown geometry '" + s + "'");
}

void SuiteConfig::validate() const {
  if (n_tasks < 2) throw GenerationError("a suite needs at least two tasks");
  if (input_dim == 0 || classes_per_task < 2 || clusters_per_class == 0) throw GenerationError("degenerate suite shape");
  if (!(sigma > 0.0)) throw GenerationError("cluster spread must be positive");
  if (n_train == 0 || n_test == 0) throw GenerationError("train and test splits must be nonempty");
}

std::size_t coarse_label(std::size_t local_class) { return 2 * (local_class / 2); }

namespace {

double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

Vector unit_vector(Rng& rng, std::size_t d) {
  Vector v(d);
  double n = 0.0;
  while (n < 1e-12) {
    for (auto& x : v) x = rng.normal();
    n = norm2(v);
  }
  for (auto& x : v) x /= n;
  return v;
}

// Random orthogonal matrix via Gram–Schmidt on Gaussian columns.
Matrix random_rotation(Rng& rng, std::size_t d) {
  Matrix q(d, d);
  for (std::size_t c = 0; c < d; ++c) {
    Vector v = unit_vector(rng, d);
    for (std::size_t k = 0; k < c; ++k) {
      double p = 0.0;
      for (std::size_t i = 0; i < d; ++i) p += v[i] * q(i, k);
      for (std::size_t i = 0; i < d; ++i) v[i] -= p * q(i, k);
    }
    const double n = norm2(v);
    for (std::size_t i = 0; i < d; ++i) q(i, c) = v[i] / n;
  }
  return q;
}

constexpr int kMaxAttempts = 10000;

// Points at `radius` around `origin`, pairwise at least `min_dist` apart from each
// other and from every row of `avoid`.
Matrix place_points(Rng& rng, std::size_t count, std::span<const double> origin, double radius, double min_dist,
                    const std::vector<Vector>& avoid) {
  const std::size_t d = origin.size();
  Matrix pts(count, d);
  for (std::size_t k = 0; k < count; ++k) {
    bool ok = false;
    for (int attempt = 0; attempt < kMaxAttempts && !ok; ++attempt) {
      const Vector u = unit_vector(rng, d);
      for (std::size_t i = 0; i < d; ++i) pts(k, i) = origin[i] + radius * u[i];
      ok = true;
      for (std::size_t j = 0; j < k && ok; ++j) ok = distance(pts.row(k), pts.row(j)) >= min_dist;
      for (const auto& a : avoid) {
        if (!ok) break;
        ok = distance(pts.row(k), a) >= min_dist;
      }
    }
    if (!ok) throw GenerationError("cannot place " + std::to_string(count) + " separated centers in dimension " +
                                   std::to_string(d));
  }
  return pts;
}

Dataset sample_task(Rng& rng, const TaskMeta& meta, const SuiteConfig& cfg, std::size_t n, Split split, bool coarse) {
  Dataset d;
  d.inputs = Matrix(n, cfg.input_dim);
  d.labels.resize(n);
  d.task_id = meta.task_id;
  d.split = split;
  d.class_offset = meta.class_offset;
  d.num_classes = meta.num_classes;
  const std::size_t k = meta.centers.rows();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % k;  // balanced over clusters
    for (std::size_t j = 0; j < cfg.input_dim; ++j) d.inputs(i, j) = meta.centers(c, j) + cfg.sigma * rng.normal();
    const std::size_t y = meta.center_class[c];
    d.labels[i] = y;
    if (coarse) {
      // Members of a merged pair get either label with equal odds.
      const std::size_t local = coarse_label(y - meta.class_offset);
      const bool pair = local + 1 < meta.num_classes;
      d.labels[i] = meta.class_offset + local + (pair ? rng.below(2) : 0);
    }
  }
  // Shuffle rows so batches mix clusters.
  const auto perm = rng.permutation(n);
  return d.subset(perm);
}

}  // namespace

Suite generate_suite(const SuiteConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  Suite s;
  s.config = cfg;
  const std::size_t d = cfg.input_dim;
  const std::size_t k = cfg.classes_per_task * cfg.clusters_per_class;
  const double sep = 4.0 * cfg.sigma;
  const Vector origin(d, 0.0);

  std::vector<Vector> placed;
  Matrix regions;
  Matrix shared;
  if (cfg.geometry == Geometry::disjoint_regions) {
    // Regions far enough apart that clusters of different tasks cannot meet.
    regions = place_points(rng, cfg.n_tasks, origin, cfg.region_radius, 2.0 * cfg.cluster_radius + sep, {});
  } else {
    shared = place_points(rng, k, origin, cfg.cluster_radius, sep, {});
  }

  for (std::size_t t = 0; t < cfg.n_tasks; ++t) {
    TaskMeta m;
    m.task_id = "task" + std::to_string(t);
    m.class_offset = t * cfg.classes_per_task;
    m.num_classes = cfg.classes_per_task;
    if (cfg.geometry == Geometry::disjoint_regions) {
      m.region_center.assign(regions.row(t).begin(), regions.row(t).end());
      m.centers = place_points(rng, k, m.region_center, cfg.cluster_radius, sep, placed);
      for (std::size_t c = 0; c < k; ++c) placed.emplace_back(m.centers.row(c).begin(), m.centers.row(c).end());
    } else {
      m.region_center = origin;
      m.centers = matmul_nt(shared, random_rotation(rng, d));
    }
    for (std::size_t c = 0; c < k; ++c) m.center_class.push_back(m.class_offset + c % cfg.classes_per_task);
    s.tasks.push_back(std::move(m));
  }

  std::vector<Dataset> pre;
  for (const auto& m : s.tasks) {
    s.train.push_back(sample_task(rng, m, cfg, cfg.n_train, Split::train, false));
    s.val.push_back(sample_task(rng, m, cfg, cfg.n_val, Split::val, false));
    s.test.push_back(sample_task(rng, m, cfg, cfg.n_test, Split::test, false));
    pre.push_back(sample_task(rng, m, cfg, cfg.n_pretrain, Split::pretrain, true));
  }
  s.pretrain = concat(pre, "pretrain");
  s.pretrain.split = Split::pretrain;
  s.pretrain.class_offset = 0;
  s.pretrain.num_classes = 0;
  return s;
}

double Suite::min_center_distance() const {
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::span<const double>> all;
  for (const auto& t : tasks)
    for (std::size_t c = 0; c < t.centers.rows(); ++c) all.push_back(t.centers.row(c));
  for (std::size_t i = 0; i < all.size(); ++i)
    for (std::size_t j = i + 1; j < all.size(); ++j) best = std::min(best, distance(all[i], all[j]));
  return best;
}

double Suite::min_intertask_distance() const {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < tasks.size(); ++a)
    for (std::size_t b = a + 1; b < tasks.size(); ++b)
      for (std::size_t i = 0; i < tasks[a].centers.rows(); ++i)
        for (std::size_t j = 0; j < tasks[b].centers.rows(); ++j)
          best = std::min(best, distance(tasks[a].centers.row(i), tasks[b].centers.row(j)));
  return best;
}

NetSpec suite_network(const SuiteConfig& cfg, std::vector<std::size_t> hidden, Activation act) {
  std::vector<std::size_t> dims{cfg.input_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(cfg.total_classes());
  return NetSpec::mlp(std::move(dims), act, true);
}

ParamVector pretrain(const NetSpec& spec, const Dataset& data, const PretrainConfig& cfg) {
  if (data.empty()) throw EmptyDataError("pretrain: empty dataset");
  Rng rng(cfg.seed);
  const ParamVector init = init_params(spec, rng);
  if (cfg.epochs == 0) return init;
  TrainConfig tc;
  tc.regime = Regime::nonlinear;
  tc.optimizer = AdamLike{cfg.lr};
  tc.schedule = Schedule::cosine;
  tc.batch_size = cfg.batch_size;
  tc.epochs = cfg.epochs;
  tc.seed = cfg.seed + 1;
  tc.restrict_to_slice = false;
  tc.criterion = cfg.criterion;
  TrainReport rep = finetune(spec, init, data, tc);
  return init + rep.tau.delta;
}

void save_suite(const std::string& dir, const Suite& s) {
  std::filesystem::create_directories(dir);
  const auto& c = s.config;
  detail::json j;
  j["format"] = "tak-suite";
  j["version"] = 1;
  j["config"] = {{"n_tasks", c.n_tasks},
                 {"input_dim", c.input_dim},
                 {"classes_per_task", c.classes_per_task},
                 {"clusters_per_class", c.clusters_per_class},
                 {"sigma", c.sigma},
                 {"n_train", c.n_train},
                 {"n_val", c.n_val},
                 {"n_test", c.n_test},
                 {"n_pretrain", c.n_pretrain},
                 {"seed", c.seed},
                 {"geometry", to_string(c.geometry)},
                 {"region_radius", c.region_radius},
                 {"cluster_radius", c.cluster_radius}};
  detail::json tasks = detail::json::array();
  for (std::size_t t = 0; t < s.tasks.size(); ++t) {
    const auto& m = s.tasks[t];
    detail::json centers = detail::json::array();
    for (std::size_t r = 0; r < m.centers.rows(); ++r) centers.push_back(Vector(m.centers.row(r).begin(), m.centers.row(r).end()));
    tasks.push_back({{"task_id", m.task_id},
                     {"class_offset", m.class_offset},
                     {"num_classes", m.num_classes},
                     {"region_center", m.region_center},
                     {"centers", centers},
                     {"center_class", m.center_class},
                     {"train", m.task_id + "_train.tak"},
                     {"val", m.task_id + "_val.tak"},
                     {"test", m.task_id + "_test.tak"}});
    save_dataset(dir + "/" + m.task_id + "_train.tak", s.train[t]);
    save_dataset(dir + "/" + m.task_id + "_val.tak", s.val[t]);
    save_dataset(dir + "/" + m.task_id + "_test.tak", s.test[t]);
  }
  j["tasks"] = tasks;
  j["pretrain"] = "pretrain.tak";
  save_dataset(dir + "/pretrain.tak", s.pretrain);
  write_text_file(dir + "/suite.json", j.dump(2) + "\n");
}

Suite load_suite(const std::string& dir) {
  const auto bytes = read_file_bytes(dir + "/suite.json");
  auto j = detail::parse_manifest(std::string(bytes.begin(), bytes.end()));
  if (detail::field<std::string>(j, "format") != "tak-suite") throw FormatError("not a suite manifest", 0);
  Suite s;
  const auto& c = j.at("config");
  auto& cfg = s.config;
  cfg.n_tasks = detail::field<std::size_t>(c, "n_tasks");
  cfg.input_dim = detail::field<std::size_t>(c, "input_dim");
  cfg.classes_per_task = detail::field<std::size_t>(c, "classes_per_task");
  cfg.clusters_per_class = detail::field<std::size_t>(c, "clusters_per_class");
  cfg.sigma = detail::field<double>(c, "sigma");
  cfg.n_train = detail::field<std::size_t>(c, "n_train");
  cfg.n_val = detail::field<std::size_t>(c, "n_val");
  cfg.n_test = detail::field<std::size_t>(c, "n_test");
  cfg.n_pretrain = detail::field<std::size_t>(c, "n_pretrain");
  cfg.seed = detail::field<std::uint64_t>(c, "seed");
  cfg.geometry = geometry_from_string(detail::field<std::string>(c, "geometry"));
  cfg.region_radius = detail::field<double>(c, "region_radius");
  cfg.cluster_radius = detail::field<double>(c, "cluster_radius");
  for (const auto& tj : j.at("tasks")) {
    TaskMeta m;
    m.task_id = detail::field<std::string>(tj, "task_id");
    m.class_offset = detail::field<std::size_t>(tj, "class_offset");
    m.num_classes = detail::field<std::size_t>(tj, "num_classes");
    m.region_center = detail::field<Vector>(tj, "region_center");
    const auto rows = detail::field<std::vector<Vector>>(tj, "centers");
    m.centers = Matrix(rows.size(), rows.empty() ? 0 : rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t k = 0; k < rows[r].size(); ++k) m.centers(r, k) = rows[r][k];
    m.center_class = detail::field<std::vector<std::size_t>>(tj, "center_class");
    s.train.push_back(load_dataset(dir + "/" + detail::field<std::string>(tj, "train")));
    s.val.push_back(load_dataset(dir + "/" + detail::field<std::string>(tj, "val")));
    s.test.push_back(load_dataset(dir + "/" + detail::field<std::string>(tj, "test")));
    s.tasks.push_back(std::move(m));
  }
  s.pretrain = load_dataset(dir + "/" + detail::field<std::string>(j, "pretrain"));
  return s;
}

}  // namespace tak
