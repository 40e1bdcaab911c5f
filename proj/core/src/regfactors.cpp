#include "tak/regfactors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tak/errors.hpp"

namespace tak {

void FactorStore::add(KfacCurvature c) {
  if (contains(c.meta.task_id)) throw ParameterError("task '" + c.meta.task_id + "' already registered");
  if (!entries_.empty()) {
    const auto& first = entries_.front();
    if (!(first.layout == c.layout)) throw ShapeError("curvature layout differs from registered tasks");
    if (first.meta.bias_mode != c.meta.bias_mode) throw ShapeError("curvature bias mode differs from registered tasks");
  }
  entries_.push_back(std::move(c));
}

void FactorStore::set_weight(const std::string& task_id, double w) {
  if (!contains(task_id)) throw ParameterError("unknown task '" + task_id + "'");
  if (!(w >= 0.0) || !std::isfinite(w)) throw ParameterError("task weight must be finite and nonnegative");
  manual_[task_id] = w;
}

bool FactorStore::contains(const std::string& task_id) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.meta.task_id == task_id; });
}

const KfacCurvature& FactorStore::get(const std::string& task_id) const {
  for (const auto& e : entries_)
    if (e.meta.task_id == task_id) return e;
  throw ParameterError("unknown task '" + task_id + "'");
}

std::vector<std::string> FactorStore::task_ids() const {
  std::vector<std::string> ids;
  for (const auto& e : entries_) ids.push_back(e.meta.task_id);
  return ids;
}

std::vector<std::pair<std::string, double>> FactorStore::weights(const std::string& excluded) const {
  std::vector<std::pair<std::string, double>> w;
  double total = 0.0;
  for (const auto& e : entries_) {
    if (e.meta.task_id == excluded) continue;
    auto it = manual_.find(e.meta.task_id);
    const double raw = it != manual_.end() ? it->second : static_cast<double>(e.meta.dataset_size);
    w.emplace_back(e.meta.task_id, raw);
    total += raw;
  }
  if (w.empty()) throw EmptyMergeError("no tasks left after excluding '" + excluded + "'");
  if (!(total > 0.0)) throw DegenerateError("task weights sum to zero");
  for (auto& [id, v] : w) v /= total;
  return w;
}

std::string to_string(MergeMode m) { return m == MergeMode::summed_b ? "summed_b" : "scale_consistent"; }

MergeMode merge_mode_from_string(const std::string& s) {
  if (s == "summed_b") return MergeMode::summed_b;
  if (s == "scale_consistent") return MergeMode::scale_consistent;
  throw ParameterError("unknown merge mode '" + s + "'");
}

MergedCurvature merge(const FactorStore& store, const std::string& excluded, MergeMode mode) {
  const auto w = store.weights(excluded);
  const KfacCurvature& first = store.get(w.front().first);

  MergedCurvature out;
  out.mode = mode;
  out.excluded = excluded;
  KfacCurvature& m = out.factors;
  m.layout = first.layout;
  m.meta.task_id = excluded.empty() ? "merged" : "merged-excl-" + excluded;
  m.meta.variant = "merged";
  m.meta.criterion = first.meta.criterion;
  m.meta.bias_mode = first.meta.bias_mode;
  m.meta.merge_mode = to_string(mode);
  m.meta.excluded = excluded;

  for (std::size_t l = 0; l < first.layers.size(); ++l) {
    const std::size_t na = first.layers[l].a.dim();
    const std::size_t nb = first.layers[l].b.dim();
    Matrix a(na, na), b(nb, nb);
    for (const auto& [id, lambda] : w) {
      const auto& layer = store.get(id).layers[l];
      a += lambda * layer.a.matrix;
      b += (mode == MergeMode::summed_b ? 1.0 : lambda) * layer.b.matrix;
    }
    m.layers.push_back({Factor::dense(std::move(a)), Factor::dense(std::move(b))});
  }
  for (std::size_t k = 0; k < first.exact_blocks.size(); ++k) {
    ExactBlock eb = first.exact_blocks[k];
    eb.g = Matrix(eb.g.rows(), eb.g.cols());
    for (const auto& [id, lambda] : w) eb.g += lambda * store.get(id).exact_blocks.at(k).g;
    m.exact_blocks.push_back(std::move(eb));
  }
  for (const auto& [id, lambda] : w) {
    const auto& meta = store.get(id).meta;
    m.meta.n_samples += meta.n_samples;
    m.meta.dataset_size += meta.dataset_size;
  }
  return out;
}

bool MergeErrorReport::holds(double slack) const {
  return std::all_of(layers.begin(), layers.end(), [&](const auto& l) { return l.actual <= l.bound + slack; });
}

namespace {

// Deviations from the task mean. Shifting every factor by the first task's
// leaves E unchanged and makes identical inputs give exact zeros.
std::vector<Matrix> deviations(const std::vector<const Matrix*>& ms) {
  const std::size_t t = ms.size();
  std::vector<Matrix> d;
  for (const Matrix* m : ms) d.push_back(*m - *ms.front());
  Matrix mean(d.front().rows(), d.front().cols());
  for (const auto& m : d) mean += m;
  mean *= 1.0 / static_cast<double>(t);
  for (auto& m : d) m -= mean;
  return d;
}

}  // namespace

MergeErrorReport merge_error(const FactorStore& store, const std::string& excluded) {
  std::vector<const KfacCurvature*> cs;
  for (const auto& id : store.task_ids())
    if (id != excluded) cs.push_back(&store.get(id));
  if (cs.empty()) throw EmptyMergeError("no tasks left after excluding '" + excluded + "'");

  MergeErrorReport rep;
  rep.n_tasks = cs.size();
  const double t = static_cast<double>(cs.size());
  for (std::size_t l = 0; l < cs.front()->layers.size(); ++l) {
    const std::size_t pl = cs.front()->layers[l].a.dim() * cs.front()->layers[l].b.dim();
    if (pl > 1'000'000) throw CapacityError("layer " + std::to_string(l) + " too large for merge-error report");
    std::vector<const Matrix*> as, bs;
    for (const auto* c : cs) {
      as.push_back(&c->layers[l].a.matrix);
      bs.push_back(&c->layers[l].b.matrix);
    }
    const auto da = deviations(as);
    const auto db = deviations(bs);
    // E = Σ_t ΔB_t⊗ΔA_t, so ‖E‖² = Σ_{s,t} ⟨ΔB_s,ΔB_t⟩⟨ΔA_s,ΔA_t⟩.
    double e2 = 0.0, sa = 0.0, sb = 0.0;
    for (std::size_t s = 0; s < cs.size(); ++s) {
      sa += frobenius_inner(da[s], da[s]);
      sb += frobenius_inner(db[s], db[s]);
      for (std::size_t u = 0; u < cs.size(); ++u) e2 += frobenius_inner(db[s], db[u]) * frobenius_inner(da[s], da[u]);
    }
    LayerMergeError le;
    le.layer = l;
    le.sigma_a = std::sqrt(sa / t);
    le.sigma_b = std::sqrt(sb / t);
    le.bound = t * le.sigma_a * le.sigma_b;
    le.actual = std::sqrt(std::max(0.0, e2));
    rep.layers.push_back(le);
  }
  return rep;
}

std::vector<std::size_t> block_sizes(std::size_t n, std::size_t n_blocks) {
  if (n_blocks == 0) throw DegenerateError("block count must be positive");
  if (n_blocks > n) {
    throw DegenerateError(std::to_string(n_blocks) + " blocks exceed factor dimension " + std::to_string(n));
  }
  std::vector<std::size_t> sizes(n_blocks, n / n_blocks);
  sizes.back() = n - (n_blocks - 1) * (n / n_blocks);
  return sizes;
}

Factor block_factor(const Matrix& m, std::size_t n_blocks) {
  return Factor::from_blocks(m, block_sizes(m.rows(), n_blocks));
}

std::size_t RankSpec::resolve(std::size_t n) const {
  std::size_t k = count;
  if (count == 0) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw DegenerateError("rank fraction must be in (0, 1]");
    k = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n)));
  }
  if (k == 0) throw DegenerateError("rank resolves to 0 for dimension " + std::to_string(n));
  return std::min(k, n);
}

Factor lowrank_factor(const Matrix& m, std::size_t k) {
  const SymEig e = sym_eig(m);
  k = std::min(k, m.rows());
  Vector vals(e.eigenvalues.begin(), e.eigenvalues.begin() + static_cast<std::ptrdiff_t>(k));
  Matrix vecs(m.rows(), k);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < k; ++j) vecs(i, j) = e.eigenvectors(i, j);
  return Factor::from_eigenpairs(std::move(vals), std::move(vecs));
}

Factor prune_factor(const Matrix& m, double keep_ratio) {
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) throw ParameterError("keep ratio must be in (0, 1]");
  const std::size_t n = m.rows();
  std::vector<CooEntry> upper;
  upper.reserve(n * (n + 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j)
      upper.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j), m(i, j)});
  const double target = keep_ratio * static_cast<double>(upper.size());
  // Guard against 0.3·10 landing just above 3.
  auto keep = static_cast<std::size_t>(std::ceil(target - 1e-9 * std::max(1.0, target)));
  keep = std::min(keep, upper.size());
  std::stable_sort(upper.begin(), upper.end(),
                   [](const CooEntry& a, const CooEntry& b) { return std::abs(a.value) > std::abs(b.value); });
  upper.resize(keep);
  std::sort(upper.begin(), upper.end(),
            [](const CooEntry& a, const CooEntry& b) { return a.row != b.row ? a.row < b.row : a.col < b.col; });
  return Factor::from_coo(n, std::move(upper));
}

Factor quant8_factor(const Matrix& m) {
  const std::size_t n = m.rows();
  Vector scales(n, 0.0);
  std::vector<std::int8_t> q(n * n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = 0.0;
    for (double v : m.row(i)) mx = std::max(mx, std::abs(v));
    if (mx == 0.0) continue;
    scales[i] = mx / 127.0;
    for (std::size_t j = 0; j < n; ++j) {
      const long code = std::lround(m(i, j) / scales[i]);
      q[i * n + j] = static_cast<std::int8_t>(std::clamp(code, -127L, 127L));
    }
  }
  return Factor::from_quant8(n, std::move(q), std::move(scales));
}

namespace {

template <typename F>
KfacCurvature map_factors(const KfacCurvature& c, F&& f) {
  KfacCurvature out = c;
  for (auto& layer : out.layers) {
    layer.a = f(layer.a.matrix);
    layer.b = f(layer.b.matrix);
  }
  return out;
}

}  // namespace

KfacCurvature compress_block(const KfacCurvature& c, std::size_t n_blocks) {
  return map_factors(c, [&](const Matrix& m) { return block_factor(m, n_blocks); });
}

KfacCurvature compress_lowrank(const KfacCurvature& c, RankSpec rank) {
  return map_factors(c, [&](const Matrix& m) { return lowrank_factor(m, rank.resolve(m.rows())); });
}

KfacCurvature compress_prune(const KfacCurvature& c, double keep_ratio) {
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) throw ParameterError("keep ratio must be in (0, 1]");
  return map_factors(c, [&](const Matrix& m) { return prune_factor(m, keep_ratio); });
}

KfacCurvature compress_quant8(const KfacCurvature& c) {
  return map_factors(c, [](const Matrix& m) { return quant8_factor(m); });
}

}  // namespace tak
