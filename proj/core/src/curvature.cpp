#include "tak/curvature.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json_io.hpp"
#include "tak/errors.hpp"
#include "tak/serialize.hpp"

namespace tak {

std::string to_string(KfacVariant v) { return v == KfacVariant::exact ? "exact" : "mc"; }

std::string to_string(BiasMode m) { return m == BiasMode::augmented ? "augmented" : "exact_group"; }

BiasMode bias_mode_from_string(const std::string& s) {
  if (s == "augmented") return BiasMode::augmented;
  if (s == "exact_group") return BiasMode::exact_group;
  throw ParameterError("unknown bias mode '" + s + "'");
}

std::vector<std::size_t> select_samples(std::size_t n, const SampleSpec& spec, std::uint64_t seed) {
  std::size_t k = n;
  switch (spec.mode) {
    case SampleSpec::Mode::all: break;
    case SampleSpec::Mode::fraction:
      if (!(spec.fraction > 0.0 && spec.fraction <= 1.0)) throw ParameterError("sample fraction must be in (0, 1]");
      k = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(spec.fraction * static_cast<double>(n))));
      break;
    case SampleSpec::Mode::count:
      if (spec.count == 0) throw ParameterError("sample count must be positive");
      k = std::min(spec.count, n);
      break;
  }
  std::vector<std::size_t> idx;
  if (k >= n) {
    idx.resize(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    return idx;
  }
  Rng rng(seed ^ 0x5eed5a3b1e5ULL);
  auto perm = rng.permutation(n);
  idx.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(idx.begin(), idx.end());
  return idx;
}

namespace {

// Vectors backpropagated from the output, one row each, with the datum they belong to.
struct Probes {
  Matrix s;
  std::vector<std::size_t> owner;
};

// Columns of a square root of ∇²cₙ: unit vectors for squared loss,
// √pₖ(eₖ − p) for cross-entropy, since Σₖ pₖ(eₖ − p)(eₖ − p)ᵀ = diag(p) − ppᵀ.
Probes exact_probes(const Matrix& outputs, Criterion criterion) {
  const std::size_t n = outputs.rows();
  const std::size_t c = outputs.cols();
  Probes pr{Matrix(n * c, c), std::vector<std::size_t>(n * c)};
  for (std::size_t i = 0; i < n; ++i) {
    const Vector p = criterion == Criterion::cross_entropy ? softmax(outputs.row(i)) : Vector{};
    for (std::size_t k = 0; k < c; ++k) {
      const std::size_t r = i * c + k;
      pr.owner[r] = i;
      if (criterion == Criterion::squared) {
        pr.s(r, k) = 1.0;
      } else {
        const double w = std::sqrt(p[k]);
        for (std::size_t m = 0; m < c; ++m) pr.s(r, m) = w * ((m == k ? 1.0 : 0.0) - p[m]);
      }
    }
  }
  return pr;
}

// M draws per datum with E[ssᵀ] = ∇²cₙ, pre-scaled by 1/√M.
Probes mc_probes(const Matrix& outputs, Criterion criterion, std::size_t m_samples, Rng& rng) {
  const std::size_t n = outputs.rows();
  const std::size_t c = outputs.cols();
  const double scale = 1.0 / std::sqrt(static_cast<double>(m_samples));
  Probes pr{Matrix(n * m_samples, c), std::vector<std::size_t>(n * m_samples)};
  for (std::size_t i = 0; i < n; ++i) {
    const Vector p = criterion == Criterion::cross_entropy ? softmax(outputs.row(i)) : Vector{};
    for (std::size_t m = 0; m < m_samples; ++m) {
      const std::size_t r = i * m_samples + m;
      pr.owner[r] = i;
      if (criterion == Criterion::squared) {
        for (std::size_t k = 0; k < c; ++k) pr.s(r, k) = scale * rng.normal();
      } else {
        // Label drawn from the model's predictive; s = ∇c at that label.
        const double u = rng.uniform();
        std::size_t y = c - 1;
        double acc = 0.0;
        for (std::size_t k = 0; k < c; ++k) {
          acc += p[k];
          if (u < acc) {
            y = k;
            break;
          }
        }
        for (std::size_t k = 0; k < c; ++k) pr.s(r, k) = scale * (p[k] - (k == y ? 1.0 : 0.0));
      }
    }
  }
  return pr;
}

std::vector<Matrix> pseudo_gradients(const NetSpec& spec, const ParamVector& theta0, const BatchActivations& acts,
                                     const Probes& probes) {
  auto rep = gather_rows(acts, probes.owner);
  return backward_from(spec, theta0, rep, probes.s).pre_cotangents;
}

Matrix leading_columns(const Matrix& m, std::size_t n) { return slice_columns(m, 0, n); }

// Jacobian-transpose row Jₙᵀs for one probe, flattened over the full layout.
void probe_row(const ParamLayout& layout, const BatchActivations& acts, const std::vector<Matrix>& g,
               std::size_t probe, std::size_t owner, Vector& row) {
  std::fill(row.begin(), row.end(), 0.0);
  for (std::size_t l = 0; l < layout.layers.size(); ++l) {
    const auto& ll = layout.layers[l];
    auto gl = g[l].row(probe);
    auto al = acts.inputs[l].row(owner);
    for (std::size_t i = 0; i < ll.out_dim; ++i) {
      const double gi = gl[i];
      double* dst = row.data() + ll.offset + i * ll.cols();
      for (std::size_t j = 0; j < ll.cols(); ++j) dst[j] = gi * al[j];
    }
  }
}

void require_data(const Dataset& data, const NetSpec& spec) {
  if (data.empty()) throw EmptyDataError("curvature estimation needs at least one datum");
  if (data.inputs.cols() != spec.input_dim()) throw ShapeError("dataset input dimension does not match network");
}

}  // namespace

ExactGGN exact_ggn(const NetSpec& spec, const ParamVector& theta0, const Dataset& data, Criterion criterion,
                   std::size_t max_params) {
  require_data(data, spec);
  const auto& layout = theta0.layout();
  require_layout(theta0, ParamLayout::from_spec(spec), "exact_ggn");
  const std::size_t P = layout.total;
  if (P > max_params) {
    throw CapacityError("exact GGN with " + std::to_string(P) + " parameters exceeds limit " +
                        std::to_string(max_params));
  }
  BatchActivations acts;
  Matrix out = forward(spec, theta0, data.inputs, &acts);
  Probes probes = exact_probes(out, criterion);
  auto g = pseudo_gradients(spec, theta0, acts, probes);

  Matrix G(P, P);
  Vector row(P);
  for (std::size_t r = 0; r < probes.owner.size(); ++r) {
    probe_row(layout, acts, g, r, probes.owner[r], row);
    for (std::size_t i = 0; i < P; ++i) {
      const double ri = row[i];
      if (ri == 0.0) continue;
      double* gi = &G(i, 0);
      for (std::size_t j = i; j < P; ++j) gi[j] += ri * row[j];
    }
  }
  const double inv_n = 1.0 / static_cast<double>(data.size());
  for (std::size_t i = 0; i < P; ++i)
    for (std::size_t j = i; j < P; ++j) {
      G(i, j) *= inv_n;
      G(j, i) = G(i, j);
    }
  CurvatureMeta meta;
  meta.task_id = data.task_id;
  meta.variant = "exact";
  meta.n_samples = data.size();
  meta.dataset_size = data.size();
  meta.criterion = criterion;
  return {std::move(G), std::move(meta)};
}

KfacCurvature kfac(const NetSpec& spec, const ParamVector& theta0, const Dataset& data, const KfacOptions& opts) {
  require_data(data, spec);
  require_layout(theta0, ParamLayout::from_spec(spec), "kfac");
  if (opts.variant == KfacVariant::mc && opts.mc_samples == 0) throw ParameterError("MC KFAC needs M >= 1");

  const auto idx = select_samples(data.size(), opts.sample, opts.seed);
  const Matrix x = gather_rows(data.inputs, idx);
  BatchActivations acts;
  const Matrix out = forward(spec, theta0, x, &acts);

  Probes probes;
  if (opts.variant == KfacVariant::exact) {
    probes = exact_probes(out, opts.criterion);
  } else {
    Rng rng(opts.seed);
    probes = mc_probes(out, opts.criterion, opts.mc_samples, rng);
  }
  const auto g = pseudo_gradients(spec, theta0, acts, probes);
  std::vector<Matrix> g_exact;
  if (opts.bias_mode == BiasMode::exact_group) {
    g_exact = opts.variant == KfacVariant::exact ? g : pseudo_gradients(spec, theta0, acts, exact_probes(out, opts.criterion));
  }

  KfacCurvature c;
  c.layout = theta0.layout();
  c.meta.task_id = data.task_id;
  c.meta.variant = to_string(opts.variant);
  c.meta.mc_samples = opts.variant == KfacVariant::mc ? opts.mc_samples : 0;
  c.meta.n_samples = idx.size();
  c.meta.dataset_size = data.size();
  c.meta.criterion = opts.criterion;
  c.meta.bias_mode = opts.bias_mode;

  const double inv_n = 1.0 / static_cast<double>(idx.size());
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const auto& ll = c.layout.layers[l];
    const bool split_bias = opts.bias_mode == BiasMode::exact_group && ll.has_bias;
    const Matrix a = split_bias ? leading_columns(acts.inputs[l], ll.in_dim) : acts.inputs[l];
    KfacLayer kl;
    kl.a = Factor::dense(inv_n * matmul_tn(a, a));
    kl.b = Factor::dense(inv_n * matmul_tn(g[l], g[l]));
    c.layers.push_back(std::move(kl));
    if (split_bias) {
      // ∂z/∂b = I, so the bias block's exact GGN is the exact output-gradient covariance.
      ExactBlock eb;
      eb.layer = l;
      for (std::size_t i = 0; i < ll.out_dim; ++i) eb.indices.push_back(ll.bias_index(i));
      eb.g = inv_n * matmul_tn(g_exact[l], g_exact[l]);
      c.exact_blocks.push_back(std::move(eb));
    }
  }
  return c;
}

KfacCurvature reference_kfac(const NetSpec& spec, const ParamVector& theta0, const Dataset& reference,
                             const KfacOptions& opts) {
  KfacCurvature c = kfac(spec, theta0, reference, opts);
  c.meta.task_id = "reference";
  return c;
}

ParamVector diag_ggn(const NetSpec& spec, const ParamVector& theta0, const Dataset& data, Criterion criterion) {
  require_data(data, spec);
  require_layout(theta0, ParamLayout::from_spec(spec), "diag_ggn");
  const auto& layout = theta0.layout();
  BatchActivations acts;
  Matrix out = forward(spec, theta0, data.inputs, &acts);
  Probes probes = exact_probes(out, criterion);
  auto g = pseudo_gradients(spec, theta0, acts, probes);
  ParamVector d = theta0.zeros_like();
  Vector row(layout.total);
  for (std::size_t r = 0; r < probes.owner.size(); ++r) {
    probe_row(layout, acts, g, r, probes.owner[r], row);
    for (std::size_t i = 0; i < row.size(); ++i) d[i] += row[i] * row[i];
  }
  d *= 1.0 / static_cast<double>(data.size());
  return d;
}

void KfacCurvature::validate(double tol) const {
  if (layers.size() != layout.layers.size()) throw ShapeError("curvature layer count does not match layout");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& ll = layout.layers[l];
    const bool split_bias = meta.bias_mode == BiasMode::exact_group && ll.has_bias;
    const std::size_t a_dim = split_bias ? ll.in_dim : ll.cols();
    if (layers[l].a.dim() != a_dim || layers[l].b.dim() != ll.out_dim) {
      throw ShapeError("curvature factor shapes do not match layer " + std::to_string(l));
    }
    for (const Factor* f : {&layers[l].a, &layers[l].b}) {
      const double scale = std::max(1.0, max_abs(f->matrix));
      if (!is_symmetric(f->matrix, tol * scale)) throw ContractError("curvature factor not symmetric");
      // Pruning and quantization do not preserve definiteness.
      const bool psd_scheme = f->scheme == FactorScheme::dense || f->scheme == FactorScheme::block ||
                              f->scheme == FactorScheme::lowrank;
      if (psd_scheme && min_eigenvalue(f->matrix) < -tol * scale) throw ContractError("curvature factor not PSD");
    }
  }
  for (const auto& eb : exact_blocks) {
    if (eb.g.rows() != eb.indices.size() || !eb.g.is_square()) throw ShapeError("exact block shape mismatch");
    for (std::size_t i : eb.indices)
      if (i >= layout.total) throw ShapeError("exact block index out of range");
  }
}

std::size_t KfacCurvature::storage_bytes() const {
  std::size_t s = 0;
  for (const auto& l : layers) s += l.a.storage_bytes() + l.b.storage_bytes();
  for (const auto& eb : exact_blocks) s += eb.g.size() * sizeof(double);
  return s;
}

Matrix kfac_to_dense(const KfacCurvature& c) {
  const std::size_t P = c.layout.total;
  Matrix G(P, P);
  for (std::size_t l = 0; l < c.layers.size(); ++l) {
    const auto& ll = c.layout.layers[l];
    const Matrix& A = c.layers[l].a.matrix;
    const Matrix& B = c.layers[l].b.matrix;
    const std::size_t acols = A.rows();
    for (std::size_t i = 0; i < ll.out_dim; ++i)
      for (std::size_t j = 0; j < acols; ++j)
        for (std::size_t k = 0; k < ll.out_dim; ++k)
          for (std::size_t m = 0; m < acols; ++m) G(ll.index(i, j), ll.index(k, m)) += B(i, k) * A(j, m);
  }
  for (const auto& eb : c.exact_blocks)
    for (std::size_t i = 0; i < eb.indices.size(); ++i)
      for (std::size_t j = 0; j < eb.indices.size(); ++j) G(eb.indices[i], eb.indices[j]) += eb.g(i, j);
  return G;
}

namespace {

detail::json write_factor(BlobWriter& w, const Factor& f) {
  detail::json j{{"scheme", to_string(f.scheme)}, {"dim", f.dim()}};
  switch (f.scheme) {
    case FactorScheme::dense: w.matrix(f.matrix); break;
    case FactorScheme::block: {
      j["block_sizes"] = f.block_sizes;
      std::size_t start = 0;
      for (std::size_t b : f.block_sizes) {
        Matrix blk(b, b);
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t k = 0; k < b; ++k) blk(i, k) = f.matrix(start + i, start + k);
        w.matrix(blk);
        start += b;
      }
      break;
    }
    case FactorScheme::lowrank:
      j["rank"] = f.eigenvalues.size();
      w.matrix(Matrix(1, f.eigenvalues.size(), f.eigenvalues));
      w.matrix(f.eigenvectors);
      break;
    case FactorScheme::prune:
      j["nnz"] = f.coo.size();
      for (const auto& e : f.coo) {
        w.u32(e.row);
        w.u32(e.col);
        w.f64(e.value);
      }
      break;
    case FactorScheme::quant8:
      w.matrix(Matrix(1, f.scales.size(), f.scales));
      w.bytes({reinterpret_cast<const std::uint8_t*>(f.q.data()), f.q.size()});
      break;
  }
  return j;
}

Factor read_factor(const detail::json& j, BlobReader& r) {
  const std::size_t at = r.offset();
  FactorScheme scheme;
  try {
    scheme = factor_scheme_from_string(detail::field<std::string>(j, "scheme"));
  } catch (const ParameterError& e) {
    throw FormatError(e.what(), at);
  }
  const auto n = detail::field<std::size_t>(j, "dim");
  auto check_dim = [&](const Matrix& m, std::size_t rows, std::size_t cols) {
    if (m.rows() != rows || m.cols() != cols) throw FormatError("factor payload shape mismatch", at);
  };
  switch (scheme) {
    case FactorScheme::dense: {
      Matrix m = r.matrix();
      check_dim(m, n, n);
      return Factor::dense(std::move(m));
    }
    case FactorScheme::block: {
      auto sizes = detail::field<std::vector<std::size_t>>(j, "block_sizes");
      Matrix full(n, n);
      std::size_t start = 0;
      for (std::size_t b : sizes) {
        Matrix blk = r.matrix();
        check_dim(blk, b, b);
        if (start + b > n) throw FormatError("block table exceeds factor dimension", at);
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t k = 0; k < b; ++k) full(start + i, start + k) = blk(i, k);
        start += b;
      }
      if (start != n) throw FormatError("block table does not cover factor", at);
      return Factor::from_blocks(full, std::move(sizes));
    }
    case FactorScheme::lowrank: {
      const auto k = detail::field<std::size_t>(j, "rank");
      Matrix vals = r.matrix();
      check_dim(vals, 1, k);
      Matrix vecs = r.matrix();
      check_dim(vecs, n, k);
      return Factor::from_eigenpairs(vals.values(), std::move(vecs));
    }
    case FactorScheme::prune: {
      const auto nnz = detail::field<std::size_t>(j, "nnz");
      std::vector<CooEntry> coo(nnz);
      for (auto& e : coo) {
        e.row = r.u32();
        e.col = r.u32();
        e.value = r.f64();
        if (e.row >= n || e.col >= n || e.row > e.col) throw FormatError("COO entry out of range", r.offset() - 16);
      }
      return Factor::from_coo(n, std::move(coo));
    }
    case FactorScheme::quant8: {
      Matrix scales = r.matrix();
      check_dim(scales, 1, n);
      auto bytes = r.bytes(n * n);
      std::vector<std::int8_t> q(bytes.size());
      for (std::size_t i = 0; i < bytes.size(); ++i) q[i] = static_cast<std::int8_t>(bytes[i]);
      return Factor::from_quant8(n, std::move(q), scales.values());
    }
  }
  throw FormatError("unhandled factor scheme", at);
}

}  // namespace

void save_curvature(const std::string& path, const KfacCurvature& c) {
  detail::json j;
  j["format"] = "tak-curvature";
  j["version"] = 1;
  j["task_id"] = c.meta.task_id;
  j["variant"] = c.meta.variant;
  j["mc_samples"] = c.meta.mc_samples;
  j["n_samples"] = c.meta.n_samples;
  j["dataset_size"] = c.meta.dataset_size;
  j["criterion"] = to_string(c.meta.criterion);
  j["bias_mode"] = to_string(c.meta.bias_mode);
  if (!c.meta.merge_mode.empty()) j["merge"] = {{"mode", c.meta.merge_mode}, {"excluded", c.meta.excluded}};
  j["param_layout"] = detail::layout_to_json(c.layout);
  std::ostringstream payload;
  BlobWriter w(payload);
  detail::json layers = detail::json::array();
  for (std::size_t l = 0; l < c.layers.size(); ++l) {
    detail::json lj{{"index", l}};
    lj["A"] = write_factor(w, c.layers[l].a);
    lj["B"] = write_factor(w, c.layers[l].b);
    layers.push_back(std::move(lj));
  }
  j["layers"] = std::move(layers);
  detail::json blocks = detail::json::array();
  for (const auto& eb : c.exact_blocks) {
    blocks.push_back({{"layer", eb.layer}, {"indices", eb.indices}});
    w.matrix(eb.g);
  }
  j["exact_blocks"] = std::move(blocks);
  write_container(path, j.dump(), payload.str());
}

KfacCurvature load_curvature(const std::string& path) {
  Container cont = read_container(path);
  auto j = detail::parse_manifest(cont.manifest);
  if (detail::field<std::string>(j, "format") != "tak-curvature") throw FormatError("not a curvature file", 8);
  KfacCurvature c;
  c.meta.task_id = detail::field<std::string>(j, "task_id");
  c.meta.variant = detail::field<std::string>(j, "variant");
  c.meta.mc_samples = detail::field<std::size_t>(j, "mc_samples");
  c.meta.n_samples = detail::field<std::size_t>(j, "n_samples");
  c.meta.dataset_size = detail::field<std::size_t>(j, "dataset_size");
  try {
    c.meta.criterion = criterion_from_string(detail::field<std::string>(j, "criterion"));
    c.meta.bias_mode = bias_mode_from_string(detail::field<std::string>(j, "bias_mode"));
  } catch (const ParameterError& e) {
    throw FormatError(e.what(), 16);
  }
  if (j.contains("merge")) {
    c.meta.merge_mode = detail::field<std::string>(j["merge"], "mode");
    c.meta.excluded = detail::field<std::string>(j["merge"], "excluded");
  }
  for (const auto& lj : detail::field<detail::json>(j, "param_layout")) {
    LayerLayout ll{detail::field<std::size_t>(lj, "offset"), detail::field<std::size_t>(lj, "out_dim"),
                   detail::field<std::size_t>(lj, "in_dim"), detail::field<bool>(lj, "has_bias")};
    if (ll.offset != c.layout.total) throw FormatError("non-contiguous parameter layout", 16);
    c.layout.total += ll.size();
    c.layout.layers.push_back(ll);
  }
  BlobReader r = cont.reader();
  for (const auto& lj : detail::field<detail::json>(j, "layers")) {
    KfacLayer kl;
    kl.a = read_factor(lj.at("A"), r);
    kl.b = read_factor(lj.at("B"), r);
    c.layers.push_back(std::move(kl));
  }
  for (const auto& bj : detail::field<detail::json>(j, "exact_blocks")) {
    ExactBlock eb;
    eb.layer = detail::field<std::size_t>(bj, "layer");
    eb.indices = detail::field<std::vector<std::size_t>>(bj, "indices");
    const std::size_t at = r.offset();
    eb.g = r.matrix();
    if (eb.g.rows() != eb.indices.size() || !eb.g.is_square()) throw FormatError("exact block shape mismatch", at);
    c.exact_blocks.push_back(std::move(eb));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after curvature payload", r.offset());
  try {
    c.validate(1e-6);
  } catch (const Error& e) {
    throw FormatError(std::string("invalid curvature: ") + e.what(), cont.payload_offset);
  }
  return c;
}

}  // namespace tak
