#include "tak/network.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json_io.hpp"
#include "tak/errors.hpp"
#include "tak/serialize.hpp"

namespace tak {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::identity: return "identity";
  }
  return "identity";
}

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  if (s == "identity") return Activation::identity;
  throw ParameterError("unknown activation '" + s + "'");
}

NetSpec NetSpec::mlp(std::vector<std::size_t> dims, Activation hidden, bool with_bias) {
  NetSpec s;
  s.layer_dims = std::move(dims);
  const std::size_t layers = s.layer_dims.size() > 0 ? s.layer_dims.size() - 1 : 0;
  s.activations.assign(layers > 0 ? layers - 1 : 0, hidden);
  s.bias.assign(layers, with_bias);
  s.validate();
  return s;
}

Activation NetSpec::activation_after(std::size_t layer) const {
  return layer + 1 < num_layers() ? activations[layer] : Activation::identity;
}

void NetSpec::validate() const {
  if (layer_dims.size() < 2) throw ShapeError("network needs at least one layer");
  if (activations.size() != num_layers() - 1) throw ShapeError("need one activation per hidden layer");
  if (bias.size() != num_layers()) throw ShapeError("need one bias flag per layer");
  if (std::any_of(layer_dims.begin(), layer_dims.end(), [](std::size_t d) { return d == 0; })) {
    throw ShapeError("layer dimensions must be positive");
  }
}

ParamLayout ParamLayout::from_spec(const NetSpec& spec) {
  spec.validate();
  ParamLayout layout;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    LayerLayout ll{layout.total, spec.layer_dims[l + 1], spec.layer_dims[l], static_cast<bool>(spec.bias[l])};
    layout.total += ll.size();
    layout.layers.push_back(ll);
  }
  return layout;
}

std::size_t ParamLayout::layer_of(std::size_t i) const {
  for (std::size_t l = 0; l < layers.size(); ++l)
    if (i < layers[l].offset + layers[l].size()) return l;
  throw ShapeError("parameter index out of range");
}

ParamVector::ParamVector(ParamLayout layout) : layout_(std::move(layout)), values_(layout_.total, 0.0) {}

ParamVector::ParamVector(ParamLayout layout, Vector values) : layout_(std::move(layout)), values_(std::move(values)) {
  if (values_.size() != layout_.total) throw ShapeError("parameter values do not match layout size");
}

std::span<double> ParamVector::layer(std::size_t l) {
  const auto& ll = layout_.layers.at(l);
  return std::span<double>(values_).subspan(ll.offset, ll.size());
}

std::span<const double> ParamVector::layer(std::size_t l) const {
  const auto& ll = layout_.layers.at(l);
  return std::span<const double>(values_).subspan(ll.offset, ll.size());
}

Matrix ParamVector::layer_matrix(std::size_t l) const {
  const auto& ll = layout_.layers.at(l);
  auto s = layer(l);
  return Matrix(ll.out_dim, ll.cols(), std::vector<double>(s.begin(), s.end()));
}

ParamVector& ParamVector::operator+=(const ParamVector& o) {
  require_same_layout(*this, o, "ParamVector +=");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += o.values_[i];
  return *this;
}

ParamVector& ParamVector::operator-=(const ParamVector& o) {
  require_same_layout(*this, o, "ParamVector -=");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= o.values_[i];
  return *this;
}

ParamVector& ParamVector::operator*=(double s) {
  for (double& v : values_) v *= s;
  return *this;
}

void ParamVector::axpy(double s, const ParamVector& o) {
  require_same_layout(*this, o, "ParamVector axpy");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += s * o.values_[i];
}

ParamVector operator+(ParamVector a, const ParamVector& b) { return a += b; }
ParamVector operator-(ParamVector a, const ParamVector& b) { return a -= b; }
ParamVector operator*(double s, ParamVector a) { return a *= s; }

void require_layout(const ParamVector& p, const ParamLayout& layout, const char* what) {
  if (!(p.layout() == layout)) throw ShapeError(std::string(what) + ": parameter layout mismatch");
}

void require_same_layout(const ParamVector& a, const ParamVector& b, const char* what) {
  require_layout(a, b.layout(), what);
}

namespace {

double act(Activation a, double z) {
  switch (a) {
    case Activation::tanh: return std::tanh(z);
    case Activation::relu: return z > 0.0 ? z : 0.0;
    case Activation::identity: return z;
  }
  return z;
}

// Derivative from the pre-activation. ReLU uses subgradient 0 at z == 0.
double act_grad(Activation a, double z) {
  switch (a) {
    case Activation::tanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
    case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::identity: return 1.0;
  }
  return 1.0;
}

Matrix with_bias_column(const Matrix& h, bool bias) {
  if (!bias) return h;
  Matrix a(h.rows(), h.cols() + 1);
  for (std::size_t n = 0; n < h.rows(); ++n) {
    auto src = h.row(n);
    auto dst = a.row(n);
    std::copy(src.begin(), src.end(), dst.begin());
    dst[h.cols()] = 1.0;
  }
  return a;
}

void check_inputs(const NetSpec& spec, const ParamVector& theta, const Matrix& x) {
  require_layout(theta, ParamLayout::from_spec(spec), "network evaluation");
  if (x.cols() != spec.input_dim()) {
    throw ShapeError("input has " + std::to_string(x.cols()) + " columns, network expects " +
                     std::to_string(spec.input_dim()));
  }
}

// acts.inputs[l] · Wᵀ for the layer weights viewed as D1×cols.
Matrix affine(const Matrix& a, std::span<const double> w, const LayerLayout& ll) {
  Matrix z(a.rows(), ll.out_dim);
  for (std::size_t n = 0; n < a.rows(); ++n) {
    auto an = a.row(n);
    for (std::size_t i = 0; i < ll.out_dim; ++i) {
      const double* wi = w.data() + i * ll.cols();
      double s = 0.0;
      for (std::size_t j = 0; j < ll.cols(); ++j) s += wi[j] * an[j];
      z(n, i) = s;
    }
  }
  return z;
}

}  // namespace

Matrix forward(const NetSpec& spec, const ParamVector& theta, const Matrix& x, BatchActivations* capture) {
  check_inputs(spec, theta, x);
  const auto& layout = theta.layout();
  if (capture) {
    capture->inputs.clear();
    capture->pre.clear();
  }
  Matrix h = x;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const auto& ll = layout.layers[l];
    Matrix a = with_bias_column(h, ll.has_bias);
    Matrix z = affine(a, theta.layer(l), ll);
    const Activation f = spec.activation_after(l);
    h = z;
    if (f != Activation::identity)
      for (double& v : h.data()) v = act(f, v);
    if (capture) {
      capture->inputs.push_back(std::move(a));
      capture->pre.push_back(std::move(z));
    }
  }
  return h;
}

BackwardResult backward_from(const NetSpec& spec, const ParamVector& theta, const BatchActivations& acts,
                             const Matrix& upstream) {
  const auto& layout = theta.layout();
  const std::size_t L = spec.num_layers();
  if (acts.inputs.size() != L || acts.pre.size() != L) throw ShapeError("activation capture does not match network");
  const std::size_t N = acts.batch_size();
  if (upstream.rows() != N || upstream.cols() != spec.output_dim()) {
    throw ShapeError("upstream cotangent must be N x C");
  }
  BackwardResult out{theta.zeros_like(), std::vector<Matrix>(L)};
  Matrix g = upstream;
  for (std::size_t l = L; l-- > 0;) {
    const auto& ll = layout.layers[l];
    Matrix gw = matmul_tn(g, acts.inputs[l]);
    auto dst = out.grad.layer(l);
    std::copy(gw.data().begin(), gw.data().end(), dst.begin());
    if (l > 0) {
      auto w = theta.layer(l);
      Matrix back(N, ll.in_dim);
      for (std::size_t n = 0; n < N; ++n) {
        auto gn = g.row(n);
        auto bn = back.row(n);
        for (std::size_t i = 0; i < ll.out_dim; ++i) {
          const double gi = gn[i];
          if (gi == 0.0) continue;
          const double* wi = w.data() + i * ll.cols();
          for (std::size_t j = 0; j < ll.in_dim; ++j) bn[j] += gi * wi[j];
        }
      }
      const Activation f = spec.activation_after(l - 1);
      const Matrix& zprev = acts.pre[l - 1];
      for (std::size_t k = 0; k < back.size(); ++k) back.data()[k] *= act_grad(f, zprev.data()[k]);
      out.pre_cotangents[l] = std::move(g);
      g = std::move(back);
    } else {
      out.pre_cotangents[l] = std::move(g);
    }
  }
  return out;
}

BackwardResult backward(const NetSpec& spec, const ParamVector& theta, const Matrix& x, const Matrix& upstream) {
  BatchActivations acts;
  forward(spec, theta, x, &acts);
  return backward_from(spec, theta, acts, upstream);
}

Matrix jvp_from(const NetSpec& spec, const ParamVector& theta0, const BatchActivations& acts, const ParamVector& v) {
  require_same_layout(v, theta0, "jvp direction");
  const auto& layout = theta0.layout();
  const std::size_t L = spec.num_layers();
  if (acts.inputs.size() != L) throw ShapeError("activation capture does not match network");
  const std::size_t N = acts.batch_size();
  Matrix da;  // tangent of the previous layer's output; empty for the input layer
  Matrix dz;
  for (std::size_t l = 0; l < L; ++l) {
    const auto& ll = layout.layers[l];
    dz = affine(acts.inputs[l], v.layer(l), ll);
    if (l > 0) {
      auto w = theta0.layer(l);
      for (std::size_t n = 0; n < N; ++n) {
        auto dan = da.row(n);
        auto dzn = dz.row(n);
        for (std::size_t i = 0; i < ll.out_dim; ++i) {
          const double* wi = w.data() + i * ll.cols();
          double s = 0.0;
          for (std::size_t j = 0; j < ll.in_dim; ++j) s += wi[j] * dan[j];
          dzn[i] += s;
        }
      }
    }
    if (l + 1 < L) {
      const Activation f = spec.activation_after(l);
      da = dz;
      const Matrix& z = acts.pre[l];
      for (std::size_t k = 0; k < da.size(); ++k) da.data()[k] *= act_grad(f, z.data()[k]);
    }
  }
  return dz;
}

Matrix jvp(const NetSpec& spec, const ParamVector& theta0, const Matrix& x, const ParamVector& v) {
  check_inputs(spec, theta0, x);
  BatchActivations acts;
  forward(spec, theta0, x, &acts);
  return jvp_from(spec, theta0, acts, v);
}

ParamVector init_params(const NetSpec& spec, Rng& rng) {
  ParamVector p = ParamVector::zeros(spec);
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const auto& ll = p.layout().layers[l];
    const double sd = 1.0 / std::sqrt(static_cast<double>(ll.in_dim));
    auto w = p.layer(l);
    for (std::size_t i = 0; i < ll.out_dim; ++i)
      for (std::size_t j = 0; j < ll.in_dim; ++j) w[i * ll.cols() + j] = sd * rng.normal();
  }
  return p;
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= m.rows()) throw ShapeError("gather_rows: row index out of range");
    auto src = m.row(rows[k]);
    std::copy(src.begin(), src.end(), out.row(k).begin());
  }
  return out;
}

BatchActivations gather_rows(const BatchActivations& acts, std::span<const std::size_t> rows) {
  BatchActivations out;
  for (const auto& a : acts.inputs) out.inputs.push_back(gather_rows(a, rows));
  for (const auto& z : acts.pre) out.pre.push_back(gather_rows(z, rows));
  return out;
}

void save_checkpoint(const std::string& path, const NetSpec& spec, const ParamVector& theta) {
  require_layout(theta, ParamLayout::from_spec(spec), "save_checkpoint");
  detail::json j;
  j["format"] = "tak-checkpoint";
  j["version"] = 1;
  j["spec"] = detail::spec_to_json(spec);
  j["layout"] = detail::layout_to_json(theta.layout());
  std::ostringstream payload;
  BlobWriter w(payload);
  for (std::size_t l = 0; l < spec.num_layers(); ++l) w.matrix(theta.layer_matrix(l));
  write_container(path, j.dump(), payload.str());
}

Checkpoint load_checkpoint(const std::string& path) {
  Container c = read_container(path);
  auto j = detail::parse_manifest(c.manifest);
  if (detail::field<std::string>(j, "format") != "tak-checkpoint") throw FormatError("not a checkpoint file", 8);
  NetSpec spec = detail::spec_from_json(j.at("spec"));
  ParamVector theta = ParamVector::zeros(spec);
  BlobReader r = c.reader();
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const std::size_t at = r.offset();
    Matrix m = r.matrix();
    const auto& ll = theta.layout().layers[l];
    if (m.rows() != ll.out_dim || m.cols() != ll.cols()) throw FormatError("layer matrix shape mismatch", at);
    std::copy(m.data().begin(), m.data().end(), theta.layer(l).begin());
  }
  return {std::move(spec), std::move(theta)};
}

namespace detail {

json spec_to_json(const NetSpec& spec) {
  json acts = json::array();
  for (auto a : spec.activations) acts.push_back(to_string(a));
  json bias = json::array();
  for (bool b : spec.bias) bias.push_back(b);
  return {{"layer_dims", spec.layer_dims}, {"activations", acts}, {"bias", bias}};
}

NetSpec spec_from_json(const json& j) {
  NetSpec s;
  s.layer_dims = field<std::vector<std::size_t>>(j, "layer_dims");
  for (const auto& a : field<std::vector<std::string>>(j, "activations")) {
    try {
      s.activations.push_back(activation_from_string(a));
    } catch (const ParameterError& e) {
      throw FormatError(e.what(), 0);
    }
  }
  for (bool b : field<std::vector<bool>>(j, "bias")) s.bias.push_back(b);
  try {
    s.validate();
  } catch (const ShapeError& e) {
    throw FormatError(std::string("invalid network spec: ") + e.what(), 0);
  }
  return s;
}

json layout_to_json(const ParamLayout& layout) {
  json arr = json::array();
  for (const auto& ll : layout.layers) {
    arr.push_back({{"offset", ll.offset}, {"out_dim", ll.out_dim}, {"in_dim", ll.in_dim}, {"has_bias", ll.has_bias}});
  }
  return arr;
}

json parse_manifest(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("invalid JSON manifest: ") + e.what(), 16);
  }
}

}  // namespace detail

}  // namespace tak
