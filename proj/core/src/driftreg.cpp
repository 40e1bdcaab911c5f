#include "tak/driftreg.hpp"

#include <cmath>

#include "tak/errors.hpp"

namespace tak {

DriftPenalty DriftPenalty::from_store(const FactorStore& store, const std::string& excluded, double beta) {
  DriftPenalty p;
  p.source = Source::per_task;
  for (const auto& [id, lambda] : store.weights(excluded)) p.per_task.emplace_back(lambda, store.get(id));
  p.beta = beta;
  return p;
}

DriftPenalty DriftPenalty::from_merged(const MergedCurvature& m, double beta) {
  DriftPenalty p;
  p.source = Source::merged;
  p.merged = m.factors;
  p.beta = beta;
  return p;
}

DriftPenalty DriftPenalty::from_diagonal(ParamVector d, double beta) {
  DriftPenalty p;
  p.source = Source::diagonal;
  p.diagonal = std::move(d);
  p.beta = beta;
  return p;
}

DriftPenalty DriftPenalty::from_exact(const ExactGGN& g, double beta) {
  DriftPenalty p;
  p.source = Source::exact;
  p.exact = g.g;
  p.beta = beta;
  return p;
}

void DriftPenalty::validate() const {
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ParameterError("beta must be finite and nonnegative");
  if (apply_every == 0) throw ParameterError("apply_every must be at least 1");
  if (!std::isfinite(last_layer_scale) || last_layer_scale < 0.0) throw ParameterError("invalid last_layer_scale");
}

namespace {

bool in_last_layer(const ParamLayout& layout, std::size_t i) { return i >= layout.layers.back().offset; }

// Σ_l s_l·τˡᵀ(Bˡ⊗Aˡ)τˡ plus exact blocks; accumulates `w`·gradient into `grad` when given.
double kfac_form(const KfacCurvature& c, const ParamVector& tau, double last_scale, double w, ParamVector* grad) {
  if (!(c.layout == tau.layout())) throw ShapeError("penalty: task vector layout does not match curvature");
  const std::size_t last = c.layout.layers.size() - 1;
  double total = 0.0;
  for (std::size_t l = 0; l < c.layers.size(); ++l) {
    const auto& ll = c.layout.layers[l];
    const Matrix& a = c.layers[l].a.matrix;
    const Matrix& b = c.layers[l].b.matrix;
    const std::size_t acols = a.rows();
    Matrix t(ll.out_dim, acols);
    for (std::size_t i = 0; i < ll.out_dim; ++i)
      for (std::size_t j = 0; j < acols; ++j) t(i, j) = tau[ll.index(i, j)];
    const Matrix s = matmul_nt(matmul(b, t), a);
    const double scale = l == last ? last_scale : 1.0;
    total += scale * frobenius_inner(t, s);
    if (grad) {
      const double g = 2.0 * w * scale;
      for (std::size_t i = 0; i < ll.out_dim; ++i)
        for (std::size_t j = 0; j < acols; ++j) (*grad)[ll.index(i, j)] += g * s(i, j);
    }
  }
  for (const auto& eb : c.exact_blocks) {
    Vector v(eb.indices.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = tau[eb.indices[i]];
    const Vector gv = matvec(eb.g, v);
    const double scale = eb.layer == last ? last_scale : 1.0;
    total += scale * dot(v, gv);
    if (grad) {
      for (std::size_t i = 0; i < v.size(); ++i) (*grad)[eb.indices[i]] += 2.0 * w * scale * gv[i];
    }
  }
  return total;
}

double evaluate(const DriftPenalty& p, const ParamVector& tau, ParamVector* grad) {
  p.validate();
  switch (p.source) {
    case DriftPenalty::Source::per_task: {
      double total = 0.0;
      for (const auto& [lambda, c] : p.per_task) {
        total += lambda * kfac_form(c, tau, p.last_layer_scale, p.beta * lambda, grad);
      }
      return p.beta * total;
    }
    case DriftPenalty::Source::merged:
      return p.beta * kfac_form(p.merged, tau, p.last_layer_scale, p.beta, grad);
    case DriftPenalty::Source::diagonal: {
      if (!(p.diagonal.layout() == tau.layout())) throw ShapeError("penalty: diagonal layout mismatch");
      double total = 0.0;
      for (std::size_t i = 0; i < tau.size(); ++i) {
        const double d = p.diagonal[i] * (in_last_layer(tau.layout(), i) ? p.last_layer_scale : 1.0);
        total += d * tau[i] * tau[i];
        if (grad) (*grad)[i] += 2.0 * p.beta * d * tau[i];
      }
      return p.beta * total;
    }
    case DriftPenalty::Source::exact: {
      if (p.exact.rows() != tau.size() || !p.exact.is_square()) throw ShapeError("penalty: exact GGN size mismatch");
      // Last-layer scale s enters as S^{1/2} G S^{1/2}.
      const double root = std::sqrt(p.last_layer_scale);
      Vector v(tau.values().begin(), tau.values().end());
      for (std::size_t i = 0; i < v.size(); ++i)
        if (in_last_layer(tau.layout(), i)) v[i] *= root;
      const Vector gv = matvec(p.exact, v);
      if (grad) {
        for (std::size_t i = 0; i < v.size(); ++i)
          (*grad)[i] += 2.0 * p.beta * gv[i] * (in_last_layer(tau.layout(), i) ? root : 1.0);
      }
      return p.beta * dot(v, gv);
    }
  }
  return 0.0;
}

}  // namespace

double penalty(const DriftPenalty& p, const ParamVector& tau) { return evaluate(p, tau, nullptr); }

ParamVector penalty_grad(const DriftPenalty& p, const ParamVector& tau) {
  ParamVector g = tau.zeros_like();
  evaluate(p, tau, &g);
  return g;
}

double penalty_with_grad(const DriftPenalty& p, const ParamVector& tau, ParamVector& grad) {
  grad = tau.zeros_like();
  return evaluate(p, tau, &grad);
}

bool penalty_applies(const DriftPenalty& p, std::size_t step) { return step % p.apply_every == 0; }

ParamVector scheduled_penalty_grad(const DriftPenalty& p, const ParamVector& tau, std::size_t step) {
  p.validate();
  if (!penalty_applies(p, step)) return tau.zeros_like();
  ParamVector g = penalty_grad(p, tau);
  if (p.compensate) g *= static_cast<double>(p.apply_every);
  return g;
}

}  // namespace tak
