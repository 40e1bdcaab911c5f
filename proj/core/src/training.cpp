#include "tak/training.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <sstream>

#include "json_io.hpp"
#include "tak/errors.hpp"
#include "tak/linearized.hpp"

namespace tak {

std::string to_string(Regime r) { return r == Regime::linearized ? "linearized" : "nonlinear"; }

Regime regime_from_string(const std::string& s) {
  if (s == "linearized") return Regime::linearized;
  if (s == "nonlinear") return Regime::nonlinear;
  throw ParameterError("unknown regime '" + s + "'");
}

std::string to_string(Schedule s) { return s == Schedule::constant ? "constant" : "cosine"; }

Schedule schedule_from_string(const std::string& s) {
  if (s == "constant") return Schedule::constant;
  if (s == "cosine") return Schedule::cosine;
  throw ParameterError("unknown schedule '" + s + "'");
}

double learning_rate(const Optimizer& opt) {
  return std::visit([](const auto& o) { return o.lr; }, opt);
}

void TrainConfig::validate(std::size_t num_layers) const {
  const double lr = learning_rate(optimizer);
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ParameterError("learning rate must be positive");
  if (batch_size == 0) throw ParameterError("batch_size must be at least 1");
  if (!trainable_mask.empty()) {
    if (trainable_mask.size() != num_layers) throw ParameterError("trainable_mask needs one flag per layer");
    bool any = false;
    for (bool b : trainable_mask) any = any || b;
    if (!any) throw ParameterError("at least one layer must be trainable");
  }
  if (penalty) penalty->validate();
}

namespace {

class Stepper {
 public:
  Stepper(const Optimizer& opt, std::size_t n) : opt_(opt), m_(n, 0.0), v_(n, 0.0) {}

  void step(ParamVector& tau, const ParamVector& grad, const std::vector<bool>& trainable, double lr_factor) {
    ++t_;
    if (const auto* a = std::get_if<AdamLike>(&opt_)) {
      const double lr = a->lr * lr_factor;
      const double c1 = 1.0 - std::pow(a->beta1, static_cast<double>(t_));
      const double c2 = 1.0 - std::pow(a->beta2, static_cast<double>(t_));
      for (std::size_t i = 0; i < tau.size(); ++i) {
        if (!trainable[i]) continue;
        m_[i] = a->beta1 * m_[i] + (1.0 - a->beta1) * grad[i];
        v_[i] = a->beta2 * v_[i] + (1.0 - a->beta2) * grad[i] * grad[i];
        const double mh = m_[i] / c1;
        const double vh = v_[i] / c2;
        tau[i] -= lr * (mh / (std::sqrt(vh) + a->eps) + a->weight_decay * tau[i]);
      }
    } else {
      const auto& s = std::get<SgdMomentum>(opt_);
      const double lr = s.lr * lr_factor;
      for (std::size_t i = 0; i < tau.size(); ++i) {
        if (!trainable[i]) continue;
        m_[i] = s.momentum * m_[i] + grad[i];
        tau[i] -= lr * m_[i];
      }
    }
  }

 private:
  Optimizer opt_;
  Vector m_, v_;
  std::size_t t_ = 0;
};

std::vector<bool> flat_mask(const ParamLayout& layout, const std::vector<bool>& layer_mask) {
  std::vector<bool> mask(layout.total, true);
  if (layer_mask.empty()) return mask;
  for (std::size_t l = 0; l < layout.layers.size(); ++l) {
    const auto& ll = layout.layers[l];
    for (std::size_t i = ll.offset; i < ll.offset + ll.size(); ++i) mask[i] = layer_mask[l];
  }
  return mask;
}

}  // namespace

TrainReport finetune(const NetSpec& spec, const ParamVector& theta0, const Dataset& data, const TrainConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  require_layout(theta0, ParamLayout::from_spec(spec), "finetune");
  if (data.empty()) throw EmptyDataError("finetune: empty dataset");
  if (data.inputs.cols() != spec.input_dim()) throw ShapeError("finetune: input dimension mismatch");
  data.validate(spec.output_dim());
  cfg.validate(spec.num_layers());

  const std::size_t n = data.size();
  const std::size_t c_out = spec.output_dim();
  const bool sliced = cfg.restrict_to_slice && data.num_classes > 0;
  const std::size_t off = sliced ? data.class_offset : 0;
  const std::size_t width = sliced ? data.num_classes : c_out;
  std::vector<std::size_t> labels = data.labels;
  if (sliced) {
    for (auto& y : labels) {
      if (y < off || y >= off + width) throw DataError("label outside the dataset's class slice");
      y -= off;
    }
  }

  const auto mask = flat_mask(theta0.layout(), cfg.trainable_mask);
  const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = batches * cfg.epochs;

  LinearizedModel lin(spec, theta0);
  std::optional<AnchorCache> cache;
  if (cfg.regime == Regime::linearized && cfg.anchor_cache && total_steps > 0) cache = lin.make_cache(data.inputs);

  TrainReport rep;
  rep.seed = cfg.seed;
  ParamVector tau = theta0.zeros_like();
  Stepper opt(cfg.optimizer, tau.size());
  Rng rng(cfg.seed);
  ParamVector pen_grad;
  double last_penalty = 0.0;

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto perm = rng.permutation(n);
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * cfg.batch_size;
      const std::size_t hi = std::min(n, lo + cfg.batch_size);
      std::span<const std::size_t> rows(perm.data() + lo, hi - lo);
      std::vector<std::size_t> batch_labels;
      for (std::size_t r : rows) batch_labels.push_back(labels[r]);

      Matrix out;
      Matrix x;
      if (cache) {
        out = lin.forward_cached(*cache, rows, tau);
      } else {
        x = gather_rows(data.inputs, rows);
        out = cfg.regime == Regime::linearized ? lin.forward_displacement(tau, x) : forward(spec, theta0 + tau, x);
      }
      const Matrix logits = sliced ? slice_columns(out, off, width) : out;
      LossResult lr = criterion_loss(cfg.criterion, logits, batch_labels);
      if (!std::isfinite(lr.loss)) throw DivergenceError("non-finite training loss", step);
      const Matrix upstream = sliced ? embed_columns(lr.grad, off, c_out) : lr.grad;

      ParamVector grad;
      if (cache) {
        grad = lin.backward_cached(*cache, rows, upstream);
      } else if (cfg.regime == Regime::linearized) {
        grad = lin.backward(x, upstream);
      } else {
        grad = backward(spec, theta0 + tau, x, upstream).grad;
      }

      if (cfg.penalty && penalty_applies(*cfg.penalty, step)) {
        last_penalty = penalty_with_grad(*cfg.penalty, tau, pen_grad);
        if (cfg.penalty->compensate) pen_grad *= static_cast<double>(cfg.penalty->apply_every);
        grad += pen_grad;
      }
      if (!all_finite(grad.values())) throw DivergenceError("non-finite gradient", step);

      double factor = 1.0;
      if (cfg.schedule == Schedule::cosine) {
        factor = 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps)));
      }
      opt.step(tau, grad, mask, factor);
      rep.loss_curve.push_back(lr.loss);
      rep.penalty_curve.push_back(last_penalty);
      ++step;
    }
  }
  if (!all_finite(tau.values())) throw DivergenceError("non-finite task vector", step);

  rep.tau = {std::move(tau), data.task_id, 1.0, hash_params(theta0)};
  rep.steps = step;
  rep.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

std::string TrainReport::to_json(bool with_timing) const {
  detail::json j;
  j["task_id"] = tau.task_id;
  j["seed"] = seed;
  j["steps"] = steps;
  j["final_loss"] = loss_curve.empty() ? detail::json(nullptr) : detail::json(loss_curve.back());
  j["final_penalty"] = penalty_curve.empty() ? detail::json(nullptr) : detail::json(penalty_curve.back());
  j["tau_norm"] = norm2(tau.delta.values());
  j["loss_curve"] = loss_curve;
  j["penalty_curve"] = penalty_curve;
  if (with_timing) j["wall_time_s"] = wall_time_s;
  return j.dump(2);
}

std::string TrainReport::curves_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "step,loss,penalty\n";
  for (std::size_t i = 0; i < loss_curve.size(); ++i) out << i << ',' << loss_curve[i] << ',' << penalty_curve[i] << '\n';
  return out.str();
}

}  // namespace tak
