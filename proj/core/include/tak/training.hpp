#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "tak/criterion.hpp"
#include "tak/dataset.hpp"
#include "tak/driftreg.hpp"
#include "tak/network.hpp"
#include "tak/taskvec.hpp"

namespace tak {

enum class Regime { linearized, nonlinear };
enum class Schedule { constant, cosine };

std::string to_string(Regime r);
Regime regime_from_string(const std::string& s);
std::string to_string(Schedule s);
Schedule schedule_from_string(const std::string& s);

struct SgdMomentum {
  double lr = 1e-2;
  double momentum = 0.9;
};

/// Adam with decoupled weight decay.
struct AdamLike {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

using Optimizer = std::variant<AdamLike, SgdMomentum>;

double learning_rate(const Optimizer& opt);

struct TrainConfig {
  Regime regime = Regime::linearized;
  Optimizer optimizer = AdamLike{};
  Schedule schedule = Schedule::cosine;
  std::size_t batch_size = 64;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  /// One flag per layer; empty means every layer trains.
  std::vector<bool> trainable_mask;
  std::optional<DriftPenalty> penalty;
  Criterion criterion = Criterion::cross_entropy;
  /// Loss over the dataset's label slice only (per-task head).
  bool restrict_to_slice = true;
  /// Reuse anchor outputs and activations across epochs (linearized regime).
  bool anchor_cache = true;

  /// Throws ParameterError on invalid settings.
  void validate(std::size_t num_layers) const;
};

struct TrainReport {
  TaskVector tau;
  std::vector<double> loss_curve;     // mean criterion loss per step
  std::vector<double> penalty_curve;  // penalty value at the last application step
  double wall_time_s = 0.0;
  std::uint64_t seed = 0;
  std::size_t steps = 0;

  std::string to_json(bool with_timing = true) const;
  std::string curves_csv() const;
};

/// Optimizes τ with θ0 frozen: criterion loss of θ0 + τ (or its linearization)
/// plus the scheduled drift penalty. Throws DivergenceError on non-finite loss.
TrainReport finetune(const NetSpec& spec, const ParamVector& theta0, const Dataset& data, const TrainConfig& cfg);

}  // namespace tak
