#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tak/curvature.hpp"
#include "tak/network.hpp"
#include "tak/regfactors.hpp"
#include "tak/synthtasks.hpp"
#include "tak/training.hpp"

namespace tak::bench {

inline constexpr int kSchemaVersion = 1;

enum class PenaltySource { none, merged, per_task, diagonal };
enum class Compression { none, block, lowrank, prune, quant8 };
enum class AlphaPolicy { fixed, best, both };

std::string to_string(PenaltySource s);
std::string to_string(Compression c);
std::string to_string(AlphaPolicy p);

struct NetworkSection {
  std::vector<std::size_t> hidden = {64, 64};
  Activation activation = Activation::tanh;
};

struct CurvatureSection {
  KfacOptions kfac;  // kfac.seed is offset by the run seed and the task index
};

struct PenaltySection {
  PenaltySource source = PenaltySource::merged;
  double beta = 0.01;
  MergeMode merge_mode = MergeMode::summed_b;
  Compression compression = Compression::none;
  std::size_t blocks = 8;
  std::size_t rank = 0;
  double rank_fraction = 0.25;
  double keep = 0.1;
  std::size_t apply_every = 1;
  bool compensate = false;
  double last_layer_scale = 1.0;

  bool active() const { return source != PenaltySource::none && beta > 0.0; }
};

struct FinetuneSection {
  Regime regime = Regime::linearized;
  std::string optimizer = "adam";  // "adam" or "sgd"
  double lr = 1e-2;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::size_t epochs = 60;
  std::size_t batch_size = 64;
  Schedule schedule = Schedule::cosine;
  Criterion criterion = Criterion::cross_entropy;
  std::vector<bool> trainable;  // empty: all layers
};

struct AlphaSection {
  AlphaPolicy policy = AlphaPolicy::both;
  double fixed = 1.0;
  std::vector<double> grid;  // candidates for best-on-validation
};

struct SweepSection {
  bool enabled = true;
  std::vector<double> grid;
};

struct NegationSection {
  bool enabled = true;
  long control = -1;  // negative: last task
  std::vector<double> grid;
  double keep_fraction = 0.95;
};

struct DisentangleSection {
  bool enabled = true;
  std::size_t task_a = 0;
  std::size_t task_b = 1;
  std::size_t grid_size = 11;
  double max_alpha = 1.0;
};

struct LocalizeSection {
  bool enabled = true;
};

/// Fully resolved pipeline configuration (file values over defaults).
struct BenchConfig {
  std::uint64_t seed = 0;
  SuiteConfig suite;
  NetworkSection network;
  PretrainConfig pretrain;
  CurvatureSection curvature;
  PenaltySection penalty;
  FinetuneSection finetune;
  AlphaSection alpha;
  SweepSection sweep;
  NegationSection negation;
  DisentangleSection disentangle;
  LocalizeSection localize;

  BenchConfig();

  /// Schema-checked parse; unknown keys and bad values raise ConfigError
  /// carrying a JSON pointer to the offending field.
  static BenchConfig from_json(const std::string& text);
  static BenchConfig from_file(const std::string& path);

  /// Canonical JSON of every field, defaults included.
  std::string to_json() const;
  /// FNV-1a over the canonical JSON, as 16 hex digits.
  std::string hash() const;

  /// Applies "a.b.c=value" overrides; the value is read as JSON when it
  /// parses, as a string otherwise.
  void apply_override(const std::string& assignment);

  TrainConfig train_config(std::size_t task_index) const;
  NetSpec network_spec() const;
};

/// Uniform grid lo, lo+step, ..., hi (inclusive within half a step).
std::vector<double> linspace_step(double lo, double hi, double step);

}  // namespace tak::bench
