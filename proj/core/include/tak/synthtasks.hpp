#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tak/dataset.hpp"
#include "tak/network.hpp"
#include "tak/training.hpp"

namespace tak {

enum class Geometry { disjoint_regions, rotated_shared };

std::string to_string(Geometry g);
Geometry geometry_from_string(const std::string& s);

struct SuiteConfig {
  std::size_t n_tasks = 4;
  std::size_t input_dim = 16;
  std::size_t classes_per_task = 3;
  std::size_t clusters_per_class = 2;
  double sigma = 0.5;
  std::size_t n_train = 512;
  std::size_t n_val = 128;
  std::size_t n_test = 256;
  std::size_t n_pretrain = 256;  // per task
  std::uint64_t seed = 0;
  Geometry geometry = Geometry::disjoint_regions;
  double region_radius = 5.0;   // distance of each task region from the origin
  double cluster_radius = 2.0;  // distance of cluster centers from their region center

  /// Throws GenerationError for invalid sizes.
  void validate() const;
  std::size_t total_classes() const { return n_tasks * classes_per_task; }
};

struct TaskMeta {
  std::string task_id;
  std::size_t class_offset = 0;
  std::size_t num_classes = 0;
  Vector region_center;
  Matrix centers;                         // one row per cluster
  std::vector<std::size_t> center_class;  // global label of each cluster
};

struct Suite {
  SuiteConfig config;
  Dataset pretrain;
  std::vector<Dataset> train;
  std::vector<Dataset> val;
  std::vector<Dataset> test;
  std::vector<TaskMeta> tasks;

  /// Smallest distance between any two cluster centers of the suite.
  double min_center_distance() const;
  /// Smallest distance between centers belonging to different tasks.
  double min_intertask_distance() const;
};

/// Pretraining merges adjacent classes into pairs led by local class 2⌊c/2⌋;
/// members of a pair are labelled with either class of the pair at random.
std::size_t coarse_label(std::size_t local_class);

/// Deterministic in cfg.seed. Throws GenerationError when the separation
/// constraints cannot be met.
Suite generate_suite(const SuiteConfig& cfg);

/// D → hidden... → ΣC network over the union label space.
NetSpec suite_network(const SuiteConfig& cfg, std::vector<std::size_t> hidden = {64, 64},
                      Activation act = Activation::tanh);

struct PretrainConfig {
  std::size_t epochs = 30;
  double lr = 3e-3;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  Criterion criterion = Criterion::cross_entropy;
};

/// Non-linear training from a seeded initialization over the full output space.
ParamVector pretrain(const NetSpec& spec, const Dataset& data, const PretrainConfig& cfg);

/// Directory of dataset files plus suite.json.
void save_suite(const std::string& dir, const Suite& suite);
Suite load_suite(const std::string& dir);

}  // namespace tak
