#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tak/linalg.hpp"

namespace tak {

enum class Split { train, val, test, pretrain };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

/// Labeled inputs of one task. Labels index the network's full output space;
/// [class_offset, class_offset + num_classes) is the task's label slice, used
/// for per-task-head evaluation. num_classes == 0 means "whole output space".
struct Dataset {
  Matrix inputs;  // N×D
  std::vector<std::size_t> labels;
  std::string task_id;
  Split split = Split::train;
  std::size_t class_offset = 0;
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }

  /// Throws DataError when labels fall outside [0, output_dim) or inputs are non-finite.
  void validate(std::size_t output_dim) const;

  /// Rows `idx` in the given order, same metadata.
  Dataset subset(std::span<const std::size_t> idx) const;
};

Dataset concat(const std::vector<Dataset>& parts, const std::string& task_id);

void save_dataset(const std::string& path, const Dataset& d);
Dataset load_dataset(const std::string& path);

}  // namespace tak
