#include "tak/dataset.hpp"

#include <sstream>

#include "json_io.hpp"
#include "tak/errors.hpp"
#include "tak/serialize.hpp"

namespace tak {

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::pretrain: return "pretrain";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  if (s == "pretrain") return Split::pretrain;
  throw ParameterError("unknown split '" + s + "'");
}

void Dataset::validate(std::size_t output_dim) const {
  if (inputs.rows() != labels.size()) throw DataError("dataset inputs and labels differ in length");
  if (!all_finite(inputs.data())) throw DataError("dataset contains non-finite inputs");
  for (std::size_t y : labels)
    if (y >= output_dim) throw DataError("label " + std::to_string(y) + " out of range");
  if (num_classes > 0 && class_offset + num_classes > output_dim) throw DataError("label slice exceeds output space");
}

Dataset Dataset::subset(std::span<const std::size_t> idx) const {
  Dataset d;
  d.inputs = Matrix(idx.size(), inputs.cols());
  d.labels.reserve(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] >= size()) throw ShapeError("subset index out of range");
    auto src = inputs.row(idx[k]);
    std::copy(src.begin(), src.end(), d.inputs.row(k).begin());
    d.labels.push_back(labels[idx[k]]);
  }
  d.task_id = task_id;
  d.split = split;
  d.class_offset = class_offset;
  d.num_classes = num_classes;
  return d;
}

Dataset concat(const std::vector<Dataset>& parts, const std::string& task_id) {
  if (parts.empty()) throw EmptyDataError("concat of zero datasets");
  std::size_t n = 0;
  const std::size_t d = parts.front().inputs.cols();
  for (const auto& p : parts) {
    if (p.inputs.cols() != d) throw ShapeError("concat: input dimension mismatch");
    n += p.size();
  }
  Dataset out;
  out.inputs = Matrix(n, d);
  std::size_t row = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < p.size(); ++i, ++row) {
      auto src = p.inputs.row(i);
      std::copy(src.begin(), src.end(), out.inputs.row(row).begin());
      out.labels.push_back(p.labels[i]);
    }
  }
  out.task_id = task_id;
  out.split = parts.front().split;
  return out;
}

void save_dataset(const std::string& path, const Dataset& d) {
  detail::json j;
  j["format"] = "tak-dataset";
  j["version"] = 1;
  j["task_id"] = d.task_id;
  j["split"] = to_string(d.split);
  j["class_offset"] = d.class_offset;
  j["num_classes"] = d.num_classes;
  j["size"] = d.size();
  std::ostringstream payload;
  BlobWriter w(payload);
  w.matrix(d.inputs);
  for (std::size_t y : d.labels) w.u32(static_cast<std::uint32_t>(y));
  write_container(path, j.dump(), payload.str());
}

Dataset load_dataset(const std::string& path) {
  Container c = read_container(path);
  auto j = detail::parse_manifest(c.manifest);
  if (detail::field<std::string>(j, "format") != "tak-dataset") throw FormatError("not a dataset file", 8);
  Dataset d;
  d.task_id = detail::field<std::string>(j, "task_id");
  d.split = split_from_string(detail::field<std::string>(j, "split"));
  d.class_offset = detail::field<std::size_t>(j, "class_offset");
  d.num_classes = detail::field<std::size_t>(j, "num_classes");
  const auto n = detail::field<std::size_t>(j, "size");
  BlobReader r = c.reader();
  const std::size_t at = r.offset();
  d.inputs = r.matrix();
  if (d.inputs.rows() != n) throw FormatError("dataset row count mismatch", at);
  d.labels.resize(n);
  for (auto& y : d.labels) y = r.u32();
  return d;
}

}  // namespace tak
