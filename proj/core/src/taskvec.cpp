#include "tak/taskvec.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json_io.hpp"
#include "tak/errors.hpp"
#include "tak/serialize.hpp"

namespace tak {

std::uint64_t hash_params(const ParamVector& p) { return hash_doubles(p.values()); }

TaskVector make_task_vector(const ParamVector& theta0, const ParamVector& theta_star, const std::string& task_id) {
  require_same_layout(theta0, theta_star, "make_task_vector");
  return {theta_star - theta0, task_id, 1.0, hash_params(theta0)};
}

namespace {

constexpr std::size_t kCompensatedThreshold = 100'000;

}  // namespace

ParamVector compose(const ParamVector& theta0, const std::vector<std::pair<TaskVector, double>>& vectors,
                    const ComposeOptions& opts) {
  const std::uint64_t h = opts.check_anchor ? hash_params(theta0) : 0;
  for (const auto& [tv, alpha] : vectors) {
    require_same_layout(theta0, tv.delta, "compose");
    if (opts.check_anchor && tv.anchor_hash != 0 && tv.anchor_hash != h) {
      throw ContractError("task vector '" + tv.task_id + "' was built on a different anchor");
    }
    if (!std::isfinite(alpha)) throw ParameterError("non-finite scaling coefficient");
  }
  const std::size_t n = theta0.size();
  ParamVector out = theta0;
  if (vectors.empty()) return out;
  if (n < kCompensatedThreshold) {
    Vector sum(n, 0.0);
    for (const auto& [tv, alpha] : vectors)
      for (std::size_t i = 0; i < n; ++i) sum[i] += alpha * tv.delta[i];
    for (std::size_t i = 0; i < n; ++i) out[i] += sum[i];
    return out;
  }
  // Neumaier summation per coordinate.
  Vector sum(n, 0.0), comp(n, 0.0);
  for (const auto& [tv, alpha] : vectors) {
    for (std::size_t i = 0; i < n; ++i) {
      const double x = alpha * tv.delta[i];
      const double t = sum[i] + x;
      comp[i] += std::abs(sum[i]) >= std::abs(x) ? (sum[i] - t) + x : (x - t) + sum[i];
      sum[i] = t;
    }
  }
  for (std::size_t i = 0; i < n; ++i) out[i] += sum[i] + comp[i];
  return out;
}

std::vector<SweepRow> alpha_sweep(const ParamVector& theta0, const std::vector<TaskVector>& vectors,
                                  std::vector<double> alphas,
                                  const std::function<double(const ParamVector&)>& evaluator) {
  if (alphas.empty()) throw ParameterError("alpha grid is empty");
  std::sort(alphas.begin(), alphas.end());
  std::vector<SweepRow> rows;
  for (double a : alphas) {
    std::vector<std::pair<TaskVector, double>> scaled;
    for (const auto& tv : vectors) scaled.emplace_back(tv, a);
    rows.push_back({a, evaluator(compose(theta0, scaled))});
  }
  return rows;
}

void save_task_vector(const std::string& path, const NetSpec& spec, const TaskVector& tv) {
  require_layout(tv.delta, ParamLayout::from_spec(spec), "save_task_vector");
  detail::json j;
  j["format"] = "tak-task-vector";
  j["version"] = 1;
  j["spec"] = detail::spec_to_json(spec);
  j["layout"] = detail::layout_to_json(tv.delta.layout());
  j["task_id"] = tv.task_id;
  j["default_alpha"] = tv.default_alpha;
  j["anchor_hash"] = hex64(tv.anchor_hash);
  std::ostringstream payload;
  BlobWriter w(payload);
  for (std::size_t l = 0; l < spec.num_layers(); ++l) w.matrix(tv.delta.layer_matrix(l));
  write_container(path, j.dump(), payload.str());
}

TaskVector load_task_vector(const std::string& path, NetSpec* spec_out) {
  Container c = read_container(path);
  auto j = detail::parse_manifest(c.manifest);
  if (detail::field<std::string>(j, "format") != "tak-task-vector") throw FormatError("not a task-vector file", 8);
  NetSpec spec = detail::spec_from_json(j.at("spec"));
  TaskVector tv;
  tv.delta = ParamVector::zeros(spec);
  tv.task_id = detail::field<std::string>(j, "task_id");
  tv.default_alpha = detail::field<double>(j, "default_alpha");
  const auto hash = detail::field<std::string>(j, "anchor_hash");
  try {
    tv.anchor_hash = std::stoull(hash, nullptr, 16);
  } catch (const std::exception&) {
    throw FormatError("bad anchor hash '" + hash + "'", 16);
  }
  BlobReader r = c.reader();
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const std::size_t at = r.offset();
    Matrix m = r.matrix();
    const auto& ll = tv.delta.layout().layers[l];
    if (m.rows() != ll.out_dim || m.cols() != ll.cols()) throw FormatError("layer matrix shape mismatch", at);
    std::copy(m.data().begin(), m.data().end(), tv.delta.layer(l).begin());
  }
  if (spec_out) *spec_out = std::move(spec);
  return tv;
}

}  // namespace tak
