#include "tak/metrics.hpp"

#include <sstream>

#include "tak/criterion.hpp"
#include "tak/errors.hpp"

namespace tak {

Evaluator network_evaluator(const NetSpec& spec, const ParamVector& theta) {
  return [spec, theta](const Matrix& x) { return forward(spec, theta, x); };
}

Evaluator linearized_evaluator(const LinearizedModel& m, const ParamVector& tau) {
  return [m, tau](const Matrix& x) { return m.forward_displacement(tau, x); };
}

ModelFamily network_family(const NetSpec& spec, const ParamVector& theta0) {
  return [spec, theta0](const ParamVector& tau, const Matrix& x) { return forward(spec, theta0 + tau, x); };
}

ModelFamily linearized_family(const LinearizedModel& m) {
  return [m](const ParamVector& tau, const Matrix& x) { return m.forward_displacement(tau, x); };
}

std::vector<std::size_t> predictions(const Matrix& outputs, const Dataset& data, bool joint) {
  if (outputs.rows() != data.size()) throw ShapeError("predictions: outputs and dataset differ in length");
  const bool sliced = !joint && data.num_classes > 0;
  const std::size_t off = sliced ? data.class_offset : 0;
  const std::size_t width = sliced ? data.num_classes : outputs.cols();
  if (off + width > outputs.cols()) throw ShapeError("predictions: class slice exceeds output width");
  std::vector<std::size_t> pred(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) pred[i] = off + argmax(outputs.row(i).subspan(off, width));
  return pred;
}

double accuracy(const Matrix& outputs, const Dataset& data, bool joint) {
  if (data.empty()) throw EmptyDataError("accuracy: empty dataset");
  const auto pred = predictions(outputs, data, joint);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == data.labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

double accuracy(const Evaluator& eval, const Dataset& data, bool joint) {
  if (data.empty()) throw EmptyDataError("accuracy: empty dataset");
  return accuracy(eval(data.inputs), data, joint);
}

double normalized_accuracy(const std::vector<double>& merged, const std::vector<double>& individual) {
  if (merged.size() != individual.size()) throw ShapeError("normalized_accuracy: task counts differ");
  if (merged.empty()) throw EmptyDataError("normalized_accuracy: no tasks");
  double s = 0.0;
  for (std::size_t t = 0; t < merged.size(); ++t) {
    if (!(individual[t] > 0.0)) throw DegenerateError("individual accuracy of task " + std::to_string(t) + " is zero");
    s += merged[t] / individual[t];
  }
  return 100.0 * s / static_cast<double>(merged.size());
}

double representation_drift(const LinearizedModel& m, const ParamVector& tau_t, const ParamVector& tau_other,
                            double alpha_t, double alpha_other, const Dataset& data) {
  if (data.empty()) throw EmptyDataError("representation_drift: empty dataset");
  ParamVector single = alpha_t * tau_t;
  ParamVector joint = single;
  joint.axpy(alpha_other, tau_other);
  const Matrix z_joint = m.forward_displacement(joint, data.inputs);
  const Matrix z_single = m.forward_displacement(single, data.inputs);
  double s = 0.0;
  for (std::size_t i = 0; i < z_joint.size(); ++i) {
    const double d = z_joint.data()[i] - z_single.data()[i];
    s += d * d;
  }
  return s / static_cast<double>(data.size());
}

double DisentanglementMap::mean() const {
  if (xi.empty()) return 0.0;
  double s = 0.0;
  for (double v : xi.data()) s += v;
  return s / static_cast<double>(xi.size());
}

std::string DisentanglementMap::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "alpha1,alpha2,xi\n";
  for (std::size_t i = 0; i < alpha1.size(); ++i)
    for (std::size_t j = 0; j < alpha2.size(); ++j) out << alpha1[i] << ',' << alpha2[j] << ',' << xi(i, j) << '\n';
  return out.str();
}

namespace {

double disagreement(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i] ? 1 : 0;
  return static_cast<double>(d) / static_cast<double>(a.size());
}

}  // namespace

DisentanglementMap disentanglement_map(const ModelFamily& family, const ParamVector& tau1, const ParamVector& tau2,
                                       const std::vector<double>& alpha1, const std::vector<double>& alpha2,
                                       const Dataset& data1, const Dataset& data2) {
  if (alpha1.empty() || alpha2.empty()) throw ParameterError("disentanglement grids must be nonempty");
  if (data1.empty() || data2.empty()) throw EmptyDataError("disentanglement_map: empty task data");
  require_same_layout(tau1, tau2, "disentanglement_map");
  DisentanglementMap map{alpha1, alpha2, Matrix(alpha1.size(), alpha2.size())};
  // Single-task predictions depend on one coefficient only.
  std::vector<std::vector<std::size_t>> solo1, solo2;
  for (double a : alpha1) solo1.push_back(predictions(family(a * tau1, data1.inputs), data1));
  for (double a : alpha2) solo2.push_back(predictions(family(a * tau2, data2.inputs), data2));
  for (std::size_t i = 0; i < alpha1.size(); ++i) {
    for (std::size_t j = 0; j < alpha2.size(); ++j) {
      ParamVector joint = alpha1[i] * tau1;
      joint.axpy(alpha2[j], tau2);
      const double x1 = disagreement(solo1[i], predictions(family(joint, data1.inputs), data1));
      const double x2 = disagreement(solo2[j], predictions(family(joint, data2.inputs), data2));
      map.xi(i, j) = x1 + x2;
    }
  }
  return map;
}

double auc(const std::vector<double>& inlier, const std::vector<double>& outlier) {
  if (inlier.empty() || outlier.empty()) throw EmptyDataError("auc: empty score set");
  double wins = 0.0;
  for (double a : inlier)
    for (double b : outlier) wins += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
  return wins / (static_cast<double>(inlier.size()) * static_cast<double>(outlier.size()));
}

std::string NormalcyResult::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "split,score\n";
  for (double s : inlier) out << "inlier," << s << '\n';
  for (double s : outlier) out << "outlier," << s << '\n';
  return out.str();
}

namespace {

std::vector<double> row_sq_norms(const Matrix& m) {
  std::vector<double> s(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double v = 0.0;
    for (double x : m.row(i)) v += x * x;
    s[i] = v;
  }
  return s;
}

}  // namespace

NormalcyResult normalcy_scores(const NetSpec& spec, const ParamVector& theta0, const ParamVector& tau,
                               const Dataset& inlier, const Dataset& outlier) {
  if (inlier.empty() || outlier.empty()) throw EmptyDataError("normalcy_scores: empty dataset");
  NormalcyResult r;
  r.inlier = row_sq_norms(jvp(spec, theta0, inlier.inputs, tau));
  r.outlier = row_sq_norms(jvp(spec, theta0, outlier.inputs, tau));
  r.auc = auc(r.inlier, r.outlier);
  return r;
}

void EvalSuite::validate() const {
  auto in_unit = [](const std::vector<double>& v) {
    for (double a : v)
      if (!(a >= 0.0 && a <= 1.0)) return false;
    return true;
  };
  if (!in_unit(individual) || !in_unit(pretrained)) throw DegenerateError("reference accuracies must lie in [0, 1]");
  if (!tests.empty() && control_task >= tests.size()) throw ParameterError("control task out of range");
}

}  // namespace tak
