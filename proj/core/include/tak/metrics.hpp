#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "tak/dataset.hpp"
#include "tak/linearized.hpp"
#include "tak/network.hpp"

namespace tak {

/// Maps an input batch to network outputs.
using Evaluator = std::function<Matrix(const Matrix&)>;
/// Maps a displacement τ and an input batch to outputs (θ0 fixed).
using ModelFamily = std::function<Matrix(const ParamVector&, const Matrix&)>;

Evaluator network_evaluator(const NetSpec& spec, const ParamVector& theta);
Evaluator linearized_evaluator(const LinearizedModel& m, const ParamVector& tau);
ModelFamily network_family(const NetSpec& spec, const ParamVector& theta0);
ModelFamily linearized_family(const LinearizedModel& m);

/// Predicted labels, argmax restricted to the dataset's class slice (or over
/// the union when `joint` is set or the dataset has no slice).
std::vector<std::size_t> predictions(const Matrix& outputs, const Dataset& data, bool joint = false);

double accuracy(const Matrix& outputs, const Dataset& data, bool joint = false);
double accuracy(const Evaluator& eval, const Dataset& data, bool joint = false);

/// Mean of merged/individual per task, in percent.
double normalized_accuracy(const std::vector<double>& merged, const std::vector<double>& individual);

/// Mean over `data` of ‖f_lin(θ0+α_tτ_t+α_t′τ_t′) − f_lin(θ0+α_tτ_t)‖².
double representation_drift(const LinearizedModel& m, const ParamVector& tau_t, const ParamVector& tau_other,
                            double alpha_t, double alpha_other, const Dataset& data);

struct DisentanglementMap {
  std::vector<double> alpha1;
  std::vector<double> alpha2;
  Matrix xi;  // |alpha1| × |alpha2|

  double mean() const;
  /// Long format: alpha1,alpha2,xi.
  std::string to_csv() const;
};

DisentanglementMap disentanglement_map(const ModelFamily& family, const ParamVector& tau1, const ParamVector& tau2,
                                       const std::vector<double>& alpha1, const std::vector<double>& alpha2,
                                       const Dataset& data1, const Dataset& data2);

/// Probability that an inlier outscores an outlier, ties counting one half.
double auc(const std::vector<double>& inlier, const std::vector<double>& outlier);

struct NormalcyResult {
  std::vector<double> inlier;
  std::vector<double> outlier;
  double auc = 0.5;

  /// split,score rows.
  std::string to_csv() const;
};

/// Per-example ‖J_θ f(x, θ0)·τ‖² on both sets, with their AUC.
NormalcyResult normalcy_scores(const NetSpec& spec, const ParamVector& theta0, const ParamVector& tau,
                               const Dataset& inlier, const Dataset& outlier);

/// Per-task evaluation context for addition and negation reports.
struct EvalSuite {
  std::vector<Dataset> tests;
  std::vector<double> individual;  // fine-tuned accuracy per task
  std::vector<double> pretrained;  // θ0 accuracy per task
  std::size_t control_task = 0;

  /// Throws DegenerateError when reference accuracies leave [0, 1].
  void validate() const;
};

}  // namespace tak
