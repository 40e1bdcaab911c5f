#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tak/linalg.hpp"

namespace tak {

enum class Activation { tanh, relu, identity };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// Dense feedforward architecture. The output layer is always affine; softmax
/// and losses live in the criterion code.
struct NetSpec {
  std::vector<std::size_t> layer_dims;  // input D, hidden widths..., output C
  std::vector<Activation> activations;  // one per hidden layer
  std::vector<bool> bias;               // one per layer

  static NetSpec mlp(std::vector<std::size_t> dims, Activation hidden, bool with_bias = true);

  std::size_t num_layers() const noexcept { return layer_dims.empty() ? 0 : layer_dims.size() - 1; }
  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t output_dim() const { return layer_dims.back(); }
  Activation activation_after(std::size_t layer) const;

  /// Throws ShapeError on inconsistent fields.
  void validate() const;

  friend bool operator==(const NetSpec&, const NetSpec&) = default;
};

/// Placement of one layer's weights inside the flat parameter vector. With a
/// bias, the block is the row-major flattening of the D1×(D2+1) matrix [W | b],
/// i.e. the bias acts on a constant-1 input coordinate appended last.
struct LayerLayout {
  std::size_t offset = 0;
  std::size_t out_dim = 0;  // D1
  std::size_t in_dim = 0;   // D2, excluding the bias coordinate
  bool has_bias = false;

  std::size_t cols() const noexcept { return in_dim + (has_bias ? 1 : 0); }
  std::size_t size() const noexcept { return out_dim * cols(); }
  std::size_t index(std::size_t row, std::size_t col) const noexcept { return offset + row * cols() + col; }
  std::size_t bias_index(std::size_t row) const noexcept { return offset + row * cols() + in_dim; }

  friend bool operator==(const LayerLayout&, const LayerLayout&) = default;
};

struct ParamLayout {
  std::vector<LayerLayout> layers;
  std::size_t total = 0;

  static ParamLayout from_spec(const NetSpec& spec);
  std::size_t num_layers() const noexcept { return layers.size(); }
  /// Index of the layer that owns flat parameter `i`.
  std::size_t layer_of(std::size_t i) const;

  friend bool operator==(const ParamLayout&, const ParamLayout&) = default;
};

/// Flat parameters with their per-layer layout. Home of θ, θ0 and task vectors.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(ParamLayout layout);
  ParamVector(ParamLayout layout, Vector values);

  static ParamVector zeros(const NetSpec& spec) { return ParamVector(ParamLayout::from_spec(spec)); }
  ParamVector zeros_like() const { return ParamVector(layout_); }

  const ParamLayout& layout() const noexcept { return layout_; }
  std::size_t size() const noexcept { return values_.size(); }
  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  const Vector& vector() const noexcept { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> layer(std::size_t l);
  std::span<const double> layer(std::size_t l) const;
  /// Row-major reshape of layer l to D1×cols.
  Matrix layer_matrix(std::size_t l) const;

  ParamVector& operator+=(const ParamVector& o);
  ParamVector& operator-=(const ParamVector& o);
  ParamVector& operator*=(double s);
  /// this += s·o
  void axpy(double s, const ParamVector& o);

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  ParamLayout layout_;
  Vector values_;
};

ParamVector operator+(ParamVector a, const ParamVector& b);
ParamVector operator-(ParamVector a, const ParamVector& b);
ParamVector operator*(double s, ParamVector a);

void require_layout(const ParamVector& p, const ParamLayout& layout, const char* what);
void require_same_layout(const ParamVector& a, const ParamVector& b, const char* what);

/// Per-layer inputs a (N×cols, with the constant-1 column when biased) and
/// pre-activation outputs z (N×D1) captured during a forward pass.
struct BatchActivations {
  std::vector<Matrix> inputs;
  std::vector<Matrix> pre;

  std::size_t batch_size() const { return inputs.empty() ? 0 : inputs.front().rows(); }
};

/// f(x, θ) per row of x. Activations are captured only when `capture` is set.
Matrix forward(const NetSpec& spec, const ParamVector& theta, const Matrix& x,
               BatchActivations* capture = nullptr);

struct BackwardResult {
  ParamVector grad;                   // Σₙ (J_θ fₙ)ᵀ sₙ
  std::vector<Matrix> pre_cotangents; // per layer, (J_{zₙ} fₙ)ᵀ sₙ, N×D1
};

/// Reverse-mode pass for the output cotangents `upstream` (N×C).
BackwardResult backward(const NetSpec& spec, const ParamVector& theta, const Matrix& x, const Matrix& upstream);
BackwardResult backward_from(const NetSpec& spec, const ParamVector& theta, const BatchActivations& acts,
                             const Matrix& upstream);

/// J_θ f(x, θ0)·v per row, by tangent propagation.
Matrix jvp(const NetSpec& spec, const ParamVector& theta0, const Matrix& x, const ParamVector& v);
Matrix jvp_from(const NetSpec& spec, const ParamVector& theta0, const BatchActivations& acts, const ParamVector& v);

/// Gaussian weights with variance 1/fan_in, zero biases.
ParamVector init_params(const NetSpec& spec, Rng& rng);

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows);
BatchActivations gather_rows(const BatchActivations& acts, std::span<const std::size_t> rows);

struct Checkpoint {
  NetSpec spec;
  ParamVector theta;
};

/// JSON header (spec, layout) followed by one matrix blob per layer.
void save_checkpoint(const std::string& path, const NetSpec& spec, const ParamVector& theta);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace tak
