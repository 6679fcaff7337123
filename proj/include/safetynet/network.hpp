#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace safetynet {

using Vector = std::vector<double>;

/// Dense row-major matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

/// One affine stage; weight is (output width) x (input width).
struct Layer {
  Matrix weight;
  Vector bias;

  std::size_t in_width() const { return weight.cols; }
  std::size_t out_width() const { return weight.rows; }

  friend bool operator==(const Layer&, const Layer&) = default;
};

/// Feedforward stack of affine stages. Every stage but the last is followed
/// by a ReLU; the last stage produces logits fed to a softmax head.
class Network {
 public:
  Network() = default;
  explicit Network(std::vector<Layer> layers);

  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& mutable_layers() { return layers_; }

  /// Widths from input to logits; size = number of stages + 1.
  std::vector<std::size_t> layer_dims() const;
  std::size_t input_width() const;
  std::size_t num_classes() const;
  std::size_t num_hidden() const { return layers_.empty() ? 0 : layers_.size() - 1; }
  std::size_t parameter_count() const;

  friend bool operator==(const Network&, const Network&) = default;

 private:
  std::vector<Layer> layers_;
};

/// Glorot-uniform weights, zero biases, drawn from a seeded mt19937_64.
Network make_network(std::span<const std::size_t> dims, std::uint64_t seed);

struct ActivationRecord {
  std::vector<Vector> hidden;  // post-ReLU output of each hidden stage
  Vector logits;
  Vector probs;
};

ActivationRecord forward(const Network& net, std::span<const double> x);

Vector softmax(std::span<const double> logits);

/// Argmax with ties broken toward the lowest index.
std::size_t argmax(std::span<const double> values);

inline std::size_t predict(const Network& net, std::span<const double> x) {
  return argmax(forward(net, x).probs);
}

/// Scalar objective whose input gradient is requested.
struct LossSpec {
  enum class Kind { CrossEntropy, Logit };
  Kind kind = Kind::CrossEntropy;
  std::size_t index = 0;

  static LossSpec cross_entropy(std::size_t label) { return {Kind::CrossEntropy, label}; }
  static LossSpec logit(std::size_t cls) { return {Kind::Logit, cls}; }
};

double loss_value(const ActivationRecord& rec, const LossSpec& loss);

/// d loss / d x by reverse-mode accumulation through the stack.
Vector input_gradient(const Network& net, std::span<const double> x, const LossSpec& loss);

/// Vector-Jacobian product back to the input. `dlogits` is the cotangent of
/// the logits (may be empty for zero); `dhidden[k]`, when non-empty, is
/// added as the cotangent of hidden stage k's post-ReLU output.
Vector input_vjp(const Network& net, const ActivationRecord& rec,
                 std::span<const double> dlogits,
                 const std::vector<Vector>& dhidden = {});

}  // namespace safetynet
