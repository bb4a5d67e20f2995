#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace relux {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Preactivation at which a ReLU is treated as sitting on its kink.
inline constexpr double kKinkTolerance = 1e-12;

/// Axis-aligned input region [lo, hi].
struct InputBox {
  Vector lo;
  Vector hi;

  static InputBox uniform(std::size_t d, double lo, double hi);
  static InputBox unit(std::size_t d) { return uniform(d, 0.0, 1.0); }

  std::size_t dim() const { return static_cast<std::size_t>(lo.size()); }
  Vector center() const { return 0.5 * (lo + hi); }
  bool contains(const Vector& x, double slack = 0.0) const;
  Vector clamp(const Vector& x) const;
};

struct HiddenState {
  Vector preact;
  Vector act;
};

/// Depth-2 ReLU network  x -> a1 * relu(a0 * x + b0) + b1.
///
/// Weights are stored row-per-neuron: row i of a0 holds the incoming weights
/// of hidden neuron i (h x d), row k of a1 the weights into logit k (K x h).
/// Instances are immutable; every transform returns a new network.
class TwoLayerNet {
 public:
  TwoLayerNet(Matrix a0, Vector b0, Matrix a1, Vector b1);

  /// All-zero network of the given shape.
  static TwoLayerNet zeros(std::size_t d, std::size_t h, std::size_t k);

  std::size_t d() const { return static_cast<std::size_t>(a0_.cols()); }
  std::size_t h() const { return static_cast<std::size_t>(a0_.rows()); }
  std::size_t k() const { return static_cast<std::size_t>(a1_.rows()); }
  std::size_t parameter_count() const { return h() * d() + h() + k() * h() + k(); }

  const Matrix& a0() const { return a0_; }
  const Vector& b0() const { return b0_; }
  const Matrix& a1() const { return a1_; }
  const Vector& b1() const { return b1_; }

  HiddenState forward_hidden(const Vector& x) const;
  Vector forward_logits(const Vector& x) const;
  Vector forward_probs(const Vector& x, double temperature = 1.0) const;

  /// Bitwise equality of every parameter.
  bool identical(const TwoLayerNet& other) const;

 private:
  Matrix a0_;
  Vector b0_;
  Matrix a1_;
  Vector b1_;
};

/// softmax(logits / temperature), computed with the max-shift for stability.
Vector softmax(const Vector& logits, double temperature = 1.0);

/// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(const Vector& v);

struct Jacobian {
  Matrix value;          ///< K x d
  bool on_kink = false;  ///< some |preact| < kKinkTolerance; subgradient used
};

/// d logits / d x  =  a1 * diag(1[preact > 0]) * a0.
Jacobian input_jacobian(const TwoLayerNet& net, const Vector& x);

// Equivalence-class transforms. Each returns a network computing the same
// function as its argument.

TwoLayerNet scale_neuron(const TwoLayerNet& net, std::size_t neuron, double c);

/// perm[i] is the index in `net` of the neuron placed at position i.
TwoLayerNet permute_neurons(const TwoLayerNet& net, std::span<const std::size_t> perm);
std::vector<std::size_t> inverse_permutation(std::span<const std::size_t> perm);

/// Appends a neuron whose preactivation is strictly negative everywhere on
/// `box`. Its outgoing weights are arbitrary (default zero) because it never
/// fires there.
TwoLayerNet add_dead_neuron(const TwoLayerNet& net, const Vector& row, double bias,
                            const InputBox& box,
                            const std::optional<Vector>& out_weights = std::nullopt);

/// Largest value of row . x + bias over the box (attained at a corner).
double max_preactivation_on_box(const Vector& row, double bias, const InputBox& box);

/// Throws InvalidArgument unless h < d and the rows of a0 are linearly
/// independent.
void validate_victim(const TwoLayerNet& net);

enum class DataSource { synthetic, file, oracle_labeled };

struct LabeledDataset {
  std::vector<Vector> inputs;
  std::vector<Vector> targets;  ///< probability vectors, one per input
  DataSource source = DataSource::synthetic;

  std::size_t size() const { return inputs.size(); }
  bool empty() const { return inputs.empty(); }
  /// Throws InvalidArgument if sizes differ or a target is not a distribution.
  void validate() const;
  std::size_t label(std::size_t i) const { return argmax(targets[i]); }
};

std::string to_string(DataSource s);

}  // namespace relux
