#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "relux/net.hpp"
#include "relux/oracle.hpp"

namespace relux {

/// Wrong-entry fault model: adds `magnitude` to a0(neuron, coord) and
/// re-derives the bias from a point on the original hyperplane, the way a
/// bad ratio propagates into the bias during extraction. The witness
/// defaults to the hyperplane point nearest the origin.
TwoLayerNet inject_weight_error(const TwoLayerNet& net, std::size_t neuron, std::size_t coord, double magnitude,
                                const std::optional<Vector>& witness = std::nullopt);

/// Trainable part of  x -> w1 * relu(a0 x + b0 + w0) + w2  with a0, b0 frozen.
struct HybridParams {
  Vector w0;  ///< length h, or length 1 when shared by every neuron
  Matrix w1;  ///< K x h
  Vector w2;  ///< K
};

/// Mean squared logit error  (1/n) sum ||O(x) - w1 relu(a0 x + b0 + w0) - w2||^2
/// over a fixed labelled set. a0 x + b0 is computed once.
class RefinementObjective {
 public:
  RefinementObjective(const Matrix& a0, const Vector& b0, const std::vector<Vector>& inputs,
                      const std::vector<Vector>& targets);

  double value(const HybridParams& p) const;
  /// Analytic gradient; also returns the value.
  double gradient(const HybridParams& p, HybridParams& grad) const;

  std::size_t size() const { return static_cast<std::size_t>(pre_.rows()); }
  std::size_t h() const { return static_cast<std::size_t>(pre_.cols()); }
  std::size_t k() const { return static_cast<std::size_t>(targets_.cols()); }

  /// Power-iteration estimate of the objective's curvature at p, used to
  /// pick a stable step when none is given.
  double curvature(const HybridParams& p) const;

 private:
  Matrix pre_;      ///< n x h, a0 x + b0
  Matrix targets_;  ///< n x K
};

struct RefinementConfig {
  /// Step size; 0 picks 1 / curvature at the starting point.
  double learning_rate = 0.0;
  std::size_t iterations = 3000;
  std::size_t n = 4096;
  /// Inputs are drawn uniformly from here; the unit cube when unset.
  std::optional<InputBox> box;
  /// Stop once the objective improves by less than this fraction of itself.
  double tolerance = 1e-12;
  /// One bias shift shared by all neurons instead of one per neuron.
  bool scalar_bias = false;
  std::uint64_t seed = 0;
  std::size_t max_restarts = 8;

  void validate() const;
};

struct RefineResult {
  explicit RefineResult(TwoLayerNet n) : net(std::move(n)) {}

  TwoLayerNet net;
  double initial_objective = 0.0;
  double final_objective = 0.0;
  std::size_t iterations = 0;
  std::size_t restarts = 0;
  bool converged = false;
  LedgerSnapshot ledger;
};

/// Gradient descent on w0, w1, w2 against oracle labels (Phase::other).
/// The best parameters seen are returned, so the objective never ends above
/// its starting value. Ten steps without improving on the best halve the
/// learning rate and resume from the best point.
RefineResult refine(const TwoLayerNet& start, OracleHandle& oracle, const RefinementConfig& cfg);

/// Same, on an already labelled set.
RefineResult refine_on(const TwoLayerNet& start, const std::vector<Vector>& inputs,
                       const std::vector<Vector>& targets, const RefinementConfig& cfg);

}  // namespace relux
