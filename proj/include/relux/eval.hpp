#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "relux/net.hpp"
#include "relux/oracle.hpp"
#include "relux/random.hpp"

namespace relux {

/// Anything that produces logits for an input: a local net or a metered oracle.
using LogitFn = std::function<Vector(const Vector&)>;

LogitFn logits_of(const TwoLayerNet& net);
/// Queries are billed to Phase::eval.
LogitFn logits_of(OracleHandle& oracle);

/// n points drawn uniformly from the box.
std::vector<Vector> sample_box(const InputBox& box, std::size_t n, std::uint64_t seed);

/// Fraction of points on which both sides pick the same argmax label.
double fidelity(const LogitFn& a, const LogitFn& b, const std::vector<Vector>& points);
double fidelity(const LogitFn& a, const LogitFn& b, const InputBox& box, std::size_t n, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Precision

inline constexpr double kBitCeiling = 52.0;
inline constexpr std::size_t kBitBins = 53;  ///< one bin per whole bit, 0..52
using BitHistogram = std::array<std::uint64_t, kBitBins>;

/// -log2(rel_error) clamped to [0, kBitCeiling]; an exact match scores the ceiling.
double bits_of_precision(double rel_error);

struct AlignmentResult {
  /// match[i] is the extracted neuron aligned to victim neuron i, if any.
  std::vector<std::optional<std::size_t>> match;
  std::vector<double> scales;      ///< positive factor taking extracted row i onto the victim row
  std::vector<int> signs;          ///< -1 where the extracted row points the wrong way
  std::vector<double> row_errors;  ///< ||scale * sign * extracted - victim|| / ||victim||
  std::vector<double> bias_errors; ///< same, for the bias
  Matrix similarity;               ///< |cos| between victim row i and extracted row j
  std::size_t unmatched = 0;       ///< live victim neurons with no partner at |cos| >= min_cosine
};

/// Greedy matching of extracted rows to victim rows on |cos|, ties broken by
/// bias agreement. Rows with norm below 1e-12 on either side are skipped.
AlignmentResult align_neurons(const TwoLayerNet& victim, const TwoLayerNet& extracted, double min_cosine = 0.9);

struct PrecisionReport {
  AlignmentResult alignment;
  std::vector<double> entry_bits;  ///< one value per nonzero first-layer victim entry of matched neurons
  double mean_bits = 0.0;
  double min_bits = 0.0;
  double mean_bias_bits = 0.0;
  BitHistogram histogram{};
};

/// Per entry: bits of  |c * sign * w_hat_j - w_j| / |w_j|  after alignment.
PrecisionReport align_and_precision(const TwoLayerNet& victim, const TwoLayerNet& extracted);

struct LogitGapReport {
  std::vector<double> bits;  ///< per sample, -log2(||f - g||_inf / ||f||_inf)
  double mean_bits = 0.0;
  double min_bits = 0.0;
  double max_abs_gap = 0.0;
  double max_rel_gap = 0.0;  ///< max over samples of ||f - g||_inf / max(||f||_inf, floor)
  BitHistogram histogram{};
};

LogitGapReport logit_gap(const LogitFn& reference, const LogitFn& other, const std::vector<Vector>& points,
                         double floor = 1e-12);

// ---------------------------------------------------------------------------
// Adversarial examples

struct PgdConfig {
  double epsilon = 0.1;
  std::size_t iters = 20;
  std::optional<double> step;  ///< defaults to epsilon / 10
  double step_size() const { return step.value_or(epsilon / 10.0); }
};

/// Untargeted l_inf PGD on the cross-entropy of `true_label`. Every iterate
/// stays inside the epsilon ball around x and inside the box.
Vector pgd_attack(const TwoLayerNet& net, const Vector& x, std::size_t true_label, const PgdConfig& cfg,
                  const InputBox& box);

struct TransferReport {
  std::size_t attempted = 0;
  std::size_t source_successes = 0;  ///< PGD changed the source's own label
  std::size_t transferred = 0;       ///< ... and also the target's label
  double rate = 0.0;                 ///< transferred / source_successes (1 when there are none)
};

TransferReport transfer_rate(const TwoLayerNet& source, const LogitFn& target, const std::vector<Vector>& points,
                             const PgdConfig& cfg, const InputBox& box);

}  // namespace relux
