#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "relux/net.hpp"

namespace relux {

/// Axis-aligned box [a, b] inside the unit cube together with the grid
/// precision p. Coordinates with (a_i, b_i) != (0, 1) are the active ones.
struct RectangleSpec {
  Vector a;
  Vector b;
  std::size_t p = 1;

  std::size_t dim() const { return static_cast<std::size_t>(a.size()); }
  std::vector<std::size_t> active() const;
  /// Throws InvalidArgument unless 0 <= a <= b <= 1, every active interval
  /// is nondegenerate and p > 0.
  void validate() const;
};

/// One grid cell per constrained coordinate: cells[i] = c pins coordinate i
/// to [c/p, (c+1)/p]; nullopt leaves it at [0, 1].
RectangleSpec rectangle_from_cells(std::size_t d, std::size_t p, const std::vector<std::optional<std::size_t>>& cells);

/// A TwoLayerNet with a ReLU applied to its single logit.
class RectangleNet {
 public:
  RectangleNet(TwoLayerNet inner, RectangleSpec spec) : inner_(std::move(inner)), spec_(std::move(spec)) {}

  double operator()(const Vector& x) const;
  /// The logit before the final ReLU.
  double pre_output(const Vector& x) const { return inner_.forward_logits(x)[0]; }
  const TwoLayerNet& inner() const { return inner_; }
  const RectangleSpec& spec() const { return spec_; }

 private:
  TwoLayerNet inner_;
  RectangleSpec spec_;
};

/// Default amount subtracted from the combined bias on top of k - 1.
inline constexpr double kRectangleMargin = 1e-9;

/// Three ReLUs per active coordinate build the tent
///   T_i(x) = relu(x_i - a_i) + relu(x_i - b_i) - 2 relu(x_i - m_i),  m_i = (a_i + b_i) / 2,
/// which rises from 0 at a_i to (b_i - a_i) / 2 at m_i and falls back to 0 at
/// b_i. The output is  relu(sum_i 2 T_i / (b_i - a_i) - (k - 1) - margin),
/// nonzero only inside the box and positive at its centre. With no active
/// coordinate the inner net is a single inert neuron.
RectangleNet build_rectangle_net(const RectangleSpec& spec, double margin = kRectangleMargin);

struct Fraction {
  std::uint64_t numerator = 0;
  std::uint64_t denominator = 1;

  double value() const { return static_cast<double>(numerator) / static_cast<double>(denominator); }
  /// Lowest terms.
  Fraction reduced() const;
  /// Equal as rational numbers, whether or not either side is reduced.
  bool operator==(const Fraction& o) const;
};

enum class GridKind {
  lattice,   ///< {0, 1/p, ..., (p-1)/p}
  midpoint,  ///< {1/(2p), 3/(2p), ..., (2p-1)/(2p)}: one point inside every cell
};

using ScalarField = std::function<double(const Vector&)>;

/// Exact share of the p^d grid points where f is nonzero. Requires p^d <= 2^24.
Fraction nonzero_fraction(const ScalarField& f, std::size_t d, std::size_t p, GridKind grid = GridKind::midpoint);

/// Width-3 single-logit net whose output is the tent of height p/2 around T
/// in x . v: nonzero exactly when x . v lies in (T - p/2, T + p/2).
TwoLayerNet build_subsetsum_net(const std::vector<std::int64_t>& v, std::int64_t target, std::int64_t p);

struct EquivalenceResult {
  bool equivalent = true;
  std::optional<Vector> witness;  ///< first corner where the logits differ
  std::uint64_t checked = 0;
};

/// Walks every corner of {0,1}^d in binary counting order (bit i of the
/// counter is x_i) and stops at the first whose logits differ by more than
/// `tol` in some coordinate. Requires d <= 24.
EquivalenceResult brute_force_equiv(const TwoLayerNet& a, const TwoLayerNet& b, double tol = 1e-9);

}  // namespace relux
