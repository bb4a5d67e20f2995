#pragma once

#include <cstddef>
#include <functional>
#include <vector>

namespace relux {

using ScalarFn = std::function<double(double)>;

/// Acceptance thresholds for the two-piece check:
///   |f(x) - expected| <= abs_scale * scale + rel * (|f(x)| + |expected|)
/// where `scale` is the magnitude of the function over the tested range.
struct LinearityTolerance {
  double abs_scale = 1e-8;
  double rel = 1e-7;
  /// Also test one point strictly between each slope window and the
  /// candidate against that side's line. Without it, several kinks whose
  /// outer lines happen to meet inside a still-linear stretch pass as one.
  bool check_sides = true;
};

enum class LinearityOutcome { single_kink, more_than_one, no_kink };

struct TwoLinearResult {
  LinearityOutcome outcome = LinearityOutcome::no_kink;
  double location = 0.0;  ///< kink position when outcome == single_kink
  double expected = 0.0;  ///< value predicted by the intersecting lines
  double observed = 0.0;  ///< f(location)
  double residual = 0.0;  ///< |observed - expected|, or the worst side-point miss
  double tolerance = 0.0; ///< threshold the residual was compared against
  int shrinks = 0;        ///< times eps was reduced after a window hit
};

/// Locates the only kink of a piecewise-linear f on [t1, t2] from the slopes
/// at both ends, or reports that the range holds more than one kink, or none.
///
/// Slopes come from a forward difference at t1 and a backward difference at
/// t2 over `eps`. If a kink sits inside one of those windows the intersection
/// collapses onto the window edge; that case is retried with eps / 16 (at
/// most `max_shrinks` times) before giving up with more_than_one.
///
/// Requires t1 < t2 and 0 < eps < (t2 - t1) / 4.
TwoLinearResult two_linear_test(const ScalarFn& f, double t1, double t2, double eps,
                                const LinearityTolerance& tol = {}, int max_shrinks = 4);

struct Kink {
  double t = 0.0;
  double residual = 0.0;
  double tolerance = 0.0;
};

struct KinkSearchOptions {
  LinearityTolerance tol{};
  /// eps = width * eps_fraction for each tested interval.
  double eps_fraction = 1.0 / 8.0;
  int max_depth = 60;
};

struct KinkSearchResult {
  std::vector<Kink> kinks;  ///< sorted by t
  std::size_t tests = 0;
  std::size_t splits = 0;
  std::size_t depth_capped = 0;  ///< intervals abandoned at max_depth
};

/// Finds every kink of f on [t1, t2]: each interval is tested with
/// two_linear_test and split at its midpoint whenever it holds more than one.
KinkSearchResult locate_kinks(const ScalarFn& f, double t1, double t2, const KinkSearchOptions& opts = {});

}  // namespace relux
