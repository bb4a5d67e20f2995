#include "relux/linearity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "relux/errors.hpp"

namespace relux {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();
// How close to a window edge an intersection must land to count as a hit.
constexpr double kWindowMargin = 1e-4;

double accept_tolerance(const LinearityTolerance& tol, double scale, double observed, double expected) {
  return tol.abs_scale * scale + tol.rel * (std::abs(observed) + std::abs(expected));
}

}  // namespace

TwoLinearResult two_linear_test(const ScalarFn& f, double t1, double t2, double eps,
                                const LinearityTolerance& tol, int max_shrinks) {
  const double width = t2 - t1;
  if (!(t1 < t2)) throw InvalidArgument("two_linear_test requires t1 < t2");
  if (!(eps > 0.0) || !(eps < width / 4.0))
    throw InvalidArgument("two_linear_test requires 0 < eps < (t2 - t1) / 4");

  const double y1 = f(t1);
  const double y2 = f(t2);
  TwoLinearResult r;

  for (int attempt = 0;; ++attempt) {
    const double f1 = f(t1 + eps);
    const double f2 = f(t2 - eps);
    const double m1 = (f1 - y1) / eps;
    const double m2 = (y2 - f2) / eps;
    const double fmag = std::max({std::abs(y1), std::abs(y2), std::abs(f1), std::abs(f2)});
    const double scale = std::max({fmag, std::abs(m1) * width, std::abs(m2) * width});
    const double slope_noise = 64.0 * kEps * fmag / eps;
    const double slope_tol = slope_noise + 1e-13 * std::max(std::abs(m1), std::abs(m2));

    if (std::abs(m1 - m2) <= slope_tol) {
      // Equal end slopes: linear unless the chord misses the midpoint.
      const double mid = t1 + 0.5 * width;
      const double ym = f(mid);
      const double chord = 0.5 * (y1 + y2);
      r.expected = chord;
      r.observed = ym;
      r.residual = std::abs(ym - chord);
      r.tolerance = accept_tolerance(tol, scale, ym, chord);
      r.outcome = r.residual <= r.tolerance ? LinearityOutcome::no_kink : LinearityOutcome::more_than_one;
      return r;
    }

    const double offset = (y2 - y1 - width * m2) / (m1 - m2);
    const double x = t1 + offset;
    const double expected = y1 + m1 * offset;
    if (!std::isfinite(x) || x <= t1 || x >= t2) {
      r.outcome = LinearityOutcome::more_than_one;
      r.location = x;
      return r;
    }
    const bool window_hit = x <= t1 + eps * (1.0 + kWindowMargin) || x >= t2 - eps * (1.0 + kWindowMargin);
    if (window_hit) {
      if (attempt < max_shrinks && eps / 16.0 > 0.0) {
        eps /= 16.0;
        ++r.shrinks;
        continue;
      }
      r.outcome = LinearityOutcome::more_than_one;
      r.location = x;
      return r;
    }

    const double y = f(x);
    r.location = x;
    r.expected = expected;
    r.observed = y;
    r.residual = std::abs(y - expected);
    r.tolerance = accept_tolerance(tol, scale, y, expected);
    r.outcome = r.residual <= r.tolerance ? LinearityOutcome::single_kink : LinearityOutcome::more_than_one;
    if (r.outcome == LinearityOutcome::single_kink && tol.check_sides) {
      // Points at geometrically shrinking distances from x on each side.
      // The near ones catch extra kinks close to x, where the outer lines
      // can still cross on an end piece.
      const double gl = x - (t1 + eps);
      const double gr = (t2 - eps) - x;
      const double probes[6] = {x - 0.5 * gl,       x - gl / 64.0,      x - gl / 4096.0,
                                x + gr / 4096.0,    x + gr / 64.0,      x + 0.5 * gr};
      for (int i = 0; i < 6 && r.outcome == LinearityOutcome::single_kink; ++i) {
        const double q = probes[i];
        const double e = i < 3 ? y1 + m1 * (q - t1) : y2 + m2 * (q - t2);
        const double fq = f(q);
        const double miss = std::abs(fq - e);
        if (miss > accept_tolerance(tol, scale, fq, e)) {
          r.outcome = LinearityOutcome::more_than_one;
          r.residual = miss;
        }
      }
    }
    return r;
  }
}

namespace {

void search_interval(const ScalarFn& f, double t1, double t2, int depth, const KinkSearchOptions& opts,
                     KinkSearchResult& out) {
  const double width = t2 - t1;
  if (!(width > 0.0)) return;
  const double eps = width * opts.eps_fraction;
  if (!(eps > 0.0) || !(eps < width / 4.0) || t1 + eps == t1) {
    ++out.depth_capped;
    return;
  }
  ++out.tests;
  const auto r = two_linear_test(f, t1, t2, eps, opts.tol);
  switch (r.outcome) {
    case LinearityOutcome::no_kink:
      return;
    case LinearityOutcome::single_kink:
      out.kinks.push_back(Kink{r.location, r.residual, r.tolerance});
      return;
    case LinearityOutcome::more_than_one:
      if (depth >= opts.max_depth) {
        ++out.depth_capped;
        return;
      }
      ++out.splits;
      const double mid = t1 + 0.5 * width;
      search_interval(f, t1, mid, depth + 1, opts, out);
      search_interval(f, mid, t2, depth + 1, opts, out);
      return;
  }
}

}  // namespace

KinkSearchResult locate_kinks(const ScalarFn& f, double t1, double t2, const KinkSearchOptions& opts) {
  if (!(t1 < t2)) throw InvalidArgument("locate_kinks requires t1 < t2");
  KinkSearchResult out;
  search_interval(f, t1, t2, 0, opts, out);
  std::sort(out.kinks.begin(), out.kinks.end(), [](const Kink& a, const Kink& b) { return a.t < b.t; });
  return out;
}

}  // namespace relux
