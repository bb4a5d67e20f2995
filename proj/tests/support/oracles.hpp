#pragma once

// Reference computations used by the tests. Each one is written from the
// definitions directly and shares no code with the library under test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "relux/net.hpp"

namespace oracle {

using relux::Matrix;
using relux::TwoLayerNet;
using relux::Vector;

/// Logits by explicit dot products, one neuron at a time.
inline Vector naive_logits(const TwoLayerNet& net, const Vector& x) {
  const auto& a0 = net.a0();
  const auto& a1 = net.a1();
  std::vector<double> act(net.h());
  for (Eigen::Index i = 0; i < a0.rows(); ++i) {
    double s = net.b0()[i];
    for (Eigen::Index j = 0; j < a0.cols(); ++j) s += a0(i, j) * x[j];
    act[static_cast<std::size_t>(i)] = s > 0.0 ? s : 0.0;
  }
  Vector out(a1.rows());
  for (Eigen::Index k = 0; k < a1.rows(); ++k) {
    double s = net.b1()[k];
    for (Eigen::Index i = 0; i < a1.cols(); ++i) s += a1(k, i) * act[static_cast<std::size_t>(i)];
    out[k] = s;
  }
  return out;
}

/// Central differences of the logits, one column per input coordinate.
inline Matrix central_jacobian(const TwoLayerNet& net, const Vector& x, double step = 1e-5) {
  Matrix j(static_cast<Eigen::Index>(net.k()), x.size());
  for (Eigen::Index c = 0; c < x.size(); ++c) {
    Vector hi = x, lo = x;
    hi[c] += step;
    lo[c] -= step;
    j.col(c) = (naive_logits(net, hi) - naive_logits(net, lo)) / (2.0 * step);
  }
  return j;
}

/// Central differences of a scalar function of a parameter vector.
inline std::vector<double> central_gradient(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> p, double step = 1e-6) {
  std::vector<double> g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double keep = p[i];
    p[i] = keep + step;
    const double up = f(p);
    p[i] = keep - step;
    const double down = f(p);
    p[i] = keep;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

/// Kink positions t of each neuron along u + t v, nearest first within range.
inline std::vector<std::pair<double, std::size_t>> analytic_kinks(const TwoLayerNet& net, const Vector& u,
                                                                  const Vector& v, double lo, double hi) {
  std::vector<std::pair<double, std::size_t>> out;
  for (std::size_t i = 0; i < net.h(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const double slope = net.a0().row(r).dot(v);
    if (slope == 0.0) continue;
    const double t = -(net.a0().row(r).dot(u) + net.b0()[r]) / slope;
    if (t > lo && t < hi) out.emplace_back(t, i);
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Approximate kink locations of a scalar function from a dense sample: a
/// cell whose slope differs from both neighbours' agreeing slope.
inline std::vector<double> dense_sweep_kinks(const std::function<double(double)>& f, double lo, double hi,
                                             std::size_t n, double rel_tol = 1e-7) {
  std::vector<double> t(n + 1), y(n + 1), slope(n);
  const double w = (hi - lo) / static_cast<double>(n);
  for (std::size_t i = 0; i <= n; ++i) {
    t[i] = lo + w * static_cast<double>(i);
    y[i] = f(t[i]);
  }
  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    slope[i] = (y[i + 1] - y[i]) / w;
    scale = std::max(scale, std::abs(slope[i]));
  }
  std::vector<double> kinks;
  const double tol = rel_tol * std::max(scale, 1.0);
  for (std::size_t i = 1; i < n; ++i) {
    if (std::abs(slope[i] - slope[i - 1]) <= tol) continue;
    // A kink strictly inside cell i bends both of its sides; one on a grid
    // node shows up as a single step. Report the node or cell centre.
    if (i + 1 < n && std::abs(slope[i + 1] - slope[i]) > tol) {
      kinks.push_back(0.5 * (t[i] + t[i + 1]));
      ++i;
    } else {
      kinks.push_back(t[i]);
    }
  }
  return kinks;
}

/// Meet in the middle: some subset S of v with |sum(S) - target| < p / 2.
/// Returns the membership mask (bit i set when v[i] is in S).
inline std::optional<std::uint64_t> mitm_subset_sum(const std::vector<std::int64_t>& v, std::int64_t target,
                                                    std::int64_t p) {
  const std::size_t n = v.size();
  const std::size_t left = n / 2;
  const std::size_t right = n - left;
  auto sums = [&](std::size_t offset, std::size_t count) {
    std::vector<std::pair<std::int64_t, std::uint64_t>> s;
    s.reserve(std::size_t{1} << count);
    for (std::uint64_t m = 0; m < (std::uint64_t{1} << count); ++m) {
      std::int64_t total = 0;
      for (std::size_t i = 0; i < count; ++i)
        if ((m >> i) & 1U) total += v[offset + i];
      s.emplace_back(total, m << offset);
    }
    return s;
  };
  const auto ls = sums(0, left);
  auto rs = sums(left, right);
  std::sort(rs.begin(), rs.end());
  // Need 2 |L + R - T| < p, i.e.  2(T - L) - p < 2R < 2(T - L) + p.
  for (const auto& [l, lm] : ls) {
    const std::int64_t lo2 = 2 * (target - l) - p;
    const auto it = std::upper_bound(rs.begin(), rs.end(), lo2,
                                     [](std::int64_t bound, const auto& e) { return bound < 2 * e.first; });
    if (it != rs.end() && 2 * it->first < 2 * (target - l) + p) return lm | it->second;
  }
  return std::nullopt;
}

/// Maximum over rows of |cos| between row i of a and its best partner in b.
inline double worst_best_cosine(const Matrix& a, const Matrix& b) {
  double worst = 1.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    double best = 0.0;
    for (Eigen::Index j = 0; j < b.rows(); ++j)
      best = std::max(best, std::abs(a.row(i).dot(b.row(j))) / (a.row(i).norm() * b.row(j).norm()));
    worst = std::min(worst, best);
  }
  return worst;
}

/// Largest logit deviation relative to the reference logit magnitude.
inline double max_relative_gap(const TwoLayerNet& ref, const TwoLayerNet& other, const std::vector<Vector>& pts) {
  double worst = 0.0;
  for (const auto& x : pts) {
    const Vector f = naive_logits(ref, x);
    const Vector g = naive_logits(other, x);
    worst = std::max(worst, (f - g).cwiseAbs().maxCoeff() / std::max(f.cwiseAbs().maxCoeff(), 1e-12));
  }
  return worst;
}

}  // namespace oracle
