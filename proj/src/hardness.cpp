#include "relux/hardness.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "relux/errors.hpp"

namespace relux {

std::vector<std::size_t> RectangleSpec::active() const {
  std::vector<std::size_t> idx;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (a[i] != 0.0 || b[i] != 1.0) idx.push_back(static_cast<std::size_t>(i));
  return idx;
}

void RectangleSpec::validate() const {
  if (a.size() != b.size()) throw DimensionError("rectangle upper corner", dim(), static_cast<std::size_t>(b.size()));
  if (a.size() == 0) throw InvalidArgument("rectangle needs at least one coordinate");
  if (p == 0) throw InvalidArgument("rectangle precision must be positive");
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (!(a[i] >= 0.0 && b[i] <= 1.0 && a[i] <= b[i]))
      throw InvalidArgument("rectangle bounds must satisfy 0 <= a <= b <= 1 (coordinate " + std::to_string(i) + ")");
    if (a[i] == b[i]) throw InvalidArgument("degenerate rectangle interval at coordinate " + std::to_string(i));
  }
}

RectangleSpec rectangle_from_cells(std::size_t d, std::size_t p, const std::vector<std::optional<std::size_t>>& cells) {
  if (cells.size() != d) throw DimensionError("cell list", d, cells.size());
  if (p == 0) throw InvalidArgument("rectangle precision must be positive");
  RectangleSpec s{Vector::Zero(static_cast<Eigen::Index>(d)), Vector::Ones(static_cast<Eigen::Index>(d)), p};
  const double pd = static_cast<double>(p);
  for (std::size_t i = 0; i < d; ++i) {
    if (!cells[i]) continue;
    if (*cells[i] >= p) throw InvalidArgument("cell index " + std::to_string(*cells[i]) + " outside 0..p-1");
    s.a[static_cast<Eigen::Index>(i)] = static_cast<double>(*cells[i]) / pd;
    s.b[static_cast<Eigen::Index>(i)] = static_cast<double>(*cells[i] + 1) / pd;
  }
  return s;
}

double RectangleNet::operator()(const Vector& x) const { return std::max(0.0, pre_output(x)); }

RectangleNet build_rectangle_net(const RectangleSpec& spec, double margin) {
  spec.validate();
  if (!(margin >= 0.0) || !std::isfinite(margin)) throw InvalidArgument("rectangle margin must be nonnegative");
  const auto act = spec.active();
  const auto d = static_cast<Eigen::Index>(spec.dim());
  const auto k = static_cast<Eigen::Index>(act.size());
  if (k == 0) {
    // Nothing constrained: the combiner alone, 1 - margin everywhere.
    return RectangleNet(TwoLayerNet(Matrix::Zero(1, d), Vector::Constant(1, -1.0), Matrix::Zero(1, 1),
                                    Vector::Constant(1, 1.0 - margin)),
                        spec);
  }
  Matrix a0 = Matrix::Zero(3 * k, d);
  Vector b0(3 * k);
  Matrix a1(1, 3 * k);
  for (Eigen::Index g = 0; g < k; ++g) {
    const auto i = static_cast<Eigen::Index>(act[static_cast<std::size_t>(g)]);
    const double lo = spec.a[i];
    const double hi = spec.b[i];
    const double mid = 0.5 * (lo + hi);
    const double w = 2.0 / (hi - lo);
    for (Eigen::Index r = 0; r < 3; ++r) a0(3 * g + r, i) = 1.0;
    b0[3 * g] = -lo;
    b0[3 * g + 1] = -hi;
    b0[3 * g + 2] = -mid;
    a1(0, 3 * g) = w;
    a1(0, 3 * g + 1) = w;
    a1(0, 3 * g + 2) = -2.0 * w;
  }
  Vector b1 = Vector::Constant(1, -static_cast<double>(k - 1) - margin);
  return RectangleNet(TwoLayerNet(std::move(a0), std::move(b0), std::move(a1), std::move(b1)), spec);
}

Fraction Fraction::reduced() const {
  const std::uint64_t g = std::gcd(numerator, denominator);
  return g ? Fraction{numerator / g, denominator / g} : *this;
}

bool Fraction::operator==(const Fraction& o) const {
  const Fraction x = reduced();
  const Fraction y = o.reduced();
  return x.numerator == y.numerator && x.denominator == y.denominator;
}

Fraction nonzero_fraction(const ScalarField& f, std::size_t d, std::size_t p, GridKind grid) {
  if (d == 0) throw InvalidArgument("nonzero_fraction needs d > 0");
  if (p == 0) throw InvalidArgument("nonzero_fraction needs p > 0");
  constexpr std::uint64_t kMaxPoints = std::uint64_t{1} << 24;
  std::uint64_t total = 1;
  for (std::size_t i = 0; i < d; ++i) {
    if (total > kMaxPoints / p) throw InvalidArgument("grid of p^d points exceeds 2^24");
    total *= p;
  }
  const double pd = static_cast<double>(p);
  const double shift = grid == GridKind::midpoint ? 0.5 : 0.0;
  std::vector<std::size_t> digit(d, 0);
  Vector x(static_cast<Eigen::Index>(d));
  std::uint64_t hits = 0;
  for (std::uint64_t n = 0; n < total; ++n) {
    for (std::size_t i = 0; i < d; ++i) x[static_cast<Eigen::Index>(i)] = (static_cast<double>(digit[i]) + shift) / pd;
    if (f(x) != 0.0) ++hits;
    for (std::size_t i = 0; i < d; ++i) {
      if (++digit[i] < p) break;
      digit[i] = 0;
    }
  }
  return Fraction{hits, total};
}

TwoLayerNet build_subsetsum_net(const std::vector<std::int64_t>& v, std::int64_t target, std::int64_t p) {
  if (v.empty()) throw InvalidArgument("subset-sum net needs a nonempty weight vector");
  if (p <= 0) throw InvalidArgument("subset-sum precision must be positive");
  const auto d = static_cast<Eigen::Index>(v.size());
  Matrix a0(3, d);
  for (Eigen::Index j = 0; j < d; ++j) a0.col(j).setConstant(static_cast<double>(v[static_cast<std::size_t>(j)]));
  const double t = static_cast<double>(target);
  const double half = 0.5 * static_cast<double>(p);
  Vector b0(3);
  b0 << -(t - half), -(t + half), -t;
  Matrix a1(1, 3);
  a1 << 1.0, 1.0, -2.0;
  return TwoLayerNet(std::move(a0), std::move(b0), std::move(a1), Vector::Zero(1));
}

EquivalenceResult brute_force_equiv(const TwoLayerNet& a, const TwoLayerNet& b, double tol) {
  if (a.d() != b.d()) throw DimensionError("second network input", a.d(), b.d());
  if (a.k() != b.k()) throw DimensionError("second network output", a.k(), b.k());
  if (a.d() > 24) throw InvalidArgument("brute_force_equiv supports d <= 24");
  if (!(tol >= 0.0)) throw InvalidArgument("tolerance must be nonnegative");
  const std::size_t d = a.d();
  const std::uint64_t corners = std::uint64_t{1} << d;
  EquivalenceResult res;
  Vector x(static_cast<Eigen::Index>(d));
  for (std::uint64_t mask = 0; mask < corners; ++mask) {
    for (std::size_t i = 0; i < d; ++i) x[static_cast<Eigen::Index>(i)] = (mask >> i) & 1U ? 1.0 : 0.0;
    ++res.checked;
    if ((a.forward_logits(x) - b.forward_logits(x)).cwiseAbs().maxCoeff() > tol) {
      res.equivalent = false;
      res.witness = x;
      return res;
    }
  }
  return res;
}

}  // namespace relux
