#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "relux/errors.hpp"
#include "relux/hardness.hpp"

using namespace relux;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

}  // namespace

TEST_CASE("one-dimensional rectangle") {
  RectangleSpec s{vec({0.25}), vec({0.75}), 4};
  const auto r = build_rectangle_net(s);
  CHECK(r(vec({0.5})) > 0.0);
  CHECK(r(vec({0.5})) == doctest::Approx(1.0 - kRectangleMargin).epsilon(1e-12));
  CHECK(r(vec({0.1})) == 0.0);
  CHECK(r(vec({0.9})) == 0.0);
  CHECK(r(vec({0.25})) == 0.0);
  CHECK(r(vec({0.75})) == 0.0);
}

TEST_CASE("two-dimensional rectangle is zero off the box") {
  const auto spec = rectangle_from_cells(2, 8, {std::size_t{3}, std::size_t{5}});
  const auto r = build_rectangle_net(spec);
  for (int i = 0; i <= 64; ++i)
    for (int j = 0; j <= 64; ++j) {
      const Vector x = vec({i / 64.0, j / 64.0});
      const bool inside = x[0] > 3.0 / 8 && x[0] < 4.0 / 8 && x[1] > 5.0 / 8 && x[1] < 6.0 / 8;
      if (!inside) CHECK(r(x) == 0.0);
    }
  CHECK(r(vec({3.5 / 8, 5.5 / 8})) > 0.0);
}

TEST_CASE("unconstrained coordinates do not matter") {
  const auto spec = rectangle_from_cells(2, 4, {std::size_t{1}, std::nullopt});
  CHECK(spec.active() == std::vector<std::size_t>{0});
  const auto r = build_rectangle_net(spec);
  for (double x0 : {0.1, 0.3, 0.375, 0.45, 0.8})
    for (double x1 : {0.0, 0.2, 0.5, 0.99}) CHECK(r(vec({x0, x1})) == r(vec({x0, 0.5})));
}

TEST_CASE("nonzero fraction on a 4^4 grid") {
  const auto spec = rectangle_from_cells(4, 4, {std::size_t{2}, std::size_t{1}, std::nullopt, std::nullopt});
  const auto r = build_rectangle_net(spec);
  const auto f = nonzero_fraction([&](const Vector& x) { return r(x); }, 4, 4);
  CHECK(f.denominator == 256);
  CHECK(f == Fraction{1, 16});
  CHECK(f.reduced().numerator == 1);
  CHECK(f.reduced().denominator == 16);
}

TEST_CASE("rectangle validation") {
  CHECK_THROWS_AS(build_rectangle_net(RectangleSpec{vec({0.5}), vec({0.5}), 4}), InvalidArgument);
  CHECK_THROWS_AS(build_rectangle_net(RectangleSpec{vec({0.6}), vec({0.4}), 4}), InvalidArgument);
  CHECK_THROWS_AS(build_rectangle_net(RectangleSpec{vec({-0.1}), vec({0.4}), 4}), InvalidArgument);
  CHECK_THROWS_AS(rectangle_from_cells(2, 4, {std::size_t{4}, std::nullopt}), InvalidArgument);
}

TEST_CASE("subset-sum net fires only on the target sum") {
  const std::vector<std::int64_t> v{3, 5, 7};
  const auto net = build_subsetsum_net(v, 8, 1);
  CHECK(net.h() == 3);
  for (int m = 0; m < 8; ++m) {
    const Vector x = vec({double(m & 1), double((m >> 1) & 1), double((m >> 2) & 1)});
    const double y = net.forward_logits(x)[0];
    if (m == 3) CHECK(y > 0.0);
    else CHECK(y == 0.0);
  }
  const auto none = build_subsetsum_net(v, 16, 1);
  const auto zero = TwoLayerNet::zeros(3, 1, 1);
  CHECK(brute_force_equiv(zero, none).equivalent);
  const auto empty = build_subsetsum_net(v, 0, 1);
  CHECK(empty.forward_logits(Vector::Zero(3))[0] > 0.0);
}

TEST_CASE("brute force equivalence") {
  const auto net = build_subsetsum_net({1, 2, 4, 8}, 6, 1);
  const auto self = brute_force_equiv(net, net);
  CHECK(self.equivalent);
  CHECK(self.checked == 16);
  const auto diff = brute_force_equiv(TwoLayerNet::zeros(4, 1, 1), net);
  REQUIRE_FALSE(diff.equivalent);
  REQUIRE(diff.witness);
  CHECK(*diff.witness == vec({0, 1, 1, 0}));
  CHECK(diff.checked == 7);
  CHECK_THROWS_AS(brute_force_equiv(TwoLayerNet::zeros(25, 1, 1), TwoLayerNet::zeros(25, 1, 1)), InvalidArgument);
}

TEST_CASE("witnesses agree with meet in the middle") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t d = 4 + static_cast<std::size_t>(rng() % 9);
    std::vector<std::int64_t> v(d);
    std::int64_t sum = 0;
    for (auto& x : v) sum += x = 1 + static_cast<std::int64_t>(rng() % 1000);
    const std::int64_t p = 1 + static_cast<std::int64_t>(rng() % 4);
    const std::int64_t target = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(sum));
    const auto net = build_subsetsum_net(v, target, p);
    const auto r = brute_force_equiv(TwoLayerNet::zeros(d, 1, 1), net);
    const auto mitm = oracle::mitm_subset_sum(v, target, p);
    CHECK(r.equivalent == !mitm.has_value());
    if (r.witness) {
      std::int64_t s = 0;
      for (std::size_t i = 0; i < d; ++i) s += (*r.witness)[static_cast<Eigen::Index>(i)] > 0.5 ? v[i] : 0;
      CHECK(2 * std::abs(s - target) < p);
    }
  }
}
