#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "relux/errors.hpp"
#include "relux/linearity.hpp"
#include "relux/random.hpp"

using namespace relux;

TEST_CASE("single kink of |t - 0.3|") {
  const auto r = two_linear_test([](double t) { return std::abs(t - 0.3); }, 0.0, 1.0, 0.1);
  REQUIRE(r.outcome == LinearityOutcome::single_kink);
  CHECK(std::abs(r.location - 0.3) <= 1e-9);
  CHECK(r.residual <= r.tolerance);
}

TEST_CASE("a straight line has no kink") {
  const auto r = two_linear_test([](double t) { return 2.0 * t - 1.0; }, -3.0, 5.0, 0.5);
  CHECK(r.outcome == LinearityOutcome::no_kink);
}

TEST_CASE("two kinks are rejected and subdivision finds both") {
  auto f = [](double t) { return std::max(0.0, t - 0.2) + 2.0 * std::max(0.0, t - 0.7); };
  CHECK(two_linear_test(f, 0.0, 1.0, 0.05).outcome == LinearityOutcome::more_than_one);
  const auto dense = oracle::dense_sweep_kinks(f, 0.0, 1.0, 1000);
  REQUIRE(dense.size() == 2);
  const auto found = locate_kinks(f, 0.0, 1.0);
  REQUIRE(found.kinks.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) CHECK(std::abs(found.kinks[i].t - dense[i]) <= 1e-3);
  CHECK(std::abs(found.kinks[0].t - 0.2) <= 1e-9);
  CHECK(std::abs(found.kinks[1].t - 0.7) <= 1e-9);
  CHECK(found.splits >= 1);
}

TEST_CASE("a kink inside a slope window is found after shrinking eps") {
  auto f = [](double t) { return std::abs(t - 0.02); };
  const auto r = two_linear_test(f, 0.0, 1.0, 0.1);
  REQUIRE(r.outcome == LinearityOutcome::single_kink);
  CHECK(r.shrinks >= 1);
  CHECK(std::abs(r.location - 0.02) <= 1e-9);
}

TEST_CASE("outer lines meeting over a flat stretch are not a single kink") {
  // Kinks at 0.3 and 0.7 whose end lines cross at 0.5, where f is flat.
  auto f = [](double t) { return std::max({-(t - 0.3), 0.0, t - 0.7}); };
  CHECK(two_linear_test(f, 0.0, 1.0, 0.05).outcome == LinearityOutcome::more_than_one);
  CHECK(locate_kinks(f, 0.0, 1.0).kinks.size() == 2);
}

TEST_CASE("preconditions") {
  auto f = [](double t) { return t; };
  CHECK_THROWS_AS(two_linear_test(f, 1.0, 0.0, 0.1), InvalidArgument);
  CHECK_THROWS_AS(two_linear_test(f, 0.0, 1.0, 0.0), InvalidArgument);
  CHECK_THROWS_AS(two_linear_test(f, 0.0, 1.0, 0.3), InvalidArgument);
  CHECK_THROWS_AS(locate_kinks(f, 0.0, 0.0), InvalidArgument);
}

TEST_CASE("random piecewise-linear functions against a dense sweep") {
  Rng rng(12);
  std::uniform_real_distribution<double> pos(-50.0, 50.0);
  std::normal_distribution<double> slope(0.0, 1.0);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<double> at(3), w(3);
    for (int i = 0; i < 3; ++i) {
      at[static_cast<std::size_t>(i)] = pos(rng);
      w[static_cast<std::size_t>(i)] = slope(rng) + (slope(rng) > 0 ? 0.5 : -0.5);
    }
    auto f = [&](double t) {
      double s = 0.3 * t + 1.0;
      for (int i = 0; i < 3; ++i) s += w[static_cast<std::size_t>(i)] * std::max(0.0, t - at[static_cast<std::size_t>(i)]);
      return s;
    };
    const auto dense = oracle::dense_sweep_kinks(f, -64.0, 64.0, 1 << 16);
    const auto found = locate_kinks(f, -64.0, 64.0);
    REQUIRE(found.kinks.size() == dense.size());
    for (std::size_t i = 0; i < dense.size(); ++i) CHECK(std::abs(found.kinks[i].t - dense[i]) <= 128.0 / (1 << 15));
  }
}

TEST_CASE("outer lines meeting on an end piece do not pass as one kink") {
  // Three kinks in the middle; the outer lines cross beyond all of them.
  const double at[3] = {-0.758816, 2.75982, 23.3647};
  const double w[3] = {0.746953, -1.37772, 1.13304};
  auto f = [&](double t) {
    double s = 0.3 * t + 1.0;
    for (int i = 0; i < 3; ++i) s += w[i] * std::max(0.0, t - at[i]);
    return s;
  };
  CHECK(two_linear_test(f, -64.0, 64.0, 16.0).outcome == LinearityOutcome::more_than_one);
  CHECK(locate_kinks(f, -64.0, 64.0).kinks.size() == 3);

  // Two kinks close together, just right of where the outer lines meet.
  auto g = [](double t) {
    const double k1 = -43.1166, k2 = -42.7426;
    if (t < k1) return -0.0530554 * (t - k1);
    if (t < k2) return 1.4736 * (t - k1);
    return 1.4736 * (k2 - k1) + 1.46357 * (t - k2);
  };
  const double lo = -44.1464, hi = -1.19027;
  CHECK(two_linear_test(g, lo, hi, (hi - lo) / 16.0).outcome == LinearityOutcome::more_than_one);
}
