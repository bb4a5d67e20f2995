#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "relux/errors.hpp"
#include "relux/eval.hpp"
#include "relux/hybrid.hpp"
#include "relux/random.hpp"

using namespace relux;

namespace {

std::vector<double> flatten(const HybridParams& p) {
  std::vector<double> v;
  for (Eigen::Index i = 0; i < p.w0.size(); ++i) v.push_back(p.w0[i]);
  for (Eigen::Index i = 0; i < p.w1.size(); ++i) v.push_back(p.w1.data()[i]);
  for (Eigen::Index i = 0; i < p.w2.size(); ++i) v.push_back(p.w2[i]);
  return v;
}

HybridParams unflatten(const std::vector<double>& v, const HybridParams& shape) {
  HybridParams p = shape;
  std::size_t at = 0;
  for (Eigen::Index i = 0; i < p.w0.size(); ++i) p.w0[i] = v[at++];
  for (Eigen::Index i = 0; i < p.w1.size(); ++i) p.w1.data()[i] = v[at++];
  for (Eigen::Index i = 0; i < p.w2.size(); ++i) p.w2[i] = v[at++];
  return p;
}

Vector min_norm_point(const TwoLayerNet& net, std::size_t i) {
  const Vector row = net.a0().row(static_cast<Eigen::Index>(i)).transpose();
  return (-net.b0()[static_cast<Eigen::Index>(i)] / row.squaredNorm()) * row;
}

}  // namespace

TEST_CASE("injecting nothing changes nothing") {
  const auto net = random_net(8, 4, 2, 1);
  CHECK(inject_weight_error(net, 2, 3, 0.0).identical(net));
}

TEST_CASE("injected error moves one entry and re-derives its bias") {
  const auto net = random_net(8, 4, 2, 1);
  const Vector x = min_norm_point(net, 1);
  const auto bad = inject_weight_error(net, 1, 5, 0.1);
  Matrix diff = bad.a0() - net.a0();
  CHECK(diff(1, 5) == doctest::Approx(0.1));
  diff(1, 5) = 0.0;
  CHECK(diff.isZero(0.0));
  CHECK(std::abs(bad.a0().row(1).dot(x) + bad.b0()[1]) <= 1e-15);
  CHECK((bad.b0() - net.b0()).cwiseAbs().maxCoeff() == doctest::Approx(std::abs(0.1 * x[5])));
  CHECK_THROWS_AS(inject_weight_error(net, 4, 0, 0.1), InvalidArgument);
  CHECK_THROWS_AS(inject_weight_error(net, 0, 8, 0.1), InvalidArgument);
}

TEST_CASE("an injected error lowers fidelity and undoing it restores it") {
  const auto net = random_net(16, 16, 10, 3, 0.5);
  const auto box = InputBox::unit(16);
  const Vector x = min_norm_point(net, 0);
  const auto bad = inject_weight_error(net, 0, 0, 0.5, x);
  CHECK(fidelity(logits_of(net), logits_of(bad), box, 5000, 2) < 1.0);
  const auto fixed = inject_weight_error(bad, 0, 0, -0.5, x);
  CHECK(fidelity(logits_of(net), logits_of(fixed), box, 5000, 2) == 1.0);
  CHECK((fixed.a0() - net.a0()).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("objective gradient matches central differences") {
  const auto net = random_net(6, 5, 3, 9, 0.5);
  Rng rng(4);
  std::vector<Vector> xs, ys;
  const auto box = InputBox::unit(6);
  for (int i = 0; i < 200; ++i) {
    xs.push_back(uniform_in_box(box, rng));
    ys.push_back(oracle::naive_logits(net, xs.back()) + gaussian_vector(3, rng, 0.1));
  }
  const RefinementObjective obj(net.a0(), net.b0(), xs, ys);
  for (bool scalar : {false, true}) {
    HybridParams p{gaussian_vector(scalar ? 1 : 5, rng, 0.05), net.a1() + gaussian_matrix(3, 5, rng, 0.1),
                   gaussian_vector(3, rng, 0.1)};
    HybridParams g;
    const double v = obj.gradient(p, g);
    CHECK(v == doctest::Approx(obj.value(p)).epsilon(1e-14));
    const auto numeric = oracle::central_gradient(
        [&](const std::vector<double>& q) { return obj.value(unflatten(q, p)); }, flatten(p), 1e-6);
    const auto analytic = flatten(g);
    double worst = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      worst = std::max(worst, std::abs(analytic[i] - numeric[i]));
      scale = std::max(scale, std::abs(numeric[i]));
    }
    CHECK(worst <= 1e-5 * scale);
  }
}

TEST_CASE("refining an exact net leaves it in place") {
  const auto net = random_net(10, 6, 3, 2);
  auto o = OracleHandle::local(net);
  RefinementConfig cfg;
  cfg.iterations = 50;
  cfg.n = 512;
  cfg.seed = 1;
  const auto r = refine(net, o, cfg);
  CHECK(r.initial_objective <= 1e-28);
  CHECK(r.final_objective <= r.initial_objective);
  CHECK((r.net.b0() - net.b0()).cwiseAbs().maxCoeff() <= 1e-7);
  CHECK((r.net.a1() - net.a1()).cwiseAbs().maxCoeff() <= 1e-7);
  CHECK(r.ledger[Phase::other] == 512);
  CHECK(r.ledger.total() == 512);
}

TEST_CASE("refinement repairs a single injected error") {
  const auto net = random_net(20, 8, 4, 6, 0.5);
  const auto bad = inject_weight_error(net, 2, 3, 0.3);
  const auto box = InputBox::unit(20);
  const double before = fidelity(logits_of(net), logits_of(bad), box, 5000, 8);
  auto o = OracleHandle::local(net);
  RefinementConfig cfg;
  cfg.iterations = 2000;
  cfg.seed = 5;
  const auto r = refine(bad, o, cfg);
  const double after = fidelity(logits_of(net), logits_of(r.net), box, 5000, 8);
  CHECK(after >= 0.99);
  CHECK(after >= before);
  CHECK(r.final_objective < r.initial_objective);
  CHECK(r.net.a0() == bad.a0());
}

TEST_CASE("scalar bias variant shifts every neuron equally") {
  const auto net = random_net(12, 5, 3, 7, 0.5);
  const auto bad = inject_weight_error(net, 1, 1, 0.2);
  auto o = OracleHandle::local(net);
  RefinementConfig cfg;
  cfg.iterations = 300;
  cfg.n = 1024;
  cfg.scalar_bias = true;
  cfg.seed = 2;
  const auto r = refine(bad, o, cfg);
  const Vector shift = r.net.b0() - bad.b0();
  CHECK((shift.array() - shift[0]).abs().maxCoeff() <= 1e-12);
  CHECK(r.final_objective <= r.initial_objective);
}

TEST_CASE("an oversized step is halved instead of diverging") {
  const auto net = random_net(8, 4, 2, 3, 0.5);
  const auto bad = inject_weight_error(net, 0, 0, 0.2);
  Rng rng(1);
  std::vector<Vector> xs, ys;
  for (int i = 0; i < 256; ++i) {
    xs.push_back(uniform_in_box(InputBox::unit(8), rng));
    ys.push_back(net.forward_logits(xs.back()));
  }
  RefinementConfig cfg;
  cfg.learning_rate = 50.0;
  cfg.iterations = 400;
  const auto r = refine_on(bad, xs, ys, cfg);
  CHECK(r.restarts >= 1);
  CHECK(r.final_objective <= r.initial_objective);
  CHECK(std::isfinite(r.final_objective));
}

TEST_CASE("configuration checks") {
  RefinementConfig cfg;
  cfg.iterations = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = {};
  cfg.tolerance = 0.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = {};
  cfg.learning_rate = -1.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}
