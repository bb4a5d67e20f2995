#include "relux/hybrid.hpp"

#include <cmath>
#include <limits>

#include "relux/errors.hpp"
#include "relux/random.hpp"

namespace relux {

TwoLayerNet inject_weight_error(const TwoLayerNet& net, std::size_t neuron, std::size_t coord, double magnitude,
                                const std::optional<Vector>& witness) {
  if (neuron >= net.h()) throw InvalidArgument("inject_weight_error: neuron index out of range");
  if (coord >= net.d()) throw InvalidArgument("inject_weight_error: coordinate out of range");
  if (!std::isfinite(magnitude)) throw InvalidArgument("inject_weight_error: magnitude must be finite");
  if (magnitude == 0.0) return net;

  const auto i = static_cast<Eigen::Index>(neuron);
  const Vector row = net.a0().row(i).transpose();
  Vector x;
  if (witness) {
    if (static_cast<std::size_t>(witness->size()) != net.d())
      throw DimensionError("witness", net.d(), static_cast<std::size_t>(witness->size()));
    x = *witness;
  } else {
    const double nn = row.squaredNorm();
    if (nn == 0.0) throw InvalidArgument("inject_weight_error: neuron has an all-zero row");
    x = (-net.b0()[i] / nn) * row;
  }
  Matrix a0 = net.a0();
  Vector b0 = net.b0();
  a0(i, static_cast<Eigen::Index>(coord)) += magnitude;
  b0[i] = -a0.row(i).dot(x);
  return TwoLayerNet(std::move(a0), std::move(b0), net.a1(), net.b1());
}

RefinementObjective::RefinementObjective(const Matrix& a0, const Vector& b0, const std::vector<Vector>& inputs,
                                         const std::vector<Vector>& targets) {
  if (inputs.size() != targets.size()) throw DimensionError("refinement targets", inputs.size(), targets.size());
  if (inputs.empty()) throw InvalidArgument("refinement needs at least one sample");
  if (b0.size() != a0.rows())
    throw DimensionError("b0", static_cast<std::size_t>(a0.rows()), static_cast<std::size_t>(b0.size()));
  const auto n = static_cast<Eigen::Index>(inputs.size());
  const auto k = targets.front().size();
  pre_.resize(n, a0.rows());
  targets_.resize(n, k);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& x = inputs[static_cast<std::size_t>(r)];
    const auto& y = targets[static_cast<std::size_t>(r)];
    if (x.size() != a0.cols())
      throw DimensionError("refinement input", static_cast<std::size_t>(a0.cols()), static_cast<std::size_t>(x.size()));
    if (y.size() != k)
      throw DimensionError("refinement target", static_cast<std::size_t>(k), static_cast<std::size_t>(y.size()));
    pre_.row(r) = (a0 * x + b0).transpose();
    targets_.row(r) = y.transpose();
  }
}

namespace {

Matrix shifted(const Matrix& pre, const Vector& w0) {
  if (w0.size() == 1) return (pre.array() + w0[0]).matrix();
  return pre.rowwise() + w0.transpose();
}

void check_shapes(const HybridParams& p, std::size_t h, std::size_t k) {
  const auto hh = static_cast<Eigen::Index>(h);
  const auto kk = static_cast<Eigen::Index>(k);
  if (p.w0.size() != hh && p.w0.size() != 1)
    throw DimensionError("w0", h, static_cast<std::size_t>(p.w0.size()));
  if (p.w1.rows() != kk || p.w1.cols() != hh)
    throw DimensionError("w1 columns", h, static_cast<std::size_t>(p.w1.cols()));
  if (p.w2.size() != kk) throw DimensionError("w2", k, static_cast<std::size_t>(p.w2.size()));
}

}  // namespace

double RefinementObjective::value(const HybridParams& p) const {
  check_shapes(p, h(), k());
  const Matrix act = shifted(pre_, p.w0).cwiseMax(0.0);
  const Matrix resid = (act * p.w1.transpose()).rowwise() + p.w2.transpose() - targets_;
  return resid.squaredNorm() / static_cast<double>(size());
}

double RefinementObjective::gradient(const HybridParams& p, HybridParams& grad) const {
  check_shapes(p, h(), k());
  const Matrix z = shifted(pre_, p.w0);
  const Matrix act = z.cwiseMax(0.0);
  const Matrix resid = (act * p.w1.transpose()).rowwise() + p.w2.transpose() - targets_;
  const double scale = 2.0 / static_cast<double>(size());
  grad.w1 = scale * resid.transpose() * act;
  grad.w2 = scale * resid.colwise().sum().transpose();
  const Matrix back = (resid * p.w1).cwiseProduct((z.array() > 0.0).cast<double>().matrix());
  const Vector per_neuron = scale * back.colwise().sum().transpose();
  if (p.w0.size() == 1) grad.w0 = Vector::Constant(1, per_neuron.sum());
  else grad.w0 = per_neuron;
  return resid.squaredNorm() / static_cast<double>(size());
}

double RefinementObjective::curvature(const HybridParams& p) const {
  check_shapes(p, h(), k());
  const Matrix z = shifted(pre_, p.w0);
  Matrix design(z.rows(), z.cols() + 1);
  design.leftCols(z.cols()) = z.cwiseMax(0.0);
  design.col(z.cols()).setOnes();
  // Largest eigenvalue of the Gram matrix of [relu(z), 1]: the curvature
  // along the output-layer parameters.
  Vector v = Vector::Ones(design.cols()).normalized();
  double lambda = 0.0;
  for (int it = 0; it < 50; ++it) {
    const Vector w = design.transpose() * (design * v);
    const double n = w.norm();
    if (n == 0.0) break;
    lambda = n;
    v = w / n;
  }
  const double out_layer = 2.0 * lambda / static_cast<double>(size());
  // Along w0 the curvature is bounded by ||w1||^2 times the active fraction.
  const double bias = 2.0 * p.w1.squaredNorm() * (p.w0.size() == 1 ? static_cast<double>(h()) : 1.0);
  return std::max(out_layer, bias);
}

void RefinementConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw InvalidArgument("refinement learning rate must be nonnegative");
  if (iterations == 0) throw InvalidArgument("refinement iteration count must be positive");
  if (n == 0) throw InvalidArgument("refinement dataset size must be positive");
  if (!(tolerance > 0.0)) throw InvalidArgument("refinement tolerance must be positive");
}

namespace {

bool finite(const HybridParams& p) {
  return p.w0.allFinite() && p.w1.allFinite() && p.w2.allFinite();
}

constexpr std::size_t kDivergenceRun = 10;

}  // namespace

RefineResult refine_on(const TwoLayerNet& start, const std::vector<Vector>& inputs,
                       const std::vector<Vector>& targets, const RefinementConfig& cfg) {
  cfg.validate();
  if (!targets.empty() && static_cast<std::size_t>(targets.front().size()) != start.k())
    throw DimensionError("refinement targets", start.k(), static_cast<std::size_t>(targets.front().size()));
  const RefinementObjective obj(start.a0(), start.b0(), inputs, targets);

  HybridParams p{Vector::Zero(cfg.scalar_bias ? 1 : static_cast<Eigen::Index>(start.h())), start.a1(), start.b1()};
  HybridParams grad;
  HybridParams best = p;
  double value = obj.gradient(p, grad);
  if (!std::isfinite(value)) throw NumericalError("refinement objective is not finite at the starting point");
  const double initial = value;
  double best_value = value;
  double lr = cfg.learning_rate;
  if (lr == 0.0) {
    const double c = obj.curvature(p);
    lr = c > 0.0 ? 1.0 / c : 1.0;
  }
  std::size_t rising = 0, restarts = 0, iter = 0;
  bool converged = false;

  for (; iter < cfg.iterations; ++iter) {
    if (!finite(grad)) throw NumericalError("non-finite gradient at iteration " + std::to_string(iter));
    HybridParams next{p.w0 - lr * grad.w0, p.w1 - lr * grad.w1, p.w2 - lr * grad.w2};
    HybridParams next_grad;
    const double next_value = obj.gradient(next, next_grad);
    // Ten steps without a new best (which includes ten straight increases)
    // count as divergence.
    if (!std::isfinite(next_value)) rising = kDivergenceRun;
    else rising = next_value < best_value ? 0 : rising + 1;
    if (rising >= kDivergenceRun) {
      if (restarts >= cfg.max_restarts) break;
      ++restarts;
      lr *= 0.5;
      rising = 0;
      p = best;
      value = obj.gradient(p, grad);
      continue;
    }
    const double change = value - next_value;
    p = std::move(next);
    grad = std::move(next_grad);
    value = next_value;
    if (value < best_value) {
      best_value = value;
      best = p;
    }
    if (change >= 0.0 && change <= cfg.tolerance * std::max(value, std::numeric_limits<double>::min())) {
      converged = true;
      ++iter;
      break;
    }
  }

  const Vector shift = best.w0.size() == 1 ? Vector::Constant(static_cast<Eigen::Index>(start.h()), best.w0[0])
                                           : best.w0;
  RefineResult res(TwoLayerNet(start.a0(), start.b0() + shift, best.w1, best.w2));
  res.initial_objective = initial;
  res.final_objective = best_value;
  res.iterations = iter;
  res.restarts = restarts;
  res.converged = converged;
  return res;
}

RefineResult refine(const TwoLayerNet& start, OracleHandle& oracle, const RefinementConfig& cfg) {
  cfg.validate();
  const InputBox box = cfg.box.value_or(InputBox::unit(start.d()));
  if (box.dim() != start.d()) throw DimensionError("refinement box", start.d(), box.dim());
  const LedgerSnapshot before = oracle.ledger().snapshot();
  Rng rng(cfg.seed);
  std::vector<Vector> inputs, targets;
  inputs.reserve(cfg.n);
  targets.reserve(cfg.n);
  {
    PhaseScope phase(oracle, Phase::other);
    for (std::size_t i = 0; i < cfg.n; ++i) {
      inputs.push_back(uniform_in_box(box, rng));
      targets.push_back(oracle.query(inputs.back()));
    }
  }
  RefineResult res = refine_on(start, inputs, targets, cfg);
  res.ledger = oracle.ledger().snapshot() - before;
  return res;
}

}  // namespace relux
