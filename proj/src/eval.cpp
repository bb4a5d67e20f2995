#include "relux/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "relux/errors.hpp"

namespace relux {

LogitFn logits_of(const TwoLayerNet& net) {
  return [&net](const Vector& x) { return net.forward_logits(x); };
}

LogitFn logits_of(OracleHandle& oracle) {
  return [&oracle](const Vector& x) {
    PhaseScope phase(oracle, Phase::eval);
    return oracle.query(x);
  };
}

std::vector<Vector> sample_box(const InputBox& box, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Vector> pts;
  pts.reserve(n);
  for (std::size_t i = 0; i < n; ++i) pts.push_back(uniform_in_box(box, rng));
  return pts;
}

double fidelity(const LogitFn& a, const LogitFn& b, const std::vector<Vector>& points) {
  if (points.empty()) throw InvalidArgument("fidelity needs at least one point");
  std::size_t agree = 0;
  for (const auto& x : points) agree += argmax(a(x)) == argmax(b(x)) ? 1 : 0;
  return static_cast<double>(agree) / static_cast<double>(points.size());
}

double fidelity(const LogitFn& a, const LogitFn& b, const InputBox& box, std::size_t n, std::uint64_t seed) {
  return fidelity(a, b, sample_box(box, n, seed));
}

double bits_of_precision(double rel_error) {
  if (std::isnan(rel_error)) return 0.0;
  if (rel_error <= 0.0) return kBitCeiling;
  return std::clamp(-std::log2(rel_error), 0.0, kBitCeiling);
}

namespace {

constexpr double kDeadRowNorm = 1e-12;

void add_to_histogram(BitHistogram& hist, double bits) {
  const auto bin = static_cast<std::size_t>(std::clamp(std::floor(bits), 0.0, kBitCeiling));
  ++hist[bin];
}

}  // namespace

AlignmentResult align_neurons(const TwoLayerNet& victim, const TwoLayerNet& extracted, double min_cosine) {
  if (victim.d() != extracted.d()) throw DimensionError("extracted input dimension", victim.d(), extracted.d());
  if (victim.k() != extracted.k()) throw DimensionError("extracted output dimension", victim.k(), extracted.k());
  const auto hv = static_cast<Eigen::Index>(victim.h());
  const auto he = static_cast<Eigen::Index>(extracted.h());
  const Vector nv = victim.a0().rowwise().norm();
  const Vector ne = extracted.a0().rowwise().norm();

  AlignmentResult out;
  out.match.assign(victim.h(), std::nullopt);
  out.scales.assign(victim.h(), 0.0);
  out.signs.assign(victim.h(), 0);
  out.row_errors.assign(victim.h(), std::numeric_limits<double>::infinity());
  out.bias_errors.assign(victim.h(), std::numeric_limits<double>::infinity());
  out.similarity = Matrix::Zero(hv, he);
  Matrix bias_dev = Matrix::Constant(hv, he, std::numeric_limits<double>::infinity());
  for (Eigen::Index i = 0; i < hv; ++i) {
    if (nv[i] < kDeadRowNorm) continue;
    for (Eigen::Index j = 0; j < he; ++j) {
      if (ne[j] < kDeadRowNorm) continue;
      const double dot = victim.a0().row(i).dot(extracted.a0().row(j));
      out.similarity(i, j) = std::abs(dot) / (nv[i] * ne[j]);
      const double s = dot < 0.0 ? -1.0 : 1.0;
      bias_dev(i, j) = std::abs(victim.b0()[i] / nv[i] - s * extracted.b0()[j] / ne[j]);
    }
  }

  std::vector<bool> v_used(victim.h(), false), e_used(extracted.h(), false);
  for (;;) {
    Eigen::Index bi = -1, bj = -1;
    double best = -1.0;
    for (Eigen::Index i = 0; i < hv; ++i) {
      if (v_used[static_cast<std::size_t>(i)] || nv[i] < kDeadRowNorm) continue;
      for (Eigen::Index j = 0; j < he; ++j) {
        if (e_used[static_cast<std::size_t>(j)] || ne[j] < kDeadRowNorm) continue;
        const double s = out.similarity(i, j);
        const bool better = s > best + 1e-12 || (std::abs(s - best) <= 1e-12 && bi >= 0 &&
                                                 bias_dev(i, j) < bias_dev(bi, bj));
        if (better) {
          best = s;
          bi = i;
          bj = j;
        }
      }
    }
    if (bi < 0 || best < min_cosine) break;
    v_used[static_cast<std::size_t>(bi)] = true;
    e_used[static_cast<std::size_t>(bj)] = true;
    const auto i = static_cast<std::size_t>(bi);
    const Vector w = victim.a0().row(bi).transpose();
    const Vector what = extracted.a0().row(bj).transpose();
    const double c = w.dot(what) / what.squaredNorm();
    out.match[i] = static_cast<std::size_t>(bj);
    out.signs[i] = c < 0.0 ? -1 : 1;
    out.scales[i] = std::abs(c);
    out.row_errors[i] = (c * what - w).norm() / w.norm();
    const double b = victim.b0()[bi];
    const double db = std::abs(c * extracted.b0()[bj] - b);
    out.bias_errors[i] = db == 0.0 ? 0.0 : db / std::max(std::abs(b), std::numeric_limits<double>::min());
  }
  for (std::size_t i = 0; i < victim.h(); ++i)
    if (!out.match[i] && nv[static_cast<Eigen::Index>(i)] >= kDeadRowNorm) ++out.unmatched;
  return out;
}

PrecisionReport align_and_precision(const TwoLayerNet& victim, const TwoLayerNet& extracted) {
  PrecisionReport rep;
  rep.alignment = align_neurons(victim, extracted);
  const auto& al = rep.alignment;
  double bias_sum = 0.0;
  std::size_t bias_count = 0;
  for (std::size_t i = 0; i < victim.h(); ++i) {
    if (!al.match[i]) continue;
    const auto vi = static_cast<Eigen::Index>(i);
    const auto ej = static_cast<Eigen::Index>(*al.match[i]);
    const double c = al.signs[i] * al.scales[i];
    for (Eigen::Index col = 0; col < victim.a0().cols(); ++col) {
      const double w = victim.a0()(vi, col);
      if (w == 0.0) continue;
      const double bits = bits_of_precision(std::abs(c * extracted.a0()(ej, col) - w) / std::abs(w));
      rep.entry_bits.push_back(bits);
      add_to_histogram(rep.histogram, bits);
    }
    bias_sum += bits_of_precision(al.bias_errors[i]);
    ++bias_count;
  }
  if (!rep.entry_bits.empty()) {
    double s = 0.0;
    for (double b : rep.entry_bits) s += b;
    rep.mean_bits = s / static_cast<double>(rep.entry_bits.size());
    rep.min_bits = *std::min_element(rep.entry_bits.begin(), rep.entry_bits.end());
  }
  if (bias_count) rep.mean_bias_bits = bias_sum / static_cast<double>(bias_count);
  return rep;
}

LogitGapReport logit_gap(const LogitFn& reference, const LogitFn& other, const std::vector<Vector>& points,
                         double floor) {
  if (!(floor > 0.0)) throw InvalidArgument("logit gap floor must be positive");
  LogitGapReport rep;
  rep.bits.reserve(points.size());
  double sum = 0.0;
  rep.min_bits = kBitCeiling;
  for (const auto& x : points) {
    const Vector f = reference(x);
    const Vector g = other(x);
    if (f.size() != g.size())
      throw DimensionError("logits", static_cast<std::size_t>(f.size()), static_cast<std::size_t>(g.size()));
    const double gap = (f - g).cwiseAbs().maxCoeff();
    const double mag = f.cwiseAbs().maxCoeff();
    const double rel = gap / std::max(mag, floor);
    rep.max_abs_gap = std::max(rep.max_abs_gap, gap);
    rep.max_rel_gap = std::max(rep.max_rel_gap, rel);
    const double bits = bits_of_precision(rel);
    rep.bits.push_back(bits);
    add_to_histogram(rep.histogram, bits);
    sum += bits;
    rep.min_bits = std::min(rep.min_bits, bits);
  }
  if (!points.empty()) rep.mean_bits = sum / static_cast<double>(points.size());
  else rep.min_bits = 0.0;
  return rep;
}

Vector pgd_attack(const TwoLayerNet& net, const Vector& x, std::size_t true_label, const PgdConfig& cfg,
                  const InputBox& box) {
  if (static_cast<std::size_t>(x.size()) != net.d())
    throw DimensionError("pgd input", net.d(), static_cast<std::size_t>(x.size()));
  if (box.dim() != net.d()) throw DimensionError("pgd box", net.d(), box.dim());
  if (true_label >= net.k()) throw InvalidArgument("pgd label out of range");
  if (!(cfg.epsilon >= 0.0)) throw InvalidArgument("pgd epsilon must be nonnegative");
  const double step = cfg.step_size();
  if (!(step >= 0.0)) throw InvalidArgument("pgd step must be nonnegative");
  if (!box.contains(x, 1e-12)) throw InvalidArgument("pgd start point lies outside the input box");

  const Vector lo = (x.array() - cfg.epsilon).max(box.lo.array());
  const Vector hi = (x.array() + cfg.epsilon).min(box.hi.array());
  Vector adv = x;
  for (std::size_t it = 0; it < cfg.iters; ++it) {
    const Vector p = net.forward_probs(adv);
    Vector dloss = p;
    dloss[static_cast<Eigen::Index>(true_label)] -= 1.0;
    const Vector grad = input_jacobian(net, adv).value.transpose() * dloss;
    adv += step * grad.cwiseSign();
    adv = adv.cwiseMax(lo).cwiseMin(hi);
  }
  return adv;
}

TransferReport transfer_rate(const TwoLayerNet& source, const LogitFn& target, const std::vector<Vector>& points,
                             const PgdConfig& cfg, const InputBox& box) {
  TransferReport rep;
  for (const auto& x : points) {
    ++rep.attempted;
    const std::size_t ys = argmax(source.forward_logits(x));
    const Vector adv = pgd_attack(source, x, ys, cfg, box);
    if (argmax(source.forward_logits(adv)) == ys) continue;
    ++rep.source_successes;
    if (argmax(target(adv)) != argmax(target(x))) ++rep.transferred;
  }
  rep.rate = rep.source_successes
                 ? static_cast<double>(rep.transferred) / static_cast<double>(rep.source_successes)
                 : 1.0;
  return rep;
}

}  // namespace relux
