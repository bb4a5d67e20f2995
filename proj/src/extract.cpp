#include "relux/extract.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace relux {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

// Directions whose second difference is below this multiple of the rounding
// floor are treated as carrying no weight.
constexpr double kFloorMultiple = 4.0;

// Off-axis component above which a second difference is assumed to have
// crossed a second hyperplane.
constexpr double kParallelTol = 1e-3;
constexpr std::size_t kMaxStepRetries = 3;

std::size_t require_dim(const OracleHandle& oracle) {
  const auto d = oracle.input_dim();
  if (!d) throw InvalidArgument("oracle input dimension unknown; declare it with set_input_dim");
  return *d;
}

Vector unit_vector(std::size_t d, std::size_t j) {
  Vector e = Vector::Zero(static_cast<Eigen::Index>(d));
  e[static_cast<Eigen::Index>(j)] = 1.0;
  return e;
}

/// Restores an oracle's query limit on scope exit.
class LimitScope {
 public:
  LimitScope(OracleHandle& oracle, std::uint64_t budget) : oracle_(oracle), previous_(oracle.query_limit()) {
    const std::uint64_t start = oracle.ledger().total();
    std::uint64_t limit = start + budget;
    if (previous_) limit = std::min(limit, *previous_);
    oracle_.set_query_limit(limit);
  }
  ~LimitScope() { oracle_.set_query_limit(previous_); }
  LimitScope(const LimitScope&) = delete;
  LimitScope& operator=(const LimitScope&) = delete;

 private:
  OracleHandle& oracle_;
  std::optional<std::uint64_t> previous_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Critical point search

std::vector<CriticalPoint> sweep_line(OracleHandle& oracle, double range, Rng& rng,
                                      const KinkSearchOptions& opts, std::size_t line_id) {
  if (!(range > 0.0)) throw InvalidArgument("sweep range must be positive");
  const std::size_t d = require_dim(oracle);
  const Vector u = gaussian_vector(d, rng);
  const Vector v = gaussian_vector(d, rng);

  // The scalar tested for kinks is a random projection of the logits, so
  // no neuron's kink cancels out for a generic choice.
  Vector projection;
  std::map<double, Vector> cache;
  auto logits_at = [&](double t) -> const Vector& {
    auto it = cache.find(t);
    if (it == cache.end()) it = cache.emplace(t, oracle.query(u + t * v)).first;
    return it->second;
  };
  const ScalarFn f = [&](double t) {
    const Vector& y = logits_at(t);
    if (projection.size() == 0) {
      projection = gaussian_vector(static_cast<std::size_t>(y.size()), rng);
      projection /= projection.norm();
    }
    return projection.dot(y);
  };

  const auto found = locate_kinks(f, -range, range, opts);
  const double vnorm = v.norm();
  std::vector<CriticalPoint> points;
  points.reserve(found.kinks.size());
  for (std::size_t i = 0; i < found.kinks.size(); ++i) {
    const auto& k = found.kinks[i];
    CriticalPoint cp;
    cp.u = u;
    cp.v = v;
    cp.t = k.t;
    cp.x = u + k.t * v;
    cp.logits = logits_at(k.t);
    cp.residual = k.residual;
    cp.tolerance = k.tolerance;
    cp.line_id = line_id;
    double gap = std::numeric_limits<double>::infinity();
    if (i > 0) gap = std::min(gap, k.t - found.kinks[i - 1].t);
    if (i + 1 < found.kinks.size()) gap = std::min(gap, found.kinks[i + 1].t - k.t);
    cp.gap = gap * vnorm;
    points.push_back(std::move(cp));
  }
  return points;
}

SearchResult find_critical_points(OracleHandle& oracle, std::size_t h_expected, std::uint64_t budget, Rng& rng,
                                  const SearchOptions& opts) {
  if (budget == 0) throw InvalidArgument("search budget must be positive");
  if (h_expected == 0) throw InvalidArgument("expected hidden width must be positive");
  LimitScope limit(oracle, budget);
  const double h = static_cast<double>(h_expected);
  const double range = opts.range.value_or(std::max(1.0, h * h));

  SearchResult out;
  std::size_t empty_streak = 0;
  bool any_kink = false;
  while (out.lines < opts.max_lines) {
    std::vector<CriticalPoint> pts;
    try {
      pts = sweep_line(oracle, range, rng, opts.kinks, out.lines);
    } catch (const BudgetExhausted&) {
      out.budget_exhausted = true;
      break;
    }
    ++out.lines;
    out.best_line_count = std::max(out.best_line_count, pts.size());
    if (pts.empty()) {
      if (++empty_streak >= opts.max_empty_lines) break;
      continue;
    }
    empty_streak = 0;
    any_kink = true;
    for (auto& p : pts) out.points.push_back(std::move(p));
    if (out.best_line_count >= h_expected) break;
  }
  out.no_kink = !any_kink;
  out.shortfall = out.best_line_count >= h_expected ? 0 : h_expected - out.best_line_count;
  return out;
}

// ---------------------------------------------------------------------------
// Weight recovery

AbsRatios recover_abs_ratios(OracleHandle& oracle, const CriticalPoint& cp, std::optional<double> step) {
  const auto d = static_cast<std::size_t>(cp.x.size());
  if (d == 0) throw InvalidArgument("critical point has no coordinates");
  const ProbeSite site = cp.logits.size() > 0 ? ProbeSite::with_cached(cp.x, cp.logits) : ProbeSite::at(oracle, cp.x);
  const auto k = static_cast<Eigen::Index>(site.fx.size());

  AbsRatios out;
  out.step = step.value_or(adaptive_step(cp.gap));
  out.diffs.resize(static_cast<Eigen::Index>(d), k);
  Vector floors(static_cast<Eigen::Index>(d));
  Vector steps(static_cast<Eigen::Index>(d));

  auto probe = [&](std::size_t j, double s) {
    const auto sd = second_diff(oracle, site, unit_vector(d, j), s);
    out.diffs.row(static_cast<Eigen::Index>(j)) = sd.value.transpose();
    floors[static_cast<Eigen::Index>(j)] = sd.noise_floor;
    steps[static_cast<Eigen::Index>(j)] = s;
  };
  for (std::size_t j = 0; j < d; ++j) probe(j, out.step);

  // Every true second difference is a multiple of the neuron's outgoing
  // weight vector. Rows pointing elsewhere crossed another hyperplane and
  // are re-measured with a smaller step.
  if (k > 1) {
    double s = out.step;
    for (std::size_t round = 0; round < kMaxStepRetries; ++round) {
      Eigen::Index ref = 0;
      out.diffs.rowwise().norm().maxCoeff(&ref);
      const Vector dir = out.diffs.row(ref).transpose().normalized();
      std::vector<std::size_t> suspects;
      for (std::size_t j = 0; j < d; ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        const Vector row = out.diffs.row(jj).transpose();
        const double n = row.norm();
        if (n <= kFloorMultiple * floors[jj] * std::sqrt(static_cast<double>(k))) continue;
        const double off = (row - row.dot(dir) * dir).norm();
        if (off > kParallelTol * n) suspects.push_back(j);
      }
      if (suspects.empty()) break;
      s /= 8.0;
      ++out.step_retries;
      for (auto j : suspects) probe(j, s);
    }
  }

  Eigen::Index best_k = 0;
  out.diffs.cwiseAbs().colwise().sum().maxCoeff(&best_k);
  out.output = static_cast<std::size_t>(best_k);
  Eigen::Index pivot = 0;
  out.diffs.col(best_k).cwiseAbs().maxCoeff(&pivot);
  out.pivot = static_cast<std::size_t>(pivot);
  out.noise_floor = floors.maxCoeff();

  // With the witness at preactivation p instead of 0, a step s along e_j
  // measures a (|w_j| - |p| / s): the same shortfall for every coordinate
  // whose kink falls inside the step. Doubling the pivot's step isolates it.
  const double sp = steps[pivot];
  const Eigen::RowVectorXd m1 = out.diffs.row(pivot);
  const double fp = floors[pivot];
  if (m1.norm() > kFloorMultiple * fp) {
    const auto sd2 = second_diff(oracle, site, unit_vector(d, out.pivot), 2.0 * sp);
    const Eigen::RowVectorXd ap = 2.0 * sp * (sd2.value.transpose() - m1);
    const double shortfall = ap.norm() / sp;
    const bool grows = sd2.value[best_k] * m1[best_k] > 0.0 && std::abs(sd2.value[best_k]) >= std::abs(m1[best_k]);
    if (grows && shortfall <= 0.5 * m1.norm() && shortfall > kFloorMultiple * (fp + sd2.noise_floor)) {
      for (Eigen::Index j = 0; j < out.diffs.rows(); ++j)
        if (std::abs(out.diffs(j, best_k)) > kFloorMultiple * floors[j]) out.diffs.row(j) += ap / steps[j];
      out.offset = std::abs(ap[best_k]);
    }
  }
  out.magnitudes = out.diffs.col(best_k).cwiseAbs();

  out.ratios = Vector::Zero(static_cast<Eigen::Index>(d));
  const double mp = out.magnitudes[pivot];
  if (!(mp > kFloorMultiple * floors[pivot])) {
    out.dead = true;
    return out;
  }
  for (Eigen::Index j = 0; j < out.magnitudes.size(); ++j)
    if (out.magnitudes[j] > kFloorMultiple * floors[j]) out.ratios[j] = out.magnitudes[j] / mp;
  return out;
}

SignedRow recover_relative_signs(OracleHandle& oracle, const CriticalPoint& cp, const AbsRatios& abs) {
  const auto d = static_cast<std::size_t>(cp.x.size());
  if (static_cast<std::size_t>(abs.ratios.size()) != d)
    throw DimensionError("absolute ratios", d, static_cast<std::size_t>(abs.ratios.size()));
  if (abs.dead) throw InvalidArgument("cannot sign a dead neuron");
  const ProbeSite site = cp.logits.size() > 0 ? ProbeSite::with_cached(cp.x, cp.logits) : ProbeSite::at(oracle, cp.x);
  const auto out_k = static_cast<Eigen::Index>(abs.output);
  const double mp = abs.magnitudes[static_cast<Eigen::Index>(abs.pivot)];

  SignedRow out;
  out.row = Vector::Zero(static_cast<Eigen::Index>(d));
  out.row[static_cast<Eigen::Index>(abs.pivot)] = 1.0;
  const Vector ep = unit_vector(d, abs.pivot);

  for (std::size_t j = 0; j < d; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    if (j == abs.pivot || abs.ratios[jj] == 0.0) continue;
    const double mj = abs.magnitudes[jj];
    bool decided = false;
    bool same = true;
    double best_margin = 0.0;
    for (double scale : {1.0, 2.0}) {
      const Vector dir = ep + scale * unit_vector(d, j);
      const auto sd = second_diff(oracle, site, dir, abs.step);
      const double m = std::abs(sd.value[out_k]) + abs.offset / abs.step;
      const double same_hyp = mp + scale * mj;
      const double opp_hyp = std::abs(mp - scale * mj);
      const double sep = same_hyp - opp_hyp;
      const double ds = std::abs(m - same_hyp);
      const double dop = std::abs(m - opp_hyp);
      const double noise = kFloorMultiple * (sd.noise_floor + abs.noise_floor);
      const bool is_same = ds < dop;
      if (sep > 2.0 * noise && std::min(ds, dop) <= 0.25 * sep) {
        same = is_same;
        decided = true;
        break;
      }
      // Remember the clearer of the two attempts for the fallback.
      const double margin = std::abs(ds - dop) / std::max(sep, std::numeric_limits<double>::min());
      if (margin >= best_margin) {
        best_margin = margin;
        same = is_same;
      }
    }
    if (!decided) ++out.ambiguous;
    out.row[jj] = same ? abs.ratios[jj] : -abs.ratios[jj];
  }
  out.low_confidence = out.ambiguous > 0;
  return out;
}

double recover_bias(const Vector& row, const CriticalPoint& cp) {
  if (row.size() != cp.x.size())
    throw DimensionError("row", static_cast<std::size_t>(cp.x.size()), static_cast<std::size_t>(row.size()));
  return -row.dot(cp.x);
}

std::optional<RecoveredNeuron> recover_neuron(OracleHandle& oracle, const CriticalPoint& cp) {
  const AbsRatios abs = recover_abs_ratios(oracle, cp);
  if (abs.dead) return std::nullopt;
  const SignedRow signed_row = recover_relative_signs(oracle, cp, abs);
  RecoveredNeuron n;
  n.row = signed_row.row;
  n.bias = recover_bias(n.row, cp);
  n.pivot = abs.pivot;
  n.low_confidence = signed_row.low_confidence;
  const double fit = cp.tolerance > 0.0 ? cp.residual / cp.tolerance : 0.0;
  const double rel_noise = abs.noise_floor / abs.magnitudes[static_cast<Eigen::Index>(abs.pivot)];
  n.confidence = (n.low_confidence ? 0.5 : 1.0) / ((1.0 + fit) * (1.0 + 1e6 * rel_noise));
  n.source = cp;
  return n;
}

bool lies_on_hyperplane(const RecoveredNeuron& n, const Vector& x, double rel_tol) {
  const double pre = n.row.dot(x) + n.bias;
  const double reach = n.source.x.size() == x.size() ? (x - n.source.x).norm() : x.norm();
  return std::abs(pre) <= rel_tol * n.row.norm() * (1.0 + reach);
}

std::optional<CriticalPoint> recenter_witness(OracleHandle& oracle, const RecoveredNeuron& n, const Vector& anchor,
                                              Rng& rng, double radius, const KinkSearchOptions& opts) {
  if (!(radius > 0.0)) throw InvalidArgument("recenter radius must be positive");
  if (anchor.size() != n.row.size())
    throw DimensionError("anchor", static_cast<std::size_t>(n.row.size()), static_cast<std::size_t>(anchor.size()));
  const double nn = n.row.squaredNorm();
  if (nn == 0.0) return std::nullopt;
  const Vector p = anchor - ((n.row.dot(anchor) + n.bias) / nn) * n.row;
  const Vector dir = n.row / std::sqrt(nn);

  Vector projection;
  std::map<double, Vector> cache;
  auto logits_at = [&](double s) -> const Vector& {
    auto it = cache.find(s);
    if (it == cache.end()) it = cache.emplace(s, oracle.query(p + s * dir)).first;
    return it->second;
  };
  const ScalarFn f = [&](double s) {
    const Vector& y = logits_at(s);
    if (projection.size() == 0) {
      projection = gaussian_vector(static_cast<std::size_t>(y.size()), rng);
      projection /= projection.norm();
    }
    return projection.dot(y);
  };
  const auto found = locate_kinks(f, -radius, radius, opts);
  if (found.kinks.empty()) return std::nullopt;

  std::size_t best = 0;
  for (std::size_t i = 1; i < found.kinks.size(); ++i)
    if (std::abs(found.kinks[i].t) < std::abs(found.kinks[best].t)) best = i;
  const auto& k = found.kinks[best];
  CriticalPoint cp;
  cp.u = p;
  cp.v = dir;
  cp.t = k.t;
  cp.x = p + k.t * dir;
  cp.logits = logits_at(k.t);
  cp.residual = k.residual;
  cp.tolerance = k.tolerance;
  cp.line_id = n.source.line_id;
  double gap = radius - std::abs(k.t);
  for (std::size_t i = 0; i < found.kinks.size(); ++i)
    if (i != best) gap = std::min(gap, std::abs(found.kinks[i].t - k.t));
  cp.gap = gap;
  return cp;
}

std::vector<RecoveredNeuron> dedupe_neurons(const std::vector<RecoveredNeuron>& candidates, double tol,
                                            double bias_tol) {
  std::vector<RecoveredNeuron> reps;
  for (const auto& c : candidates) {
    bool merged = false;
    for (auto& r : reps) {
      const double nr = r.row.norm();
      const double nc = c.row.norm();
      if (nr == 0.0 || nc == 0.0) continue;
      const double dot = r.row.dot(c.row);
      if (std::abs(dot) / (nr * nc) < 1.0 - tol) continue;
      const double scale = dot / (nc * nc);
      const double bias_gap = std::abs(r.bias - scale * c.bias);
      const double reach = std::max(r.source.x.norm(), c.source.x.norm());
      if (bias_gap > bias_tol * std::max(nr, std::abs(r.bias)) * (1.0 + reach)) continue;
      if (c.confidence > r.confidence) r = c;
      merged = true;
      break;
    }
    if (!merged) reps.push_back(c);
  }
  return reps;
}

PolishReport polish_neurons(OracleHandle& oracle, std::vector<RecoveredNeuron>& neurons, const PolishOptions& opts) {
  PolishReport rep;
  if (!(opts.max_step > 0.0) || !(opts.clearance_share > 0.0) || !(opts.clearance_share < 1.0))
    throw InvalidArgument("polish needs a positive step and a clearance share in (0, 1)");
  const std::size_t m = neurons.size();
  for (std::size_t i = 0; i < m; ++i) {
    auto& n = neurons[i];
    const Vector& x = n.source.x;
    const auto d = static_cast<std::size_t>(x.size());
    if (n.source.logits.size() == 0) continue;
    const ProbeSite site = ProbeSite::with_cached(x, n.source.logits);

    // Distance along e_j from x to the nearest other hyperplane.
    auto clearance = [&](std::size_t j) {
      double c = std::numeric_limits<double>::infinity();
      for (std::size_t o = 0; o < m; ++o) {
        if (o == i) continue;
        const double wj = neurons[o].row[static_cast<Eigen::Index>(j)];
        if (wj == 0.0) continue;
        c = std::min(c, std::abs((neurons[o].row.dot(x) + neurons[o].bias) / wj));
      }
      return c;
    };
    auto step_for = [&](std::size_t j, double factor) {
      return std::min(opts.max_step, opts.clearance_share * clearance(j) / factor);
    };

    // Pivot at s and 2s: the output direction, and the shortfall from a
    // witness slightly off its hyperplane.
    const std::size_t p = n.pivot;
    const double sp = step_for(p, 2.0);
    const auto d1 = second_diff(oracle, site, unit_vector(d, p), sp);
    const auto d2 = second_diff(oracle, site, unit_vector(d, p), 2.0 * sp);
    const double n1 = d1.value.norm();
    if (!(n1 > kFloorMultiple * d1.noise_floor)) continue;
    const Vector dir = d1.value / n1;
    Vector ap = 2.0 * sp * (d2.value - d1.value);
    if (!(ap.norm() / sp <= 0.5 * n1) || d2.value.dot(dir) < n1) ap.setZero();
    const double mp = (d1.value + ap / sp).dot(dir);

    Vector row = n.row;
    bool changed = false;
    for (std::size_t j = 0; j < d; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      if (j == p || n.row[jj] == 0.0) continue;
      const double s = step_for(j, 1.0);
      const auto sd = second_diff(oracle, site, unit_vector(d, j), s);
      ++rep.entries;
      const double mj = (sd.value + ap / s).dot(dir);
      const double candidate = std::copysign(std::abs(mj) / mp, n.row[jj]);
      if (mj <= 0.0 || std::abs(candidate - n.row[jj]) > opts.accept_rel * std::abs(n.row[jj]) + 1e-12) {
        ++rep.rejected;
        continue;
      }
      row[jj] = candidate;
      changed = true;
    }
    if (changed) {
      n.row = row;
      n.bias = recover_bias(n.row, n.source);
      ++rep.neurons;
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Global sign recovery

GlobalSignResult recover_global_signs(OracleHandle& oracle, const Matrix& rows, const Vector& biases, Rng& rng,
                                      const GlobalSignOptions& opts) {
  const auto m = static_cast<std::size_t>(rows.rows());
  const auto d = static_cast<std::size_t>(rows.cols());
  if (static_cast<std::size_t>(biases.size()) != m)
    throw DimensionError("biases", m, static_cast<std::size_t>(biases.size()));
  if (m == 0) return {};
  if (m >= d) throw NumericalError("global sign recovery needs fewer neurons than input dimensions");
  const Eigen::CompleteOrthogonalDecomposition<Matrix> cod(rows);
  if (static_cast<std::size_t>(cod.rank()) < m) throw NumericalError("recovered first layer is rank deficient");

  // Base point with every recovered preactivation at zero, and per-neuron
  // directions that move only that neuron's preactivation.
  const Vector z = cod.solve(-biases);
  const Matrix dirs = cod.solve(Matrix::Identity(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m)));

  GlobalSignResult out;
  out.signs.assign(m, 0);
  auto observe = [&](const Vector& x) -> const Vector& {
    out.probes.push_back(Probe{x, oracle.query(x)});
    return out.probes.back().logits;
  };
  const Vector fz = observe(z);

  for (std::size_t i = 0; i < m; ++i) {
    const Vector vi = dirs.col(static_cast<Eigen::Index>(i));
    Vector base = z;
    Vector fbase = fz;
    for (std::size_t attempt = 0; attempt <= opts.max_retries; ++attempt) {
      const Vector fp = observe(base + vi);
      const Vector fm = observe(base - vi);
      const double dp = (fp - fbase).cwiseAbs().maxCoeff();
      const double dm = (fm - fbase).cwiseAbs().maxCoeff();
      const double tol = opts.equal_rel_tol * std::max(dp, dm) + 64.0 * kEps * fbase.cwiseAbs().maxCoeff();
      if (dp <= tol && dm > tol) {
        out.signs[i] = -1;
        break;
      }
      if (dm <= tol && dp > tol) {
        out.signs[i] = +1;
        break;
      }
      if (attempt == opts.max_retries) break;
      // Slide the base point within the null space of the recovered rows:
      // recovered preactivations stay at zero while anything unmodelled moves.
      ++out.retries;
      const Vector g = gaussian_vector(d, rng);
      Vector n = g - cod.solve(rows * g);
      const double nn = n.norm();
      if (nn == 0.0) continue;
      n *= vi.norm() * std::ldexp(1.0, static_cast<int>(attempt)) / nn;
      base = z + n;
      fbase = observe(base);
    }
    if (out.signs[i] == 0)
      throw NumericalError("global sign of neuron " + std::to_string(i) + " unresolved after " +
                           std::to_string(opts.max_retries) + " retries");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Last layer

LastLayerResult solve_last_layer(OracleHandle& oracle, const Matrix& a0, const Vector& b0, std::vector<Probe> probes,
                                 Rng& rng, const LastLayerOptions& opts) {
  const auto m = a0.rows();
  const auto d = static_cast<std::size_t>(a0.cols());
  if (b0.size() != m) throw DimensionError("b0", static_cast<std::size_t>(m), static_cast<std::size_t>(b0.size()));
  auto add_random = [&](std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
      const Vector x = opts.box ? uniform_in_box(*opts.box, rng) : gaussian_vector(d, rng);
      probes.push_back(Probe{x, oracle.query(x)});
    }
  };
  add_random(opts.extra_probes);
  if (probes.empty()) add_random(static_cast<std::size_t>(m) + 1);

  for (std::size_t round = 0; round <= opts.max_rounds; ++round) {
    const auto n = static_cast<Eigen::Index>(probes.size());
    const auto k = probes.front().logits.size();
    Matrix design(n, m + 1);
    Matrix target(n, k);
    for (Eigen::Index r = 0; r < n; ++r) {
      const auto& p = probes[static_cast<std::size_t>(r)];
      if (static_cast<std::size_t>(p.x.size()) != d)
        throw DimensionError("probe input", d, static_cast<std::size_t>(p.x.size()));
      if (p.logits.size() != k)
        throw DimensionError("probe logits", static_cast<std::size_t>(k), static_cast<std::size_t>(p.logits.size()));
      design.row(r).head(m) = (a0 * p.x + b0).cwiseMax(0.0).transpose();
      design(r, m) = 1.0;
      target.row(r) = p.logits.transpose();
    }
    const Eigen::ColPivHouseholderQR<Matrix> qr(design);
    if (qr.rank() == m + 1) {
      const Matrix w = qr.solve(target);  // (m + 1) x K
      LastLayerResult out;
      out.a1 = w.topRows(m).transpose();
      out.b1 = w.row(m).transpose();
      out.residual = (design * w - target).norm() / std::sqrt(static_cast<double>(n * k));
      out.probes_used = probes.size();
      out.rank = static_cast<std::size_t>(qr.rank());
      return out;
    }
    add_random(std::max<std::size_t>(static_cast<std::size_t>(m) + 1, 4));
  }
  throw NumericalError("last-layer design matrix stayed rank deficient");
}

// ---------------------------------------------------------------------------
// Pipeline

PhaseCeilings default_ceilings(std::size_t d, std::size_t h) {
  PhaseCeilings c;
  const double hh = static_cast<double>(h);
  const double log_h = std::max(1.0, std::log2(hh));
  c.search = static_cast<std::uint64_t>(std::ceil(64.0 * hh * log_h));
  c.weight_recovery = 8 * d * h;
  c.global_sign = 3 * h + 3 * 8 + 1;
  c.last_layer = h + 1 + 16;
  c.total = 50 * d * h;
  return c;
}

ExtractionResult extract(OracleHandle& oracle, std::size_t d, std::size_t h, const ExtractConfig& cfg) {
  if (d == 0 || h == 0) throw InvalidArgument("extract requires positive d and h");
  if (oracle.input_dim() && *oracle.input_dim() != d) throw DimensionError("oracle input", d, *oracle.input_dim());
  oracle.set_input_dim(d);
  const LedgerSnapshot start = oracle.ledger().snapshot();
  const std::uint64_t budget = cfg.budget ? cfg.budget : default_ceilings(d, h).total;
  LimitScope limit(oracle, budget);
  Rng rng(cfg.seed);

  const double hd = static_cast<double>(h);
  const double range = cfg.search.range.value_or(std::max(1.0, hd * hd));

  std::vector<RecoveredNeuron> neurons;
  std::size_t lines = 0, empty_streak = 0, duplicates = 0, dead = 0, remeasured = 0, swaps = 0;
  bool out_of_budget = false;

  auto partial = [&](const std::string& phase) {
    auto p = std::make_shared<PartialExtraction>();
    p->recovered = neurons;
    p->ledger = oracle.ledger().snapshot() - start;
    p->phase = phase;
    return p;
  };

  while (neurons.size() < h && lines < cfg.search.max_lines && !out_of_budget) {
    std::vector<CriticalPoint> points;
    try {
      PhaseScope phase(oracle, Phase::search);
      points = sweep_line(oracle, range, rng, cfg.search.kinks, lines);
    } catch (const BudgetExhausted&) {
      out_of_budget = true;
      break;
    }
    ++lines;
    if (points.empty()) {
      if (++empty_streak >= cfg.search.max_empty_lines) break;
      continue;
    }
    empty_streak = 0;
    for (const auto& cp : points) {
      if (neurons.size() >= h) break;
      const auto known = std::find_if(neurons.begin(), neurons.end(),
                                      [&](const RecoveredNeuron& n) { return lies_on_hyperplane(n, cp.x); });
      if (known != neurons.end()) {
        ++duplicates;
        // A nearer witness of a known neuron pins its bias more tightly.
        if (cp.x.norm() < known->source.x.norm()) {
          known->bias = recover_bias(known->row, cp);
          known->source = cp;
          ++swaps;
        }
        continue;
      }
      std::optional<RecoveredNeuron> rec;
      try {
        PhaseScope phase(oracle, Phase::weight_recovery);
        rec = recover_neuron(oracle, cp);
        if (rec) {
          const double nn = rec->row.squaredNorm();
          const Vector p = (-rec->bias / nn) * rec->row;
          const Vector off = cp.x - p;
          const double sd = std::sqrt(static_cast<double>(d));
          if (off.norm() > cfg.remeasure_factor * sd) {
            const auto moved = recenter_witness(oracle, *rec, p + (sd / off.norm()) * off, rng);
            std::optional<RecoveredNeuron> again;
            if (moved && lies_on_hyperplane(*rec, moved->x)) again = recover_neuron(oracle, *moved);
            if (again && std::abs(again->row.dot(rec->row)) >= (1.0 - 1e-4) * again->row.norm() * std::sqrt(nn)) {
              rec = std::move(again);
              ++remeasured;
            }
          }
        }
      } catch (const BudgetExhausted&) {
        out_of_budget = true;
        break;
      }
      if (!rec) {
        ++dead;
        continue;
      }
      neurons.push_back(std::move(*rec));
      neurons = dedupe_neurons(neurons, cfg.dedupe_tol);
    }
  }

  std::size_t polished = 0;
  if (cfg.polish && neurons.size() == h) {
    try {
      PhaseScope phase(oracle, Phase::weight_recovery);
      polished = polish_neurons(oracle, neurons, cfg.polish_opts).neurons;
    } catch (const BudgetExhausted&) {
      throw ExtractionError("query budget exhausted while polishing weights", partial("weight_recovery"));
    }
  }

  const auto k_from = [&](const Vector& y) { return static_cast<Eigen::Index>(y.size()); };

  if (neurons.empty()) {
    // Nothing bends: the oracle is affine along every swept line. Report the
    // constant it returns at the origin behind a single inert neuron.
    Vector y;
    try {
      PhaseScope phase(oracle, Phase::last_layer);
      y = oracle.query(Vector::Zero(static_cast<Eigen::Index>(d)));
    } catch (const BudgetExhausted&) {
      throw ExtractionError("query budget exhausted before any neuron was found", partial("search"));
    }
    TwoLayerNet net(Matrix::Zero(1, static_cast<Eigen::Index>(d)), Vector::Constant(1, -1.0),
                    Matrix::Zero(k_from(y), 1), y);
    ExtractionResult res{std::move(net)};
    res.ledger = oracle.ledger().snapshot() - start;
    res.h_expected = h;
    res.shortfall = h;
    res.lines = lines;
    res.dead_witnesses = dead;
    res.no_kink = true;
    return res;
  }

  const auto m = static_cast<Eigen::Index>(neurons.size());
  Matrix rows(m, static_cast<Eigen::Index>(d));
  Vector biases(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    rows.row(i) = neurons[static_cast<std::size_t>(i)].row.transpose();
    biases[i] = neurons[static_cast<std::size_t>(i)].bias;
  }

  GlobalSignResult signs;
  try {
    PhaseScope phase(oracle, Phase::global_sign);
    signs = recover_global_signs(oracle, rows, biases, rng, cfg.global_sign);
  } catch (const Error& e) {
    throw ExtractionError(std::string("global sign recovery failed: ") + e.what(), partial("global_sign"));
  }
  for (Eigen::Index i = 0; i < m; ++i) {
    const double s = signs.signs[static_cast<std::size_t>(i)];
    rows.row(i) *= s;
    biases[i] *= s;
    neurons[static_cast<std::size_t>(i)].row *= s;
    neurons[static_cast<std::size_t>(i)].bias *= s;
    neurons[static_cast<std::size_t>(i)].global_sign = static_cast<int>(s);
  }

  std::vector<Probe> probes;
  probes.reserve(neurons.size() + signs.probes.size());
  for (const auto& n : neurons) probes.push_back(Probe{n.source.x, n.source.logits});
  for (auto& p : signs.probes) probes.push_back(std::move(p));

  LastLayerResult last;
  try {
    PhaseScope phase(oracle, Phase::last_layer);
    last = solve_last_layer(oracle, rows, biases, std::move(probes), rng, cfg.last_layer);
  } catch (const Error& e) {
    throw ExtractionError(std::string("last-layer solve failed: ") + e.what(), partial("last_layer"));
  }

  ExtractionResult res{TwoLayerNet(rows, biases, last.a1, last.b1)};
  res.ledger = oracle.ledger().snapshot() - start;
  res.h_expected = h;
  res.distinct_found = neurons.size();
  res.shortfall = neurons.size() < h ? h - neurons.size() : 0;
  res.lines = lines;
  res.duplicate_witnesses = duplicates;
  res.dead_witnesses = dead;
  res.last_layer_residual = last.residual;
  res.global_sign_retries = signs.retries;
  res.remeasured = remeasured;
  res.witness_swaps = swaps;
  res.polished = polished;
  for (const auto& n : neurons) {
    res.neurons.push_back(NeuronReport{n.pivot, n.confidence, n.low_confidence, n.global_sign,
                                       n.source.residual, n.source.line_id});
  }
  res.recovered = std::move(neurons);
  return res;
}

}  // namespace relux
