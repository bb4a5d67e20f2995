// End-to-end acceptance run. Prints one PASS/FAIL line per criterion, with
// the measured values, and exits nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "relux/eval.hpp"
#include "relux/extract.hpp"
#include "relux/hardness.hpp"
#include "relux/hybrid.hpp"
#include "relux/linearity.hpp"
#include "relux/random.hpp"
#include "relux/train.hpp"

using namespace relux;

namespace {

// Tolerances and sizes, fixed here so a run is comparable with the next.
constexpr std::size_t kEvalPoints = 10000;
constexpr double kMaxRelGap = 1e-6;
constexpr double kSecondsPerNet = 60.0;
constexpr double kMinMeanBits = 20.0;
constexpr double kInjectMagnitude = 0.1;
constexpr double kCorruptedCeiling = 0.995;
constexpr double kRepairedFloor = 0.99;
constexpr double kPgdEps = 0.1;
constexpr std::size_t kPgdIters = 20;
constexpr std::size_t kTransferSuccesses = 500;
constexpr double kKinkRelTol = 1e-9;
constexpr double kMoreThanOneRate = 0.999;
constexpr double kTransformRelTol = 1e-9;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void verdict(int id, bool ok, const std::string& detail) {
  std::printf("%s criterion %d: %s\n", ok ? "PASS" : "FAIL", id, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double search_ceiling(std::size_t h) {
  return 64.0 * static_cast<double>(h) * std::max(1.0, std::log2(static_cast<double>(h)));
}

struct Run {
  std::string name;
  std::size_t d = 0, h = 0;
  double seconds = 0.0;
  double fidelity = 0.0;
  double max_rel_gap = 0.0;
  LogitGapReport gap;
  PrecisionReport precision;
  LedgerSnapshot ledger;
  bool ok = false;
};

std::vector<Run> runs;

Run run_extraction(const std::string& name, const TwoLayerNet& victim, std::uint64_t seed) {
  Run r;
  r.name = name;
  r.d = victim.d();
  r.h = victim.h();
  auto o = OracleHandle::local(victim);
  ExtractConfig cfg;
  cfg.seed = seed;
  const auto t0 = Clock::now();
  try {
    const auto res = extract(o, victim.d(), victim.h(), cfg);
    r.seconds = seconds_since(t0);
    r.ledger = res.ledger;
    const auto pts = sample_box(InputBox::unit(victim.d()), kEvalPoints, derive_seed(seed, 77));
    r.fidelity = fidelity(logits_of(victim), logits_of(res.net), pts);
    r.gap = logit_gap(logits_of(victim), logits_of(res.net), pts);
    r.max_rel_gap = oracle::max_relative_gap(victim, res.net, pts);
    r.precision = align_and_precision(victim, res.net);
    r.ok = true;
  } catch (const std::exception& e) {
    r.seconds = seconds_since(t0);
    std::printf("  %s: extraction failed: %s\n", name.c_str(), e.what());
  }
  std::printf("  %-22s fid %.4f gap %.2e bits %.1f (min %.1f) queries %llu [search %llu, weights %llu, sign %llu, "
              "last %llu] %.2fs\n",
              name.c_str(), r.fidelity, r.max_rel_gap, r.precision.mean_bits, r.precision.min_bits,
              static_cast<unsigned long long>(r.ledger.total()),
              static_cast<unsigned long long>(r.ledger[Phase::search]),
              static_cast<unsigned long long>(r.ledger[Phase::weight_recovery]),
              static_cast<unsigned long long>(r.ledger[Phase::global_sign]),
              static_cast<unsigned long long>(r.ledger[Phase::last_layer]), r.seconds);
  runs.push_back(r);
  return r;
}

TwoLayerNet trained_victim(std::size_t d, std::size_t h, std::size_t k, std::uint64_t seed) {
  const auto data = gen_synthetic(d, k, 2000, seed, SyntheticTask::gaussian_clusters);
  TrainConfig cfg;
  cfg.d = d;
  cfg.h = h;
  cfg.k = k;
  cfg.epochs = 20;
  cfg.init_seed = derive_seed(seed, 1);
  cfg.shuffle_seed = derive_seed(seed, 2);
  return train_victim(cfg, data).net;
}

void print_histogram(const char* title, const BitHistogram& hist) {
  std::printf("  %s (bits: count)\n   ", title);
  int shown = 0;
  for (std::size_t b = 0; b < hist.size(); ++b) {
    if (!hist[b]) continue;
    std::printf(" %zu:%llu", b, static_cast<unsigned long long>(hist[b]));
    if (++shown % 12 == 0) std::printf("\n   ");
  }
  std::printf("\n");
}

// ---------------------------------------------------------------------------

void criterion_1() {
  std::printf("criterion 1: end-to-end extraction at d=32\n");
  bool ok = true;
  double worst_gap = 0.0, worst_fid = 1.0, slowest = 0.0;
  std::uint64_t seed = 100;
  std::vector<std::pair<std::string, TwoLayerNet>> victims;
  for (std::size_t h : {4, 8, 16})
    for (std::size_t k : {1, 10})
      victims.emplace_back(fmt("random h=%zu K=%zu", h, k), random_net(32, h, k, seed++));
  victims.emplace_back("trained h=8 K=10", trained_victim(32, 8, 10, 500));
  victims.emplace_back("trained h=16 K=4", trained_victim(32, 16, 4, 501));
  for (const auto& [name, v] : victims) {
    const auto r = run_extraction(name, v, seed++);
    ok = ok && r.ok && r.fidelity == 1.0 && r.max_rel_gap <= kMaxRelGap && r.seconds < kSecondsPerNet;
    worst_gap = std::max(worst_gap, r.max_rel_gap);
    worst_fid = std::min(worst_fid, r.fidelity);
    slowest = std::max(slowest, r.seconds);
  }
  verdict(1, ok,
          fmt("%zu nets, min fidelity %.6f, max relative gap %.3e (limit %.0e), slowest %.2fs (limit %.0fs)",
              victims.size(), worst_fid, worst_gap, kMaxRelGap, slowest, kSecondsPerNet));
}

void criterion_2() {
  std::printf("criterion 2: weight precision up to d=784, h=16\n");
  bool ok = true;
  double worst = 1e9;
  LogitGapReport pooled;
  const std::size_t before = runs.size();
  std::uint64_t seed = 200;
  for (std::size_t d : {64, 256, 784}) run_extraction(fmt("random d=%zu h=16", d), random_net(d, 16, 10, seed++), seed);
  run_extraction("trained d=784 h=16", trained_victim(784, 16, 10, 600), seed++);
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& r = runs[i];
    if (i >= before) ok = ok && r.ok && r.precision.mean_bits >= kMinMeanBits;
    worst = std::min(worst, r.precision.mean_bits);
    for (std::size_t b = 0; b < kBitBins; ++b) pooled.histogram[b] += r.gap.histogram[b];
  }
  BitHistogram weights{};
  for (const auto& r : runs)
    for (std::size_t b = 0; b < kBitBins; ++b) weights[b] += r.precision.histogram[b];
  print_histogram("aligned weight precision histogram, all runs", weights);
  print_histogram("logit gap histogram, all runs", pooled.histogram);
  verdict(2, ok, fmt("%zu runs, lowest mean precision %.2f bits (limit %.0f)", runs.size(), worst, kMinMeanBits));
}

void criterion_3() {
  bool ok = true;
  double worst_total = 0.0, worst_search = 0.0;
  for (const auto& r : runs) {
    const double total_share = static_cast<double>(r.ledger.total()) / (50.0 * r.d * r.h);
    const double search_share = static_cast<double>(r.ledger[Phase::search]) / search_ceiling(r.h);
    const bool phases = r.ledger[Phase::search] && r.ledger[Phase::weight_recovery] &&
                        r.ledger[Phase::global_sign] && r.ledger[Phase::last_layer];
    ok = ok && r.ok && total_share <= 1.0 && search_share <= 1.0 && phases;
    worst_total = std::max(worst_total, total_share);
    worst_search = std::max(worst_search, search_share);
  }
  verdict(3, ok,
          fmt("%zu runs, worst total/(50dh) %.3f, worst search/(64 h log2 h) %.3f, all four phases billed", runs.size(),
              worst_total, worst_search));
}

void criterion_4() {
  const std::size_t d = 64, h = 32, k = 10;
  const auto victim = random_net(d, h, k, 11);
  auto o = OracleHandle::local(victim);
  ExtractConfig cfg;
  cfg.seed = 5;
  const auto stolen = extract(o, d, h, cfg).net;
  const auto box = InputBox::unit(d);
  const auto pts = sample_box(box, kEvalPoints, 404);
  const auto base = fidelity(logits_of(victim), logits_of(stolen), pts);

  // First entry in row-major order whose corruption pushes fidelity below
  // the ceiling.
  std::optional<TwoLayerNet> bad;
  double corrupted = 1.0;
  std::size_t at_i = 0, at_j = 0;
  for (std::size_t i = 0; i < h && !bad; ++i)
    for (std::size_t j = 0; j < d && !bad; ++j) {
      auto cand = inject_weight_error(stolen, i, j, kInjectMagnitude);
      const double f = fidelity(logits_of(victim), logits_of(cand), pts);
      if (f < kCorruptedCeiling) {
        bad = std::move(cand);
        corrupted = f;
        at_i = i;
        at_j = j;
      }
    }
  if (!bad) {
    verdict(4, false, "no single-entry error of magnitude 0.1 brought fidelity below 0.995");
    return;
  }
  auto o2 = OracleHandle::local(victim);
  RefinementConfig rc;
  rc.seed = 9;
  const auto t0 = Clock::now();
  const auto fixed = refine(*bad, o2, rc);
  const double repaired = fidelity(logits_of(victim), logits_of(fixed.net), pts);
  verdict(4, corrupted < kCorruptedCeiling && repaired >= kRepairedFloor,
          fmt("extracted %.4f, entry (%zu,%zu) +0.1 -> %.4f, refined -> %.4f (floor %.2f), objective %.3e -> %.3e, "
              "%zu steps, %.1fs",
              base, at_i, at_j, corrupted, repaired, kRepairedFloor, fixed.initial_objective, fixed.final_objective,
              fixed.iterations, seconds_since(t0)));
}

void criterion_5() {
  const std::size_t d = 32, h = 16, k = 10;
  const auto victim = trained_victim(d, h, k, 700);
  auto o = OracleHandle::local(victim);
  ExtractConfig cfg;
  cfg.seed = 3;
  const auto stolen = extract(o, d, h, cfg).net;
  const auto box = InputBox::unit(d);
  const PgdConfig pgd{kPgdEps, kPgdIters, std::nullopt};
  TransferReport total;
  std::uint64_t batch = 0;
  while (total.source_successes < kTransferSuccesses && batch < 50) {
    const auto rep = transfer_rate(stolen, logits_of(victim), sample_box(box, 1000, derive_seed(55, batch++)), pgd, box);
    total.attempted += rep.attempted;
    total.source_successes += rep.source_successes;
    total.transferred += rep.transferred;
  }
  total.rate = total.source_successes ? static_cast<double>(total.transferred) / total.source_successes : 0.0;
  verdict(5, total.source_successes >= kTransferSuccesses && total.rate == 1.0,
          fmt("%zu/%zu source-successful examples transfer (rate %.4f) from %zu attempts", total.transferred,
              total.source_successes, total.rate, total.attempted));
}

void criterion_6() {
  const auto spec = rectangle_from_cells(4, 4, {std::size_t{1}, std::size_t{2}, std::nullopt, std::nullopt});
  const auto net = build_rectangle_net(spec);
  // Exhaustive count over the cell-midpoint grid, written out longhand.
  std::size_t nonzero = 0, total = 0;
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b)
      for (int c = 0; c < 4; ++c)
        for (int e = 0; e < 4; ++e) {
          Vector x(4);
          x << (a + 0.5) / 4, (b + 0.5) / 4, (c + 0.5) / 4, (e + 0.5) / 4;
          ++total;
          if (net(x) != 0.0) ++nonzero;
        }
  const auto f = nonzero_fraction([&](const Vector& x) { return net(x); }, 4, 4);
  verdict(6, total == 256 && nonzero * 16 == total && f == Fraction{1, 16} && f.denominator == 256,
          fmt("%zu/%zu grid points nonzero, library fraction %llu/%llu", nonzero, total,
              static_cast<unsigned long long>(f.numerator), static_cast<unsigned long long>(f.denominator)));
}

void criterion_7() {
  std::mt19937_64 rng(7);
  std::size_t agree = 0, witnesses = 0, windows_ok = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = 4 + static_cast<std::size_t>(rng() % 17);
    std::vector<std::int64_t> v(d);
    std::int64_t sum = 0;
    for (auto& x : v) sum += x = 1 + static_cast<std::int64_t>(rng() % 2000);
    const std::int64_t p = 1 + static_cast<std::int64_t>(rng() % 3);
    const std::int64_t target = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(sum + 1));
    const auto r = brute_force_equiv(TwoLayerNet::zeros(d, 1, 1), build_subsetsum_net(v, target, p));
    const auto mitm = oracle::mitm_subset_sum(v, target, p);
    if (r.witness.has_value() == mitm.has_value()) ++agree;
    if (r.witness) {
      ++witnesses;
      std::int64_t s = 0;
      for (std::size_t i = 0; i < d; ++i) s += (*r.witness)[static_cast<Eigen::Index>(i)] == 1.0 ? v[i] : 0;
      if (2 * std::abs(s - target) < p) ++windows_ok;
    }
  }
  verdict(7, agree == 50 && windows_ok == witnesses,
          fmt("%zu/50 agree with meet-in-the-middle, %zu witnesses, %zu inside the window", agree, witnesses,
              windows_ok));
}

void criterion_8() {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto slopes = [&] {
    double m1, m2;
    do {
      m1 = gauss(rng);
      m2 = gauss(rng);
    } while (std::abs(m1 - m2) < 1e-2);
    return std::pair{m1, m2};
  };

  std::size_t located = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const double lo = -100.0 * unit(rng);
    const double hi = lo + 1.0 + 200.0 * unit(rng);
    const double kink = lo + (hi - lo) * unit(rng);
    const auto [m1, m2] = slopes();
    const double c = gauss(rng);
    const auto f = [&](double t) { return t < kink ? c + m1 * (t - kink) : c + m2 * (t - kink); };
    const auto r = two_linear_test(f, lo, hi, (hi - lo) / 16.0);
    const double err = std::abs(r.location - kink) / (hi - lo);
    if (r.outcome == LinearityOutcome::single_kink && err <= kKinkRelTol) ++located;
    if (r.outcome == LinearityOutcome::single_kink) worst = std::max(worst, err);
    else worst = std::max(worst, 1.0);
  }

  std::size_t rejected = 0;
  const int three_trials = 1000;
  for (int trial = 0; trial < three_trials; ++trial) {
    const double lo = -100.0 * unit(rng);
    const double hi = lo + 1.0 + 200.0 * unit(rng);
    double k1 = lo + (hi - lo) * unit(rng), k2 = lo + (hi - lo) * unit(rng);
    if (k1 > k2) std::swap(k1, k2);
    const auto [m1, m2] = slopes();
    double m3;
    do m3 = gauss(rng);
    while (std::abs(m3 - m2) < 1e-2);
    const double c = gauss(rng);
    const auto f = [&](double t) {
      if (t < k1) return c + m1 * (t - k1);
      if (t < k2) return c + m2 * (t - k1);
      return c + m2 * (k2 - k1) + m3 * (t - k2);
    };
    if (two_linear_test(f, lo, hi, (hi - lo) / 16.0).outcome == LinearityOutcome::more_than_one) ++rejected;
  }
  const double rate = static_cast<double>(rejected) / three_trials;
  verdict(8, located == 1000 && rate >= kMoreThanOneRate,
          fmt("2-piece: %zu/1000 located, worst error %.2e of range (limit %.0e); 3-piece: more-than-one in %.4f "
              "(floor %.3f)",
              located, worst, kKinkRelTol, rate, kMoreThanOneRate));
}

void criterion_9() {
  const auto data = gen_synthetic(16, 4, 1000, 90, SyntheticTask::gaussian_clusters);
  TrainConfig tc;
  tc.d = 16;
  tc.h = 12;
  tc.k = 4;
  tc.init_seed = 3;
  tc.shuffle_seed = 4;
  bool bitwise = true;
  for (auto opt : {OptimizerKind::sgd, OptimizerKind::adam}) {
    tc.optimizer = opt;
    tc.learning_rate = opt == OptimizerKind::adam ? 0.01 : 0.1;
    bitwise = bitwise && train_victim(tc, data).net.identical(train_victim(tc, data).net);
  }

  const auto net = random_net(20, 10, 5, 91);
  const auto box = InputBox::unit(20);
  const auto pts = sample_box(box, kEvalPoints, 92);
  std::vector<std::size_t> perm(10);
  for (std::size_t i = 0; i < 10; ++i) perm[i] = (i * 7 + 3) % 10;
  const std::vector<TwoLayerNet> transformed{
      scale_neuron(scale_neuron(net, 0, 13.0), 4, 1.0 / 64.0), permute_neurons(net, perm),
      add_dead_neuron(net, Vector::Constant(20, -1.0), -0.5, box, Vector::Constant(5, 3.0)),
      permute_neurons(scale_neuron(net, 7, 2.5), perm)};
  double worst_transform = 0.0;
  for (const auto& t : transformed) worst_transform = std::max(worst_transform, oracle::max_relative_gap(net, t, pts));

  const auto victim = random_net(32, 8, 10, 93);
  const auto scaled = scale_neuron(scale_neuron(victim, 1, 9.0), 5, 0.2);
  auto o = OracleHandle::local(scaled);
  ExtractConfig cfg;
  cfg.seed = 94;
  const auto stolen = extract(o, 32, 8, cfg).net;
  const double scaled_gap = oracle::max_relative_gap(victim, stolen, sample_box(InputBox::unit(32), kEvalPoints, 95));

  verdict(9, bitwise && worst_transform <= kTransformRelTol && scaled_gap <= kMaxRelGap,
          fmt("training bitwise reproducible: %s; transforms max relative gap %.2e (limit %.0e); scaled victim gap "
              "%.2e (limit %.0e)",
              bitwise ? "yes" : "no", worst_transform, kTransformRelTol, scaled_gap, kMaxRelGap));
}

void criterion_10() {
  // Overlapping clusters: about 93% test accuracy. Train and test share one
  // draw of the cluster means.
  SyntheticOptions noisy;
  noisy.noise = 0.3;
  const auto all = gen_synthetic(20, 5, 3000, 1000, SyntheticTask::gaussian_clusters, noisy);
  LabeledDataset train, test;
  for (std::size_t i = 0; i < all.size(); ++i) {
    auto& part = i < 2000 ? train : test;
    part.inputs.push_back(all.inputs[i]);
    part.targets.push_back(all.targets[i]);
  }
  TrainConfig tc;
  tc.d = 20;
  tc.h = 16;
  tc.k = 5;
  tc.epochs = 15;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> grid;
  for (std::uint64_t s = 1; s <= 5; ++s) grid.emplace_back(s, 100 + s);
  AgreementOptions opts;
  opts.uniform_points = 5000;
  opts.seed = 1002;
  const auto table = agreement_experiment(tc, train, test, grid, opts);
  std::size_t holds = 0;
  for (const auto& row : table.rows) holds += row.test >= row.uniform ? 1 : 0;
  double acc = 0.0;
  for (double a : table.test_accuracy) acc += a / static_cast<double>(table.test_accuracy.size());
  verdict(10, table.rows.size() >= 10 && holds == table.rows.size(),
          fmt("%zu seed pairs, test >= uniform in %zu; mean agreement test %.4f, adversarial %.4f, uniform %.4f "
              "(mean test accuracy %.4f)",
              table.rows.size(), holds, table.mean_test, table.mean_adversarial, table.mean_uniform, acc));
}

}  // namespace

int main() {
  const std::vector<std::function<void()>> all{criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
                                               criterion_6, criterion_7, criterion_8, criterion_9, criterion_10};
  for (std::size_t i = 0; i < all.size(); ++i) {
    try {
      all[i]();
    } catch (const std::exception& e) {
      verdict(static_cast<int>(i + 1), false, std::string("threw: ") + e.what());
    }
  }
  std::printf("%d of %zu criteria failed\n", failures, all.size());
  return failures == 0 ? 0 : 1;
}
