#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "relux/errors.hpp"
#include "relux/linearity.hpp"
#include "relux/net.hpp"
#include "relux/oracle.hpp"
#include "relux/random.hpp"

namespace relux {

/// An input at which (we believe) exactly one hidden ReLU has zero
/// preactivation, together with the line sweep that found it.
struct CriticalPoint {
  Vector x;
  Vector u;
  Vector v;
  double t = 0.0;
  Vector logits;               ///< O(x), cached from the search
  double residual = 0.0;       ///< two-piece check residual
  double tolerance = 0.0;      ///< threshold the residual passed
  double gap = std::numeric_limits<double>::infinity();  ///< input-space distance to nearest other kink on the line
  std::size_t line_id = 0;
};

struct SearchOptions {
  /// Lines are swept over t in [-range, range]; default h^2.
  std::optional<double> range;
  KinkSearchOptions kinks{};
  std::size_t max_lines = 64;
  /// Consecutive lines with no kink at all before giving up.
  std::size_t max_empty_lines = 16;
};

struct SearchResult {
  std::vector<CriticalPoint> points;
  std::size_t lines = 0;
  std::size_t best_line_count = 0;  ///< most kinks seen on a single line
  std::size_t shortfall = 0;        ///< h_expected - best_line_count, if positive
  bool no_kink = false;             ///< every swept line was globally linear
  bool budget_exhausted = false;
};

/// Sweeps one random line u + t v and returns the kinks on it as critical
/// points. Every kink on one line belongs to a different neuron.
std::vector<CriticalPoint> sweep_line(OracleHandle& oracle, double range, Rng& rng,
                                      const KinkSearchOptions& opts, std::size_t line_id = 0);

/// Sweeps fresh random lines until one line crosses h_expected distinct
/// hyperplanes, the budget is spent, or no line shows any kink.
SearchResult find_critical_points(OracleHandle& oracle, std::size_t h_expected, std::uint64_t budget,
                                  Rng& rng, const SearchOptions& opts = {});

struct AbsRatios {
  Matrix diffs;            ///< d x K second differences, row j for direction e_j
  Vector magnitudes;       ///< |diffs(j, output)|
  Vector ratios;           ///< magnitudes / magnitudes[pivot], 0 below the noise floor
  std::size_t pivot = 0;
  std::size_t output = 0;  ///< logit coordinate used for the ratios
  double step = 0.0;
  double noise_floor = 0.0;
  /// |a_k| * |preactivation at the witness|. A witness slightly off its
  /// hyperplane lowers every second difference by offset / step; diffs and
  /// magnitudes already have that added back.
  double offset = 0.0;
  std::size_t step_retries = 0;
  bool dead = false;       ///< no direction rose above the noise floor
};

/// |row| of the neuron at `cp`, up to positive scale, from second
/// differences along every coordinate axis. `step` defaults to the adaptive
/// rule applied to cp.gap.
AbsRatios recover_abs_ratios(OracleHandle& oracle, const CriticalPoint& cp,
                             std::optional<double> step = std::nullopt);

struct SignedRow {
  Vector row;              ///< pivot coordinate +1
  std::size_t ambiguous = 0;
  bool low_confidence = false;
};

/// Resolves the sign of every nonzero coordinate relative to the pivot with
/// probes along e_pivot + e_j (retried along e_pivot + 2 e_j when unclear).
SignedRow recover_relative_signs(OracleHandle& oracle, const CriticalPoint& cp, const AbsRatios& abs);

/// Bias that puts cp.x on the hyperplane row . x + bias = 0.
double recover_bias(const Vector& row, const CriticalPoint& cp);

struct RecoveredNeuron {
  Vector row;              ///< |pivot coordinate| == 1
  double bias = 0.0;
  int global_sign = 0;     ///< +1 / -1 once resolved, 0 while unknown
  std::size_t pivot = 0;
  double confidence = 0.0; ///< in (0, 1], higher is better
  bool low_confidence = false;
  CriticalPoint source;
};

/// Weight recovery for one critical point: magnitudes, relative signs, bias.
/// Returns nullopt for a dead or unreachable neuron.
std::optional<RecoveredNeuron> recover_neuron(OracleHandle& oracle, const CriticalPoint& cp);

/// True when `x` lies on the hyperplane of `n` (so a witness adds nothing).
/// The allowance grows with the distance from n's own witness, since a small
/// error in the row direction tilts the hyperplane about that point.
bool lies_on_hyperplane(const RecoveredNeuron& n, const Vector& x, double rel_tol = 1e-6);

struct PolishOptions {
  /// Largest second-difference step tried.
  double max_step = 1e-2;
  /// Steps stay below this share of the distance, along the probe axis, to
  /// the nearest other recovered hyperplane.
  double clearance_share = 0.25;
  /// A re-measured entry replaces the old one only within this relative distance.
  double accept_rel = 1e-4;
};

struct PolishReport {
  std::size_t neurons = 0;  ///< neurons whose row was updated
  std::size_t entries = 0;  ///< entries re-measured
  std::size_t rejected = 0; ///< re-measurements that disagreed and were dropped
};

/// Second pass over a complete first layer. Each entry is measured again at
/// its own witness with the widest step that still keeps every other known
/// hyperplane out of reach, which shrinks the rounding error by the step
/// ratio. Biases are re-derived from the witnesses.
PolishReport polish_neurons(OracleHandle& oracle, std::vector<RecoveredNeuron>& neurons,
                            const PolishOptions& opts = {});

/// Looks for n's kink on a short segment along its normal, centred on the
/// recovered hyperplane at `anchor` (projected onto it first). Returns the
/// kink nearest the centre.
std::optional<CriticalPoint> recenter_witness(OracleHandle& oracle, const RecoveredNeuron& n, const Vector& anchor,
                                              Rng& rng, double radius = 1e-2, const KinkSearchOptions& opts = {});

/// Merges candidates describing the same hyperplane: |cos| >= 1 - tol and
/// biases agreeing after scale alignment (up to bias_tol per unit of witness
/// distance from the origin). Keeps the most confident member of each
/// cluster, in first-seen order.
std::vector<RecoveredNeuron> dedupe_neurons(const std::vector<RecoveredNeuron>& candidates,
                                            double tol = 1e-6, double bias_tol = 1e-5);

/// One (input, logits) observation.
struct Probe {
  Vector x;
  Vector logits;
};

struct GlobalSignOptions {
  /// Re-draws of the base point before giving up on a neuron.
  std::size_t max_retries = 8;
  /// Relative size below which a logit change counts as "unchanged".
  double equal_rel_tol = 1e-6;
};

struct GlobalSignResult {
  std::vector<int> signs;      ///< +1 keep, -1 flip
  std::vector<Probe> probes;   ///< every query made, reusable for the last layer
  std::size_t retries = 0;
};

/// Orients every row so that the positive side of its hyperplane is where
/// the victim's ReLU is active. Queries O(z), O(z + v_i), O(z - v_i) where
/// rows * z = -biases and rows * v_i = e_i (minimum-norm solutions).
GlobalSignResult recover_global_signs(OracleHandle& oracle, const Matrix& rows, const Vector& biases, Rng& rng,
                                      const GlobalSignOptions& opts = {});

struct LastLayerOptions {
  /// Random probes added on top of the supplied ones.
  std::size_t extra_probes = 2;
  std::size_t max_rounds = 6;
  /// Random probes are drawn from this box when given, else N(0, I).
  std::optional<InputBox> box;
};

struct LastLayerResult {
  Matrix a1;
  Vector b1;
  double residual = 0.0;  ///< RMS of the least-squares fit
  std::size_t probes_used = 0;
  std::size_t rank = 0;
};

/// Least-squares fit of O(x) = a1 * relu(a0 * x + b0) + b1 over the probes
/// (column-pivoted Householder QR). Adds random probes, tagged last_layer,
/// until the design matrix has full column rank.
LastLayerResult solve_last_layer(OracleHandle& oracle, const Matrix& a0, const Vector& b0,
                                 std::vector<Probe> probes, Rng& rng, const LastLayerOptions& opts = {});

/// Per-phase query ceilings implied by the O(dh) accounting.
struct PhaseCeilings {
  std::uint64_t search = 0;
  std::uint64_t weight_recovery = 0;
  std::uint64_t global_sign = 0;
  std::uint64_t last_layer = 0;
  std::uint64_t total = 0;
};
PhaseCeilings default_ceilings(std::size_t d, std::size_t h);

struct ExtractConfig {
  std::uint64_t seed = 0;
  /// Total query budget; 0 selects default_ceilings(d, h).total.
  std::uint64_t budget = 0;
  SearchOptions search{};
  GlobalSignOptions global_sign{};
  LastLayerOptions last_layer{};
  double dedupe_tol = 1e-6;
  /// A witness more than this many sqrt(d) from its hyperplane's point
  /// nearest the origin is moved to sqrt(d) from that point and measured again.
  double remeasure_factor = 4.0;
  /// Re-measure every entry once all h neurons are known.
  bool polish = true;
  PolishOptions polish_opts{};
};

struct NeuronReport {
  std::size_t pivot = 0;
  double confidence = 0.0;
  bool low_confidence = false;
  int global_sign = 0;
  double witness_residual = 0.0;
  std::size_t line_id = 0;
};

struct ExtractionResult {
  explicit ExtractionResult(TwoLayerNet n) : net(std::move(n)) {}

  TwoLayerNet net;
  LedgerSnapshot ledger;      ///< queries spent by this run only
  std::vector<NeuronReport> neurons;
  std::vector<RecoveredNeuron> recovered;
  std::size_t h_expected = 0;
  std::size_t distinct_found = 0;
  std::size_t shortfall = 0;
  std::size_t lines = 0;
  std::size_t duplicate_witnesses = 0;
  std::size_t dead_witnesses = 0;
  double last_layer_residual = 0.0;
  std::size_t global_sign_retries = 0;
  std::size_t remeasured = 0;     ///< neurons measured again at a nearer witness
  std::size_t witness_swaps = 0;  ///< biases re-derived from a nearer duplicate witness
  std::size_t polished = 0;       ///< neurons updated by the second pass
  bool no_kink = false;
};

/// Artifacts gathered before a hard failure.
struct PartialExtraction {
  std::vector<RecoveredNeuron> recovered;
  LedgerSnapshot ledger;
  std::string phase;
};

class ExtractionError : public Error {
 public:
  ExtractionError(const std::string& what, std::shared_ptr<const PartialExtraction> partial)
      : Error(what), partial_(std::move(partial)) {}
  const PartialExtraction* partial() const { return partial_.get(); }

 private:
  std::shared_ptr<const PartialExtraction> partial_;
};

/// Full four-phase extraction of a d -> h -> K ReLU network from its logits.
ExtractionResult extract(OracleHandle& oracle, std::size_t d, std::size_t h, const ExtractConfig& cfg = {});

}  // namespace relux
