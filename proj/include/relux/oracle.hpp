#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "relux/net.hpp"

namespace relux {

/// Query accounting buckets. The first four are the stages of the
/// extraction attack; `eval` and `other` cover metrics and labelling.
enum class Phase : std::uint8_t { search, weight_recovery, global_sign, last_layer, eval, other };
inline constexpr std::size_t kPhaseCount = 6;
inline constexpr std::array<Phase, kPhaseCount> kAllPhases = {
    Phase::search, Phase::weight_recovery, Phase::global_sign,
    Phase::last_layer, Phase::eval, Phase::other};

std::string_view to_string(Phase p);

struct LedgerSnapshot {
  std::array<std::uint64_t, kPhaseCount> counts{};

  std::uint64_t operator[](Phase p) const { return counts[static_cast<std::size_t>(p)]; }
  std::uint64_t total() const;
  LedgerSnapshot operator-(const LedgerSnapshot& earlier) const;
};

/// Thread-safe per-phase query counters. Counters only ever increase.
class QueryLedger {
 public:
  void record(Phase p) noexcept { counts_[static_cast<std::size_t>(p)].fetch_add(1, std::memory_order_relaxed); }
  std::uint64_t count(Phase p) const noexcept {
    return counts_[static_cast<std::size_t>(p)].load(std::memory_order_relaxed);
  }
  std::uint64_t total() const noexcept;
  LedgerSnapshot snapshot() const noexcept;

 private:
  std::array<std::atomic<std::uint64_t>, kPhaseCount> counts_{};
};

/// Something that maps an input vector to float64 logits.
class OracleBackend {
 public:
  virtual ~OracleBackend() = default;
  virtual Vector evaluate(const Vector& x) = 0;
  /// Input dimension if the backend knows it.
  virtual std::optional<std::size_t> input_dim() const = 0;
  virtual std::string describe() const = 0;
};

class LocalBackend final : public OracleBackend {
 public:
  explicit LocalBackend(TwoLayerNet net) : net_(std::make_shared<const TwoLayerNet>(std::move(net))) {}
  Vector evaluate(const Vector& x) override { return net_->forward_logits(x); }
  std::optional<std::size_t> input_dim() const override { return net_->d(); }
  std::string describe() const override;

 private:
  std::shared_ptr<const TwoLayerNet> net_;
};

/// Metered black-box logit oracle. Every successful query bumps exactly one
/// ledger counter: the one for the currently active phase. Failed queries are
/// not counted. Safe to share between threads; the active phase is a single
/// shared setting.
class OracleHandle {
 public:
  explicit OracleHandle(std::shared_ptr<OracleBackend> backend,
                        std::shared_ptr<QueryLedger> ledger = std::make_shared<QueryLedger>());

  static OracleHandle local(TwoLayerNet net);

  Vector query(const Vector& x);

  Phase phase() const { return state_->phase.load(); }
  void set_phase(Phase p) { state_->phase.store(p); }

  /// Queries beyond `limit` total ledger entries throw BudgetExhausted.
  void set_query_limit(std::optional<std::uint64_t> limit);
  std::optional<std::uint64_t> query_limit() const;

  const QueryLedger& ledger() const { return *ledger_; }
  std::shared_ptr<QueryLedger> shared_ledger() const { return ledger_; }
  std::optional<std::size_t> input_dim() const {
    const auto d = backend_->input_dim();
    return d ? d : state_->declared_dim;
  }
  void set_input_dim(std::size_t d) { state_->declared_dim = d; }
  std::string describe() const { return backend_->describe(); }

 private:
  struct State {
    std::atomic<Phase> phase{Phase::other};
    std::atomic<std::uint64_t> limit{UINT64_MAX};
    std::optional<std::size_t> declared_dim;
  };
  std::shared_ptr<OracleBackend> backend_;
  std::shared_ptr<QueryLedger> ledger_;
  std::unique_ptr<State> state_;
};

/// Sets the oracle's phase for the lifetime of the scope.
class PhaseScope {
 public:
  PhaseScope(OracleHandle& oracle, Phase p) : oracle_(oracle), previous_(oracle.phase()) {
    oracle_.set_phase(p);
  }
  ~PhaseScope() { oracle_.set_phase(previous_); }
  PhaseScope(const PhaseScope&) = delete;
  PhaseScope& operator=(const PhaseScope&) = delete;

 private:
  OracleHandle& oracle_;
  Phase previous_;
};

/// O(u + t v). One query.
Vector line_eval(OracleHandle& oracle, const Vector& u, const Vector& v, double t);

/// (L(t + step) - L(t)) / step per output coordinate. Two queries.
Vector first_diff(OracleHandle& oracle, const Vector& u, const Vector& v, double t, double step);

/// A probe location whose logits have been fetched once and are reused by
/// every second difference taken there.
struct ProbeSite {
  Vector x;
  Vector fx;

  static ProbeSite at(OracleHandle& oracle, const Vector& x);
  static ProbeSite with_cached(Vector x, Vector fx) { return ProbeSite{std::move(x), std::move(fx)}; }
};

struct SecondDiff {
  /// slope_right - slope_left per output coordinate, unnormalised.
  Vector value;
  /// False when every coordinate is within the rounding-noise floor.
  bool kink_detected = false;
  double noise_floor = 0.0;
};

/// Difference of one-sided slopes of O along `dir` at the site:
///   (O(x + s dir) - O(x)) / s  -  (O(x) - O(x - s dir)) / s.
/// Two new queries; O(x) comes from the site.
SecondDiff second_diff(OracleHandle& oracle, const ProbeSite& site, const Vector& dir, double step);

/// Step-size rule for kink probes: 10% of the distance to the nearest other
/// known kink, clamped to [1e-7, 1e-4].
double adaptive_step(double distance_to_nearest_kink);

}  // namespace relux
