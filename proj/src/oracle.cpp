#include "relux/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "relux/errors.hpp"

namespace relux {

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::search: return "search";
    case Phase::weight_recovery: return "weight_recovery";
    case Phase::global_sign: return "global_sign";
    case Phase::last_layer: return "last_layer";
    case Phase::eval: return "eval";
    case Phase::other: return "other";
  }
  return "unknown";
}

std::uint64_t LedgerSnapshot::total() const {
  std::uint64_t t = 0;
  for (auto c : counts) t += c;
  return t;
}

LedgerSnapshot LedgerSnapshot::operator-(const LedgerSnapshot& earlier) const {
  LedgerSnapshot d;
  for (std::size_t i = 0; i < kPhaseCount; ++i) d.counts[i] = counts[i] - earlier.counts[i];
  return d;
}

std::uint64_t QueryLedger::total() const noexcept { return snapshot().total(); }

LedgerSnapshot QueryLedger::snapshot() const noexcept {
  LedgerSnapshot s;
  for (std::size_t i = 0; i < kPhaseCount; ++i) s.counts[i] = counts_[i].load(std::memory_order_relaxed);
  return s;
}

std::string LocalBackend::describe() const {
  return "local(d=" + std::to_string(net_->d()) + ",h=" + std::to_string(net_->h()) +
         ",k=" + std::to_string(net_->k()) + ")";
}

OracleHandle::OracleHandle(std::shared_ptr<OracleBackend> backend, std::shared_ptr<QueryLedger> ledger)
    : backend_(std::move(backend)), ledger_(std::move(ledger)), state_(std::make_unique<State>()) {
  if (!backend_) throw InvalidArgument("oracle backend is null");
  if (!ledger_) ledger_ = std::make_shared<QueryLedger>();
}

OracleHandle OracleHandle::local(TwoLayerNet net) {
  return OracleHandle(std::make_shared<LocalBackend>(std::move(net)));
}

void OracleHandle::set_query_limit(std::optional<std::uint64_t> limit) {
  state_->limit.store(limit.value_or(UINT64_MAX));
}

std::optional<std::uint64_t> OracleHandle::query_limit() const {
  const auto l = state_->limit.load();
  if (l == UINT64_MAX) return std::nullopt;
  return l;
}

Vector OracleHandle::query(const Vector& x) {
  const auto dim = backend_->input_dim() ? backend_->input_dim() : state_->declared_dim;
  if (dim && static_cast<std::size_t>(x.size()) != *dim)
    throw DimensionError("oracle query", *dim, static_cast<std::size_t>(x.size()));
  if (!x.allFinite()) throw InvalidArgument("oracle query contains non-finite entries");
  if (ledger_->total() >= state_->limit.load())
    throw BudgetExhausted("query limit of " + std::to_string(state_->limit.load()) + " reached");
  Vector y = backend_->evaluate(x);
  ledger_->record(state_->phase.load());
  return y;
}

Vector line_eval(OracleHandle& oracle, const Vector& u, const Vector& v, double t) {
  if (u.size() != v.size())
    throw DimensionError("line direction", static_cast<std::size_t>(u.size()),
                         static_cast<std::size_t>(v.size()));
  if (v.isZero(0.0)) throw InvalidArgument("line direction must be nonzero");
  return oracle.query(u + t * v);
}

Vector first_diff(OracleHandle& oracle, const Vector& u, const Vector& v, double t, double step) {
  if (!(step > 0.0)) throw InvalidArgument("finite-difference step must be positive");
  const Vector a = line_eval(oracle, u, v, t);
  const Vector b = line_eval(oracle, u, v, t + step);
  return (b - a) / step;
}

ProbeSite ProbeSite::at(OracleHandle& oracle, const Vector& x) { return ProbeSite{x, oracle.query(x)}; }

SecondDiff second_diff(OracleHandle& oracle, const ProbeSite& site, const Vector& dir, double step) {
  if (!(step > 0.0)) throw InvalidArgument("finite-difference step must be positive");
  if (dir.size() != site.x.size())
    throw DimensionError("probe direction", static_cast<std::size_t>(site.x.size()),
                         static_cast<std::size_t>(dir.size()));
  const Vector plus = oracle.query(site.x + step * dir);
  const Vector minus = oracle.query(site.x - step * dir);
  SecondDiff out;
  out.value = ((plus - site.fx) - (site.fx - minus)) / step;
  // Rounding in each logit is about eps * |value|; four such errors enter
  // the numerator.
  const double mag = std::max({plus.cwiseAbs().maxCoeff(), site.fx.cwiseAbs().maxCoeff(),
                               minus.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min()});
  out.noise_floor = 16.0 * std::numeric_limits<double>::epsilon() * mag / step;
  out.kink_detected = out.value.cwiseAbs().maxCoeff() > out.noise_floor;
  return out;
}

double adaptive_step(double distance) {
  constexpr double kMax = 1e-4;
  constexpr double kMin = 1e-7;
  if (!(distance > 0.0)) return kMin;
  return std::clamp(0.1 * distance, kMin, kMax);
}

}  // namespace relux
