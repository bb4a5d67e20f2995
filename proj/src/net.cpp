#include "relux/net.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <limits>
#include <numeric>

#include "relux/errors.hpp"

namespace relux {

namespace {

void require_finite(const Eigen::Ref<const Matrix>& m, const char* name) {
  if (!m.allFinite()) throw InvalidArgument(std::string(name) + " contains non-finite values");
}

void check_input(const TwoLayerNet& net, const Vector& x) {
  if (static_cast<std::size_t>(x.size()) != net.d())
    throw DimensionError("network input", net.d(), static_cast<std::size_t>(x.size()));
}

}  // namespace

InputBox InputBox::uniform(std::size_t d, double lo, double hi) {
  if (!(lo < hi)) throw InvalidArgument("input box requires lo < hi");
  return InputBox{Vector::Constant(static_cast<Eigen::Index>(d), lo),
                  Vector::Constant(static_cast<Eigen::Index>(d), hi)};
}

bool InputBox::contains(const Vector& x, double slack) const {
  if (x.size() != lo.size()) return false;
  for (Eigen::Index j = 0; j < x.size(); ++j)
    if (x[j] < lo[j] - slack || x[j] > hi[j] + slack) return false;
  return true;
}

Vector InputBox::clamp(const Vector& x) const { return x.cwiseMax(lo).cwiseMin(hi); }

TwoLayerNet::TwoLayerNet(Matrix a0, Vector b0, Matrix a1, Vector b1)
    : a0_(std::move(a0)), b0_(std::move(b0)), a1_(std::move(a1)), b1_(std::move(b1)) {
  if (a0_.rows() == 0 || a0_.cols() == 0 || a1_.rows() == 0)
    throw InvalidArgument("network dimensions must be positive");
  if (b0_.size() != a0_.rows())
    throw DimensionError("b0", static_cast<std::size_t>(a0_.rows()),
                         static_cast<std::size_t>(b0_.size()));
  if (a1_.cols() != a0_.rows())
    throw DimensionError("a1 columns", static_cast<std::size_t>(a0_.rows()),
                         static_cast<std::size_t>(a1_.cols()));
  if (b1_.size() != a1_.rows())
    throw DimensionError("b1", static_cast<std::size_t>(a1_.rows()),
                         static_cast<std::size_t>(b1_.size()));
  require_finite(a0_, "a0");
  require_finite(b0_, "b0");
  require_finite(a1_, "a1");
  require_finite(b1_, "b1");
}

TwoLayerNet TwoLayerNet::zeros(std::size_t d, std::size_t h, std::size_t k) {
  const auto D = static_cast<Eigen::Index>(d);
  const auto H = static_cast<Eigen::Index>(h);
  const auto K = static_cast<Eigen::Index>(k);
  return TwoLayerNet(Matrix::Zero(H, D), Vector::Zero(H), Matrix::Zero(K, H), Vector::Zero(K));
}

HiddenState TwoLayerNet::forward_hidden(const Vector& x) const {
  check_input(*this, x);
  HiddenState s;
  s.preact = a0_ * x + b0_;
  s.act = s.preact.cwiseMax(0.0);
  return s;
}

Vector TwoLayerNet::forward_logits(const Vector& x) const {
  check_input(*this, x);
  Vector act = (a0_ * x + b0_).cwiseMax(0.0);
  return a1_ * act + b1_;
}

Vector TwoLayerNet::forward_probs(const Vector& x, double temperature) const {
  return softmax(forward_logits(x), temperature);
}

bool TwoLayerNet::identical(const TwoLayerNet& o) const {
  auto same = [](const auto& p, const auto& q) {
    if (p.rows() != q.rows() || p.cols() != q.cols()) return false;
    return std::equal(p.data(), p.data() + p.size(), q.data(), [](double u, double v) {
      return std::bit_cast<std::uint64_t>(u) == std::bit_cast<std::uint64_t>(v);
    });
  };
  return same(a0_, o.a0_) && same(b0_, o.b0_) && same(a1_, o.a1_) && same(b1_, o.b1_);
}

Vector softmax(const Vector& logits, double temperature) {
  if (!(temperature > 0.0)) throw InvalidArgument("temperature must be positive");
  if (logits.size() == 0) return logits;
  const Vector z = logits / temperature;
  const Vector e = (z.array() - z.maxCoeff()).exp().matrix();
  return e / e.sum();
}

std::size_t argmax(const Vector& v) {
  std::size_t best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v[i] > v[static_cast<Eigen::Index>(best)]) best = static_cast<std::size_t>(i);
  return best;
}

Jacobian input_jacobian(const TwoLayerNet& net, const Vector& x) {
  const HiddenState s = net.forward_hidden(x);
  Jacobian j;
  Vector gate(s.preact.size());
  for (Eigen::Index i = 0; i < s.preact.size(); ++i) {
    if (std::abs(s.preact[i]) < kKinkTolerance) j.on_kink = true;
    gate[i] = s.preact[i] > 0.0 ? 1.0 : 0.0;
  }
  j.value = net.a1() * gate.asDiagonal() * net.a0();
  return j;
}

TwoLayerNet scale_neuron(const TwoLayerNet& net, std::size_t neuron, double c) {
  if (!(c > 0.0) || !std::isfinite(c)) throw InvalidArgument("scale factor must be finite and > 0");
  if (neuron >= net.h()) throw InvalidArgument("neuron index out of range");
  if (c == 1.0) return net;
  const auto i = static_cast<Eigen::Index>(neuron);
  Matrix a0 = net.a0();
  Vector b0 = net.b0();
  Matrix a1 = net.a1();
  a0.row(i) *= c;
  b0[i] *= c;
  a1.col(i) /= c;
  return TwoLayerNet(std::move(a0), std::move(b0), std::move(a1), net.b1());
}

TwoLayerNet permute_neurons(const TwoLayerNet& net, std::span<const std::size_t> perm) {
  if (perm.size() != net.h()) throw DimensionError("permutation", net.h(), perm.size());
  std::vector<bool> seen(perm.size(), false);
  for (auto p : perm) {
    if (p >= perm.size() || seen[p]) throw InvalidArgument("not a permutation");
    seen[p] = true;
  }
  Matrix a0(net.a0().rows(), net.a0().cols());
  Vector b0(net.b0().size());
  Matrix a1(net.a1().rows(), net.a1().cols());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    const auto dst = static_cast<Eigen::Index>(i);
    const auto src = static_cast<Eigen::Index>(perm[i]);
    a0.row(dst) = net.a0().row(src);
    b0[dst] = net.b0()[src];
    a1.col(dst) = net.a1().col(src);
  }
  return TwoLayerNet(std::move(a0), std::move(b0), std::move(a1), net.b1());
}

std::vector<std::size_t> inverse_permutation(std::span<const std::size_t> perm) {
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    if (perm[i] >= perm.size()) throw InvalidArgument("not a permutation");
    inv[perm[i]] = i;
  }
  return inv;
}

double max_preactivation_on_box(const Vector& row, double bias, const InputBox& box) {
  if (row.size() != box.lo.size())
    throw DimensionError("dead-neuron row", box.dim(), static_cast<std::size_t>(row.size()));
  double m = bias;
  for (Eigen::Index j = 0; j < row.size(); ++j) m += std::max(row[j] * box.lo[j], row[j] * box.hi[j]);
  return m;
}

TwoLayerNet add_dead_neuron(const TwoLayerNet& net, const Vector& row, double bias,
                            const InputBox& box, const std::optional<Vector>& out_weights) {
  if (static_cast<std::size_t>(row.size()) != net.d())
    throw DimensionError("dead-neuron row", net.d(), static_cast<std::size_t>(row.size()));
  if (box.dim() != net.d()) throw DimensionError("input box", net.d(), box.dim());
  if (!(max_preactivation_on_box(row, bias, box) < 0.0))
    throw InvalidArgument("neuron is not dead on the given input box");
  const Vector out = out_weights.value_or(Vector::Zero(static_cast<Eigen::Index>(net.k())));
  if (static_cast<std::size_t>(out.size()) != net.k())
    throw DimensionError("dead-neuron output weights", net.k(), static_cast<std::size_t>(out.size()));

  const auto h = net.a0().rows();
  Matrix a0(h + 1, net.a0().cols());
  a0.topRows(h) = net.a0();
  a0.row(h) = row.transpose();
  Vector b0(h + 1);
  b0.head(h) = net.b0();
  b0[h] = bias;
  Matrix a1(net.a1().rows(), h + 1);
  a1.leftCols(h) = net.a1();
  a1.col(h) = out;
  return TwoLayerNet(std::move(a0), std::move(b0), std::move(a1), net.b1());
}

void validate_victim(const TwoLayerNet& net) {
  if (!(net.h() < net.d()))
    throw InvalidArgument("extraction requires hidden width h < input dimension d");
  Eigen::ColPivHouseholderQR<Matrix> qr(net.a0().transpose());
  if (static_cast<std::size_t>(qr.rank()) != net.h())
    throw InvalidArgument("first-layer rows are linearly dependent");
}

void LabeledDataset::validate() const {
  if (inputs.size() != targets.size())
    throw DimensionError("dataset targets", inputs.size(), targets.size());
  for (const auto& t : targets) {
    if ((t.array() < 0.0).any() || std::abs(t.sum() - 1.0) > 1e-9)
      throw InvalidArgument("dataset target is not a probability vector");
  }
}

std::string to_string(DataSource s) {
  switch (s) {
    case DataSource::synthetic: return "synthetic";
    case DataSource::file: return "file";
    case DataSource::oracle_labeled: return "oracle-labeled";
  }
  return "unknown";
}

}  // namespace relux
