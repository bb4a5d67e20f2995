#include "relux/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "relux/errors.hpp"
#include "relux/random.hpp"

namespace relux {

LabeledDataset gen_synthetic(std::size_t d, std::size_t k, std::size_t n, std::uint64_t seed, SyntheticTask task,
                             const SyntheticOptions& opts) {
  if (d == 0 || k == 0) throw InvalidArgument("synthetic data needs d > 0 and k > 0");
  if (!(opts.noise >= 0.0) || !(opts.spread >= 0.0)) throw InvalidArgument("synthetic spread and noise must be nonnegative");
  Rng rng(seed);
  LabeledDataset data;
  data.source = DataSource::synthetic;
  data.inputs.reserve(n);
  data.targets.reserve(n);
  const auto kk = static_cast<Eigen::Index>(k);
  const InputBox box = InputBox::unit(d);

  if (task == SyntheticTask::gaussian_clusters) {
    const Matrix means = (gaussian_matrix(k, d, rng, opts.spread / std::sqrt(static_cast<double>(d))).array() + 0.5)
                             .matrix();
    std::uniform_int_distribution<std::size_t> pick(0, k - 1);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t label = pick(rng);
      Vector x = means.row(static_cast<Eigen::Index>(label)).transpose() + gaussian_vector(d, rng, opts.noise);
      data.inputs.push_back(box.clamp(x));
      Vector y = Vector::Zero(kk);
      y[static_cast<Eigen::Index>(label)] = 1.0;
      data.targets.push_back(std::move(y));
    }
  } else {
    if (opts.teacher_h == 0) throw InvalidArgument("teacher width must be positive");
    const TwoLayerNet teacher = random_net(d, opts.teacher_h, k, derive_seed(seed, 1));
    for (std::size_t i = 0; i < n; ++i) {
      Vector x = uniform_in_box(box, rng);
      Vector y = Vector::Zero(kk);
      y[static_cast<Eigen::Index>(argmax(teacher.forward_logits(x)))] = 1.0;
      data.inputs.push_back(std::move(x));
      data.targets.push_back(std::move(y));
    }
  }
  return data;
}

void TrainConfig::validate() const {
  if (d == 0 || h == 0 || k == 0) throw InvalidArgument("training dimensions must be positive");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw InvalidArgument("learning rate must be nonnegative");
  if (batch == 0) throw InvalidArgument("batch size must be positive");
  if (!(temperature > 0.0)) throw InvalidArgument("temperature must be positive");
  if (optimizer == OptimizerKind::adam) {
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(adam_eps > 0.0))
      throw InvalidArgument("adam moments must lie in [0, 1) and eps must be positive");
  }
}

double cross_entropy(const Vector& target, const Vector& probs) {
  if (target.size() != probs.size())
    throw DimensionError("probabilities", static_cast<std::size_t>(target.size()), static_cast<std::size_t>(probs.size()));
  double loss = 0.0;
  for (Eigen::Index i = 0; i < target.size(); ++i)
    if (target[i] != 0.0) loss -= target[i] * std::log(std::max(probs[i], kLogFloor));
  return loss;
}

TwoLayerNet initial_net(const TrainConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.init_seed);
  Matrix a0 = gaussian_matrix(cfg.h, cfg.d, rng, std::sqrt(2.0 / static_cast<double>(cfg.d)));
  Matrix a1 = gaussian_matrix(cfg.k, cfg.h, rng, std::sqrt(1.0 / static_cast<double>(cfg.h)));
  return TwoLayerNet(std::move(a0), Vector::Zero(static_cast<Eigen::Index>(cfg.h)), std::move(a1),
                     Vector::Zero(static_cast<Eigen::Index>(cfg.k)));
}

std::pair<double, double> evaluate_dataset(const TwoLayerNet& net, const LabeledDataset& data, double temperature) {
  if (data.empty()) return {0.0, 0.0};
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Vector z = net.forward_logits(data.inputs[i]);
    loss += cross_entropy(data.targets[i], softmax(z, temperature));
    correct += argmax(z) == data.label(i) ? 1 : 0;
  }
  const auto n = static_cast<double>(data.size());
  return {loss / n, static_cast<double>(correct) / n};
}

namespace {

/// The four parameter blocks, used for both gradients and Adam moments.
struct Params {
  Matrix a0;
  Vector b0;
  Matrix a1;
  Vector b1;

  static Params zeros_like(const Params& p) {
    return {Matrix::Zero(p.a0.rows(), p.a0.cols()), Vector::Zero(p.b0.size()), Matrix::Zero(p.a1.rows(), p.a1.cols()),
            Vector::Zero(p.b1.size())};
  }
};

template <class A, class G, class M, class V>
void adam_update(A& param, const G& grad, M& m, V& v, double lr, const TrainConfig& cfg, double c1, double c2) {
  m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
  v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
  param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.adam_eps);
}

}  // namespace

TrainResult train_victim(const TrainConfig& cfg, const LabeledDataset& data) {
  cfg.validate();
  if (data.empty()) throw InvalidArgument("training data is empty");
  data.validate();
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (static_cast<std::size_t>(data.inputs[i].size()) != cfg.d)
      throw DimensionError("training input", cfg.d, static_cast<std::size_t>(data.inputs[i].size()));
    if (static_cast<std::size_t>(data.targets[i].size()) != cfg.k)
      throw DimensionError("training target", cfg.k, static_cast<std::size_t>(data.targets[i].size()));
  }

  const TwoLayerNet init = initial_net(cfg);
  Params p{init.a0(), init.b0(), init.a1(), init.b1()};
  Params g = Params::zeros_like(p);
  Params m = Params::zeros_like(p);
  Params v = Params::zeros_like(p);

  Rng shuffle_rng(cfg.shuffle_seed);
  std::vector<std::size_t> order(data.size());
  std::size_t steps = 0;
  const double inv_t = 1.0 / cfg.temperature;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(shuffle_rng)]);
    }
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      g.a0.setZero();
      g.b0.setZero();
      g.a1.setZero();
      g.b1.setZero();
      double loss = 0.0;
      for (std::size_t s = start; s < end; ++s) {
        const Vector& x = data.inputs[order[s]];
        const Vector& y = data.targets[order[s]];
        const Vector pre = p.a0 * x + p.b0;
        const Vector act = pre.cwiseMax(0.0);
        const Vector z = p.a1 * act + p.b1;
        const Vector prob = softmax(z, cfg.temperature);
        loss += cross_entropy(y, prob);
        const Vector dz = (prob - y) * inv_t;
        g.a1.noalias() += dz * act.transpose();
        g.b1 += dz;
        const Vector dpre = (p.a1.transpose() * dz).cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
        g.a0.noalias() += dpre * x.transpose();
        g.b0 += dpre;
      }
      if (!std::isfinite(loss))
        throw NumericalError("non-finite training loss at step " + std::to_string(steps));
      const double scale = 1.0 / static_cast<double>(end - start);
      ++steps;
      if (cfg.optimizer == OptimizerKind::sgd) {
        const double lr = cfg.learning_rate * scale;
        p.a0 -= lr * g.a0;
        p.b0 -= lr * g.b0;
        p.a1 -= lr * g.a1;
        p.b1 -= lr * g.b1;
      } else {
        g.a0 *= scale;
        g.b0 *= scale;
        g.a1 *= scale;
        g.b1 *= scale;
        const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(steps));
        const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(steps));
        adam_update(p.a0, g.a0, m.a0, v.a0, cfg.learning_rate, cfg, c1, c2);
        adam_update(p.b0, g.b0, m.b0, v.b0, cfg.learning_rate, cfg, c1, c2);
        adam_update(p.a1, g.a1, m.a1, v.a1, cfg.learning_rate, cfg, c1, c2);
        adam_update(p.b1, g.b1, m.b1, v.b1, cfg.learning_rate, cfg, c1, c2);
      }
    }
  }

  TrainResult res(TwoLayerNet(std::move(p.a0), std::move(p.b0), std::move(p.a1), std::move(p.b1)));
  const auto [loss, acc] = evaluate_dataset(res.net, data, cfg.temperature);
  res.final_loss = loss;
  res.final_accuracy = acc;
  res.steps = steps;
  return res;
}

LabeledDataset distill_labels(OracleHandle& teacher, const std::vector<Vector>& inputs, double temperature) {
  if (!(temperature > 0.0)) throw InvalidArgument("distillation temperature must be positive");
  LabeledDataset data;
  data.source = DataSource::oracle_labeled;
  data.inputs = inputs;
  data.targets.reserve(inputs.size());
  PhaseScope phase(teacher, Phase::other);
  for (const auto& x : inputs) data.targets.push_back(softmax(teacher.query(x), temperature));
  return data;
}

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("truncated IDX header in " + path);
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

constexpr std::uint32_t kIdxImages = 0x00000803;
constexpr std::uint32_t kIdxLabels = 0x00000801;

std::ifstream open_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return in;
}

}  // namespace

std::vector<Vector> load_idx_images(const std::string& path) {
  auto in = open_binary(path);
  const std::uint32_t magic = read_be32(in, path);
  if (magic != kIdxImages) throw FormatError(path + ": not an IDX image file (bad magic)");
  const std::uint32_t n = read_be32(in, path);
  const std::uint32_t rows = read_be32(in, path);
  const std::uint32_t cols = read_be32(in, path);
  const std::size_t pixels = std::size_t{rows} * cols;
  if (pixels == 0) throw FormatError(path + ": zero-sized images");
  std::vector<Vector> images;
  images.reserve(n);
  std::vector<unsigned char> buf(pixels);
  for (std::uint32_t i = 0; i < n; ++i) {
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(pixels)))
      throw FormatError(path + ": truncated at image " + std::to_string(i));
    Vector x(static_cast<Eigen::Index>(pixels));
    for (std::size_t j = 0; j < pixels; ++j) x[static_cast<Eigen::Index>(j)] = static_cast<double>(buf[j]) / 255.0;
    images.push_back(std::move(x));
  }
  return images;
}

std::vector<std::uint8_t> load_idx_labels(const std::string& path) {
  auto in = open_binary(path);
  const std::uint32_t magic = read_be32(in, path);
  if (magic != kIdxLabels) throw FormatError(path + ": not an IDX label file (bad magic)");
  const std::uint32_t n = read_be32(in, path);
  std::vector<std::uint8_t> labels(n);
  if (n && !in.read(reinterpret_cast<char*>(labels.data()), static_cast<std::streamsize>(n)))
    throw FormatError(path + ": truncated label data");
  return labels;
}

LabeledDataset idx_dataset(const std::string& images, const std::string& labels, std::size_t k) {
  LabeledDataset data;
  data.source = DataSource::file;
  data.inputs = load_idx_images(images);
  const auto lab = load_idx_labels(labels);
  if (lab.size() != data.inputs.size()) throw DimensionError("IDX label count", data.inputs.size(), lab.size());
  std::size_t classes = k;
  if (classes == 0) for (auto l : lab) classes = std::max<std::size_t>(classes, std::size_t{l} + 1);
  data.targets.reserve(lab.size());
  for (auto l : lab) {
    if (l >= classes) throw FormatError("IDX label " + std::to_string(l) + " exceeds class count");
    Vector y = Vector::Zero(static_cast<Eigen::Index>(classes));
    y[l] = 1.0;
    data.targets.push_back(std::move(y));
  }
  return data;
}

void write_idx_images(const std::string& path, const std::vector<std::vector<std::uint8_t>>& images, std::size_t rows,
                      std::size_t cols) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  write_be32(out, kIdxImages);
  write_be32(out, static_cast<std::uint32_t>(images.size()));
  write_be32(out, static_cast<std::uint32_t>(rows));
  write_be32(out, static_cast<std::uint32_t>(cols));
  for (const auto& img : images) {
    if (img.size() != rows * cols) throw DimensionError("IDX image", rows * cols, img.size());
    out.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
  }
}

void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  write_be32(out, kIdxLabels);
  write_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

AgreementTable agreement_experiment(const TrainConfig& base, const LabeledDataset& train,
                                    const LabeledDataset& test,
                                    const std::vector<std::pair<std::uint64_t, std::uint64_t>>& seed_grid,
                                    const AgreementOptions& opts) {
  AgreementTable table;
  table.seeds = seed_grid;
  if (seed_grid.empty()) return table;
  if (test.empty()) throw InvalidArgument("agreement experiment needs test points");
  const InputBox box = opts.box.value_or(InputBox::unit(base.d));

  std::vector<TwoLayerNet> models;
  models.reserve(seed_grid.size());
  for (const auto& [init, shuffle] : seed_grid) {
    TrainConfig cfg = base;
    cfg.init_seed = init;
    cfg.shuffle_seed = shuffle;
    models.push_back(train_victim(cfg, train).net);
    table.test_accuracy.push_back(evaluate_dataset(models.back(), test).second);
  }

  std::vector<Vector> adversarial;
  for (const auto& x : test.inputs) {
    if (adversarial.size() >= opts.adversarial_points) break;
    if (!box.contains(x, 1e-12)) continue;
    adversarial.push_back(pgd_attack(models.front(), x, argmax(models.front().forward_logits(x)), opts.pgd, box));
  }
  const std::vector<Vector> uniform = sample_box(box, opts.uniform_points, opts.seed);

  auto agree = [](const TwoLayerNet& a, const TwoLayerNet& b, const std::vector<Vector>& pts) {
    return pts.empty() ? 0.0 : fidelity(logits_of(a), logits_of(b), pts);
  };
  for (std::size_t a = 0; a < models.size(); ++a) {
    for (std::size_t b = a + 1; b < models.size(); ++b) {
      AgreementRow row{a, b, agree(models[a], models[b], test.inputs), agree(models[a], models[b], adversarial),
                       agree(models[a], models[b], uniform)};
      table.mean_test += row.test;
      table.mean_adversarial += row.adversarial;
      table.mean_uniform += row.uniform;
      table.rows.push_back(row);
    }
  }
  if (!table.rows.empty()) {
    const auto n = static_cast<double>(table.rows.size());
    table.mean_test /= n;
    table.mean_adversarial /= n;
    table.mean_uniform /= n;
  }
  return table;
}

}  // namespace relux
