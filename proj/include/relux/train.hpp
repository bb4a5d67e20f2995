#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "relux/eval.hpp"
#include "relux/net.hpp"
#include "relux/oracle.hpp"

namespace relux {

enum class SyntheticTask { gaussian_clusters, random_teacher };

struct SyntheticOptions {
  /// Cluster means are 0.5 + spread * N(0, I / d) per coordinate.
  double spread = 1.0;
  /// Per-coordinate standard deviation of points around their mean.
  double noise = 0.05;
  /// Hidden width of the random teacher.
  std::size_t teacher_h = 16;
};

/// Seeded synthetic classification data with one-hot targets.
/// gaussian_clusters: K means, labels drawn uniformly, points around their mean.
/// random_teacher: inputs uniform on [0,1]^d, labels from a hidden random net.
LabeledDataset gen_synthetic(std::size_t d, std::size_t k, std::size_t n, std::uint64_t seed, SyntheticTask task,
                             const SyntheticOptions& opts = {});

enum class OptimizerKind { sgd, adam };

struct TrainConfig {
  std::size_t d = 0;
  std::size_t h = 0;
  std::size_t k = 0;
  OptimizerKind optimizer = OptimizerKind::sgd;
  double learning_rate = 0.1;
  std::size_t batch = 32;
  std::size_t epochs = 20;
  std::uint64_t init_seed = 0;
  std::uint64_t shuffle_seed = 0;
  /// Logits are divided by this before the softmax in the loss.
  double temperature = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

inline constexpr double kLogFloor = 1e-12;

/// -sum_k y_k log(max(p_k, 1e-12)).
double cross_entropy(const Vector& target, const Vector& probs);

struct TrainResult {
  explicit TrainResult(TwoLayerNet n) : net(std::move(n)) {}

  TwoLayerNet net;
  double final_loss = 0.0;      ///< mean loss over the training set after the last epoch
  double final_accuracy = 0.0;  ///< argmax agreement with the targets' argmax
  std::size_t steps = 0;
};

/// He-style initialization from init_seed: a0 ~ N(0, 2/d), a1 ~ N(0, 1/h), zero biases.
TwoLayerNet initial_net(const TrainConfig& cfg);

/// Minibatch training on mean cross-entropy. Single-threaded with a fixed
/// reduction order, so the result is a pure function of cfg and data.
TrainResult train_victim(const TrainConfig& cfg, const LabeledDataset& data);

/// Mean loss and accuracy of a net on a dataset.
std::pair<double, double> evaluate_dataset(const TwoLayerNet& net, const LabeledDataset& data,
                                           double temperature = 1.0);

/// Teacher probabilities at temperature T (softmax of logits / T), billed to
/// Phase::other.
LabeledDataset distill_labels(OracleHandle& teacher, const std::vector<Vector>& inputs, double temperature);

// IDX files: big-endian magic 0x00000803 (images) or 0x00000801 (labels),
// one 32-bit size per dimension, then unsigned bytes.

/// Images flattened row-major and scaled to [0, 1].
std::vector<Vector> load_idx_images(const std::string& path);
std::vector<std::uint8_t> load_idx_labels(const std::string& path);
/// One-hot dataset; k = 0 means largest label + 1.
LabeledDataset idx_dataset(const std::string& images, const std::string& labels, std::size_t k = 0);
void write_idx_images(const std::string& path, const std::vector<std::vector<std::uint8_t>>& images,
                      std::size_t rows, std::size_t cols);
void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels);

struct AgreementOptions {
  std::size_t uniform_points = 2000;
  std::size_t adversarial_points = 500;
  PgdConfig pgd{};
  /// Uniform points and PGD clipping use this box; unit cube by default.
  std::optional<InputBox> box;
  std::uint64_t seed = 0;
};

struct AgreementRow {
  std::size_t a = 0;  ///< index into the seed grid
  std::size_t b = 0;
  double test = 0.0;
  double adversarial = 0.0;
  double uniform = 0.0;
};

struct AgreementTable {
  std::vector<std::pair<std::uint64_t, std::uint64_t>> seeds;  ///< (init, shuffle) per model
  std::vector<double> test_accuracy;
  std::vector<AgreementRow> rows;  ///< every unordered pair a < b
  double mean_test = 0.0;
  double mean_adversarial = 0.0;
  double mean_uniform = 0.0;
};

/// Trains one model per (init seed, shuffle seed) and reports pairwise label
/// agreement on held-out test points, on PGD adversarial examples crafted
/// against the first model, and on uniform inputs.
AgreementTable agreement_experiment(const TrainConfig& base, const LabeledDataset& train,
                                    const LabeledDataset& test,
                                    const std::vector<std::pair<std::uint64_t, std::uint64_t>>& seed_grid,
                                    const AgreementOptions& opts = {});

}  // namespace relux
