#include "relux/random.hpp"

#include <cmath>

namespace relux {

Vector gaussian_vector(std::size_t n, Rng& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Vector v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = dist(rng);
  return v;
}

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, Rng& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  // Row-major fill so the draw order matches reading the matrix row by row.
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = dist(rng);
  return m;
}

Vector uniform_in_box(const InputBox& box, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vector x(box.lo.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) x[j] = box.lo[j] + (box.hi[j] - box.lo[j]) * unit(rng);
  return x;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  // splitmix64 finaliser over the combined value
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

TwoLayerNet random_net(std::size_t d, std::size_t h, std::size_t k, std::uint64_t seed, double bias_stddev) {
  Rng rng(seed);
  Matrix a0 = gaussian_matrix(h, d, rng, 1.0 / std::sqrt(static_cast<double>(d)));
  Vector b0 = gaussian_vector(h, rng, bias_stddev);
  Matrix a1 = gaussian_matrix(k, h, rng, 1.0 / std::sqrt(static_cast<double>(h)));
  Vector b1 = gaussian_vector(k, rng, bias_stddev);
  return TwoLayerNet(std::move(a0), std::move(b0), std::move(a1), std::move(b1));
}

}  // namespace relux
