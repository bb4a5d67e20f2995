#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

#include "relux/net.hpp"

namespace relux {

using Rng = std::mt19937_64;

Vector gaussian_vector(std::size_t n, Rng& rng, double stddev = 1.0);
Matrix gaussian_matrix(std::size_t rows, std::size_t cols, Rng& rng, double stddev = 1.0);
Vector uniform_in_box(const InputBox& box, Rng& rng);

/// Derives an independent stream for a labelled sub-task from a base seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

/// Random network with N(0, 1/d) first-layer weights and N(0, 1/h) output
/// weights; biases N(0, bias_stddev^2).
TwoLayerNet random_net(std::size_t d, std::size_t h, std::size_t k, std::uint64_t seed,
                       double bias_stddev = 0.1);

}  // namespace relux
