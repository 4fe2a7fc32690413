#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

#include "rvi/tensor.hpp"

namespace rvi {

using Rng = std::mt19937_64;

// Derives an independent seed from a base seed and a path of integers
// (e.g. run seed, epoch, batch, row) with splitmix64 rounds.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path);

// Stream tags, so distinct consumers of one run seed never share a stream.
enum class SeedStream : std::uint64_t {
  kShuffle = 1,
  kNoise = 2,
  kDecoderInit = 3,
  kEncoderInit = 4,
  kBankVectors = 5,
  kBankCoeffs = 6,
  kBankResidual = 7,
  kMissing = 8,
  kSubsample = 9,
  kProbe = 10,
  kGenerate = 11,
  kArtificialWeights = 12,
  kArtificialSamples = 13,
};

inline std::uint64_t derive_seed(std::uint64_t base, SeedStream stream,
                                 std::initializer_list<std::uint64_t> path = {}) {
  std::uint64_t s = derive_seed(base, {static_cast<std::uint64_t>(stream)});
  return path.size() ? derive_seed(s, path) : s;
}

std::vector<double> normal_values(std::size_t n, double mean, double stddev, Rng& rng);
Tensor normal_tensor(Shape shape, double mean, double stddev, std::uint64_t seed,
                     bool requires_grad = false);

// Uniform random permutation of [0, n).
std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed);

}  // namespace rvi
