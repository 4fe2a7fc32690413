#include "rvi/random.hpp"

#include <algorithm>
#include <numeric>

namespace rvi {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = splitmix64(base);
  for (auto p : path) s = splitmix64(s ^ splitmix64(p + 0x632BE59BD9B4E019ull));
  return s;
}

std::vector<double> normal_values(std::size_t n, double mean, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(mean, stddev);
  std::vector<double> out(n);
  for (auto& v : out) v = dist(rng);
  return out;
}

Tensor normal_tensor(Shape shape, double mean, double stddev, std::uint64_t seed,
                     bool requires_grad) {
  Rng rng(seed);
  auto values = normal_values(element_count(shape), mean, stddev, rng);
  return Tensor(std::move(shape), std::move(values), requires_grad);
}

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  // Fisher-Yates with an explicit bounded draw so the order does not depend on
  // the standard library's shuffle implementation.
  for (std::size_t i = n; i > 1; --i) {
    const std::uint64_t bound = i;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    std::uint64_t r;
    do {
      r = rng();
    } while (r >= limit);
    std::swap(idx[i - 1], idx[static_cast<std::size_t>(r % bound)]);
  }
  return idx;
}

}  // namespace rvi
