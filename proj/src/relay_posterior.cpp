#include "rvi/relay_posterior.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "binary_io.hpp"
#include "rvi/error.hpp"
#include "rvi/random.hpp"

namespace rvi {

std::string to_string(RelayMode mode) { return mode == RelayMode::kCluster ? "cluster" : "topk"; }

RelayMode parse_relay_mode(const std::string& text) {
  if (text == "topk") return RelayMode::kTopK;
  if (text == "cluster") return RelayMode::kCluster;
  throw ArgumentError("unknown relay mode '" + text + "' (expected topk or cluster)");
}

std::vector<std::size_t> PosteriorBank::budgets() const {
  std::vector<std::size_t> out;
  for (const auto& g : groups) out.push_back(g.budget);
  return out;
}

std::size_t PosteriorBank::parameter_count() const {
  std::size_t n = mu_eps.numel() + log_sigma.numel();
  for (const auto& g : groups) n += g.vectors.numel() + g.coeffs.numel();
  return n;
}

std::size_t budget_for(double fraction, std::size_t k) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ArgumentError("budget fraction must lie in (0, 1], got " + std::to_string(fraction));
  }
  // The epsilon keeps products such as 0.3 * 25 = 7.4999... rounding up.
  const auto rounded = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(k) + 0.5 + 1e-9));
  return std::clamp<std::size_t>(rounded, 1, std::max<std::size_t>(k, 1));
}

std::vector<std::size_t> select_top(std::span<const double> coeffs, std::size_t budget) {
  const std::size_t k = coeffs.size();
  budget = std::min(budget, k);
  std::vector<std::size_t> idx(k);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto before = [&](std::size_t a, std::size_t b) {
    const double fa = std::fabs(coeffs[a]);
    const double fb = std::fabs(coeffs[b]);
    return fa != fb ? fa > fb : a < b;
  };
  if (budget < k) {
    std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(budget), idx.end(), before);
  }
  idx.resize(budget);
  std::sort(idx.begin(), idx.end());
  return idx;
}

Tensor selection_mask(const Tensor& coeff_rows, std::size_t budget) {
  const std::size_t b = coeff_rows.rows();
  const std::size_t k = coeff_rows.cols();
  std::vector<double> mask(b * k, 0.0);
  const auto c = coeff_rows.values();
  if (budget >= k) {
    std::fill(mask.begin(), mask.end(), 1.0);
  } else {
    for (std::size_t r = 0; r < b; ++r) {
      for (auto j : select_top(c.subspan(r * k, k), budget)) mask[r * k + j] = 1.0;
    }
  }
  return Tensor(Shape{b, k}, std::move(mask));
}

Tensor relay_mean(const PosteriorBank& bank, std::span<const std::size_t> rows) {
  if (bank.groups.empty()) throw ConfigError("relay_mean needs at least one relay group");
  Tensor total;
  for (std::size_t g = 0; g < bank.groups.size(); ++g) {
    const auto& group = bank.groups[g];
    Tensor c = gather_rows(group.coeffs, rows);
    Tensor selected = mul(c, selection_mask(c, group.budget));
    Tensor contribution = matmul(selected, group.vectors);
    total = g == 0 ? contribution : add(total, contribution);
  }
  return total;
}

GaussianParams posterior_params(const PosteriorBank& bank, std::span<const std::size_t> rows) {
  Tensor residual = gather_rows(bank.mu_eps, rows);
  Tensor mu = bank.groups.empty() ? residual : add(relay_mean(bank, rows), residual);
  return {mu, exp(gather_rows(bank.log_sigma, rows))};
}

Tensor row_noise(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::vector<double> values;
  values.reserve(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    Rng rng(derive_seed(seed, {r}));
    auto row = normal_values(cols, 0.0, 1.0, rng);
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor(Shape{rows, cols}, std::move(values));
}

Tensor reparam_sample(const Tensor& mu, const Tensor& sigma, const Tensor& noise) {
  if (mu.shape() != sigma.shape() || mu.shape() != noise.shape()) {
    throw DimensionError("reparam_sample shapes differ: mu " + shape_string(mu.shape()) + ", sigma " +
                         shape_string(sigma.shape()) + ", noise " + shape_string(noise.shape()));
  }
  return add(mu, mul(noise, sigma));
}

Tensor reparam_sample(const Tensor& mu, const Tensor& sigma, std::uint64_t noise_seed) {
  if (mu.rank() == 2) return reparam_sample(mu, sigma, row_noise(mu.rows(), mu.cols(), noise_seed));
  return reparam_sample(mu, sigma, normal_tensor(mu.shape(), 0.0, 1.0, noise_seed));
}

namespace {

Tensor init_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  return normal_tensor(Shape{rows, cols}, 0.0, kInitScale, seed, true);
}

}  // namespace

PosteriorBank init_bank(std::size_t n, std::size_t t, std::span<const std::size_t> group_sizes,
                        double budget_fraction, std::uint64_t seed, RelayMode mode) {
  if (!(budget_fraction > 0.0 && budget_fraction <= 1.0)) {
    throw ArgumentError("budget fraction must lie in (0, 1], got " + std::to_string(budget_fraction));
  }
  PosteriorBank bank;
  for (std::size_t g = 0; g < group_sizes.size(); ++g) {
    const std::size_t k = group_sizes[g];
    if (k == 0) throw ArgumentError("relay groups need at least one vector");
    RelayGroup group;
    group.vectors = init_matrix(k, t, derive_seed(seed, SeedStream::kBankVectors, {g}));
    group.coeffs = init_matrix(n, k, derive_seed(seed, SeedStream::kBankCoeffs, {g}));
    group.mode = mode;
    group.budget = mode == RelayMode::kCluster ? 1 : budget_for(budget_fraction, k);
    bank.groups.push_back(std::move(group));
  }
  bank.mu_eps = init_matrix(n, t, derive_seed(seed, SeedStream::kBankResidual));
  bank.log_sigma = Tensor::zeros(Shape{n, t}, true);
  return bank;
}

namespace {

Tensor append_rows(const Tensor& base, const Tensor& extra) {
  std::vector<double> v(base.values().begin(), base.values().end());
  v.insert(v.end(), extra.values().begin(), extra.values().end());
  return Tensor(Shape{base.rows() + extra.rows(), base.cols()}, std::move(v), true);
}

}  // namespace

PosteriorBank extend_bank(const PosteriorBank& bank, std::size_t n_new, std::uint64_t seed) {
  if (n_new == 0) return bank;
  const std::size_t t = bank.latent_dim();
  PosteriorBank out;
  for (std::size_t g = 0; g < bank.groups.size(); ++g) {
    const auto& src = bank.groups[g];
    RelayGroup group = src;
    group.vectors = src.vectors;
    group.vectors.set_frozen(true);
    group.coeffs = append_rows(src.coeffs, init_matrix(n_new, src.size(),
                                                      derive_seed(seed, SeedStream::kBankCoeffs, {g})));
    out.groups.push_back(std::move(group));
  }
  out.mu_eps = append_rows(bank.mu_eps, init_matrix(n_new, t, derive_seed(seed, SeedStream::kBankResidual)));
  out.log_sigma = append_rows(bank.log_sigma, Tensor::zeros(Shape{n_new, t}));
  return out;
}

// ---------------------------------------------------------------------------

namespace {
constexpr const char* kBankMagic = "RVIB1";
}

void save_bank(const PosteriorBank& bank, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  io::write_magic(out, kBankMagic);
  io::write_u32(out, static_cast<std::uint32_t>(bank.size()));
  io::write_u32(out, static_cast<std::uint32_t>(bank.latent_dim()));
  io::write_u32(out, static_cast<std::uint32_t>(bank.groups.size()));
  const RelayMode mode = bank.groups.empty() ? RelayMode::kTopK : bank.groups.front().mode;
  io::write_u8(out, mode == RelayMode::kCluster ? 1 : 0);
  for (const auto& g : bank.groups) {
    io::write_u32(out, static_cast<std::uint32_t>(g.size()));
    io::write_u32(out, static_cast<std::uint32_t>(g.budget));
  }
  for (const auto& g : bank.groups) io::write_f64(out, g.vectors.values());
  for (const auto& g : bank.groups) io::write_f64(out, g.coeffs.values());
  io::write_f64(out, bank.mu_eps.values());
  io::write_f64(out, bank.log_sigma.values());
  if (!out) throw IoError("write failed for " + path.string());
}

PosteriorBank load_bank(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string what = "bank " + path.string();
  io::expect_magic(in, kBankMagic, what);
  const std::size_t n = io::read_u32(in, what);
  const std::size_t t = io::read_u32(in, what);
  const std::size_t groups = io::read_u32(in, what);
  const auto mode_byte = io::read_u8(in, what);
  if (mode_byte > 1) throw FormatError(what + ": unknown relay mode byte");
  const RelayMode mode = mode_byte == 1 ? RelayMode::kCluster : RelayMode::kTopK;

  PosteriorBank bank;
  bank.groups.resize(groups);
  std::vector<std::size_t> sizes(groups);
  for (std::size_t i = 0; i < groups; ++i) {
    sizes[i] = io::read_u32(in, what);
    bank.groups[i].budget = io::read_u32(in, what);
    bank.groups[i].mode = mode;
    if (sizes[i] == 0 || bank.groups[i].budget == 0 || bank.groups[i].budget > sizes[i]) {
      throw FormatError(what + ": invalid group header");
    }
  }
  for (std::size_t i = 0; i < groups; ++i) {
    bank.groups[i].vectors = Tensor(Shape{sizes[i], t}, io::read_f64(in, sizes[i] * t, what), true);
  }
  for (std::size_t i = 0; i < groups; ++i) {
    bank.groups[i].coeffs = Tensor(Shape{n, sizes[i]}, io::read_f64(in, n * sizes[i], what), true);
  }
  bank.mu_eps = Tensor(Shape{n, t}, io::read_f64(in, n * t, what), true);
  bank.log_sigma = Tensor(Shape{n, t}, io::read_f64(in, n * t, what), true);
  return bank;
}

}  // namespace rvi
