#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rvi/tensor.hpp"

namespace rvi {

enum class RelayMode { kTopK, kCluster };

std::string to_string(RelayMode mode);
RelayMode parse_relay_mode(const std::string& text);

// K shared latent vectors plus every datapoint's candidate coefficients for
// them. A datapoint combines only its `budget` largest-|coefficient| vectors.
struct RelayGroup {
  Tensor vectors;  // K x t
  Tensor coeffs;   // N x K
  std::size_t budget = 1;
  RelayMode mode = RelayMode::kTopK;

  std::size_t size() const { return vectors.rows(); }
};

// Per-datapoint diagonal Gaussian posteriors for one dataset split:
//   mu_i    = sum over groups of the relay contribution + mu_eps_i
//   sigma_i = exp(log_sigma_i)
// A bank without groups is the plain mean-field parameterisation.
struct PosteriorBank {
  std::vector<RelayGroup> groups;
  Tensor mu_eps;     // N x t
  Tensor log_sigma;  // N x t

  std::size_t size() const { return mu_eps.rows(); }
  std::size_t latent_dim() const { return mu_eps.cols(); }
  std::vector<std::size_t> budgets() const;
  std::size_t parameter_count() const;
};

// max(1, round-half-up(fraction * k)).
std::size_t budget_for(double fraction, std::size_t k);

// Indices of the `budget` largest |coefficients|; ties go to the lower index.
// Returned in ascending index order.
std::vector<std::size_t> select_top(std::span<const double> coeffs, std::size_t budget);

// 0/1 matrix marking each row's selected columns.
Tensor selection_mask(const Tensor& coeff_rows, std::size_t budget);

// Summed relay contribution for the given datapoints (|rows| x t).
// Differentiable w.r.t. the selected coefficients and the vectors they touch.
Tensor relay_mean(const PosteriorBank& bank, std::span<const std::size_t> rows);

struct GaussianParams {
  Tensor mu;
  Tensor sigma;
};

GaussianParams posterior_params(const PosteriorBank& bank, std::span<const std::size_t> rows);

// Standard normal noise, one independently seeded stream per row:
// row r uses derive_seed(seed, {r}).
Tensor row_noise(std::size_t rows, std::size_t cols, std::uint64_t seed);

// z = mu + noise * sigma. Gradients reach mu and sigma; noise is constant.
Tensor reparam_sample(const Tensor& mu, const Tensor& sigma, const Tensor& noise);
Tensor reparam_sample(const Tensor& mu, const Tensor& sigma, std::uint64_t noise_seed);

inline constexpr double kInitScale = 0.01;

PosteriorBank init_bank(std::size_t n, std::size_t t, std::span<const std::size_t> group_sizes,
                        double budget_fraction, std::uint64_t seed,
                        RelayMode mode = RelayMode::kTopK);

// Appends n_new freshly initialised rows. Group vectors are shared with the
// source bank (same storage) and marked frozen.
PosteriorBank extend_bank(const PosteriorBank& bank, std::size_t n_new, std::uint64_t seed);

// "RVIB1" checkpoint.
void save_bank(const PosteriorBank& bank, const std::filesystem::path& path);
PosteriorBank load_bank(const std::filesystem::path& path);

}  // namespace rvi
