#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "rvi/models.hpp"
#include "rvi/relay_posterior.hpp"
#include "rvi/tensor.hpp"

namespace rvi {

// Single-sample ELBO estimate for one batch. All terms are per-datapoint
// averages over the batch rows; elbo = recon_loglik - kl.
struct ElboBreakdown {
  Tensor recon_loglik;
  Tensor kl;
  Tensor elbo;
  std::size_t n_observed = 0;
};

// Unit-variance Gaussian log-likelihood of the observed entries, without the
// normalising constant: -1/2 * sum_observed (x - recon)^2, averaged over rows.
// Masked entries contribute exactly zero value and zero gradient.
Tensor masked_recon_loglik(const Tensor& x, const Tensor& mask, const Tensor& recon);

// KL(N(mu, diag sigma^2) || N(0, I)) summed over latent dims, averaged over
// rows (a rank-1 input counts as one row).
Tensor kl_diag_gaussian(const Tensor& mu, const Tensor& sigma);

ElboBreakdown elbo_from_params(const GaussianParams& posterior, const Mlp& decoder,
                               const Tensor& x, const Tensor& mask, const Tensor& noise);
ElboBreakdown elbo(const PosteriorBank& bank, std::span<const std::size_t> rows, const Mlp& decoder,
                   const Tensor& x, const Tensor& mask, const Tensor& noise);
ElboBreakdown elbo(const PosteriorBank& bank, std::span<const std::size_t> rows, const Mlp& decoder,
                   const Tensor& x, const Tensor& mask, std::uint64_t noise_seed);

// Reporting metric: mean over observed entries of |d| + d^2, d = x - recon.
double elastic_metric(const Tensor& x, const Tensor& mask, const Tensor& recon);
// The same metric over the unobserved entries.
double imputation_loss(const Tensor& x, const Tensor& mask, const Tensor& recon);
// Per-row elastic metric over observed entries (NaN for rows with none).
std::vector<double> elastic_metric_rows(const Tensor& x, const Tensor& mask, const Tensor& recon);

// Running |d| + d^2 totals, for metrics accumulated over several batches.
class ElasticAccumulator {
 public:
  // Adds entries whose mask equals `want_observed`.
  void add(const Tensor& x, const Tensor& mask, const Tensor& recon, bool want_observed = true);
  std::size_t count() const { return count_; }
  double value() const;  // UndefinedMetricError when empty

 private:
  double sum_ = 0.0;
  double carry_ = 0.0;
  std::size_t count_ = 0;
};

}  // namespace rvi
