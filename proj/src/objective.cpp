#include "rvi/objective.hpp"

#include <cmath>
#include <limits>

#include "rvi/error.hpp"

namespace rvi {

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
  }
}

std::size_t batch_rows(const Tensor& t) { return t.rank() == 2 ? t.rows() : 1; }

}  // namespace

Tensor masked_recon_loglik(const Tensor& x, const Tensor& mask, const Tensor& recon) {
  require_same(x, recon, "masked_recon_loglik");
  require_same(x, mask, "masked_recon_loglik");
  const std::size_t rows = batch_rows(x);
  if (rows == 0) return Tensor::scalar(0.0);
  // x is data, so its unobserved entries are dropped before entering the graph.
  Tensor residual = mul(sub(zero_fill(x, mask), recon), mask);
  return scale(sum(square(residual)), -0.5 / static_cast<double>(rows));
}

Tensor kl_diag_gaussian(const Tensor& mu, const Tensor& sigma) {
  require_same(mu, sigma, "kl_diag_gaussian");
  for (double s : sigma.values()) {
    if (!(s > 0.0)) throw DomainError("kl_diag_gaussian needs sigma > 0, got " + std::to_string(s));
  }
  const std::size_t rows = batch_rows(mu);
  if (rows == 0) return Tensor::scalar(0.0);
  Tensor per_entry = sub(add(square(mu), square(sigma)), add(scale(log(sigma), 2.0), Tensor::scalar(1.0)));
  return scale(sum(per_entry), 0.5 / static_cast<double>(rows));
}

ElboBreakdown elbo_from_params(const GaussianParams& posterior, const Mlp& decoder,
                               const Tensor& x, const Tensor& mask, const Tensor& noise) {
  Tensor z = reparam_sample(posterior.mu, posterior.sigma, noise);
  Tensor recon = decode(decoder, z);
  ElboBreakdown out;
  out.recon_loglik = masked_recon_loglik(x, mask, recon);
  out.kl = kl_diag_gaussian(posterior.mu, posterior.sigma);
  out.elbo = sub(out.recon_loglik, out.kl);
  const auto m = mask.values();
  for (double v : m) out.n_observed += v != 0.0 ? 1 : 0;
  return out;
}

ElboBreakdown elbo(const PosteriorBank& bank, std::span<const std::size_t> rows, const Mlp& decoder,
                   const Tensor& x, const Tensor& mask, const Tensor& noise) {
  if (decoder.input_dim() != bank.latent_dim()) {
    throw DimensionError("decoder input width " + std::to_string(decoder.input_dim()) +
                         " != latent width " + std::to_string(bank.latent_dim()));
  }
  return elbo_from_params(posterior_params(bank, rows), decoder, x, mask, noise);
}

ElboBreakdown elbo(const PosteriorBank& bank, std::span<const std::size_t> rows, const Mlp& decoder,
                   const Tensor& x, const Tensor& mask, std::uint64_t noise_seed) {
  return elbo(bank, rows, decoder, x, mask, row_noise(rows.size(), bank.latent_dim(), noise_seed));
}

// ---------------------------------------------------------------------------

void ElasticAccumulator::add(const Tensor& x, const Tensor& mask, const Tensor& recon,
                             bool want_observed) {
  require_same(x, recon, "elastic metric");
  require_same(x, mask, "elastic metric");
  const auto xv = x.values();
  const auto mv = mask.values();
  const auto rv = recon.values();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if ((mv[i] != 0.0) != want_observed) continue;
    const double d = xv[i] - rv[i];
    // Neumaier compensated summation.
    const double term = std::fabs(d) + d * d;
    const double t = sum_ + term;
    carry_ += std::fabs(sum_) >= std::fabs(term) ? (sum_ - t) + term : (term - t) + sum_;
    sum_ = t;
    ++count_;
  }
}

double ElasticAccumulator::value() const {
  if (count_ == 0) throw UndefinedMetricError("elastic metric over zero entries");
  return (sum_ + carry_) / static_cast<double>(count_);
}

double elastic_metric(const Tensor& x, const Tensor& mask, const Tensor& recon) {
  ElasticAccumulator acc;
  acc.add(x, mask, recon, true);
  if (acc.count() == 0) throw UndefinedMetricError("elastic metric: no observed entries");
  return acc.value();
}

double imputation_loss(const Tensor& x, const Tensor& mask, const Tensor& recon) {
  ElasticAccumulator acc;
  acc.add(x, mask, recon, false);
  if (acc.count() == 0) throw UndefinedMetricError("imputation loss: no missing entries");
  return acc.value();
}

std::vector<double> elastic_metric_rows(const Tensor& x, const Tensor& mask, const Tensor& recon) {
  require_same(x, recon, "elastic metric");
  require_same(x, mask, "elastic metric");
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  std::vector<double> out(n, std::numeric_limits<double>::quiet_NaN());
  const auto xv = x.values();
  const auto mv = mask.values();
  const auto rv = recon.values();
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const std::size_t k = i * d + j;
      if (mv[k] == 0.0) continue;
      const double diff = xv[k] - rv[k];
      total += std::fabs(diff) + diff * diff;
      ++count;
    }
    if (count) out[i] = total / static_cast<double>(count);
  }
  return out;
}

}  // namespace rvi
