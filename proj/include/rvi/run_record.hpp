#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>

namespace rvi {

inline constexpr double kNotApplicable = std::numeric_limits<double>::quiet_NaN();

// One row of a run's metric stream: a training epoch or a test-time
// inference step. Metrics that do not apply are NaN (empty in CSV).
struct RunRecord {
  std::string run_id;
  std::string method;
  std::string dataset;
  std::string phase = "train";  // train | infer
  std::string arch;
  std::string missing = "none";
  std::string groups;   // e.g. 25-50-100
  std::string budgets;  // e.g. 13-25-50
  std::string relay_mode;
  double budget_fraction = kNotApplicable;
  double network_lr = kNotApplicable;
  double posterior_lr = kNotApplicable;
  std::size_t batch_size = 0;
  std::size_t latent_dim = 0;
  std::size_t epoch = 0;
  double recon = kNotApplicable;
  double kl = kNotApplicable;
  double elbo = kNotApplicable;
  double train_metric = kNotApplicable;
  double test_metric = kNotApplicable;
  double imputation_metric = kNotApplicable;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string status = "ok";
};

}  // namespace rvi
