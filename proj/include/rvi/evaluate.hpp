#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rvi/datasets.hpp"
#include "rvi/models.hpp"
#include "rvi/optimize.hpp"
#include "rvi/relay_posterior.hpp"
#include "rvi/tensor.hpp"

namespace rvi {

// ---------------------------------------------------------------------------
// Test loss and imputation

struct TestEvaluation {
  double test_metric = 0.0;                 // observed entries
  double imputation_metric = kNotApplicable;  // missing entries, revealed afterwards
  InferenceResult inference;
};

// Runs infer_test and scores the posterior-mean reconstruction.
TestEvaluation evaluate_test(const TrainedModel& model, const MaskedDataset& test, const InferConfig& cfg);

double eval_test_loss(const TrainedModel& model, const MaskedDataset& test, const InferConfig& cfg);
// ArgumentError when the test mask hides nothing.
double eval_imputation(const TrainedModel& model, const MaskedDataset& test, const InferConfig& cfg);

// Fills every missing test entry with its column's observed mean over
// `reference` (0 for columns never observed) and scores the missing entries.
double mean_imputation_baseline(const MaskedDataset& reference, const MaskedDataset& test);

// ---------------------------------------------------------------------------
// Supervised probe

struct ProbeConfig {
  std::size_t hidden = 64;
  std::size_t epochs = 250;
  double lr = 1e-3;
  std::size_t batch_size = 256;
  double test_fraction = 0.2;  // used when no explicit test features are given
  std::uint64_t seed = 0;
  bool shuffle_labels = false;  // null control: labels permuted before training
};

struct ProbeEpoch {
  std::size_t epoch = 0;
  double loss = 0.0;      // mean training cross-entropy
  double accuracy = 0.0;  // held-out
};

struct ProbeResult {
  std::string method;
  double missing_rate = 0.0;
  std::uint64_t seed = 0;
  std::vector<ProbeEpoch> epochs;

  double final_accuracy() const { return epochs.empty() ? 0.0 : epochs.back().accuracy; }
};

// Trains an MLP [t, hidden, classes] on frozen features. Features are
// standardised with the training split's per-column statistics.
ProbeResult supervised_probe(const Tensor& train_features, std::span<const int> train_labels,
                             const Tensor& test_features, std::span<const int> test_labels,
                             std::size_t num_classes, const ProbeConfig& cfg);
// Single feature set, split by cfg.test_fraction.
ProbeResult supervised_probe(const Tensor& features, std::span<const int> labels, std::size_t num_classes,
                             const ProbeConfig& cfg);

// ---------------------------------------------------------------------------
// Relay progression

struct ProgressionStage {
  std::string name;                // "g1", "g1+g2", ..., "full"
  Tensor recon;                    // |rows| x d
  std::vector<double> row_metric;  // per-row elastic metric on observed entries
  double median_metric = 0.0;
};

// Stage g decodes the summed relay means of groups 1..g; the last stage adds
// the residual and equals the standard posterior-mean reconstruction.
// data row r pairs with bank row bank_offset + r.
std::vector<ProgressionStage> progression_reconstructions(const PosteriorBank& bank, const Mlp& decoder,
                                                          const MaskedDataset& data,
                                                          std::span<const std::size_t> rows,
                                                          std::size_t bank_offset = 0);

double median(std::vector<double> values);  // NaNs ignored; NaN if none remain

// Binary PGM (P5) grid of 28x28 tiles: one row per datapoint, one column per
// image set. Values are clamped to [0, 1].
void write_pgm_grid(const std::filesystem::path& path, const std::vector<Tensor>& columns);

// ---------------------------------------------------------------------------
// Ablations

struct AblationRun {
  std::string label;
  double budget_fraction = 0.0;
  std::vector<std::size_t> groups;
  std::vector<std::size_t> budgets;
  std::size_t parameter_count = 0;
  double final_metric = kNotApplicable;
  TrainedModel model;
};

inline const std::vector<double> kBudgetFractions{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
inline const std::vector<std::vector<std::size_t>> kGroupings{{25}, {25, 50}, {25, 50, 100}};

// One rvi run per fraction with the base config's seed; records carry budgets.
std::vector<AblationRun> ablate_budget(const MaskedDataset& data, std::span<const double> fractions,
                                       const TrainConfig& base, const RecordSink& sink = {});
std::vector<AblationRun> ablate_groupings(const MaskedDataset& data,
                                          const std::vector<std::vector<std::size_t>>& groupings,
                                          const TrainConfig& base, const RecordSink& sink = {});

}  // namespace rvi
