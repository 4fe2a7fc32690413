#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rvi/datasets.hpp"
#include "rvi/models.hpp"
#include "rvi/objective.hpp"
#include "rvi/relay_posterior.hpp"
#include "rvi/run_record.hpp"
#include "rvi/tensor.hpp"

namespace rvi {

// ---------------------------------------------------------------------------
// Adam

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam. Parameters registered as per-row (per-datapoint
// tables) are updated lazily: a step only touches the rows named as active,
// and each row keeps its own step count for bias correction. Every other
// parameter is updated densely on each step.
class Adam {
 public:
  explicit Adam(AdamOptions options = {});

  // skip_zero_grad leaves entries whose gradient is exactly zero (and their
  // moments) untouched; used for coefficients outside the current selection.
  void add_param(const Tensor& param, bool per_row = false, bool skip_zero_grad = false);
  void add_params(const std::vector<Tensor>& params, bool per_row = false);

  // Applies one update, then zeroes the gradients it consumed.
  void step(std::span<const std::size_t> active_rows = {});
  void zero_grad();

  const AdamOptions& options() const { return options_; }
  std::int64_t steps() const { return steps_; }
  std::size_t param_count() const { return slots_.size(); }

 private:
  struct Slot {
    Tensor param;
    bool per_row = false;
    bool skip_zero_grad = false;
    std::vector<double> m;
    std::vector<double> v;
    std::vector<std::int64_t> row_steps;
  };

  void update(Slot& slot, std::size_t begin, std::size_t end, std::int64_t t) const;

  AdamOptions options_;
  std::vector<Slot> slots_;
  std::int64_t steps_ = 0;
};

// ---------------------------------------------------------------------------
// Configuration

enum class Method { kRvi, kVad, kVae };

std::string to_string(Method method);
Method parse_method(const std::string& text);

struct RelayConfig {
  std::vector<std::size_t> group_sizes{25, 50, 100};
  double budget_fraction = 0.5;
  RelayMode mode = RelayMode::kTopK;
};

struct TrainConfig {
  Method method = Method::kRvi;
  std::vector<std::size_t> arch{64, 64};
  std::size_t latent_dim = 64;
  double network_lr = 1e-3;
  double posterior_lr = 1e-3;  // ignored by vae
  std::size_t epochs = 250;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
  MissingSpec missing;  // bookkeeping; the dataset passed in is already masked
  RelayConfig relay;
  std::string dataset = "custom";
  std::string run_id;
  // Computes the posterior-mean train metric after every epoch; the final
  // epoch always carries it.
  bool eval_each_epoch = true;
};

struct InferConfig {
  std::size_t steps = 250;  // passes over the test set
  double lr = 1e-3;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Training

using RecordSink = std::function<void(const RunRecord&)>;

struct TrainedModel {
  Method method = Method::kRvi;
  TrainConfig config;
  Mlp decoder;
  std::optional<PosteriorBank> bank;     // rvi, vad
  std::optional<EncoderHead> encoder;    // vae
  std::vector<RunRecord> records;
};

// Base record populated with a config's identifying fields.
RunRecord record_template(const TrainConfig& cfg, const std::optional<PosteriorBank>& bank);

// Encoderless training (rvi, vad) exposed step by step.
class EncoderlessTrainer {
 public:
  EncoderlessTrainer(const MaskedDataset& data, TrainConfig cfg);
  EncoderlessTrainer(const MaskedDataset& data, TrainConfig cfg, PosteriorBank bank, Mlp decoder);

  // One optimisation step on the given datapoints; returns the batch ELBO.
  ElboBreakdown step(std::span<const std::size_t> rows, const Tensor& noise);
  // Full shuffled pass; epoch is 1-based and seeds the shuffle and noise.
  RunRecord run_epoch(std::size_t epoch);
  // Posterior-mean metric over the whole training set.
  double train_metric() const;

  const PosteriorBank& bank() const { return bank_; }
  PosteriorBank& bank() { return bank_; }
  const Mlp& decoder() const { return decoder_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  void setup_optimisers();

  const MaskedDataset& data_;
  TrainConfig cfg_;
  PosteriorBank bank_;
  Mlp decoder_;
  Adam network_opt_;
  Adam posterior_opt_;
  double elapsed_ = 0.0;
};

class VaeTrainer {
 public:
  VaeTrainer(const MaskedDataset& data, TrainConfig cfg);

  ElboBreakdown step(std::span<const std::size_t> rows, const Tensor& noise);
  RunRecord run_epoch(std::size_t epoch);
  double train_metric() const;

  const EncoderHead& encoder() const { return encoder_; }
  const Mlp& decoder() const { return decoder_; }

 private:
  const MaskedDataset& data_;
  TrainConfig cfg_;
  EncoderHead encoder_;
  Mlp decoder_;
  Adam opt_;
  double elapsed_ = 0.0;
};

TrainedModel train_rvi(const MaskedDataset& data, const TrainConfig& cfg, const RecordSink& sink = {});
TrainedModel train_vad(const MaskedDataset& data, const TrainConfig& cfg, const RecordSink& sink = {});
TrainedModel train_vae(const MaskedDataset& data, const TrainConfig& cfg, const RecordSink& sink = {});
// Dispatches on cfg.method.
TrainedModel train(const MaskedDataset& data, const TrainConfig& cfg, const RecordSink& sink = {});

// Posterior means of the training rows (rvi/vad bank, or encoder outputs).
Tensor posterior_means(const TrainedModel& model, const MaskedDataset& data);
// Decoded posterior means, batch by batch.
Tensor reconstruct(const Mlp& decoder, const Tensor& mu, std::size_t batch_size = 1024);

// ---------------------------------------------------------------------------
// Test-time inference

struct InferenceResult {
  Tensor mu;     // n_test x t posterior means
  Tensor sigma;  // n_test x t
  std::optional<PosteriorBank> bank;  // extended bank (rvi, vad)
  std::size_t row_offset = 0;         // first test row inside bank
  std::vector<RunRecord> records;     // step 0 is the initial state
};

// rvi/vad: extends the bank with fresh rows for the test data and ascends the
// ELBO over their coefficients, residual means and log-scales only; decoder
// and relay vectors stay bit-identical (ContractError otherwise).
// vae: a single encoder forward pass.
InferenceResult infer_test(const TrainedModel& model, const MaskedDataset& test, const InferConfig& cfg,
                           const RecordSink& sink = {});

// FNV-1a over the parameter buffers, in order.
std::uint64_t parameter_checksum(const std::vector<Tensor>& params);

// z ~ N(0, I), x = decode(z).
Tensor generate(const Mlp& decoder, std::size_t n, std::uint64_t seed);

}  // namespace rvi
