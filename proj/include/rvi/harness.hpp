#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "rvi/datasets.hpp"
#include "rvi/optimize.hpp"
#include "rvi/run_record.hpp"

namespace rvi {

// ---------------------------------------------------------------------------
// Run-record CSV. Doubles use the shortest round-trip form; NaN is empty.

const std::vector<std::string>& run_csv_columns();
std::string format_double(double v);
std::string csv_header();
std::string csv_row(const RunRecord& r);
RunRecord parse_csv_row(const std::string& line);  // ParseError on malformed input

void write_records_csv(const std::filesystem::path& path, const std::vector<RunRecord>& records);
std::vector<RunRecord> read_records_csv(const std::filesystem::path& path);

// Streams records to a file as they arrive.
class RunCsvWriter {
 public:
  explicit RunCsvWriter(const std::filesystem::path& path);
  ~RunCsvWriter();
  RunCsvWriter(const RunCsvWriter&) = delete;
  RunCsvWriter& operator=(const RunCsvWriter&) = delete;

  void append(const RunRecord& r);
  RecordSink sink();

 private:
  struct Impl;
  Impl* impl_;
};

// ---------------------------------------------------------------------------
// Aggregation

struct Stats {
  double mean = kNotApplicable;
  double std = kNotApplicable;  // population
  double median = kNotApplicable;
  std::size_t n = 0;
};

// NaNs are ignored.
Stats describe(const std::vector<double>& values);

inline const std::vector<std::string> kAggregatedMetrics{"recon", "kl", "elbo", "train_metric",
                                                          "test_metric", "imputation_metric"};

struct AggregateRow {
  std::vector<std::string> config;  // values of config_columns()
  std::size_t epoch = 0;            // curves only; final epoch for the summary
  std::size_t runs = 0;
  std::size_t failed = 0;           // summary only
  std::vector<Stats> metrics;       // parallel to kAggregatedMetrics
};

struct Aggregate {
  std::vector<AggregateRow> curves;
  std::vector<AggregateRow> summary;
};

// Columns that identify a configuration (everything except run id, seed,
// epoch, metrics, timing and status).
const std::vector<std::string>& config_columns();

Aggregate aggregate_records(const std::vector<std::vector<RunRecord>>& runs);
// Reads every *.csv under runs_dir.
Aggregate aggregate(const std::filesystem::path& runs_dir);
// Writes curves.csv and summary.csv into out_dir.
void write_aggregate(const Aggregate& agg, const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// Datasets

// $RVI_DATA_DIR, else ./data.
std::filesystem::path data_root();

struct DataOptions {
  std::string dataset = "artificial";  // mnist | fashion-mnist | artificial
  std::filesystem::path data_dir;      // empty: data_root()
  std::size_t train_size = 0;  // 0: 1000 artificial, min(N, 10000) for images
  std::size_t test_size = 0;   // 0: 1000 artificial, the full test fold for images
  std::uint64_t data_seed = 0;
};

struct DataSplit {
  MaskedDataset train;
  MaskedDataset test;
};

// Loads both splits without missingness. IoError when files are absent.
DataSplit load_data(const DataOptions& opts);
// Applies the spec to both splits with independent derived seeds.
DataSplit with_missing(const DataSplit& split, const MissingSpec& spec);

// ---------------------------------------------------------------------------
// Checkpoints: a directory with config.txt, decoder.rvim and bank.rvib or
// encoder.rvim.

using KeyValues = std::map<std::string, std::string>;

// "key = value" lines; '#' starts a comment. ParseError names the file.
KeyValues read_key_values(const std::filesystem::path& path);
void write_key_values(const std::filesystem::path& path, const KeyValues& kv);

KeyValues to_key_values(const TrainConfig& cfg, const DataOptions& data);
void from_key_values(const KeyValues& kv, TrainConfig& cfg, DataOptions& data);

void save_checkpoint(const std::filesystem::path& dir, const TrainedModel& model, const DataOptions& data);

struct Checkpoint {
  TrainedModel model;
  DataOptions data;
};
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Sweeps

struct SweepSpec {
  std::string dataset = "artificial";
  std::filesystem::path data_dir;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  std::vector<Method> methods{Method::kRvi, Method::kVad, Method::kVae};
  std::vector<double> network_lrs{1e-3};
  std::vector<double> posterior_lrs;  // empty: tied to the network rate
  std::vector<std::vector<std::size_t>> archs{{64, 64}};
  std::vector<double> missing_rates{0.0};
  std::size_t repetitions = 1;
  std::filesystem::path out_dir = "sweep";
  std::size_t parallelism = 1;
  std::uint64_t base_seed = 0;
  std::size_t epochs = 250;
  std::size_t batch_size = 256;
  std::size_t latent_dim = 64;
  std::size_t infer_steps = 0;  // test-time inference steps; 0 skips it
  RelayConfig relay;
};

// "paper-6.1", "paper-6.1-scaled", "paper-6.4".
SweepSpec sweep_preset(const std::string& name);
std::vector<std::string> sweep_preset_names();

struct SweepRun {
  std::string id;
  TrainConfig config;
};

// Cartesian product in a fixed order; seed = base_seed + repetition.
std::vector<SweepRun> expand_sweep(const SweepSpec& spec);

struct SweepResult {
  std::size_t runs = 0;
  std::size_t failed = 0;
  std::filesystem::path summary;
  std::filesystem::path curves;
};

// Writes <out>/runs/<id>.csv per run and <out>/summary.csv, <out>/curves.csv.
// A failing run is recorded with its status and the sweep continues.
SweepResult run_sweep(const SweepSpec& spec, std::ostream* log = nullptr);

}  // namespace rvi
