#include "rvi/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "rvi/error.hpp"
#include "rvi/objective.hpp"
#include "rvi/random.hpp"

namespace rvi {

namespace {

bool has_missing(const MaskedDataset& ds) { return ds.observed_count() < ds.x.numel(); }

}  // namespace

TestEvaluation evaluate_test(const TrainedModel& model, const MaskedDataset& test, const InferConfig& cfg) {
  TestEvaluation out;
  out.inference = infer_test(model, test, cfg);
  const Tensor recon = reconstruct(model.decoder, out.inference.mu);
  out.test_metric = elastic_metric(test.x, test.mask, recon);
  if (has_missing(test)) out.imputation_metric = imputation_loss(test.x, test.mask, recon);
  return out;
}

double eval_test_loss(const TrainedModel& model, const MaskedDataset& test, const InferConfig& cfg) {
  return evaluate_test(model, test, cfg).test_metric;
}

double eval_imputation(const TrainedModel& model, const MaskedDataset& test, const InferConfig& cfg) {
  if (!has_missing(test)) throw ArgumentError("imputation needs a test set with missing entries");
  return evaluate_test(model, test, cfg).imputation_metric;
}

double mean_imputation_baseline(const MaskedDataset& reference, const MaskedDataset& test) {
  if (reference.dim() != test.dim()) throw DimensionError("reference and test widths differ");
  if (!has_missing(test)) throw ArgumentError("imputation needs a test set with missing entries");
  const std::size_t d = reference.dim();
  std::vector<double> total(d, 0.0);
  std::vector<std::size_t> count(d, 0);
  const auto rx = reference.x.values();
  const auto rm = reference.mask.values();
  for (std::size_t i = 0; i < rx.size(); ++i) {
    if (rm[i] == 0.0) continue;
    total[i % d] += rx[i];
    ++count[i % d];
  }
  std::vector<double> fill(test.x.numel());
  for (std::size_t i = 0; i < fill.size(); ++i) {
    const std::size_t j = i % d;
    fill[i] = count[j] ? total[j] / static_cast<double>(count[j]) : 0.0;
  }
  return imputation_loss(test.x, test.mask, Tensor(test.x.shape(), std::move(fill)));
}

// ---------------------------------------------------------------------------
// Supervised probe

namespace {

struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;

  explicit Standardizer(const Tensor& f) {
    const std::size_t n = f.rows();
    const std::size_t t = f.cols();
    mean.assign(t, 0.0);
    scale.assign(t, 1.0);
    if (n == 0) return;
    const auto v = f.values();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < t; ++j) mean[j] += v[i * t + j];
    for (auto& m : mean) m /= static_cast<double>(n);
    std::vector<double> var(t, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < t; ++j) var[j] += (v[i * t + j] - mean[j]) * (v[i * t + j] - mean[j]);
    for (std::size_t j = 0; j < t; ++j) {
      const double s = std::sqrt(var[j] / static_cast<double>(n));
      scale[j] = s > 1e-12 ? s : 1.0;
    }
  }

  Tensor apply(const Tensor& f) const {
    std::vector<double> out(f.values().begin(), f.values().end());
    const std::size_t t = mean.size();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (out[i] - mean[i % t]) / scale[i % t];
    return Tensor(f.shape(), std::move(out));
  }
};

double accuracy(const Mlp& net, const Tensor& features, std::span<const int> labels) {
  if (labels.empty()) return 0.0;
  NoGradGuard guard;
  const Tensor logits = net.forward(features);
  const std::size_t c = logits.cols();
  const auto v = logits.values();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = v.subspan(i * c, c);
    const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    hits += best == labels[i] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

void check_labels(const Tensor& features, std::span<const int> labels, std::size_t num_classes,
                  const char* what) {
  if (labels.empty() && features.rows() > 0) throw ArgumentError(std::string("probe needs labels for the ") + what + " set");
  if (labels.size() != features.rows()) {
    throw DimensionError(std::string("probe ") + what + " set: " + std::to_string(features.rows()) +
                         " feature rows but " + std::to_string(labels.size()) + " labels");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
      throw ArgumentError("label " + std::to_string(l) + " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

}  // namespace

ProbeResult supervised_probe(const Tensor& train_features, std::span<const int> train_labels,
                             const Tensor& test_features, std::span<const int> test_labels,
                             std::size_t num_classes, const ProbeConfig& cfg) {
  if (train_labels.empty()) throw ArgumentError("supervised probe needs labels");
  if (num_classes < 2) throw ArgumentError("supervised probe needs at least two classes");
  check_labels(train_features, train_labels, num_classes, "training");
  check_labels(test_features, test_labels, num_classes, "test");
  if (train_features.cols() != test_features.cols()) throw DimensionError("train/test feature widths differ");

  std::vector<int> labels(train_labels.begin(), train_labels.end());
  if (cfg.shuffle_labels) {
    const auto perm = permutation(labels.size(), derive_seed(cfg.seed, SeedStream::kProbe, {0xC0}));
    std::vector<int> shuffled(labels.size());
    for (std::size_t i = 0; i < perm.size(); ++i) shuffled[i] = labels[perm[i]];
    labels = std::move(shuffled);
  }

  const Standardizer standardizer(train_features);
  const Tensor train_x = standardizer.apply(train_features);
  const Tensor test_x = standardizer.apply(test_features);

  Mlp net({train_x.cols(), cfg.hidden, num_classes}, derive_seed(cfg.seed, SeedStream::kProbe));
  Adam opt({.lr = cfg.lr});
  opt.add_params(net.parameters());

  ProbeResult result;
  result.seed = cfg.seed;
  const std::size_t n = train_x.rows();
  const std::size_t batch = std::max<std::size_t>(1, cfg.batch_size);
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    const auto order = permutation(n, derive_seed(cfg.seed, SeedStream::kProbe, {e}));
    double total = 0.0;
    for (std::size_t b = 0; b < n; b += batch) {
      const std::span<const std::size_t> rows(order.data() + b, std::min(batch, n - b));
      std::vector<int> y(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) y[i] = labels[rows[i]];
      Tensor loss = softmax_cross_entropy(net.forward(gather_rows(train_x, rows)), y);
      total += loss.item() * static_cast<double>(rows.size());
      loss.backward();
      opt.step();
    }
    result.epochs.push_back({e, total / static_cast<double>(n), accuracy(net, test_x, test_labels)});
  }
  return result;
}

ProbeResult supervised_probe(const Tensor& features, std::span<const int> labels, std::size_t num_classes,
                             const ProbeConfig& cfg) {
  if (labels.empty()) throw ArgumentError("supervised probe needs labels");
  if (labels.size() != features.rows()) throw DimensionError("feature rows and labels differ in count");
  if (!(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0)) {
    throw ArgumentError("probe test fraction must lie in (0, 1)");
  }
  const std::size_t n = features.rows();
  const auto order = permutation(n, derive_seed(cfg.seed, SeedStream::kProbe, {0x5B}));
  const auto n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.test_fraction * n)));
  if (n_test >= n) throw ArgumentError("probe split leaves no training rows");
  std::vector<std::size_t> train_rows(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> test_rows(order.end() - static_cast<std::ptrdiff_t>(n_test), order.end());
  std::vector<int> train_y;
  std::vector<int> test_y;
  for (auto r : train_rows) train_y.push_back(labels[r]);
  for (auto r : test_rows) test_y.push_back(labels[r]);
  Tensor train_f;
  Tensor test_f;
  {
    NoGradGuard guard;
    train_f = gather_rows(features, train_rows).detach();
    test_f = gather_rows(features, test_rows).detach();
  }
  return supervised_probe(train_f, train_y, test_f, test_y, num_classes, cfg);
}

// ---------------------------------------------------------------------------
// Progression

double median(std::vector<double> values) {
  std::erase_if(values, [](double v) { return std::isnan(v); });
  if (values.empty()) return std::nan("");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<ProgressionStage> progression_reconstructions(const PosteriorBank& bank, const Mlp& decoder,
                                                          const MaskedDataset& data,
                                                          std::span<const std::size_t> rows,
                                                          std::size_t bank_offset) {
  if (bank.groups.empty()) throw ConfigError("progression needs at least one relay group");
  NoGradGuard guard;
  std::vector<std::size_t> bank_rows(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) bank_rows[i] = bank_offset + rows[i];
  const MaskedDataset part = data.select(rows);

  std::vector<ProgressionStage> stages;
  auto add_stage = [&](std::string name, const Tensor& mu) {
    ProgressionStage s;
    s.name = std::move(name);
    s.recon = decode(decoder, mu).detach();
    s.row_metric = elastic_metric_rows(part.x, part.mask, s.recon);
    s.median_metric = median(s.row_metric);
    stages.push_back(std::move(s));
  };

  PosteriorBank partial;
  partial.mu_eps = bank.mu_eps;
  partial.log_sigma = bank.log_sigma;
  std::string name;
  for (std::size_t g = 0; g < bank.groups.size(); ++g) {
    partial.groups.push_back(bank.groups[g]);
    name += (g ? "+g" : "g") + std::to_string(g + 1);
    add_stage(name, relay_mean(partial, bank_rows));
  }
  add_stage("full", posterior_params(bank, bank_rows).mu);
  return stages;
}

void write_pgm_grid(const std::filesystem::path& path, const std::vector<Tensor>& columns) {
  if (columns.empty()) throw ArgumentError("image grid needs at least one column");
  const std::size_t rows = columns.front().rows();
  for (const auto& c : columns) {
    if (c.rank() != 2 || c.cols() != kImageDim || c.rows() != rows) {
      throw DimensionError("image grid columns must all be " + std::to_string(rows) + " x 784, got " +
                           shape_string(c.shape()));
    }
  }
  const std::size_t width = columns.size() * kImageSide;
  const std::size_t height = rows * kImageSide;
  std::vector<unsigned char> pixels(width * height, 0);
  for (std::size_t c = 0; c < columns.size(); ++c) {
    const auto v = columns[c].values();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t p = 0; p < kImageDim; ++p) {
        const double x = std::clamp(v[r * kImageDim + p], 0.0, 1.0);
        const std::size_t py = r * kImageSide + p / kImageSide;
        const std::size_t px = c * kImageSide + p % kImageSide;
        pixels[py * width + px] = static_cast<unsigned char>(std::lround(x * 255.0));
      }
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Ablations

namespace {

std::string fraction_label(double f) {
  std::ostringstream ss;
  ss << "f" << f;
  return ss.str();
}

AblationRun run_ablation(const MaskedDataset& data, TrainConfig cfg, std::string label, const RecordSink& sink) {
  cfg.method = Method::kRvi;
  if (!cfg.run_id.empty()) cfg.run_id += "_" + label;
  AblationRun run;
  run.label = std::move(label);
  run.budget_fraction = cfg.relay.budget_fraction;
  run.groups = cfg.relay.group_sizes;
  run.model = train_rvi(data, cfg, sink);
  run.budgets = run.model.bank->budgets();
  run.parameter_count = run.model.bank->parameter_count() + run.model.decoder.parameter_count();
  if (!run.model.records.empty()) run.final_metric = run.model.records.back().train_metric;
  return run;
}

}  // namespace

std::vector<AblationRun> ablate_budget(const MaskedDataset& data, std::span<const double> fractions,
                                       const TrainConfig& base, const RecordSink& sink) {
  std::vector<AblationRun> runs;
  for (double f : fractions) {
    TrainConfig cfg = base;
    cfg.relay.budget_fraction = f;
    runs.push_back(run_ablation(data, cfg, fraction_label(f), sink));
  }
  return runs;
}

std::vector<AblationRun> ablate_groupings(const MaskedDataset& data,
                                          const std::vector<std::vector<std::size_t>>& groupings,
                                          const TrainConfig& base, const RecordSink& sink) {
  std::vector<AblationRun> runs;
  for (const auto& groups : groupings) {
    if (groups.empty()) throw ConfigError("a grouping needs at least one relay group");
    TrainConfig cfg = base;
    cfg.relay.group_sizes = groups;
    std::string label = "g";
    for (std::size_t i = 0; i < groups.size(); ++i) label += (i ? "-" : "") + std::to_string(groups[i]);
    runs.push_back(run_ablation(data, cfg, label, sink));
  }
  return runs;
}

}  // namespace rvi
