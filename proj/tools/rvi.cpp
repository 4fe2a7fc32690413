// rvi: train, evaluate and sweep relay / mean-field / amortised VI models.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rvi/datasets.hpp"
#include "rvi/error.hpp"
#include "rvi/evaluate.hpp"
#include "rvi/harness.hpp"
#include "rvi/models.hpp"
#include "rvi/optimize.hpp"

namespace fs = std::filesystem;
using namespace rvi;

namespace {

std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, sep)) {
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

std::vector<double> parse_doubles(const std::string& s, const char* what) {
  std::vector<double> out;
  for (const auto& p : split_list(s, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(p, &used));
      if (used != p.size()) throw std::invalid_argument(p);
    } catch (const std::exception&) {
      throw ArgumentError(std::string("malformed ") + what + " list '" + s + "'");
    }
  }
  if (out.empty()) throw ArgumentError(std::string("empty ") + what + " list");
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& s, const char* what) {
  std::vector<std::size_t> out;
  for (double v : parse_doubles(s, what)) {
    if (v < 1 || v != std::floor(v)) throw ArgumentError(std::string("malformed ") + what + " list '" + s + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Option groups shared by several subcommands

struct DataArgs {
  DataOptions opts;
  std::string missing = "none";

  void add(CLI::App* app) {
    app->add_option("--dataset", opts.dataset, "mnist, fashion-mnist or artificial")
        ->check(CLI::IsMember({"mnist", "fashion-mnist", "artificial"}))
        ->capture_default_str();
    app->add_option("--data-dir", opts.data_dir, "Dataset root (default $RVI_DATA_DIR or ./data)");
    app->add_option("--train-size", opts.train_size, "Training rows (0: dataset default)");
    app->add_option("--test-size", opts.test_size, "Test rows (0: dataset default)");
    app->add_option("--data-seed", opts.data_seed, "Seed for subsampling / generating the data");
    app->add_option("--missing", missing, "none, mcar:<rate> or boxes:<count>[:<side>]")->capture_default_str();
  }
};

struct TrainArgs {
  std::string method = "rvi";
  std::string arch = "64,64";
  std::size_t latent_dim = 64;
  double network_lr = 1e-3;
  double posterior_lr = 1e-3;
  std::size_t epochs = 250;
  std::size_t batch_size = 256;
  std::string groups = "25,50,100";
  double budget_fraction = 0.5;
  std::string relay_mode = "topk";
  std::string run_id;
  std::uint64_t seed = 0;

  void add(CLI::App* app, bool with_method = true) {
    if (with_method) {
      app->add_option("--method", method, "rvi, vad or vae")
          ->check(CLI::IsMember({"rvi", "vad", "vae"}))
          ->capture_default_str();
    }
    app->add_option("--arch", arch, "Decoder hidden widths: 64, 64,64 or 64,64,64")->capture_default_str();
    app->add_option("--latent-dim", latent_dim, "Latent width")->capture_default_str();
    app->add_option("--network-lr", network_lr, "Adam rate for network weights")->capture_default_str();
    app->add_option("--posterior-lr", posterior_lr, "Adam rate for posterior parameters")->capture_default_str();
    app->add_option("--epochs", epochs, "Training epochs")->capture_default_str();
    app->add_option("--batch-size", batch_size, "Minibatch size")->capture_default_str();
    app->add_option("--groups", groups, "Relay group sizes")->capture_default_str();
    app->add_option("--budget-fraction", budget_fraction, "Selected vectors per group, as a fraction of K")
        ->capture_default_str();
    app->add_option("--relay-mode", relay_mode, "topk or cluster")
        ->check(CLI::IsMember({"topk", "cluster"}))
        ->capture_default_str();
    app->add_option("--run-id", run_id, "Identifier written to every record");
    app->add_option("--seed", seed, "Run seed")->required();
  }

  TrainConfig config(const DataArgs& data) const {
    TrainConfig c;
    c.method = parse_method(method);
    c.arch = parse_arch(arch);
    c.latent_dim = latent_dim;
    c.network_lr = network_lr;
    c.posterior_lr = posterior_lr;
    c.epochs = epochs;
    c.batch_size = batch_size;
    c.seed = seed;
    c.missing = MissingSpec::parse(data.missing, seed);
    c.relay.group_sizes = parse_sizes(groups, "group");
    c.relay.budget_fraction = budget_fraction;
    c.relay.mode = parse_relay_mode(relay_mode);
    c.dataset = data.opts.dataset;
    c.run_id = run_id.empty() ? method + "_s" + std::to_string(seed) : run_id;
    if (!is_supported_arch(c.arch)) throw ConfigError("unsupported architecture " + arch);
    return c;
  }
};

struct InferArgs {
  fs::path checkpoint;
  std::size_t steps = 250;
  double lr = 1e-3;
  std::size_t batch_size = 256;
  std::string missing;
  std::uint64_t seed = 0;
  fs::path out;

  void add(CLI::App* app) {
    app->add_option("--checkpoint", checkpoint, "Checkpoint directory from `rvi train`")->required();
    app->add_option("--steps", steps, "Inference passes over the test set")->capture_default_str();
    app->add_option("--lr", lr, "Adam rate for the test posteriors")->capture_default_str();
    app->add_option("--batch-size", batch_size, "Minibatch size")->capture_default_str();
    app->add_option("--missing", missing, "Test mask (default: the training spec)");
    app->add_option("--seed", seed, "Inference seed")->required();
    app->add_option("--out", out, "Output CSV");
  }

  InferConfig config() const { return {steps, lr, batch_size, seed}; }
};

// Test split of a checkpoint's dataset with the requested mask.
MaskedDataset checkpoint_test_split(const Checkpoint& ck, const std::string& missing, std::uint64_t seed) {
  const DataSplit split = load_data(ck.data);
  const MissingSpec spec = missing.empty() ? MissingSpec::parse(ck.model.config.missing.to_string(), seed)
                                           : MissingSpec::parse(missing, seed);
  return with_missing(split, spec).test;
}

// Training split exactly as the checkpoint saw it.
MaskedDataset checkpoint_train_split(const Checkpoint& ck) {
  return with_missing(load_data(ck.data), ck.model.config.missing).train;
}

void print_metric(const char* name, double v) {
  std::cout << name << ' ' << (std::isnan(v) ? std::string("n/a") : format_double(v)) << '\n';
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_train(const TrainArgs& args, const DataArgs& data, const fs::path& out, bool quiet) {
  const TrainConfig cfg = args.config(data);
  const DataSplit split = with_missing(load_data(data.opts), cfg.missing);
  const TrainedModel model = train(split.train, cfg, [&](const RunRecord& r) {
    if (!quiet) {
      std::cout << "epoch " << r.epoch << " elbo " << format_double(r.elbo) << " train_metric "
                << format_double(r.train_metric) << '\n';
    }
  });
  save_checkpoint(out, model, data.opts);
  std::cout << "checkpoint " << out.string() << '\n';
  if (!model.records.empty()) print_metric("final_train_metric", model.records.back().train_metric);
  return 0;
}

int cmd_infer(const InferArgs& args) {
  const Checkpoint ck = load_checkpoint(args.checkpoint);
  const MaskedDataset test = checkpoint_test_split(ck, args.missing, args.seed);
  const fs::path out = args.out.empty() ? args.checkpoint / "infer.csv" : args.out;
  RunCsvWriter writer(out);
  const InferenceResult res = infer_test(ck.model, test, args.config(), writer.sink());
  std::cout << "records " << out.string() << '\n';
  print_metric("test_metric", res.records.back().test_metric);
  print_metric("imputation_metric", res.records.back().imputation_metric);
  return 0;
}

int cmd_impute(const InferArgs& args) {
  const Checkpoint ck = load_checkpoint(args.checkpoint);
  const MaskedDataset test = checkpoint_test_split(ck, args.missing, args.seed);
  const MaskedDataset train_split = checkpoint_train_split(ck);
  const TestEvaluation ev = evaluate_test(ck.model, test, args.config());
  if (std::isnan(ev.imputation_metric)) throw ArgumentError("imputation needs a mask with missing entries");
  const double baseline = mean_imputation_baseline(train_split, test);
  const fs::path out = args.out.empty() ? args.checkpoint / "impute.csv" : args.out;
  std::ofstream f(out);
  if (!f) throw IoError("cannot write " + out.string());
  f << "method,missing,steps,seed,test_metric,imputation_metric,mean_imputation_metric\n"
    << to_string(ck.model.method) << ',' << (args.missing.empty() ? ck.model.config.missing.to_string() : args.missing)
    << ',' << args.steps << ',' << args.seed << ',' << format_double(ev.test_metric) << ','
    << format_double(ev.imputation_metric) << ',' << format_double(baseline) << '\n';
  print_metric("test_metric", ev.test_metric);
  print_metric("imputation_metric", ev.imputation_metric);
  print_metric("mean_imputation_metric", baseline);
  return 0;
}

struct ProbeArgs {
  fs::path checkpoint;
  std::uint64_t seed = 0;
  std::size_t repetitions = 1;
  bool control = false;
  ProbeConfig cfg;
  fs::path out;
};

int cmd_probe(const ProbeArgs& args) {
  const Checkpoint ck = load_checkpoint(args.checkpoint);
  const MaskedDataset data = checkpoint_train_split(ck);
  if (!data.has_labels()) throw ArgumentError("the checkpoint's dataset has no labels");
  const Tensor features = posterior_means(ck.model, data);
  const fs::path out = args.out.empty() ? args.checkpoint / "probe.csv" : args.out;
  std::ofstream f(out);
  if (!f) throw IoError("cannot write " + out.string());
  f << "method,missing,repetition,seed,control,epoch,loss,accuracy\n";
  for (std::size_t rep = 0; rep < args.repetitions; ++rep) {
    for (bool shuffled : {false, true}) {
      if (shuffled && !args.control) continue;
      ProbeConfig cfg = args.cfg;
      cfg.seed = args.seed + rep;
      cfg.shuffle_labels = shuffled;
      const ProbeResult res = supervised_probe(features, data.labels, data.num_classes, cfg);
      for (const auto& e : res.epochs) {
        f << to_string(ck.model.method) << ',' << ck.model.config.missing.to_string() << ',' << rep << ','
          << cfg.seed << ',' << (shuffled ? "shuffled" : "none") << ',' << e.epoch << ','
          << format_double(e.loss) << ',' << format_double(e.accuracy) << '\n';
      }
      std::cout << "repetition " << rep << (shuffled ? " shuffled-labels" : "") << " accuracy "
                << format_double(res.final_accuracy()) << '\n';
    }
  }
  std::cout << "records " << out.string() << '\n';
  return 0;
}

struct SweepArgs {
  std::string preset;
  std::string dataset;
  fs::path data_dir;
  std::string methods;
  std::string lrs;
  std::string posterior_lrs;
  std::string archs;
  std::string rates;
  std::size_t repetitions = 0;
  std::size_t epochs = 0;
  std::size_t batch_size = 0;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  std::size_t infer_steps = 0;
  bool infer_steps_set = false;
  fs::path out;
  std::size_t jobs = 1;
  std::uint64_t seed = 0;
};

int cmd_sweep(const SweepArgs& a, const CLI::App* app) {
  SweepSpec s = a.preset.empty() ? SweepSpec{} : sweep_preset(a.preset);
  if (!a.dataset.empty()) s.dataset = a.dataset;
  if (!a.data_dir.empty()) s.data_dir = a.data_dir;
  if (!a.methods.empty()) {
    s.methods.clear();
    for (const auto& m : split_list(a.methods, ',')) s.methods.push_back(parse_method(m));
  }
  if (!a.lrs.empty()) s.network_lrs = parse_doubles(a.lrs, "learning-rate");
  if (!a.posterior_lrs.empty()) s.posterior_lrs = parse_doubles(a.posterior_lrs, "posterior learning-rate");
  if (!a.archs.empty()) {
    s.archs.clear();
    for (const auto& arch : split_list(a.archs, ';')) s.archs.push_back(parse_arch(arch));
  }
  if (!a.rates.empty()) s.missing_rates = parse_doubles(a.rates, "missing-rate");
  if (a.repetitions) s.repetitions = a.repetitions;
  if (a.epochs) s.epochs = a.epochs;
  if (a.batch_size) s.batch_size = a.batch_size;
  if (a.train_size) s.train_size = a.train_size;
  if (a.test_size) s.test_size = a.test_size;
  if (app->count("--infer-steps")) s.infer_steps = a.infer_steps;
  if (!a.out.empty()) s.out_dir = a.out;
  s.parallelism = a.jobs;
  s.base_seed = a.seed;
  for (const auto& arch : s.archs) {
    if (!is_supported_arch(arch)) throw ConfigError("unsupported architecture " + arch_string(arch));
  }
  const auto runs = expand_sweep(s);
  std::cout << "sweep " << runs.size() << " runs -> " << s.out_dir.string() << '\n';
  const SweepResult res = run_sweep(s, &std::cout);
  std::cout << "summary " << res.summary.string() << "\ncurves " << res.curves.string() << '\n'
            << "failed " << res.failed << '\n';
  return res.failed == 0 ? 0 : 1;
}

struct ProgressionArgs {
  fs::path checkpoint;
  std::string split = "test";
  std::size_t rows = 256;
  std::size_t grid_rows = 16;
  std::size_t steps = 250;
  double lr = 1e-3;
  std::string missing;
  std::uint64_t seed = 0;
  fs::path out;
};

int cmd_progression(const ProgressionArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  if (ck.model.method != Method::kRvi) throw ArgumentError("progression needs an rvi checkpoint");
  const fs::path out = a.out.empty() ? a.checkpoint / "progression" : a.out;
  fs::create_directories(out);

  std::vector<ProgressionStage> stages;
  MaskedDataset data;
  if (a.split == "train") {
    data = checkpoint_train_split(ck);
    const std::size_t n = std::min(a.rows, data.size());
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    stages = progression_reconstructions(*ck.model.bank, ck.model.decoder, data, rows);
    data = data.slice(0, n);
  } else {
    const MaskedDataset test = checkpoint_test_split(ck, a.missing, a.seed);
    data = test.slice(0, std::min(a.rows, test.size()));
    InferConfig ic{a.steps, a.lr, 256, a.seed};
    const InferenceResult inf = infer_test(ck.model, data, ic);
    std::vector<std::size_t> rows(data.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    stages = progression_reconstructions(*inf.bank, ck.model.decoder, data, rows, inf.row_offset);
  }

  std::ofstream f(out / "progression.csv");
  if (!f) throw IoError("cannot write " + (out / "progression.csv").string());
  f << "stage,rows,median_metric\n";
  for (const auto& s : stages) {
    f << s.name << ',' << s.row_metric.size() << ',' << format_double(s.median_metric) << '\n';
    std::cout << "stage " << s.name << " median_metric " << format_double(s.median_metric) << '\n';
  }
  if (data.image && a.grid_rows > 0) {
    const std::size_t n = std::min(a.grid_rows, data.size());
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    std::vector<Tensor> cols{gather_rows(data.x, rows)};
    for (const auto& s : stages) cols.push_back(gather_rows(s.recon, rows));
    write_pgm_grid(out / "progression.pgm", cols);
    std::cout << "grid " << (out / "progression.pgm").string() << '\n';
  }
  return 0;
}

int cmd_ablate(const std::string& kind, const std::string& fractions, const TrainArgs& args,
               const DataArgs& data, const fs::path& out_dir) {
  TrainArgs rvi_args = args;
  rvi_args.method = "rvi";
  const TrainConfig base = rvi_args.config(data);
  const DataSplit split = with_missing(load_data(data.opts), base.missing);
  fs::create_directories(out_dir / "runs");

  std::vector<AblationRun> runs;
  const auto write_run = [&](const AblationRun& r) {
    write_records_csv(out_dir / "runs" / (r.label + ".csv"), r.model.records);
  };
  if (kind == "budget") {
    const auto f = parse_doubles(fractions, "fraction");
    runs = ablate_budget(split.train, f, base);
  } else {
    runs = ablate_groupings(split.train, kGroupings, base);
  }
  std::ofstream f(out_dir / "ablation.csv");
  if (!f) throw IoError("cannot write " + (out_dir / "ablation.csv").string());
  f << "label,budget_fraction,groups,budgets,parameter_count,final_train_metric\n";
  for (const auto& r : runs) {
    write_run(r);
    f << r.label << ',' << format_double(r.budget_fraction) << ',' << arch_string(r.groups) << ','
      << arch_string(r.budgets) << ',' << r.parameter_count << ',' << format_double(r.final_metric) << '\n';
    std::cout << r.label << " budgets " << arch_string(r.budgets) << " final_train_metric "
              << format_double(r.final_metric) << '\n';
  }
  if (kind == "groupings" && split.train.image) {
    const std::size_t n = std::min<std::size_t>(16, split.train.size());
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    std::vector<Tensor> cols{gather_rows(split.train.x, rows)};
    for (const auto& r : runs) {
      cols.push_back(reconstruct(r.model.decoder, gather_rows(posterior_means(r.model, split.train), rows)));
    }
    write_pgm_grid(out_dir / "groupings.pgm", cols);
  }
  std::cout << "summary " << (out_dir / "ablation.csv").string() << '\n';
  return 0;
}

int cmd_generate(const fs::path& checkpoint, std::size_t n, std::uint64_t seed, const fs::path& out,
                 const fs::path& pgm) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const Tensor x = generate(ck.model.decoder, n, seed);
  MaskedDataset ds;
  ds.x = x;
  ds.mask = Tensor::full(x.shape(), 1.0);
  write_csv(ds, out);
  std::cout << "samples " << out.string() << '\n';
  if (!pgm.empty()) {
    write_pgm_grid(pgm, {x});
    std::cout << "grid " << pgm.string() << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------
// `--config file` support: every "key = value" line becomes `--key value`
// unless the flag already appears on the command line.

std::vector<std::string> merge_config(const CLI::App& app, std::vector<std::string> args) {
  if (args.empty()) return args;
  const CLI::App* sub = nullptr;
  for (const auto* s : app.get_subcommands([](const CLI::App*) { return true; })) {
    if (s->get_name() == args.front()) sub = s;
  }
  if (!sub) return args;
  fs::path config;
  std::vector<std::string> kept{args.front()};
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config = args[i].substr(9);
    } else {
      kept.push_back(args[i]);
    }
  }
  if (config.empty()) return args;
  for (const auto& [key, value] : read_key_values(config)) {
    const std::string flag = "--" + key;
    if (!sub->get_option_no_throw(flag)) {
      throw ArgumentError(config.string() + ": '" + key + "' is not an option of " + sub->get_name());
    }
    const bool given = std::any_of(kept.begin() + 1, kept.end(), [&](const std::string& a) {
      return a == flag || a.rfind(flag + "=", 0) == 0;
    });
    if (!given) kept.push_back(flag + "=" + value);
  }
  return kept;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Relay variational inference toolkit"};
  app.require_subcommand(1);
  app.fallthrough(false);

  // train
  TrainArgs train_args;
  DataArgs train_data;
  fs::path train_out = "checkpoint";
  bool quiet = false;
  auto* train_cmd = app.add_subcommand("train", "Train rvi, vad or vae and write a checkpoint");
  train_args.add(train_cmd);
  train_data.add(train_cmd);
  train_cmd->add_option("--out", train_out, "Checkpoint directory")->capture_default_str();
  train_cmd->add_flag("--quiet", quiet, "No per-epoch output");

  // infer / impute
  InferArgs infer_args;
  auto* infer_cmd = app.add_subcommand("infer", "Test-time inference from a checkpoint");
  infer_args.add(infer_cmd);
  InferArgs impute_args;
  auto* impute_cmd = app.add_subcommand("impute", "Inference on masked test data, then score the hidden entries");
  impute_args.add(impute_cmd);

  // probe
  ProbeArgs probe_args;
  auto* probe_cmd = app.add_subcommand("probe", "Classifier on frozen posterior means");
  probe_cmd->add_option("--checkpoint", probe_args.checkpoint, "Checkpoint directory")->required();
  probe_cmd->add_option("--seed", probe_args.seed, "Probe seed")->required();
  probe_cmd->add_option("--epochs", probe_args.cfg.epochs, "Probe epochs")->capture_default_str();
  probe_cmd->add_option("--hidden", probe_args.cfg.hidden, "Hidden width")->capture_default_str();
  probe_cmd->add_option("--lr", probe_args.cfg.lr, "Adam rate")->capture_default_str();
  probe_cmd->add_option("--batch-size", probe_args.cfg.batch_size, "Minibatch size")->capture_default_str();
  probe_cmd->add_option("--test-fraction", probe_args.cfg.test_fraction, "Held-out share")->capture_default_str();
  probe_cmd->add_option("--repetitions", probe_args.repetitions, "Seeds seed..seed+n-1")->capture_default_str();
  probe_cmd->add_flag("--control", probe_args.control, "Also train on shuffled labels");
  probe_cmd->add_option("--out", probe_args.out, "Output CSV");

  // sweep
  SweepArgs sweep_args;
  auto* sweep_cmd = app.add_subcommand("sweep", "Run a hyperparameter grid");
  sweep_cmd->add_option("--preset", sweep_args.preset, "paper-6.1, paper-6.1-scaled or paper-6.4")
      ->check(CLI::IsMember(sweep_preset_names()));
  sweep_cmd->add_option("--dataset", sweep_args.dataset, "mnist, fashion-mnist or artificial")
      ->check(CLI::IsMember({"mnist", "fashion-mnist", "artificial"}));
  sweep_cmd->add_option("--data-dir", sweep_args.data_dir, "Dataset root");
  sweep_cmd->add_option("--methods", sweep_args.methods, "Comma-separated methods");
  sweep_cmd->add_option("--lrs", sweep_args.lrs, "Comma-separated network learning rates");
  sweep_cmd->add_option("--posterior-lrs", sweep_args.posterior_lrs, "Comma-separated posterior rates");
  sweep_cmd->add_option("--archs", sweep_args.archs, "Semicolon-separated archs, e.g. '64;64,64'");
  sweep_cmd->add_option("--rates", sweep_args.rates, "Comma-separated MCAR rates");
  sweep_cmd->add_option("--repetitions", sweep_args.repetitions, "Repetitions per configuration");
  sweep_cmd->add_option("--epochs", sweep_args.epochs, "Training epochs");
  sweep_cmd->add_option("--batch-size", sweep_args.batch_size, "Minibatch size");
  sweep_cmd->add_option("--train-size", sweep_args.train_size, "Training rows");
  sweep_cmd->add_option("--test-size", sweep_args.test_size, "Test rows");
  sweep_cmd->add_option("--infer-steps", sweep_args.infer_steps, "Test inference passes (0 skips)");
  sweep_cmd->add_option("--out", sweep_args.out, "Output directory");
  sweep_cmd->add_option("--jobs", sweep_args.jobs, "Concurrent runs")->capture_default_str();
  sweep_cmd->add_option("--seed", sweep_args.seed, "Base seed; repetition r uses seed + r")->required();

  // progression
  ProgressionArgs prog_args;
  auto* prog_cmd = app.add_subcommand("progression", "Per-group cumulative reconstructions of an rvi model");
  prog_cmd->add_option("--checkpoint", prog_args.checkpoint, "rvi checkpoint directory")->required();
  prog_cmd->add_option("--split", prog_args.split, "test or train")
      ->check(CLI::IsMember({"test", "train"}))
      ->capture_default_str();
  prog_cmd->add_option("--rows", prog_args.rows, "Datapoints scored")->capture_default_str();
  prog_cmd->add_option("--grid-rows", prog_args.grid_rows, "Datapoints drawn in the PGM grid")->capture_default_str();
  prog_cmd->add_option("--steps", prog_args.steps, "Test inference passes")->capture_default_str();
  prog_cmd->add_option("--lr", prog_args.lr, "Test inference rate")->capture_default_str();
  prog_cmd->add_option("--missing", prog_args.missing, "Test mask (default: the training spec)");
  prog_cmd->add_option("--seed", prog_args.seed, "Inference seed")->required();
  prog_cmd->add_option("--out", prog_args.out, "Output directory");

  // ablate
  TrainArgs ablate_args;
  DataArgs ablate_data;
  std::string ablate_kind = "budget";
  std::string ablate_fractions = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9";
  fs::path ablate_out = "ablation";
  auto* ablate_cmd = app.add_subcommand("ablate", "Budget-fraction or grouping ablation for rvi");
  ablate_cmd->add_option("--kind", ablate_kind, "budget or groupings")
      ->check(CLI::IsMember({"budget", "groupings"}))
      ->capture_default_str();
  ablate_cmd->add_option("--fractions", ablate_fractions, "Budget fractions")->capture_default_str();
  ablate_cmd->add_option("--out", ablate_out, "Output directory")->capture_default_str();
  ablate_args.add(ablate_cmd, false);
  ablate_data.add(ablate_cmd);

  // generate
  fs::path gen_checkpoint;
  std::size_t gen_n = 16;
  std::uint64_t gen_seed = 0;
  fs::path gen_out = "samples.csv";
  fs::path gen_pgm;
  auto* gen_cmd = app.add_subcommand("generate", "Decode draws from the prior");
  gen_cmd->add_option("--checkpoint", gen_checkpoint, "Checkpoint directory")->required();
  gen_cmd->add_option("--n", gen_n, "Samples")->capture_default_str();
  gen_cmd->add_option("--seed", gen_seed, "Sampling seed")->required();
  gen_cmd->add_option("--out", gen_out, "Output CSV")->capture_default_str();
  gen_cmd->add_option("--pgm", gen_pgm, "Also write a PGM grid (image data only)");

  // Consumed by merge_config before parsing; declared here for --help.
  std::string config_path;
  for (auto* sub : app.get_subcommands([](const CLI::App*) { return true; })) {
    sub->add_option("--config", config_path, "Read 'key = value' options from a file; flags take precedence");
  }

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = merge_config(app, std::move(args));
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const rvi::Error& e) {
    std::cerr << "rvi: error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*train_cmd) return cmd_train(train_args, train_data, train_out, quiet);
    if (*infer_cmd) return cmd_infer(infer_args);
    if (*impute_cmd) return cmd_impute(impute_args);
    if (*probe_cmd) return cmd_probe(probe_args);
    if (*sweep_cmd) return cmd_sweep(sweep_args, sweep_cmd);
    if (*prog_cmd) return cmd_progression(prog_args);
    if (*ablate_cmd) return cmd_ablate(ablate_kind, ablate_fractions, ablate_args, ablate_data, ablate_out);
    if (*gen_cmd) return cmd_generate(gen_checkpoint, gen_n, gen_seed, gen_out, gen_pgm);
  } catch (const ArgumentError& e) {
    std::cerr << "rvi: argument error: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "rvi: configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "rvi: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
