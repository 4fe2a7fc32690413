#include "rvi/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "rvi/error.hpp"
#include "rvi/random.hpp"

namespace rvi {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Scalars

std::string format_double(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

double parse_double(std::string_view s, const std::string& what) {
  if (s.empty()) return kNotApplicable;
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ParseError(what + ": not a number: '" + std::string(s) + "'");
  }
  return v;
}

template <typename Int>
Int parse_int(std::string_view s, const std::string& what) {
  Int v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ParseError(what + ": not an integer: '" + std::string(s) + "'");
  }
  return v;
}

// Keeps free-form strings inside one CSV field.
std::string sanitize(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n' || c == '\r') c = c == ',' ? ';' : ' ';
  }
  return s;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

struct Field {
  const char* name;
  std::function<std::string(const RunRecord&)> get;
  std::function<void(RunRecord&, std::string_view, const std::string&)> set;
};

#define RVI_STR_FIELD(member)                                                         \
  Field {                                                                             \
    #member, [](const RunRecord& r) { return sanitize(r.member); },                   \
        [](RunRecord& r, std::string_view s, const std::string&) { r.member = std::string(s); } \
  }
#define RVI_DBL_FIELD(member)                                                         \
  Field {                                                                             \
    #member, [](const RunRecord& r) { return format_double(r.member); },              \
        [](RunRecord& r, std::string_view s, const std::string& w) { r.member = parse_double(s, w); } \
  }
#define RVI_INT_FIELD(member, type)                                                   \
  Field {                                                                             \
    #member, [](const RunRecord& r) { return std::to_string(r.member); },             \
        [](RunRecord& r, std::string_view s, const std::string& w) { r.member = parse_int<type>(s, w); } \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> f{
      RVI_STR_FIELD(run_id),          RVI_STR_FIELD(method),
      RVI_STR_FIELD(dataset),         RVI_STR_FIELD(phase),
      RVI_STR_FIELD(arch),            RVI_STR_FIELD(missing),
      RVI_STR_FIELD(groups),          RVI_STR_FIELD(budgets),
      RVI_STR_FIELD(relay_mode),      RVI_DBL_FIELD(budget_fraction),
      RVI_DBL_FIELD(network_lr),      RVI_DBL_FIELD(posterior_lr),
      RVI_INT_FIELD(batch_size, std::size_t), RVI_INT_FIELD(latent_dim, std::size_t),
      RVI_INT_FIELD(epoch, std::size_t),      RVI_DBL_FIELD(recon),
      RVI_DBL_FIELD(kl),              RVI_DBL_FIELD(elbo),
      RVI_DBL_FIELD(train_metric),    RVI_DBL_FIELD(test_metric),
      RVI_DBL_FIELD(imputation_metric), RVI_DBL_FIELD(wall_seconds),
      RVI_INT_FIELD(seed, std::uint64_t),     RVI_INT_FIELD(threads, std::size_t),
      RVI_STR_FIELD(status),
  };
  return f;
}

#undef RVI_STR_FIELD
#undef RVI_DBL_FIELD
#undef RVI_INT_FIELD

const Field& field(const std::string& name) {
  for (const auto& f : fields()) {
    if (name == f.name) return f;
  }
  throw ArgumentError("unknown record column " + name);
}

}  // namespace

const std::vector<std::string>& run_csv_columns() {
  static const std::vector<std::string> cols = [] {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.emplace_back(f.name);
    return out;
  }();
  return cols;
}

std::string csv_header() {
  std::string s;
  for (const auto& c : run_csv_columns()) s += (s.empty() ? "" : ",") + c;
  return s;
}

std::string csv_row(const RunRecord& r) {
  std::string s;
  bool first = true;
  for (const auto& f : fields()) {
    if (!first) s += ',';
    s += f.get(r);
    first = false;
  }
  return s;
}

RunRecord parse_csv_row(const std::string& line) {
  const auto parts = split(line, ',');
  const auto& f = fields();
  if (parts.size() != f.size()) {
    throw ParseError("expected " + std::to_string(f.size()) + " fields, found " + std::to_string(parts.size()));
  }
  RunRecord r;
  for (std::size_t i = 0; i < f.size(); ++i) f[i].set(r, parts[i], std::string("column ") + f[i].name);
  return r;
}

void write_records_csv(const fs::path& path, const std::vector<RunRecord>& records) {
  RunCsvWriter w(path);
  for (const auto& r : records) w.append(r);
}

std::vector<RunRecord> read_records_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != csv_header()) {
    throw ParseError(path.string() + ": missing or unexpected header");
  }
  std::vector<RunRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(parse_csv_row(line));
    } catch (const ParseError& e) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

struct RunCsvWriter::Impl {
  std::ofstream out;
  fs::path path;
};

RunCsvWriter::RunCsvWriter(const fs::path& path) : impl_(new Impl) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  impl_->path = path;
  impl_->out.open(path, std::ios::binary | std::ios::trunc);
  if (!impl_->out) {
    delete impl_;
    throw IoError("cannot write " + path.string());
  }
  impl_->out << csv_header() << '\n';
}

RunCsvWriter::~RunCsvWriter() { delete impl_; }

void RunCsvWriter::append(const RunRecord& r) {
  impl_->out << csv_row(r) << '\n';
  impl_->out.flush();
  if (!impl_->out) throw IoError("write failed for " + impl_->path.string());
}

RecordSink RunCsvWriter::sink() {
  return [this](const RunRecord& r) { append(r); };
}

// ---------------------------------------------------------------------------
// Aggregation

Stats describe(const std::vector<double>& values) {
  std::vector<double> v;
  for (double x : values) {
    if (!std::isnan(x)) v.push_back(x);
  }
  Stats s;
  s.n = v.size();
  if (v.empty()) return s;
  double total = 0.0;
  for (double x : v) total += x;
  s.mean = total / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(v.size()));
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  s.median = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  return s;
}

const std::vector<std::string>& config_columns() {
  static const std::vector<std::string> cols{"method",     "dataset",         "phase",      "arch",
                                             "missing",    "groups",          "budgets",    "relay_mode",
                                             "budget_fraction", "network_lr", "posterior_lr", "batch_size",
                                             "latent_dim"};
  return cols;
}

namespace {

std::vector<std::string> config_of(const RunRecord& r) {
  std::vector<std::string> out;
  for (const auto& c : config_columns()) out.push_back(field(c).get(r));
  return out;
}

std::vector<double> metrics_of(const RunRecord& r) {
  return {r.recon, r.kl, r.elbo, r.train_metric, r.test_metric, r.imputation_metric};
}

struct Group {
  std::vector<std::string> config;
  std::map<std::size_t, std::vector<std::vector<double>>> by_epoch;  // epoch -> metric -> values
  std::vector<std::vector<double>> finals;                            // metric -> values
  std::vector<std::size_t> final_epochs;
  std::size_t runs = 0;
  std::size_t failed = 0;
};

std::string join_key(const std::vector<std::string>& parts) {
  std::string k;
  for (const auto& p : parts) k += p + '\x1f';
  return k;
}

}  // namespace

Aggregate aggregate_records(const std::vector<std::vector<RunRecord>>& runs) {
  const std::size_t n_metrics = kAggregatedMetrics.size();
  std::vector<Group> groups;
  std::unordered_map<std::string, std::size_t> index;
  auto group_for = [&](const RunRecord& r) -> Group& {
    auto cfg = config_of(r);
    const auto key = join_key(cfg);
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, groups.size()).first;
      Group g;
      g.config = std::move(cfg);
      g.finals.assign(n_metrics, {});
      groups.push_back(std::move(g));
    }
    return groups[it->second];
  };

  for (const auto& run : runs) {
    if (run.empty()) continue;
    const bool ok = std::all_of(run.begin(), run.end(), [](const RunRecord& r) { return r.status == "ok"; });
    if (!ok) {
      ++group_for(run.front()).failed;
      continue;
    }
    // Records of one run split by phase; each phase contributes one final row.
    std::map<std::string, const RunRecord*> last;
    std::vector<std::string> phases;
    for (const auto& r : run) {
      Group& g = group_for(r);
      auto& slot = g.by_epoch[r.epoch];
      if (slot.empty()) slot.assign(n_metrics, {});
      const auto m = metrics_of(r);
      for (std::size_t k = 0; k < n_metrics; ++k) slot[k].push_back(m[k]);
      auto [it, inserted] = last.emplace(r.phase, &r);
      if (inserted) phases.push_back(r.phase);
      if (r.epoch >= it->second->epoch) it->second = &r;
    }
    for (const auto& phase : phases) {
      const RunRecord& r = *last[phase];
      Group& g = group_for(r);
      ++g.runs;
      g.final_epochs.push_back(r.epoch);
      const auto m = metrics_of(r);
      for (std::size_t k = 0; k < n_metrics; ++k) g.finals[k].push_back(m[k]);
    }
  }

  Aggregate agg;
  for (const auto& g : groups) {
    for (const auto& [epoch, values] : g.by_epoch) {
      AggregateRow row;
      row.config = g.config;
      row.epoch = epoch;
      row.runs = values.front().size();
      for (const auto& v : values) row.metrics.push_back(describe(v));
      agg.curves.push_back(std::move(row));
    }
    AggregateRow row;
    row.config = g.config;
    row.runs = g.runs;
    row.failed = g.failed;
    row.epoch = g.final_epochs.empty() ? 0 : *std::max_element(g.final_epochs.begin(), g.final_epochs.end());
    for (const auto& v : g.finals) row.metrics.push_back(describe(v));
    agg.summary.push_back(std::move(row));
  }
  return agg;
}

Aggregate aggregate(const fs::path& runs_dir) {
  if (!fs::is_directory(runs_dir)) throw IoError("no run directory at " + runs_dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(runs_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
  }
  if (files.empty()) throw ArgumentError("no run files in " + runs_dir.string());
  std::sort(files.begin(), files.end());
  std::vector<std::vector<RunRecord>> runs;
  for (const auto& f : files) runs.push_back(read_records_csv(f));
  return aggregate_records(runs);
}

namespace {

void write_table(const fs::path& path, const std::vector<AggregateRow>& rows, bool summary) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  std::string header;
  for (const auto& c : config_columns()) header += c + ",";
  header += summary ? "final_epoch,runs,failed" : "epoch,runs";
  for (const auto& m : kAggregatedMetrics) header += "," + m + "_mean," + m + "_std," + m + "_median";
  out << header << '\n';
  for (const auto& r : rows) {
    for (const auto& c : r.config) out << c << ',';
    out << r.epoch << ',' << r.runs;
    if (summary) out << ',' << r.failed;
    for (const auto& s : r.metrics) {
      out << ',' << format_double(s.mean) << ',' << format_double(s.std) << ',' << format_double(s.median);
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

void write_aggregate(const Aggregate& agg, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  write_table(out_dir / "curves.csv", agg.curves, false);
  write_table(out_dir / "summary.csv", agg.summary, true);
}

// ---------------------------------------------------------------------------
// Datasets

fs::path data_root() {
  if (const char* env = std::getenv("RVI_DATA_DIR"); env && *env) return env;
  return "data";
}

DataSplit load_data(const DataOptions& opts) {
  DataSplit split;
  if (opts.dataset == "artificial") {
    const auto mixing = artificial_mixing(derive_seed(opts.data_seed, SeedStream::kArtificialWeights));
    const std::size_t n_train = opts.train_size ? opts.train_size : 1000;
    const std::size_t n_test = opts.test_size ? opts.test_size : 1000;
    split.train = gen_artificial(n_train, mixing, derive_seed(opts.data_seed, SeedStream::kArtificialSamples, {0}));
    split.test = gen_artificial(n_test, mixing, derive_seed(opts.data_seed, SeedStream::kArtificialSamples, {1}));
    return split;
  }
  if (opts.dataset != "mnist" && opts.dataset != "fashion-mnist") {
    throw ArgumentError("unknown dataset '" + opts.dataset + "' (expected mnist, fashion-mnist or artificial)");
  }
  const fs::path dir = (opts.data_dir.empty() ? data_root() : opts.data_dir) / opts.dataset;
  const MaskedDataset train = load_mnist_split(dir, true);
  const MaskedDataset test = load_mnist_split(dir, false);
  const std::size_t n_train = opts.train_size ? opts.train_size : std::min(train.size(), kTrainingCap);
  if (n_train > kTrainingCap) {
    throw ArgumentError("training size " + std::to_string(n_train) + " exceeds the cap of " +
                        std::to_string(kTrainingCap));
  }
  split.train = subsample(train, n_train, derive_seed(opts.data_seed, SeedStream::kSubsample, {0}));
  split.test = opts.test_size ? subsample(test, opts.test_size, derive_seed(opts.data_seed, SeedStream::kSubsample, {1}))
                              : test;
  return split;
}

DataSplit with_missing(const DataSplit& split, const MissingSpec& spec) {
  MissingSpec train_spec = spec;
  MissingSpec test_spec = spec;
  train_spec.seed = derive_seed(spec.seed, SeedStream::kMissing, {0});
  test_spec.seed = derive_seed(spec.seed, SeedStream::kMissing, {1});
  return {apply_missing(split.train, train_spec), apply_missing(split.test, test_spec)};
}

// ---------------------------------------------------------------------------
// Key-value files and checkpoints

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string join_list(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<std::size_t> parse_list(const std::string& s) {
  std::vector<std::size_t> out;
  for (auto part : split(s, ',')) {
    const auto t = trim(part);
    if (!t.empty()) out.push_back(parse_int<std::size_t>(t, "list entry"));
  }
  return out;
}

}  // namespace

KeyValues read_key_values(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  KeyValues kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    kv[trim(std::string_view(t).substr(0, eq))] = trim(std::string_view(t).substr(eq + 1));
  }
  return kv;
}

void write_key_values(const fs::path& path, const KeyValues& kv) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

KeyValues to_key_values(const TrainConfig& cfg, const DataOptions& data) {
  KeyValues kv;
  kv["method"] = to_string(cfg.method);
  kv["arch"] = join_list(cfg.arch);
  kv["latent-dim"] = std::to_string(cfg.latent_dim);
  kv["network-lr"] = format_double(cfg.network_lr);
  kv["posterior-lr"] = format_double(cfg.posterior_lr);
  kv["epochs"] = std::to_string(cfg.epochs);
  kv["batch-size"] = std::to_string(cfg.batch_size);
  kv["seed"] = std::to_string(cfg.seed);
  kv["missing"] = cfg.missing.to_string();
  kv["groups"] = join_list(cfg.relay.group_sizes);
  kv["budget-fraction"] = format_double(cfg.relay.budget_fraction);
  kv["relay-mode"] = to_string(cfg.relay.mode);
  kv["dataset"] = data.dataset;
  kv["train-size"] = std::to_string(data.train_size);
  kv["test-size"] = std::to_string(data.test_size);
  kv["data-seed"] = std::to_string(data.data_seed);
  if (!data.data_dir.empty()) kv["data-dir"] = data.data_dir.string();
  if (!cfg.run_id.empty()) kv["run-id"] = cfg.run_id;
  return kv;
}

void from_key_values(const KeyValues& kv, TrainConfig& cfg, DataOptions& data) {
  auto get = [&](const char* key) -> const std::string* {
    const auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  if (auto v = get("method")) cfg.method = parse_method(*v);
  if (auto v = get("arch")) cfg.arch = parse_list(*v);
  if (auto v = get("latent-dim")) cfg.latent_dim = parse_int<std::size_t>(*v, "latent-dim");
  if (auto v = get("network-lr")) cfg.network_lr = parse_double(*v, "network-lr");
  if (auto v = get("posterior-lr")) cfg.posterior_lr = parse_double(*v, "posterior-lr");
  if (auto v = get("epochs")) cfg.epochs = parse_int<std::size_t>(*v, "epochs");
  if (auto v = get("batch-size")) cfg.batch_size = parse_int<std::size_t>(*v, "batch-size");
  if (auto v = get("seed")) cfg.seed = parse_int<std::uint64_t>(*v, "seed");
  if (auto v = get("missing")) cfg.missing = MissingSpec::parse(*v, cfg.seed);
  if (auto v = get("groups")) cfg.relay.group_sizes = parse_list(*v);
  if (auto v = get("budget-fraction")) cfg.relay.budget_fraction = parse_double(*v, "budget-fraction");
  if (auto v = get("relay-mode")) cfg.relay.mode = parse_relay_mode(*v);
  if (auto v = get("dataset")) data.dataset = *v;
  if (auto v = get("train-size")) data.train_size = parse_int<std::size_t>(*v, "train-size");
  if (auto v = get("test-size")) data.test_size = parse_int<std::size_t>(*v, "test-size");
  if (auto v = get("data-seed")) data.data_seed = parse_int<std::uint64_t>(*v, "data-seed");
  if (auto v = get("data-dir")) data.data_dir = *v;
  if (auto v = get("run-id")) cfg.run_id = *v;
  cfg.dataset = data.dataset;
}

void save_checkpoint(const fs::path& dir, const TrainedModel& model, const DataOptions& data) {
  fs::create_directories(dir);
  write_key_values(dir / "config.txt", to_key_values(model.config, data));
  save_decoder(model.decoder, dir / "decoder.rvim");
  if (model.bank) save_bank(*model.bank, dir / "bank.rvib");
  if (model.encoder) save_encoder(*model.encoder, dir / "encoder.rvim");
  write_records_csv(dir / "run.csv", model.records);
}

Checkpoint load_checkpoint(const fs::path& dir) {
  Checkpoint c;
  try {
    from_key_values(read_key_values(dir / "config.txt"), c.model.config, c.data);
  } catch (const ParseError& e) {
    throw ParseError((dir / "config.txt").string() + ": " + e.what());
  }
  c.model.method = c.model.config.method;
  c.model.decoder = load_decoder(dir / "decoder.rvim");
  if (c.model.method == Method::kVae) {
    c.model.encoder = load_encoder(dir / "encoder.rvim");
  } else {
    c.model.bank = load_bank(dir / "bank.rvib");
  }
  if (fs::exists(dir / "run.csv")) c.model.records = read_records_csv(dir / "run.csv");
  return c;
}

// ---------------------------------------------------------------------------
// Sweeps

namespace {

const std::vector<double> kFullMissingRates{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};

}  // namespace

std::vector<std::string> sweep_preset_names() { return {"paper-6.1", "paper-6.1-scaled", "paper-6.4"}; }

SweepSpec sweep_preset(const std::string& name) {
  SweepSpec s;
  if (name == "paper-6.1") {
    s.network_lrs = {0.01, 0.001, 0.0001, 0.00001};
    s.archs = {{64}, {64, 64}, {64, 64, 64}};
    s.missing_rates = kFullMissingRates;
    s.repetitions = 10;
    s.epochs = 250;
    s.out_dir = "sweep-paper-6.1";
  } else if (name == "paper-6.1-scaled") {
    s.network_lrs = {0.001, 0.0001};
    s.archs = {{64}, {64, 64}};
    s.missing_rates = {0.1, 0.5, 0.9};
    s.repetitions = 3;
    s.epochs = 50;
    s.out_dir = "sweep-paper-6.1-scaled";
  } else if (name == "paper-6.4") {
    s.dataset = "mnist";
    s.methods = {Method::kRvi, Method::kVad};
    s.network_lrs = {0.001};
    s.posterior_lrs = {0.01, 0.005, 0.001, 0.0005, 0.0001, 0.00005, 0.00001};
    s.missing_rates = {0.0};
    s.epochs = 50;
    s.infer_steps = 50;
    s.out_dir = "sweep-paper-6.4";
  } else {
    throw ArgumentError("unknown preset '" + name + "'");
  }
  return s;
}

std::vector<SweepRun> expand_sweep(const SweepSpec& spec) {
  if (spec.methods.empty() || spec.network_lrs.empty() || spec.archs.empty() || spec.missing_rates.empty()) {
    throw ConfigError("sweep grids must be non-empty");
  }
  if (spec.repetitions == 0) throw ConfigError("sweep needs at least one repetition");
  std::vector<SweepRun> runs;
  for (const Method m : spec.methods) {
    for (double lr : spec.network_lrs) {
      // vae has no posterior rate, so it is never crossed with the grid.
      std::vector<double> plrs = spec.posterior_lrs.empty() || m == Method::kVae ? std::vector<double>{lr}
                                                                                 : spec.posterior_lrs;
      for (double plr : plrs) {
        for (const auto& arch : spec.archs) {
          for (double rate : spec.missing_rates) {
            for (std::size_t rep = 0; rep < spec.repetitions; ++rep) {
              SweepRun run;
              TrainConfig& c = run.config;
              c.method = m;
              c.arch = arch;
              c.latent_dim = spec.latent_dim;
              c.network_lr = lr;
              c.posterior_lr = plr;
              c.epochs = spec.epochs;
              c.batch_size = spec.batch_size;
              c.seed = spec.base_seed + rep;
              c.missing = rate > 0.0 ? MissingSpec::mcar(rate, c.seed) : MissingSpec::none();
              c.missing.seed = c.seed;
              c.relay = spec.relay;
              c.dataset = spec.dataset;
              run.id = to_string(m) + "_nlr" + format_double(lr) +
                       (m == Method::kVae ? "" : "_plr" + format_double(plr)) + "_a" + arch_string(arch) +
                       "_mcar" + format_double(rate) + "_r" + std::to_string(rep);
              c.run_id = run.id;
              runs.push_back(std::move(run));
            }
          }
        }
      }
    }
  }
  return runs;
}

SweepResult run_sweep(const SweepSpec& spec, std::ostream* log) {
  const auto runs = expand_sweep(spec);
  DataOptions opts;
  opts.dataset = spec.dataset;
  opts.data_dir = spec.data_dir;
  opts.train_size = spec.train_size;
  opts.test_size = spec.test_size;
  opts.data_seed = spec.base_seed;
  const DataSplit base = load_data(opts);

  const fs::path runs_dir = spec.out_dir / "runs";
  fs::create_directories(runs_dir);
  std::vector<std::vector<RunRecord>> results(runs.size());
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> failed{0};
  std::mutex log_mutex;

  auto worker = [&] {
    for (std::size_t i = next++; i < runs.size(); i = next++) {
      const SweepRun& run = runs[i];
      std::vector<RunRecord>& records = results[i];
      RunCsvWriter writer(runs_dir / (run.id + ".csv"));
      auto sink = [&](const RunRecord& r) {
        records.push_back(r);
        writer.append(r);
      };
      try {
        const DataSplit split = with_missing(base, run.config.missing);
        const TrainedModel model = train(split.train, run.config, sink);
        if (spec.infer_steps > 0) {
          InferConfig ic;
          ic.steps = spec.infer_steps;
          ic.lr = run.config.posterior_lr;
          ic.batch_size = run.config.batch_size;
          ic.seed = run.config.seed;
          infer_test(model, split.test, ic, sink);
        }
      } catch (const std::exception& e) {
        ++failed;
        RunRecord r = records.empty() ? record_template(run.config, std::nullopt) : records.front();
        r.status = sanitize(std::string("error: ") + e.what());
        sink(r);
      }
      if (log) {
        std::lock_guard lock(log_mutex);
        *log << "[" << (i + 1) << "/" << runs.size() << "] " << run.id << ' '
             << (records.empty() ? "?" : records.back().status) << '\n';
      }
    }
  };

  const std::size_t n_workers = std::clamp<std::size_t>(spec.parallelism, 1, std::max<std::size_t>(1, runs.size()));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  write_aggregate(aggregate_records(results), spec.out_dir);
  SweepResult out;
  out.runs = runs.size();
  out.failed = failed;
  out.summary = spec.out_dir / "summary.csv";
  out.curves = spec.out_dir / "curves.csv";
  return out;
}

}  // namespace rvi
