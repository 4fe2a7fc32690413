#include "rvi/optimize.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "rvi/error.hpp"
#include "rvi/random.hpp"

namespace rvi {

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(AdamOptions options) : options_(options) {
  if (!(options_.lr > 0.0)) throw ArgumentError("learning rate must be positive");
}

void Adam::add_param(const Tensor& param, bool per_row, bool skip_zero_grad) {
  if (param.frozen()) throw ContractError("cannot optimise a frozen parameter");
  if (!param.requires_grad()) throw ContractError("parameter does not require grad");
  if (per_row && param.rank() != 2) throw DimensionError("per-row parameters must be matrices");
  Slot slot;
  slot.param = param;
  slot.per_row = per_row;
  slot.skip_zero_grad = skip_zero_grad;
  slot.m.assign(param.numel(), 0.0);
  slot.v.assign(param.numel(), 0.0);
  if (per_row) slot.row_steps.assign(param.rows(), 0);
  slots_.push_back(std::move(slot));
}

void Adam::add_params(const std::vector<Tensor>& params, bool per_row) {
  for (const auto& p : params) add_param(p, per_row);
}

void Adam::update(Slot& slot, std::size_t begin, std::size_t end, std::int64_t t) const {
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  auto p = slot.param.data();
  auto g = slot.param.mutable_grad();
  for (std::size_t i = begin; i < end; ++i) {
    const double gi = g[i];
    g[i] = 0.0;
    if (slot.skip_zero_grad && gi == 0.0) continue;
    slot.m[i] = b1 * slot.m[i] + (1.0 - b1) * gi;
    slot.v[i] = b2 * slot.v[i] + (1.0 - b2) * gi * gi;
    const double m_hat = slot.m[i] / c1;
    const double v_hat = slot.v[i] / c2;
    p[i] -= options_.lr * m_hat / (std::sqrt(v_hat) + options_.eps);
  }
}

void Adam::step(std::span<const std::size_t> active_rows) {
  for (const auto& slot : slots_) {
    if (slot.param.frozen()) throw ContractError("attempted update of a frozen parameter");
    if (!slot.param.has_grad()) throw ContractError("adam step without a populated gradient");
  }
  ++steps_;
  for (auto& slot : slots_) {
    if (!slot.per_row) {
      update(slot, 0, slot.param.numel(), steps_);
      continue;
    }
    const std::size_t cols = slot.param.cols();
    for (std::size_t r : active_rows) {
      if (r >= slot.row_steps.size()) throw IndexError("active row " + std::to_string(r) + " out of range");
      update(slot, r * cols, (r + 1) * cols, ++slot.row_steps[r]);
    }
  }
}

void Adam::zero_grad() {
  for (auto& slot : slots_) slot.param.zero_grad();
}

std::uint64_t parameter_checksum(const std::vector<Tensor>& params) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : params) {
    h ^= value_checksum(p);
    h *= 1099511628211ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Configuration

std::string to_string(Method method) {
  switch (method) {
    case Method::kRvi: return "rvi";
    case Method::kVad: return "vad";
    case Method::kVae: return "vae";
  }
  return "?";
}

Method parse_method(const std::string& text) {
  if (text == "rvi") return Method::kRvi;
  if (text == "vad") return Method::kVad;
  if (text == "vae") return Method::kVae;
  throw ArgumentError("unknown method '" + text + "' (expected rvi, vad or vae)");
}

namespace {

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "-" : "") + std::to_string(v[i]);
  return s;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::vector<std::size_t> iota_rows(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> rows(end - begin);
  std::iota(rows.begin(), rows.end(), begin);
  return rows;
}

// Mean ELBo terms over an epoch, weighted by batch size.
struct TermTotals {
  double recon = 0.0;
  double kl = 0.0;
  double elbo = 0.0;
  std::size_t rows = 0;

  void add(const ElboBreakdown& b, std::size_t n) {
    recon += b.recon_loglik.item() * static_cast<double>(n);
    kl += b.kl.item() * static_cast<double>(n);
    elbo += b.elbo.item() * static_cast<double>(n);
    rows += n;
  }
  void fill(RunRecord& r) const {
    if (rows == 0) return;
    const double n = static_cast<double>(rows);
    r.recon = recon / n;
    r.kl = kl / n;
    r.elbo = elbo / n;
  }
};

constexpr std::size_t kEvalChunk = 1024;

// Posterior-mean metric over a set of bank rows; row i of data pairs with
// bank row offset + i.
void accumulate_bank_metric(const PosteriorBank& bank, const Mlp& decoder, const MaskedDataset& data,
                            std::size_t offset, ElasticAccumulator* observed, ElasticAccumulator* missing) {
  NoGradGuard guard;
  for (std::size_t b = 0; b < data.size(); b += kEvalChunk) {
    const std::size_t e = std::min(data.size(), b + kEvalChunk);
    const auto rows = iota_rows(offset + b, offset + e);
    Tensor recon = decode(decoder, posterior_params(bank, rows).mu);
    const auto part = data.slice(b, e);
    if (observed) observed->add(part.x, part.mask, recon, true);
    if (missing) missing->add(part.x, part.mask, recon, false);
  }
}

void check_dataset(const MaskedDataset& data, const Mlp& decoder) {
  if (data.dim() != decoder.output_dim()) {
    throw DimensionError("dataset width " + std::to_string(data.dim()) + " != decoder output width " +
                         std::to_string(decoder.output_dim()));
  }
}

}  // namespace

RunRecord record_template(const TrainConfig& cfg, const std::optional<PosteriorBank>& bank) {
  RunRecord r;
  r.run_id = cfg.run_id;
  r.method = to_string(cfg.method);
  r.dataset = cfg.dataset;
  r.arch = arch_string(cfg.arch);
  r.missing = cfg.missing.to_string();
  if (cfg.method == Method::kRvi) {
    r.groups = join_sizes(cfg.relay.group_sizes);
    r.relay_mode = to_string(cfg.relay.mode);
    r.budget_fraction = cfg.relay.budget_fraction;
    if (bank) r.budgets = join_sizes(bank->budgets());
  }
  r.network_lr = cfg.network_lr;
  if (cfg.method != Method::kVae) r.posterior_lr = cfg.posterior_lr;
  r.batch_size = cfg.batch_size;
  r.latent_dim = cfg.latent_dim;
  r.seed = cfg.seed;
  r.threads = 1;
  return r;
}

// ---------------------------------------------------------------------------
// Encoderless training

namespace {

PosteriorBank initial_bank(const MaskedDataset& data, const TrainConfig& cfg) {
  const std::vector<std::size_t> none;
  const auto& sizes = cfg.method == Method::kRvi ? cfg.relay.group_sizes : none;
  return init_bank(data.size(), cfg.latent_dim, sizes, cfg.relay.budget_fraction, cfg.seed, cfg.relay.mode);
}

void validate(const TrainConfig& cfg) {
  if (cfg.batch_size == 0) throw ConfigError("batch size must be positive");
  if (cfg.latent_dim == 0) throw ConfigError("latent width must be positive");
}

}  // namespace

EncoderlessTrainer::EncoderlessTrainer(const MaskedDataset& data, TrainConfig cfg)
    : EncoderlessTrainer(data, cfg, initial_bank(data, cfg),
                         build_decoder(cfg.arch, cfg.latent_dim, data.dim(),
                                       derive_seed(cfg.seed, SeedStream::kDecoderInit))) {}

EncoderlessTrainer::EncoderlessTrainer(const MaskedDataset& data, TrainConfig cfg, PosteriorBank bank,
                                       Mlp decoder)
    : data_(data),
      cfg_(std::move(cfg)),
      bank_(std::move(bank)),
      decoder_(std::move(decoder)),
      network_opt_({.lr = cfg_.network_lr}),
      posterior_opt_({.lr = cfg_.posterior_lr}) {
  validate(cfg_);
  if (cfg_.method == Method::kVae) throw ConfigError("encoderless trainer cannot run vae");
  if (bank_.size() != data_.size()) {
    throw DimensionError("bank holds " + std::to_string(bank_.size()) + " rows for " +
                         std::to_string(data_.size()) + " datapoints");
  }
  check_dataset(data_, decoder_);
  setup_optimisers();
}

void EncoderlessTrainer::setup_optimisers() {
  network_opt_.add_params(decoder_.parameters());
  for (const auto& g : bank_.groups) {
    posterior_opt_.add_param(g.vectors);
    posterior_opt_.add_param(g.coeffs, true, /*skip_zero_grad=*/true);
  }
  posterior_opt_.add_param(bank_.mu_eps, true);
  posterior_opt_.add_param(bank_.log_sigma, true);
}

ElboBreakdown EncoderlessTrainer::step(std::span<const std::size_t> rows, const Tensor& noise) {
  const Tensor x = gather_rows(data_.x, rows);
  const Tensor mask = gather_rows(data_.mask, rows);
  ElboBreakdown out = elbo(bank_, rows, decoder_, x, mask, noise);
  neg(out.elbo).backward();
  network_opt_.step();
  posterior_opt_.step(rows);
  return out;
}

RunRecord EncoderlessTrainer::run_epoch(std::size_t epoch) {
  const auto start = std::chrono::steady_clock::now();
  const auto order = permutation(data_.size(), derive_seed(cfg_.seed, SeedStream::kShuffle, {epoch}));
  TermTotals totals;
  std::size_t batch = 0;
  for (std::size_t b = 0; b < order.size(); b += cfg_.batch_size, ++batch) {
    const std::span<const std::size_t> rows(order.data() + b, std::min(cfg_.batch_size, order.size() - b));
    const Tensor noise =
        row_noise(rows.size(), bank_.latent_dim(), derive_seed(cfg_.seed, SeedStream::kNoise, {epoch, batch}));
    totals.add(step(rows, noise), rows.size());
  }
  RunRecord r = record_template(cfg_, bank_);
  r.epoch = epoch;
  totals.fill(r);
  if (cfg_.eval_each_epoch) r.train_metric = train_metric();
  elapsed_ += seconds_since(start);
  r.wall_seconds = elapsed_;
  return r;
}

double EncoderlessTrainer::train_metric() const {
  ElasticAccumulator acc;
  accumulate_bank_metric(bank_, decoder_, data_, 0, &acc, nullptr);
  return acc.value();
}

// ---------------------------------------------------------------------------
// VAE

VaeTrainer::VaeTrainer(const MaskedDataset& data, TrainConfig cfg)
    : data_(data),
      cfg_(std::move(cfg)),
      encoder_(build_encoder(cfg_.arch, cfg_.latent_dim, data.dim(),
                             derive_seed(cfg_.seed, SeedStream::kEncoderInit))),
      decoder_(build_decoder(cfg_.arch, cfg_.latent_dim, data.dim(),
                             derive_seed(cfg_.seed, SeedStream::kDecoderInit))),
      opt_({.lr = cfg_.network_lr}) {
  validate(cfg_);
  opt_.add_params(encoder_.parameters());
  opt_.add_params(decoder_.parameters());
}

ElboBreakdown VaeTrainer::step(std::span<const std::size_t> rows, const Tensor& noise) {
  const Tensor x = gather_rows(data_.x, rows);
  const Tensor mask = gather_rows(data_.mask, rows);
  ElboBreakdown out = elbo_from_params(encode(encoder_, zero_fill(x, mask)), decoder_, x, mask, noise);
  neg(out.elbo).backward();
  opt_.step();
  return out;
}

RunRecord VaeTrainer::run_epoch(std::size_t epoch) {
  const auto start = std::chrono::steady_clock::now();
  const auto order = permutation(data_.size(), derive_seed(cfg_.seed, SeedStream::kShuffle, {epoch}));
  TermTotals totals;
  std::size_t batch = 0;
  for (std::size_t b = 0; b < order.size(); b += cfg_.batch_size, ++batch) {
    const std::span<const std::size_t> rows(order.data() + b, std::min(cfg_.batch_size, order.size() - b));
    const Tensor noise =
        row_noise(rows.size(), cfg_.latent_dim, derive_seed(cfg_.seed, SeedStream::kNoise, {epoch, batch}));
    totals.add(step(rows, noise), rows.size());
  }
  RunRecord r = record_template(cfg_, std::nullopt);
  r.epoch = epoch;
  totals.fill(r);
  if (cfg_.eval_each_epoch) r.train_metric = train_metric();
  elapsed_ += seconds_since(start);
  r.wall_seconds = elapsed_;
  return r;
}

double VaeTrainer::train_metric() const {
  NoGradGuard guard;
  ElasticAccumulator acc;
  for (std::size_t b = 0; b < data_.size(); b += kEvalChunk) {
    const auto part = data_.slice(b, std::min(data_.size(), b + kEvalChunk));
    const auto params = encode(encoder_, zero_fill(part.x, part.mask));
    acc.add(part.x, part.mask, decode(decoder_, params.mu), true);
  }
  return acc.value();
}

// ---------------------------------------------------------------------------

namespace {

template <typename Trainer>
std::vector<RunRecord> run_epochs(Trainer& trainer, std::size_t epochs, const RecordSink& sink) {
  std::vector<RunRecord> records;
  records.reserve(epochs);
  for (std::size_t e = 1; e <= epochs; ++e) {
    records.push_back(trainer.run_epoch(e));
    if (e == epochs && std::isnan(records.back().train_metric)) records.back().train_metric = trainer.train_metric();
    if (sink) sink(records.back());
  }
  return records;
}

TrainedModel train_encoderless(const MaskedDataset& data, TrainConfig cfg, const RecordSink& sink) {
  EncoderlessTrainer trainer(data, cfg);
  TrainedModel model;
  model.method = cfg.method;
  model.records = run_epochs(trainer, cfg.epochs, sink);
  model.decoder = trainer.decoder();
  model.bank = trainer.bank();
  model.config = std::move(cfg);
  return model;
}

}  // namespace

TrainedModel train_rvi(const MaskedDataset& data, const TrainConfig& cfg, const RecordSink& sink) {
  if (cfg.method != Method::kRvi) throw ConfigError("train_rvi needs method rvi");
  return train_encoderless(data, cfg, sink);
}

TrainedModel train_vad(const MaskedDataset& data, const TrainConfig& cfg, const RecordSink& sink) {
  if (cfg.method != Method::kVad) throw ConfigError("train_vad needs method vad");
  return train_encoderless(data, cfg, sink);
}

TrainedModel train_vae(const MaskedDataset& data, const TrainConfig& cfg, const RecordSink& sink) {
  if (cfg.method != Method::kVae) throw ConfigError("train_vae needs method vae");
  VaeTrainer trainer(data, cfg);
  TrainedModel model;
  model.method = cfg.method;
  model.records = run_epochs(trainer, cfg.epochs, sink);
  model.decoder = trainer.decoder();
  model.encoder = trainer.encoder();
  model.config = cfg;
  return model;
}

TrainedModel train(const MaskedDataset& data, const TrainConfig& cfg, const RecordSink& sink) {
  switch (cfg.method) {
    case Method::kRvi: return train_rvi(data, cfg, sink);
    case Method::kVad: return train_vad(data, cfg, sink);
    case Method::kVae: return train_vae(data, cfg, sink);
  }
  throw ConfigError("unknown method");
}

Tensor posterior_means(const TrainedModel& model, const MaskedDataset& data) {
  NoGradGuard guard;
  if (model.encoder) return encode(*model.encoder, zero_fill(data.x, data.mask)).mu.detach();
  if (!model.bank) throw ContractError("model has neither a bank nor an encoder");
  if (model.bank->size() != data.size()) {
    throw DimensionError("bank holds " + std::to_string(model.bank->size()) + " rows, dataset " +
                         std::to_string(data.size()));
  }
  return posterior_params(*model.bank, iota_rows(0, data.size())).mu.detach();
}

Tensor reconstruct(const Mlp& decoder, const Tensor& mu, std::size_t batch_size) {
  NoGradGuard guard;
  const std::size_t n = mu.rows();
  std::vector<double> out;
  out.reserve(n * decoder.output_dim());
  for (std::size_t b = 0; b < n; b += batch_size) {
    const auto rows = iota_rows(b, std::min(n, b + batch_size));
    Tensor r = decode(decoder, gather_rows(mu, rows));
    out.insert(out.end(), r.values().begin(), r.values().end());
  }
  return Tensor(Shape{n, decoder.output_dim()}, std::move(out));
}

// ---------------------------------------------------------------------------
// Test-time inference

namespace {

// Marks tensors frozen for the lifetime of the scope, then restores them.
class FreezeScope {
 public:
  void add(const Tensor& t) {
    saved_.emplace_back(t, t.frozen());
    saved_.back().first.set_frozen(true);
  }
  ~FreezeScope() {
    for (auto& [t, was] : saved_) t.set_frozen(was);
  }

 private:
  std::vector<std::pair<Tensor, bool>> saved_;
};

InferenceResult infer_vae(const TrainedModel& model, const MaskedDataset& test, const InferConfig& cfg,
                          const RecordSink& sink) {
  NoGradGuard guard;
  InferenceResult out;
  const auto params = encode(*model.encoder, zero_fill(test.x, test.mask));
  out.mu = params.mu.detach();
  out.sigma = params.sigma.detach();
  const Tensor recon = decode(model.decoder, out.mu);
  RunRecord r = record_template(model.config, std::nullopt);
  r.phase = "infer";
  r.seed = cfg.seed;
  r.batch_size = test.size();
  r.test_metric = elastic_metric(test.x, test.mask, recon);
  ElasticAccumulator missing;
  missing.add(test.x, test.mask, recon, false);
  if (missing.count()) r.imputation_metric = missing.value();
  out.records.push_back(r);
  if (sink) sink(r);
  return out;
}

}  // namespace

InferenceResult infer_test(const TrainedModel& model, const MaskedDataset& test, const InferConfig& cfg,
                           const RecordSink& sink) {
  check_dataset(test, model.decoder);
  if (model.method == Method::kVae) {
    if (!model.encoder) throw ContractError("vae model without an encoder");
    return infer_vae(model, test, cfg, sink);
  }
  if (!model.bank) throw ContractError("encoderless model without a posterior bank");
  if (cfg.batch_size == 0) throw ConfigError("batch size must be positive");
  const auto start = std::chrono::steady_clock::now();

  std::vector<Tensor> fixed = model.decoder.parameters();
  for (const auto& g : model.bank->groups) fixed.push_back(g.vectors);
  const std::uint64_t before = parameter_checksum(fixed);

  FreezeScope freeze;
  for (const auto& p : fixed) freeze.add(p);

  InferenceResult out;
  out.row_offset = model.bank->size();
  out.bank = extend_bank(*model.bank, test.size(), derive_seed(cfg.seed, SeedStream::kBankResidual));
  PosteriorBank& bank = *out.bank;

  Adam opt({.lr = cfg.lr});
  for (const auto& g : bank.groups) opt.add_param(g.coeffs, true, /*skip_zero_grad=*/true);
  opt.add_param(bank.mu_eps, true);
  opt.add_param(bank.log_sigma, true);

  RunRecord base = record_template(model.config, model.bank);
  base.phase = "infer";
  base.posterior_lr = cfg.lr;
  base.batch_size = cfg.batch_size;
  base.seed = cfg.seed;
  const bool has_missing = test.observed_count() < test.x.numel();

  auto emit = [&](std::size_t step, const TermTotals& totals) {
    RunRecord r = base;
    r.epoch = step;
    totals.fill(r);
    ElasticAccumulator observed;
    ElasticAccumulator missing;
    accumulate_bank_metric(bank, model.decoder, test, out.row_offset, &observed, has_missing ? &missing : nullptr);
    r.test_metric = observed.value();
    if (has_missing) r.imputation_metric = missing.value();
    r.wall_seconds = seconds_since(start);
    out.records.push_back(r);
    if (sink) sink(r);
  };

  {
    // Initial state: ELBo terms at the fresh rows under the step-0 noise.
    NoGradGuard guard;
    TermTotals totals;
    for (std::size_t b = 0, batch = 0; b < test.size(); b += cfg.batch_size, ++batch) {
      const std::size_t e = std::min(test.size(), b + cfg.batch_size);
      const auto rows = iota_rows(out.row_offset + b, out.row_offset + e);
      const auto part = test.slice(b, e);
      const Tensor noise =
          row_noise(rows.size(), bank.latent_dim(), derive_seed(cfg.seed, SeedStream::kNoise, {0, batch}));
      totals.add(elbo(bank, rows, model.decoder, part.x, part.mask, noise), rows.size());
    }
    emit(0, totals);
  }

  for (std::size_t s = 1; s <= cfg.steps; ++s) {
    const auto order = permutation(test.size(), derive_seed(cfg.seed, SeedStream::kShuffle, {s}));
    TermTotals totals;
    std::size_t batch = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size, ++batch) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - b);
      std::vector<std::size_t> local(order.begin() + static_cast<std::ptrdiff_t>(b),
                                     order.begin() + static_cast<std::ptrdiff_t>(b + n));
      std::vector<std::size_t> rows(n);
      for (std::size_t i = 0; i < n; ++i) rows[i] = out.row_offset + local[i];
      const Tensor x = gather_rows(test.x, local);
      const Tensor mask = gather_rows(test.mask, local);
      const Tensor noise =
          row_noise(n, bank.latent_dim(), derive_seed(cfg.seed, SeedStream::kNoise, {s, batch}));
      ElboBreakdown e = elbo(bank, rows, model.decoder, x, mask, noise);
      neg(e.elbo).backward();
      opt.step(rows);
      totals.add(e, n);
    }
    emit(s, totals);
  }

  if (parameter_checksum(fixed) != before) {
    throw ContractError("decoder or relay vectors changed during test-time inference");
  }
  {
    NoGradGuard guard;
    const auto rows = iota_rows(out.row_offset, out.row_offset + test.size());
    const auto params = posterior_params(bank, rows);
    out.mu = params.mu.detach();
    out.sigma = params.sigma.detach();
  }
  return out;
}

Tensor generate(const Mlp& decoder, std::size_t n, std::uint64_t seed) {
  NoGradGuard guard;
  const Tensor z = normal_tensor(Shape{n, decoder.input_dim()}, 0.0, 1.0, derive_seed(seed, SeedStream::kGenerate));
  return decode(decoder, z);
}

}  // namespace rvi
