#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "rvi/datasets.hpp"
#include "rvi/error.hpp"
#include "rvi/evaluate.hpp"
#include "rvi/harness.hpp"
#include "rvi/models.hpp"
#include "rvi/objective.hpp"
#include "rvi/optimize.hpp"
#include "rvi/random.hpp"
#include "rvi/relay_posterior.hpp"

using namespace rvi;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and run sizes.
constexpr double kGradRelTol = 1e-4;
constexpr double kFdStep = 1e-5;
constexpr std::size_t kKlSamples = 1'000'000;
constexpr std::size_t kKlPairs = 20;
constexpr double kKlRelTol = 0.01;
constexpr double kDenseTol = 1e-12;
constexpr std::size_t kSeeds = 5;
constexpr std::size_t kArtificialEpochs = 100;
constexpr std::size_t kInferSteps = 250;
constexpr std::size_t kMnistEpochs = 250;
constexpr std::size_t kProgressionImages = 256;
constexpr std::size_t kAblationEpochs = 20;
constexpr std::size_t kProbeEpochs = 250;
constexpr double kProbeMargin = 0.40;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

double median_of(std::vector<double> v) { return median(std::move(v)); }

std::vector<std::size_t> iota_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i;
  return rows;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "rvi_acceptance" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// CSV text with the wall_seconds column blanked.
std::string csv_body(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::string line;
  std::string out;
  std::optional<std::size_t> wall;
  bool header = true;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (header) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (cells[i] == "wall_seconds") wall = i;
      }
      header = false;
    } else if (wall && *wall < cells.size()) {
      cells[*wall].clear();
    }
    for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + cells[i];
    out += '\n';
  }
  return out;
}

std::uint64_t relay_vector_checksum(const PosteriorBank& bank) {
  std::vector<Tensor> vs;
  for (const auto& g : bank.groups) vs.push_back(g.vectors);
  return parameter_checksum(vs);
}

double epoch_metric(const TrainedModel& m, std::size_t epoch) {
  for (const auto& r : m.records) {
    if (r.phase == "train" && r.epoch == epoch) return r.train_metric;
  }
  return kNotApplicable;
}

// Artificial data with the main decoder at lr 1e-3; every seed shares the
// dataset and differs only in the run seed.
TrainConfig artificial_config(Method method, double rate, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.method = method;
  cfg.arch = {64, 64};
  cfg.network_lr = cfg.posterior_lr = 1e-3;
  cfg.epochs = kArtificialEpochs;
  cfg.seed = seed;
  cfg.missing = rate > 0.0 ? MissingSpec::mcar(rate, 0) : MissingSpec::none();
  cfg.dataset = "artificial";
  return cfg;
}

struct Shared {
  std::optional<DataSplit> artificial;
  std::map<double, DataSplit> artificial_masked;
  // (rate, method) -> one model per seed.
  std::map<std::pair<double, Method>, std::vector<TrainedModel>> artificial_models;
  std::optional<DataSplit> mnist;
  std::vector<TrainedModel> mnist_models;
  std::size_t frozen_checks = 0;
  std::vector<std::string> frozen_violations;

  const DataSplit& art(double rate) {
    if (!artificial) artificial = load_data({.dataset = "artificial"});
    auto it = artificial_masked.find(rate);
    if (it == artificial_masked.end()) {
      it = artificial_masked.emplace(rate, with_missing(*artificial, artificial_config(Method::kRvi, rate, 0).missing))
               .first;
    }
    return it->second;
  }

  const std::vector<TrainedModel>& art_models(double rate, Method method) {
    auto& v = artificial_models[{rate, method}];
    if (v.empty()) {
      for (std::uint64_t s = 0; s < kSeeds; ++s) v.push_back(train(art(rate).train, artificial_config(method, rate, s)));
    }
    return v;
  }

  const DataSplit& mn() {
    if (!mnist) mnist = load_data({.dataset = "mnist"});
    return *mnist;
  }

  const std::vector<TrainedModel>& mnist_rvi() {
    if (mnist_models.empty()) {
      for (std::uint64_t s = 0; s < kSeeds; ++s) {
        TrainConfig cfg;
        cfg.epochs = kMnistEpochs;
        cfg.seed = s;
        cfg.dataset = "mnist";
        cfg.eval_each_epoch = false;
        mnist_models.push_back(train(mn().train, cfg));
      }
    }
    return mnist_models;
  }

  // Inference wrapped in the frozen-parameter checks.
  TestEvaluation checked_eval(const TrainedModel& m, const MaskedDataset& test, const InferConfig& ic,
                              const std::string& label) {
    const std::uint64_t dec = parameter_checksum(m.decoder.parameters());
    const std::uint64_t vec = m.bank ? relay_vector_checksum(*m.bank) : 0;
    TestEvaluation e = evaluate_test(m, test, ic);
    ++frozen_checks;
    if (parameter_checksum(m.decoder.parameters()) != dec) frozen_violations.push_back(label + " decoder");
    if (m.bank && relay_vector_checksum(*m.bank) != vec) frozen_violations.push_back(label + " vectors");
    if (e.inference.bank && m.bank && relay_vector_checksum(*e.inference.bank) != vec) {
      frozen_violations.push_back(label + " extended vectors");
    }
    return e;
  }
};

Shared shared;

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  const std::size_t sizes[] = {3};
  PosteriorBank b = init_bank(3, 4, sizes, 2.0 / 3.0, 1);
  if (b.groups[0].budget != 2) return {false, "budget " + std::to_string(b.groups[0].budget)};
  // Well separated coefficient magnitudes keep the selection fixed under FD steps.
  const double coeffs[] = {0.9, -0.5, 0.1, 0.2, 1.1, -0.6, -0.7, 0.15, 0.45};
  std::copy(std::begin(coeffs), std::end(coeffs), b.groups[0].coeffs.data().begin());
  Rng rng(2);
  std::normal_distribution<double> n01;
  for (auto& v : b.groups[0].vectors.data()) v = 0.5 * n01(rng);
  for (auto& v : b.mu_eps.data()) v = 0.3 * n01(rng);
  for (auto& v : b.log_sigma.data()) v = 0.2 * n01(rng);
  const Mlp dec = build_decoder({64}, 4, 6, 3);
  const Tensor x = normal_tensor({3, 6}, 0.0, 1.0, 4);
  const Tensor mask(Shape{3, 6}, {1, 0, 1, 1, 1, 1, 1, 1, 0, 1, 1, 1, 0, 1, 1, 1, 0, 1});
  const Tensor noise = row_noise(3, 4, 5);
  const auto rows = iota_rows(3);
  auto loss = [&] { return elbo(b, rows, dec, x, mask, noise).elbo; };
  std::vector<Tensor> params{b.groups[0].vectors, b.groups[0].coeffs, b.mu_eps, b.log_sigma};
  for (const auto& p : dec.parameters()) params.push_back(p);
  const auto worst = testing::worst_gradient_error(params, loss, kFdStep);
  return {worst.rel_err < kGradRelTol, "worst relative error " + fmt(worst.rel_err) + " over " +
                                           std::to_string(params.size()) + " parameter tensors"};
}

Outcome kl_oracle() {
  Rng rng(11);
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> su(0.3, 2.0);
  constexpr std::size_t t = 4;
  double worst = 0.0;
  for (std::size_t pair = 0; pair < kKlPairs; ++pair) {
    std::vector<double> mu(t), sigma(t);
    for (std::size_t j = 0; j < t; ++j) {
      mu[j] = n01(rng);
      sigma[j] = su(rng);
    }
    const double closed = kl_diag_gaussian(Tensor::vector(mu), Tensor::vector(sigma)).item();
    // E_q[log q(z) - log p(z)] with z ~ q.
    Rng mc(derive_seed(99, {pair}));
    double total = 0.0;
    for (std::size_t s = 0; s < kKlSamples; ++s) {
      double lr = 0.0;
      for (std::size_t j = 0; j < t; ++j) {
        const double e = n01(mc);
        const double z = mu[j] + sigma[j] * e;
        lr += -std::log(sigma[j]) - 0.5 * e * e + 0.5 * z * z;
      }
      total += lr;
    }
    const double estimate = total / static_cast<double>(kKlSamples);
    worst = std::max(worst, std::fabs(estimate - closed) / closed);
  }
  return {worst < kKlRelTol, "worst relative gap " + fmt(worst)};
}

Outcome marginalization() {
  std::vector<std::string> problems;
  const MaskedDataset base = apply_missing(gen_artificial(40, 3), MissingSpec::mcar(0.4, 1));
  MaskedDataset perturbed = base;
  perturbed.x = base.x.detach();
  {
    auto xv = perturbed.x.data();
    const auto m = base.mask.values();
    for (std::size_t i = 0; i < xv.size(); ++i) {
      if (m[i] == 0.0) xv[i] += 100.0 + static_cast<double>(i % 7);
    }
  }
  const Mlp dec = build_decoder({64}, 8, base.dim(), 2);
  const Tensor z = normal_tensor({base.size(), 8}, 0.0, 1.0, 3);
  const Tensor recon = decode(dec, z).detach();

  if (masked_recon_loglik(base.x, base.mask, recon).item() !=
      masked_recon_loglik(perturbed.x, base.mask, recon).item()) {
    problems.push_back("loglik");
  }
  if (elastic_metric(base.x, base.mask, recon) != elastic_metric(perturbed.x, base.mask, recon)) {
    problems.push_back("elastic");
  }

  // Gradients at masked entries, w.r.t. the data and the reconstruction.
  for (const MaskedDataset* ds : std::vector<const MaskedDataset*>{&base, &perturbed}) {
    Tensor xg = ds->x.detach();
    xg.set_requires_grad(true);
    Tensor rg = recon.detach();
    rg.set_requires_grad(true);
    masked_recon_loglik(xg, ds->mask, rg).backward();
    const auto m = ds->mask.values();
    // An input the loss does not differentiate through has no buffer: all zeros.
    const auto grad_at = [](const Tensor& t, std::size_t i) { return t.has_grad() ? t.grad()[i] : 0.0; };
    if (!rg.has_grad()) problems.push_back("reconstruction gradient missing");
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (m[i] == 0.0 && (grad_at(xg, i) != 0.0 || grad_at(rg, i) != 0.0)) {
        problems.push_back("gradient at masked entry " + std::to_string(i));
        break;
      }
    }
  }

  // Posteriors inferred with and without the perturbation.
  TrainConfig cfg;
  cfg.arch = {64};
  cfg.latent_dim = 8;
  cfg.epochs = 5;
  cfg.batch_size = 16;
  cfg.relay.group_sizes = {5, 10};
  const InferConfig ic{.steps = 5, .lr = 1e-2, .batch_size = 16, .seed = 4};
  for (Method method : {Method::kRvi, Method::kVad, Method::kVae}) {
    cfg.method = method;
    const TrainedModel a = train(base, cfg);
    const TrainedModel b = train(perturbed, cfg);
    if (parameter_checksum(a.decoder.parameters()) != parameter_checksum(b.decoder.parameters())) {
      problems.push_back(to_string(method) + " training");
    }
    const auto ia = infer_test(a, base, ic);
    const auto ib = infer_test(a, perturbed, ic);
    if (value_checksum(ia.mu) != value_checksum(ib.mu) || value_checksum(ia.sigma) != value_checksum(ib.sigma)) {
      problems.push_back(to_string(method) + " posterior");
    }
  }
  std::string detail = problems.empty() ? "all bit-identical" : "";
  for (const auto& p : problems) detail += p + "; ";
  return {problems.empty(), detail};
}

Outcome relay_gradient_flow() {
  const MaskedDataset ds = gen_artificial(2, 1);
  const auto bank = [](bool relays) {
    PosteriorBank b;
    if (relays) {
      RelayGroup g;
      g.vectors = Tensor::matrix({{0.5, -0.3, 0.2}, {0.1, 0.4, -0.6}}, true);
      g.coeffs = Tensor::matrix({{0.9, 0.1}, {-0.8, 0.2}}, true);
      g.budget = 1;
      b.groups.push_back(g);
    }
    b.mu_eps = Tensor::matrix({{0.05, 0.01, -0.02}, {0.03, -0.04, 0.02}}, true);
    b.log_sigma = Tensor::zeros({2, 3}, true);
    return b;
  };
  const std::size_t both[] = {0, 1};
  const std::size_t only0[] = {0};
  TrainConfig cfg;
  cfg.arch = {64};
  cfg.latent_dim = 3;
  cfg.epochs = 1;

  cfg.method = Method::kRvi;
  EncoderlessTrainer rvi(ds, cfg, bank(true), build_decoder({64}, 3, ds.dim(), 1));
  const Tensor before = posterior_params(rvi.bank(), both).mu.detach();
  rvi.step(only0, row_noise(1, 3, 9));
  const Tensor after = posterior_params(rvi.bank(), both).mu;
  double change = 0.0;
  for (std::size_t c = 0; c < 3; ++c) change += std::fabs(after.at(1, c) - before.at(1, c));

  cfg.method = Method::kVad;
  EncoderlessTrainer vad(ds, cfg, bank(false), build_decoder({64}, 3, ds.dim(), 1));
  const auto vb = posterior_params(vad.bank(), both);
  const std::uint64_t mu_before = value_checksum(gather_rows(vb.mu, std::vector<std::size_t>{1}));
  const std::uint64_t sigma_before = value_checksum(gather_rows(vb.sigma, std::vector<std::size_t>{1}));
  vad.step(only0, row_noise(1, 3, 9));
  const auto va = posterior_params(vad.bank(), both);
  const bool vad_same = value_checksum(gather_rows(va.mu, std::vector<std::size_t>{1})) == mu_before &&
                        value_checksum(gather_rows(va.sigma, std::vector<std::size_t>{1})) == sigma_before;
  return {change > 0.0 && vad_same,
          "rvi cross-datapoint |change| " + fmt(change) + ", vad unchanged " + (vad_same ? "yes" : "no")};
}

Outcome dense_identity() {
  double worst = 0.0;
  for (std::size_t k : {1u, 3u, 25u}) {
    const std::size_t sizes[] = {k};
    PosteriorBank b = init_bank(7, 5, sizes, 1.0, 13 + k);
    if (b.groups[0].budget != k) return {false, "budget != K for K=" + std::to_string(k)};
    Rng rng(k);
    std::normal_distribution<double> n01;
    for (auto& v : b.groups[0].coeffs.data()) v = n01(rng);
    for (auto& v : b.groups[0].vectors.data()) v = n01(rng);
    const auto rows = iota_rows(7);
    const Tensor relay = relay_mean(b, rows);
    const Tensor direct = matmul(b.groups[0].coeffs, b.groups[0].vectors);
    for (std::size_t i = 0; i < relay.numel(); ++i) {
      worst = std::max(worst, std::fabs(relay.values()[i] - direct.values()[i]));
    }
  }
  return {worst <= kDenseTol, "max |diff| " + fmt(worst)};
}

Outcome convergence_direction() {
  bool ok = true;
  std::string detail;
  for (double rate : {0.0, 0.5}) {
    std::vector<double> final_rvi, final_vad, e10_rvi, e10_vad;
    for (const auto& m : shared.art_models(rate, Method::kRvi)) {
      final_rvi.push_back(m.records.back().train_metric);
      e10_rvi.push_back(epoch_metric(m, 10));
    }
    for (const auto& m : shared.art_models(rate, Method::kVad)) {
      final_vad.push_back(m.records.back().train_metric);
      e10_vad.push_back(epoch_metric(m, 10));
    }
    const double fr = median_of(final_rvi), fv = median_of(final_vad);
    const double tr = median_of(e10_rvi), tv = median_of(e10_vad);
    ok = ok && fr <= fv && tr <= tv;
    detail += "mcar " + fmt(rate) + ": final rvi " + fmt(fr) + " vad " + fmt(fv) + ", epoch10 rvi " + fmt(tr) +
              " vad " + fmt(tv) + "; ";
  }
  return {ok, detail};
}

Outcome test_imputation_direction() {
  const DataSplit& data = shared.art(0.5);
  std::vector<double> test_rvi, test_vad, imp_rvi;
  for (Method method : {Method::kRvi, Method::kVad}) {
    const auto& models = shared.art_models(0.5, method);
    for (std::size_t s = 0; s < models.size(); ++s) {
      const InferConfig ic{.steps = kInferSteps, .lr = 1e-3, .batch_size = 256, .seed = s};
      const auto e = shared.checked_eval(models[s], data.test, ic, to_string(method) + " seed " + std::to_string(s));
      (method == Method::kRvi ? test_rvi : test_vad).push_back(e.test_metric);
      if (method == Method::kRvi) imp_rvi.push_back(e.imputation_metric);
    }
  }
  const double baseline = mean_imputation_baseline(data.train, data.test);
  const double tr = median_of(test_rvi), tv = median_of(test_vad), ir = median_of(imp_rvi);
  return {tr <= tv && ir <= baseline, "test rvi " + fmt(tr) + " vad " + fmt(tv) + ", imputation rvi " + fmt(ir) +
                                          " mean baseline " + fmt(baseline)};
}

Outcome frozen_contract() {
  // Also covers inference with a vae and the progression model below.
  if (shared.frozen_checks == 0) test_imputation_direction();
  std::string detail = std::to_string(shared.frozen_checks) + " inference runs checked";
  for (const auto& v : shared.frozen_violations) detail += "; changed: " + v;
  return {shared.frozen_checks > 0 && shared.frozen_violations.empty(), detail};
}

Outcome posterior_lr_grid() {
  SweepSpec spec = sweep_preset("paper-6.4");
  spec.out_dir = scratch("posterior_lr");
  const SweepResult result = run_sweep(spec);
  std::string detail = std::to_string(result.runs) + " runs, " + std::to_string(result.failed) + " failed";
  bool ok = result.failed == 0 && spec.posterior_lrs.size() == 7 && result.runs == 14;

  // Every (method, posterior lr) pair has a complete curve.
  std::set<std::pair<std::string, double>> complete;
  for (const auto& entry : fs::directory_iterator(spec.out_dir / "runs")) {
    const auto records = read_records_csv(entry.path());
    std::size_t epochs = 0;
    std::size_t infer = 0;
    for (const auto& r : records) {
      if (r.phase == "train" && std::isfinite(r.train_metric)) ++epochs;
      if (r.phase == "infer" && std::isfinite(r.test_metric)) ++infer;
    }
    if (!records.empty() && epochs == spec.epochs && infer == spec.infer_steps + 1) {
      complete.insert({records.front().method, records.front().posterior_lr});
    }
  }
  for (const std::string method : {"rvi", "vad"}) {
    for (double plr : spec.posterior_lrs) ok = ok && complete.count({method, plr}) == 1;
  }
  detail += ", " + std::to_string(complete.size()) + " complete curves";
  if (!fs::exists(result.curves) || !fs::exists(result.summary)) {
    ok = false;
    detail += ", aggregate files missing";
  }

  // Rerun one grid point on its own; its CSV must match bit for bit.
  SweepSpec again = spec;
  again.methods = {Method::kRvi};
  again.posterior_lrs = {spec.posterior_lrs[2]};
  again.out_dir = scratch("posterior_lr_again");
  run_sweep(again);
  const std::string id = expand_sweep(again).front().id;
  const bool same = csv_body(spec.out_dir / "runs" / (id + ".csv")) == csv_body(again.out_dir / "runs" / (id + ".csv"));
  detail += same ? ", rerun identical" : ", rerun differs";
  return {ok && same, detail};
}

Outcome progression_monotone() {
  const TrainedModel& model = shared.mnist_rvi().front();
  const MaskedDataset test = shared.mn().test.slice(0, kProgressionImages);
  const auto e = shared.checked_eval(model, test, {.steps = kInferSteps, .lr = 1e-3, .batch_size = 256, .seed = 0},
                                     "mnist progression");
  const auto rows = iota_rows(test.size());
  const auto stages =
      progression_reconstructions(*e.inference.bank, model.decoder, test, rows, e.inference.row_offset);
  bool ok = stages.size() == model.bank->groups.size() + 1;
  std::string detail;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", stages[i].median_metric);
    detail += stages[i].name + " " + buf + (i + 1 < stages.size() ? " >= " : "");
    if (i > 0 && stages[i].median_metric > stages[i - 1].median_metric) ok = false;
  }
  return {ok, detail};
}

Outcome budget_ablation() {
  const DataSplit data = with_missing(shared.mn(), MissingSpec::mcar(0.5, 0));
  TrainConfig base;
  base.epochs = kAblationEpochs;
  base.dataset = "mnist";
  base.missing = MissingSpec::mcar(0.5, 0);
  base.eval_each_epoch = false;
  const auto runs = ablate_budget(data.train, kBudgetFractions, base);
  bool ok = runs.size() == kBudgetFractions.size();
  std::string detail;
  for (const auto& run : runs) {
    std::vector<std::size_t> expected;
    std::string expected_text;
    for (std::size_t k : {25u, 50u, 100u}) {
      expected.push_back(static_cast<std::size_t>(std::lround(run.budget_fraction * static_cast<double>(k))));
      expected_text += (expected_text.empty() ? "" : "-") + std::to_string(expected.back());
    }
    const bool records_ok = !run.model.records.empty() &&
                            std::all_of(run.model.records.begin(), run.model.records.end(),
                                        [&](const RunRecord& r) { return r.budgets == expected_text; });
    const bool finished = std::isfinite(run.final_metric) && run.model.records.size() == kAblationEpochs;
    ok = ok && run.budgets == expected && records_ok && finished;
    detail += fmt(run.budget_fraction) + ":" + expected_text + (records_ok && finished ? "" : "(bad)") + " ";
    if (std::fabs(run.budget_fraction - 0.8) < 1e-12) {
      ok = ok && run.budgets == std::vector<std::size_t>{20, 40, 80};
    }
  }
  return {ok, detail};
}

Outcome cluster_direction() {
  std::vector<double> topk, cluster;
  const DataSplit& data = shared.art(0.0);
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    TrainConfig cfg = artificial_config(Method::kRvi, 0.0, s);
    cfg.eval_each_epoch = false;
    topk.push_back(shared.art_models(0.0, Method::kRvi)[s].records.back().train_metric);
    cfg.relay.mode = RelayMode::kCluster;
    const TrainedModel m = train(data.train, cfg);
    cluster.push_back(m.records.back().train_metric);
  }
  const double a = median_of(topk), b = median_of(cluster);
  return {a <= b, "median final topk " + fmt(a) + " cluster " + fmt(b)};
}

Outcome determinism() {
  std::vector<std::string> problems;
  const DataOptions opts{.dataset = "artificial", .train_size = 200, .test_size = 50};
  const DataSplit data = with_missing(load_data(opts), MissingSpec::mcar(0.3, 5));
  for (Method method : {Method::kRvi, Method::kVad, Method::kVae}) {
    TrainConfig cfg;
    cfg.method = method;
    cfg.epochs = 5;
    cfg.batch_size = 64;
    cfg.seed = 21;
    cfg.missing = MissingSpec::mcar(0.3, 5);
    cfg.run_id = "det";
    std::vector<std::string> bodies;
    std::vector<std::map<std::string, std::string>> files;
    for (int rep = 0; rep < 2; ++rep) {
      const fs::path dir = scratch("det_" + to_string(method) + std::to_string(rep));
      const TrainedModel m = train(data.train, cfg);
      save_checkpoint(dir / "ckpt", m, opts);
      const auto inf = infer_test(load_checkpoint(dir / "ckpt").model, data.test,
                                  {.steps = 3, .lr = 1e-3, .batch_size = 64, .seed = 2});
      std::vector<RunRecord> all = m.records;
      all.insert(all.end(), inf.records.begin(), inf.records.end());
      write_records_csv(dir / "records.csv", all);
      bodies.push_back(csv_body(dir / "records.csv"));
      std::map<std::string, std::string> f;
      for (const auto& e : fs::directory_iterator(dir / "ckpt")) {
        f[e.path().filename().string()] = e.path().extension() == ".csv" ? csv_body(e.path()) : slurp(e.path());
      }
      files.push_back(std::move(f));
    }
    if (files[0] != files[1]) problems.push_back(to_string(method) + " checkpoint");
    if (bodies[0] != bodies[1]) problems.push_back(to_string(method) + " csv");
  }

  SweepSpec spec;
  spec.train_size = 100;
  spec.test_size = 20;
  spec.missing_rates = {0.0, 0.5};
  spec.epochs = 3;
  spec.batch_size = 32;
  spec.infer_steps = 2;
  std::vector<std::map<std::string, std::string>> sweeps;
  for (int rep = 0; rep < 2; ++rep) {
    spec.out_dir = scratch("det_sweep" + std::to_string(rep));
    run_sweep(spec);
    std::map<std::string, std::string> bodies;
    for (const auto& e : fs::recursive_directory_iterator(spec.out_dir)) {
      if (e.path().extension() == ".csv") bodies[fs::relative(e.path(), spec.out_dir).string()] = csv_body(e.path());
    }
    sweeps.push_back(std::move(bodies));
  }
  if (sweeps[0].empty() || sweeps[0] != sweeps[1]) problems.push_back("sweep csv");
  std::string detail = problems.empty() ? "checkpoints and CSV bodies identical across reruns" : "differs:";
  for (const auto& p : problems) detail += " " + p;
  return {problems.empty(), detail};
}

Outcome probe_sanity() {
  const auto& models = shared.mnist_rvi();
  const auto& labels = shared.mn().train.labels;
  std::vector<double> gaps;
  std::string detail;
  for (std::size_t s = 0; s < models.size(); ++s) {
    const Tensor features = posterior_means(models[s], shared.mn().train);
    ProbeConfig cfg;
    cfg.epochs = kProbeEpochs;
    cfg.seed = s;
    const double real = supervised_probe(features, labels, 10, cfg).final_accuracy();
    cfg.shuffle_labels = true;
    const double control = supervised_probe(features, labels, 10, cfg).final_accuracy();
    gaps.push_back(real - control);
    detail += fmt(real) + "/" + fmt(control) + " ";
  }
  const double gap = median_of(gaps);
  return {gap >= kProbeMargin, "accuracy/control " + detail + "median gap " + fmt(gap)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"kl oracle", kl_oracle},
      {"marginalization bit-exactness", marginalization},
      {"relay gradient flow", relay_gradient_flow},
      {"dense relay identity", dense_identity},
      {"convergence direction", convergence_direction},
      {"test/imputation direction", test_imputation_direction},
      {"frozen-parameter contract", frozen_contract},
      {"posterior-lr grid", posterior_lr_grid},
      {"progression monotonicity", progression_monotone},
      {"budget ablation", budget_ablation},
      {"cluster-variant direction", cluster_direction},
      {"determinism", determinism},
      {"probe sanity", probe_sanity},
  };
  // The frozen-contract tally includes the progression run, so it reports last.
  const std::vector<std::size_t> order{0, 1, 2, 3, 4, 5, 6, 8, 9, 10, 11, 12, 13, 7};
  std::vector<std::string> lines(criteria.size());
  std::size_t failed = 0;
  for (std::size_t i : order) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    char head[96];
    std::snprintf(head, sizeof head, "%s %2zu %-30s %8.1fs  ", o.pass ? "PASS" : "FAIL", i + 1,
                  criteria[i].first.c_str(), secs);
    lines[i] = head + o.detail;
    std::fprintf(stderr, "%s\n", lines[i].c_str());
    if (!o.pass) ++failed;
  }
  for (const auto& line : lines) std::printf("%s\n", line.c_str());
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
