#include <gtest/gtest.h>

#include <cmath>

#include "rvi/datasets.hpp"
#include "rvi/error.hpp"
#include "rvi/objective.hpp"
#include "rvi/optimize.hpp"

using namespace rvi;

namespace {

TrainConfig small_config(Method method, std::uint64_t seed = 3) {
  TrainConfig c;
  c.method = method;
  c.arch = {64};
  c.latent_dim = 8;
  c.epochs = 3;
  c.batch_size = 16;
  c.seed = seed;
  c.relay.group_sizes = {4, 6};
  return c;
}

const MaskedDataset& small_data() {
  static const MaskedDataset ds = apply_missing(gen_artificial(40, 5), MissingSpec::mcar(0.3, 5));
  return ds;
}

std::uint64_t model_checksum(const TrainedModel& m) {
  std::vector<Tensor> p = m.decoder.parameters();
  if (m.bank) {
    for (const auto& g : m.bank->groups) {
      p.push_back(g.vectors);
      p.push_back(g.coeffs);
    }
    p.push_back(m.bank->mu_eps);
    p.push_back(m.bank->log_sigma);
  }
  if (m.encoder) {
    for (const auto& t : m.encoder->parameters()) p.push_back(t);
  }
  return parameter_checksum(p);
}

std::vector<double> row_of(const Tensor& t, std::size_t r) {
  std::vector<double> out;
  for (std::size_t c = 0; c < t.cols(); ++c) out.push_back(t.at(r, c));
  return out;
}

// Two datapoints whose single relay group makes both select vector 0.
PosteriorBank shared_vector_bank(bool with_relays) {
  PosteriorBank b;
  if (with_relays) {
    RelayGroup g;
    g.vectors = Tensor::matrix({{0.5, -0.3, 0.2}, {0.1, 0.4, -0.6}}, true);
    g.coeffs = Tensor::matrix({{0.9, 0.1}, {-0.8, 0.2}}, true);
    g.budget = 1;
    b.groups.push_back(g);
  }
  b.mu_eps = Tensor::matrix({{0.05, 0.01, -0.02}, {0.03, -0.04, 0.02}}, true);
  b.log_sigma = Tensor::zeros({2, 3}, true);
  return b;
}

}  // namespace

TEST(Adam, FirstStepMovesByLrTimesSign) {
  Tensor p = Tensor::vector({1.0, -2.0, 0.5}, true);
  Adam opt({.lr = 0.01});
  opt.add_param(p);
  auto g = p.mutable_grad();
  g[0] = 3.0;
  g[1] = -0.002;
  g[2] = 40.0;
  opt.step();
  EXPECT_NEAR(p.values()[0], 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(p.values()[1], -2.0 + 0.01, 1e-6);
  EXPECT_NEAR(p.values()[2], 0.5 - 0.01, 1e-9);
  for (double v : p.grad()) EXPECT_EQ(v, 0.0);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Tensor p = Tensor::vector({1.0, 2.0}, true);
  Adam opt;
  opt.add_param(p);
  p.zero_grad();
  opt.step();
  EXPECT_EQ(p.values()[0], 1.0);
  EXPECT_EQ(p.values()[1], 2.0);
}

TEST(Adam, TwoStepHandTrace) {
  Tensor p = Tensor::scalar(1.0, true);
  Adam opt({.lr = 0.1});
  opt.add_param(p);
  square(p).backward();
  opt.step();
  EXPECT_DOUBLE_EQ(p.item(), 0.9000000005);
  square(p).backward();
  opt.step();
  EXPECT_DOUBLE_EQ(p.item(), 0.8004122286917928);
  EXPECT_EQ(opt.steps(), 2);
}

TEST(Adam, ConvergesOnSquare) {
  Tensor p = Tensor::scalar(1.0, true);
  Adam opt({.lr = 0.1});
  opt.add_param(p);
  for (int i = 0; i < 200; ++i) {
    square(p).backward();
    opt.step();
  }
  EXPECT_LT(std::fabs(p.item()), 1e-3);
}

TEST(Adam, Contracts) {
  Tensor frozen = Tensor::vector({1.0}, true);
  frozen.set_frozen(true);
  Adam opt;
  EXPECT_THROW(opt.add_param(frozen), ContractError);
  Tensor p = Tensor::vector({1.0}, true);
  opt.add_param(p);
  EXPECT_THROW(opt.step(), ContractError);  // no gradient yet
  p.zero_grad();
  p.set_frozen(true);
  EXPECT_THROW(opt.step(), ContractError);
  EXPECT_THROW(Adam({.lr = 0.0}), ArgumentError);
}

TEST(Adam, PerRowTouchesOnlyActiveRows) {
  Tensor p = Tensor::matrix({{1, 1}, {2, 2}, {3, 3}}, true);
  Adam opt;
  opt.add_param(p, /*per_row=*/true);
  for (auto& g : p.mutable_grad()) g = 1.0;
  const std::size_t active[] = {1};
  opt.step(active);
  EXPECT_EQ(p.at(0, 0), 1.0);
  EXPECT_EQ(p.at(2, 1), 3.0);
  EXPECT_NEAR(p.at(1, 0), 2.0 - 1e-3, 1e-9);
}

TEST(Adam, SkipZeroGradKeepsEntriesUnderMomentum) {
  Tensor p = Tensor::vector({1.0, 1.0}, true);
  Adam opt;
  opt.add_param(p, false, /*skip_zero_grad=*/true);
  p.mutable_grad()[0] = 1.0;
  p.mutable_grad()[1] = 1.0;
  opt.step();
  const double second = p.values()[1];
  p.mutable_grad()[0] = 1.0;
  p.mutable_grad()[1] = 0.0;
  opt.step();
  EXPECT_EQ(p.values()[1], second);
  EXPECT_LT(p.values()[0], second);
}

TEST(Config, MethodStrings) {
  for (auto m : {Method::kRvi, Method::kVad, Method::kVae}) EXPECT_EQ(parse_method(to_string(m)), m);
  EXPECT_THROW(parse_method("gan"), ArgumentError);
}

TEST(TrainRvi, ZeroEpochsGivesInitialModel) {
  auto cfg = small_config(Method::kRvi);
  cfg.epochs = 0;
  const TrainedModel m = train_rvi(small_data(), cfg);
  EXPECT_TRUE(m.records.empty());
  const EncoderlessTrainer fresh(small_data(), cfg);
  EXPECT_EQ(value_checksum(m.bank->mu_eps), value_checksum(fresh.bank().mu_eps));
  EXPECT_EQ(parameter_checksum(m.decoder.parameters()), parameter_checksum(fresh.decoder().parameters()));
}

TEST(TrainRvi, Deterministic) {
  const auto cfg = small_config(Method::kRvi);
  const TrainedModel a = train_rvi(small_data(), cfg);
  const TrainedModel b = train_rvi(small_data(), cfg);
  EXPECT_EQ(model_checksum(a), model_checksum(b));
  ASSERT_EQ(a.records.size(), 3u);
  EXPECT_EQ(a.records.back().elbo, b.records.back().elbo);
  EXPECT_EQ(a.records[0].budgets, "2-3");
  const TrainedModel c = train_rvi(small_data(), small_config(Method::kRvi, 4));
  EXPECT_NE(model_checksum(a), model_checksum(c));
}

TEST(TrainRvi, WrongMethodRejected) {
  EXPECT_THROW(train_rvi(small_data(), small_config(Method::kVad)), ConfigError);
  EXPECT_THROW(train_vad(small_data(), small_config(Method::kRvi)), ConfigError);
  EXPECT_THROW(train_vae(small_data(), small_config(Method::kRvi)), ConfigError);
}

TEST(TrainRvi, RecordsCarryBothElboTerms) {
  const TrainedModel m = train(small_data(), small_config(Method::kRvi));
  for (const auto& r : m.records) {
    EXPECT_FALSE(std::isnan(r.recon));
    EXPECT_GE(r.kl, -1e-12);
    EXPECT_NEAR(r.elbo, r.recon - r.kl, 1e-9);
    EXPECT_FALSE(std::isnan(r.train_metric));
    EXPECT_GE(r.wall_seconds, 0.0);
  }
}

TEST(RelayGradientFlow, SharedVectorCarriesUpdateAcrossDatapoints) {
  const MaskedDataset ds = gen_artificial(2, 1);
  auto cfg = small_config(Method::kRvi);
  cfg.latent_dim = 3;
  const std::size_t both[] = {0, 1};
  const std::size_t only0[] = {0};

  EncoderlessTrainer rvi(ds, cfg, shared_vector_bank(true), build_decoder({64}, 3, ds.dim(), 1));
  const auto before_relay = row_of(relay_mean(rvi.bank(), both), 1);
  const auto before_eps = row_of(rvi.bank().mu_eps, 1);
  rvi.step(only0, row_noise(1, 3, 9));
  EXPECT_NE(row_of(relay_mean(rvi.bank(), both), 1), before_relay);
  EXPECT_EQ(row_of(rvi.bank().mu_eps, 1), before_eps);

  cfg.method = Method::kVad;
  EncoderlessTrainer vad(ds, cfg, shared_vector_bank(false), build_decoder({64}, 3, ds.dim(), 1));
  const auto before = row_of(posterior_params(vad.bank(), both).mu, 1);
  const auto before_sigma = row_of(posterior_params(vad.bank(), both).sigma, 1);
  vad.step(only0, row_noise(1, 3, 9));
  EXPECT_EQ(row_of(posterior_params(vad.bank(), both).mu, 1), before);
  EXPECT_EQ(row_of(posterior_params(vad.bank(), both).sigma, 1), before_sigma);
}

TEST(TrainVad, RviWithoutGroupsMatchesVad) {
  auto rvi = small_config(Method::kRvi);
  rvi.relay.group_sizes = {};
  const auto vad = small_config(Method::kVad);
  const TrainedModel a = train(small_data(), rvi);
  const TrainedModel b = train(small_data(), vad);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].elbo, b.records[i].elbo);
    EXPECT_EQ(a.records[i].train_metric, b.records[i].train_metric);
  }
  EXPECT_EQ(model_checksum(a), model_checksum(b));
  EXPECT_TRUE(b.bank->groups.empty());
}

TEST(TrainVae, PosteriorLrIgnored) {
  auto a_cfg = small_config(Method::kVae);
  auto b_cfg = a_cfg;
  b_cfg.posterior_lr = 0.5;
  const TrainedModel a = train_vae(small_data(), a_cfg);
  const TrainedModel b = train_vae(small_data(), b_cfg);
  EXPECT_EQ(model_checksum(a), model_checksum(b));
  EXPECT_TRUE(std::isnan(a.records[0].posterior_lr));
  EXPECT_FALSE(a.bank.has_value());
}

TEST(TrainVae, FullMaskMatchesUnmaskedLoss) {
  const MaskedDataset ds = gen_artificial(6, 2);
  const EncoderHead enc = build_encoder({64}, 4, ds.dim(), 1);
  const Mlp dec = build_decoder({64}, 4, ds.dim(), 2);
  const Tensor noise = row_noise(6, 4, 3);
  const auto e = elbo_from_params(encode(enc, zero_fill(ds.x, ds.mask)), dec, ds.x, ds.mask, noise);
  const auto params = encode(enc, ds.x);
  const Tensor recon = decode(dec, reparam_sample(params.mu, params.sigma, noise));
  const double unmasked = -0.5 * sum(square(sub(ds.x, recon))).item() / 6.0;
  EXPECT_NEAR(e.recon_loglik.item(), unmasked, 1e-9 * std::fabs(unmasked));
}

TEST(Convergence, ArtificialTrainMetricImproves) {
  const MaskedDataset ds = gen_artificial(1000, 0);
  for (Method method : {Method::kRvi, Method::kVad, Method::kVae}) {
    TrainConfig cfg;
    cfg.method = method;
    cfg.epochs = 100;
    cfg.seed = 0;
    const TrainedModel m = train(ds, cfg);
    ASSERT_EQ(m.records.size(), 100u);
    EXPECT_LT(m.records.back().train_metric, m.records.front().train_metric) << to_string(method);
  }
}

TEST(InferTest, ZeroStepsMatchesFreshInitialisation) {
  const TrainedModel m = train(small_data(), small_config(Method::kRvi));
  const MaskedDataset test = apply_missing(gen_artificial(12, 9), MissingSpec::mcar(0.5, 2));
  const InferenceResult r = infer_test(m, test, {.steps = 0, .lr = 1e-3, .batch_size = 8, .seed = 4});
  ASSERT_EQ(r.records.size(), 1u);
  const PosteriorBank fresh = extend_bank(*m.bank, test.size(), derive_seed(4, SeedStream::kBankResidual));
  std::vector<std::size_t> rows(test.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = m.bank->size() + i;
  const Tensor recon = decode(m.decoder, posterior_params(fresh, rows).mu);
  EXPECT_EQ(r.records[0].test_metric, elastic_metric(test.x, test.mask, recon));
  EXPECT_EQ(value_checksum(r.mu), value_checksum(posterior_params(fresh, rows).mu));
}

TEST(InferTest, FrozenParametersUnchanged) {
  for (Method method : {Method::kRvi, Method::kVad, Method::kVae}) {
    const TrainedModel m = train(small_data(), small_config(method));
    std::vector<Tensor> fixed = m.decoder.parameters();
    if (m.bank) {
      for (const auto& g : m.bank->groups) fixed.push_back(g.vectors);
    }
    const auto before = parameter_checksum(fixed);
    const MaskedDataset test = apply_missing(gen_artificial(10, 9), MissingSpec::mcar(0.5, 2));
    const auto r = infer_test(m, test, {.steps = 5, .lr = 1e-2, .batch_size = 4, .seed = 1});
    EXPECT_EQ(parameter_checksum(fixed), before) << to_string(method);
    EXPECT_EQ(r.mu.rows(), 10u);
    if (m.bank) {
      for (const auto& g : m.bank->groups) EXPECT_FALSE(g.vectors.frozen());
      EXPECT_EQ(r.records.size(), 6u);
    }
  }
}

// Oracle run: 18.062117205616726 -> 12.140719636270578 (ratio 0.6722).
constexpr double kOracleInferStart = 18.062117205616726;
constexpr double kOracleInferRatio = 0.6722;

TEST(InferTest, ObservedMetricDropsOnArtificialData) {
  const MaskedDataset train_ds = apply_missing(gen_artificial(1000, 0), MissingSpec::mcar(0.5, 1));
  TrainConfig cfg;
  cfg.epochs = 100;
  const TrainedModel m = train(train_ds, cfg);
  const MaskedDataset test = apply_missing(gen_artificial(1000, artificial_mixing(0), 77), MissingSpec::mcar(0.5, 2));
  const auto r = infer_test(m, test, {.steps = 100, .lr = 1e-3, .batch_size = 256, .seed = 0});
  const double start = r.records.front().test_metric;
  const double end = r.records.back().test_metric;
  RecordProperty("start", std::to_string(start));
  RecordProperty("end", std::to_string(end));
  EXPECT_NEAR(start, kOracleInferStart, 1e-6 * kOracleInferStart);
  EXPECT_LE(end / start, kOracleInferRatio + 0.01) << "start " << start << " end " << end;
}

TEST(Generate, ShapeDeterminismAndZeroDecoder) {
  Mlp dec = build_decoder({64}, 4, 7, 1);
  const Tensor a = generate(dec, 5, 3);
  EXPECT_EQ(a.shape(), (Shape{5, 7}));
  EXPECT_EQ(value_checksum(a), value_checksum(generate(dec, 5, 3)));
  for (auto p : dec.parameters()) {
    for (auto& v : p.data()) v = 0.0;
  }
  dec.layers().back().bias.data()[2] = 4.0;
  const Tensor z = generate(dec, 3, 8);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 7; ++c) EXPECT_EQ(z.at(r, c), c == 2 ? 4.0 : 0.0);
  }
}
