// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>
#include <cstring>

#include "analytic_provider.hpp"
#include "dapinn/analytic.hpp"
#include "dapinn/trainer.hpp"

using dapinn::Rng;
namespace ad = dapinn::ad;
namespace an = dapinn::analytic;
namespace nn = dapinn::nn;
namespace ph = dapinn::physics;
namespace sp = dapinn::sampler;
namespace tr = dapinn::train;
using ad::Expr;
using ad::Matrix;

namespace {

sp::SampleBatch tiny_batch_1d(const sp::Dataset& data, double d, int n_p, int n_i,
                              std::uint64_t seed) {
  const ph::CaseGeometry geo{1, 20.0, 0.0, 10.0};
  sp::SamplerConfig cfg;
  cfg.n_p1 = cfg.n_p2 = n_p;
  cfg.n_i = n_i;
  Rng rng(seed);
  return sp::make_batch(data, d, geo, cfg, rng);
}

tr::TrainConfig tiny_config_1d() {
  tr::TrainConfig cfg;
  cfg.mode = tr::Mode::kDaPinn;
  cfg.hidden_sizes = {8, 8};
  cfg.activation = ad::Activation::kTanh;
  cfg.max_iters = 5;
  cfg.learning_rate = 1e-3;
  cfg.lambda0 = {1.0, 1.0, 5.0, 0.5, 12.0};
  cfg.seed = 3;
  return cfg;
}

sp::SamplerConfig tiny_sampler() {
  sp::SamplerConfig cfg;
  cfg.n_p1 = cfg.n_p2 = 16;
  cfg.n_i = 8;
  return cfg;
}

}  // namespace

TEST_CASE("composite_loss: analytic-exact fields with true lambda give ~zero loss") {
  const an::AnalyticCase1D c;
  auto data = an::generate_dataset(c, 64, 5);
  auto batch = tiny_batch_1d(data, c.truth.d, 32, 16, 7);

  ad::Tape tape;
  auto lam = tr::register_lambda(tape, c.truth);
  oracle::AnalyticProvider1D p1(c, 1), p2(c, 2);
  auto parts = tr::composite_loss_graph(tape, p1, p2, lam, data, batch, c.geometry, {});
  CHECK(tape.value(parts.data)(0, 0) <= 1e-12);
  CHECK(tape.value(parts.physics)(0, 0) <= 1e-12);
  CHECK(tape.value(parts.interface_)(0, 0) <= 1e-12);
  CHECK(tape.value(parts.total)(0, 0) <= 3e-12);
}

TEST_CASE("composite_loss: 2D analytic-exact fields with true lambda give ~zero loss") {
  const an::AnalyticCase2D c;
  auto data = an::generate_dataset(c, 48, 5);
  sp::SamplerConfig cfg;
  cfg.n_p1 = cfg.n_p2 = 24;
  cfg.n_i = 12;
  Rng rng(11);
  auto batch = sp::make_batch(data, c.truth.d, c.geometry, cfg, rng);

  ad::Tape tape;
  auto lam = tr::register_lambda(tape, c.truth);
  oracle::AnalyticProvider2D p1(c, 1), p2(c, 2);
  auto parts = tr::composite_loss_graph(tape, p1, p2, lam, data, batch, c.geometry, {});
  CHECK(tape.value(parts.data)(0, 0) <= 1e-12);
  CHECK(tape.value(parts.physics)(0, 0) <= 1e-12);
  CHECK(tape.value(parts.interface_)(0, 0) <= 1e-12);
}

TEST_CASE("composite_loss: perturbing mu2 leaves data loss zero but physics loss positive") {
  const an::AnalyticCase1D c;
  auto data = an::generate_dataset(c, 64, 6);
  auto batch = tiny_batch_1d(data, c.truth.d, 32, 16, 8);

  ad::Tape tape;
  ph::MaterialParams lambda = c.truth;
  lambda.mu2 = 10.5;
  auto lam = tr::register_lambda(tape, lambda);
  oracle::AnalyticProvider1D p1(c, 1), p2(c, 2);
  auto parts = tr::composite_loss_graph(tape, p1, p2, lam, data, batch, c.geometry, {});
  CHECK(tape.value(parts.data)(0, 0) <= 1e-12);
  CHECK(tape.value(parts.physics)(0, 0) > 1e-4);
}

TEST_CASE("composite_loss: zero-output networks on zero data give zero data loss") {
  const ph::CaseGeometry geo{1, 20.0, 0.0, 10.0};
  sp::Dataset data;
  Rng rng(4);
  for (int i = 0; i < 16; ++i) {
    sp::DataPoint p;
    p.t = rng.uniform(0.0, 10.0);
    p.x = rng.uniform(0.0, 20.0);
    p.u = Eigen::VectorXd::Zero(2);
    data.push_back(p);
  }
  auto net1 = nn::init_network({2, 6, 2}, ad::Activation::kTanh, 1);
  auto net2 = nn::init_network({2, 6, 2}, ad::Activation::kTanh, 2);
  for (auto& l : net1.layers) l.weights.setZero();
  for (auto& l : net2.layers) l.weights.setZero();
  auto batch = tiny_batch_1d(data, 10.0, 8, 4, 9);
  auto parts = tr::composite_loss(net1, net2, {1, 1, 1, 1, 10.0}, data, batch, geo, {});
  CHECK(parts.data == 0.0);
}

TEST_CASE("composite_loss: empty interface set is a configuration error") {
  const ph::CaseGeometry geo{1, 20.0, 0.0, 10.0};
  const an::AnalyticCase1D c;
  auto data = an::generate_dataset(c, 8, 3);
  auto batch = tiny_batch_1d(data, 10.0, 4, 2, 10);
  batch.collocation.interface_pts = {};
  auto net = nn::init_network({2, 4, 2}, ad::Activation::kTanh, 1);
  CHECK_THROWS_AS(tr::composite_loss(net, net, c.truth, data, batch, geo, {}),
                  dapinn::config_error);
}

TEST_CASE("composite_loss: decomposition identity holds exactly for any weights") {
  const an::AnalyticCase1D c;
  auto data = an::generate_dataset(c, 32, 12);
  auto batch = tiny_batch_1d(data, 11.0, 16, 8, 13);
  auto net1 = nn::init_network({2, 8, 2}, ad::Activation::kTanh, 21);
  auto net2 = nn::init_network({2, 8, 2}, ad::Activation::kTanh, 22);
  const ph::MaterialParams lambda{0.9, 1.1, 8.0, 1.2, 11.0};
  for (const double wi : {1.0, 2.5, 0.3}) {
    tr::LossWeights w{1.4, 0.8, wi};
    auto parts = tr::composite_loss(net1, net2, lambda, data, batch, c.geometry, w);
    const double expected =
        w.data * parts.data + w.physics * parts.physics + w.interface_ * parts.interface_;
    CHECK(parts.total == expected);  // bitwise: same multiply/add order
  }
}

TEST_CASE("full-loss gradient check: every theta and lambda entry incl. d") {
  // Tiny configuration per the module contract: 2 hidden layers x 8, tanh,
  // 16 data points, 16+16 collocation, 8 interface points.
  const an::AnalyticCase1D c;
  auto data = an::generate_dataset(c, 16, 31);
  auto batch = tiny_batch_1d(data, 11.5, 16, 8, 17);
  auto net1 = nn::init_network({2, 8, 8, 2}, ad::Activation::kTanh, 41);
  auto net2 = nn::init_network({2, 8, 8, 2}, ad::Activation::kTanh, 42);
  net1.scaling = nn::InputScaling::for_box(Eigen::Vector2d(0, 0), Eigen::Vector2d(10, 20));
  net2.scaling = net1.scaling;
  const ph::MaterialParams lambda{1.1, 0.9, 6.0, 0.8, 11.5};

  ad::Tape tape;
  auto lam = tr::register_lambda(tape, lambda);
  tr::MlpFieldProvider p1(nn::TapeNet::register_on(tape, net1, "net1"));
  tr::MlpFieldProvider p2(nn::TapeNet::register_on(tape, net2, "net2"));
  auto parts = tr::composite_loss_graph(tape, p1, p2, lam, data, batch, c.geometry, {});

  auto report = ad::check_gradient(tape, parts.total, 1e-5, 1e-5);
  INFO("max rel error " << report.max_rel_error);
  CHECK(report.passed);
  // d really was checked, with the same nu draws on both FD sides.
  bool saw_d = false;
  for (const auto& e : report.per_leaf) saw_d = saw_d || e.leaf == "lam/d";
  CHECK(saw_d);
}

TEST_CASE("full-loss gradient check: 2D path") {
  const an::AnalyticCase2D c;
  auto data = an::generate_dataset(c, 10, 33);
  sp::SamplerConfig cfg;
  cfg.n_p1 = cfg.n_p2 = 8;
  cfg.n_i = 4;
  Rng rng(19);
  auto batch = sp::make_batch(data, 3.0, c.geometry, cfg, rng);
  auto net1 = nn::init_network({3, 6, 6, 3}, ad::Activation::kTanh, 43);
  auto net2 = nn::init_network({3, 6, 6, 3}, ad::Activation::kTanh, 44);
  const ph::MaterialParams lambda{1.2, 1.8, 0.9, 4.0, 3.0};

  ad::Tape tape;
  auto lam = tr::register_lambda(tape, lambda);
  tr::MlpFieldProvider p1(nn::TapeNet::register_on(tape, net1, "net1"));
  tr::MlpFieldProvider p2(nn::TapeNet::register_on(tape, net2, "net2"));
  auto parts = tr::composite_loss_graph(tape, p1, p2, lam, data, batch, c.geometry, {});
  auto report = ad::check_gradient(tape, parts.total, 1e-5, 1e-5);
  INFO("max rel error " << report.max_rel_error);
  CHECK(report.passed);
}

TEST_CASE("adam_step: closed-form behaviour") {
  SECTION("zero gradients leave parameters unchanged and advance the counter") {
    std::vector<tr::ParamBlock> blocks{{"w", Matrix::Constant(2, 2, 1.5), 1.0}};
    auto state = tr::AdamState::for_blocks(blocks, 0.9, 0.999, 1e-8);
    tr::adam_step(state, blocks, {Matrix::Zero(2, 2)}, 1e-2);
    CHECK(blocks[0].value == Matrix::Constant(2, 2, 1.5));
    CHECK(state.step == 1);
  }
  SECTION("first step moves by ~lr for any nonzero scalar gradient") {
    for (const double g : {1e-6, 0.5, 42.0}) {
      std::vector<tr::ParamBlock> blocks{{"w", ad::Tape::scalar(1.0), 1.0}};
      auto state = tr::AdamState::for_blocks(blocks, 0.9, 0.999, 1e-8);
      tr::adam_step(state, blocks, {ad::Tape::scalar(g)}, 1e-3);
      CHECK(std::abs(1.0 - blocks[0].value(0, 0)) == Catch::Approx(1e-3).epsilon(0.02));
    }
  }
  SECTION("constant positive gradient decreases the parameter every step") {
    // Independent scalar simulation of the update rule as the oracle.
    std::vector<tr::ParamBlock> blocks{{"w", ad::Tape::scalar(0.7), 1.0}};
    auto state = tr::AdamState::for_blocks(blocks, 0.9, 0.999, 1e-8);
    double m = 0, v = 0, sim = 0.7;
    double prev = 0.7;
    for (int t = 1; t <= 100; ++t) {
      tr::adam_step(state, blocks, {ad::Tape::scalar(2.0)}, 1e-3);
      CHECK(blocks[0].value(0, 0) < prev);
      prev = blocks[0].value(0, 0);
      m = 0.9 * m + 0.1 * 2.0;
      v = 0.999 * v + 0.001 * 4.0;
      sim -= 1e-3 * (m / (1 - std::pow(0.9, t))) /
             (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    }
    CHECK(blocks[0].value(0, 0) == Catch::Approx(sim).margin(1e-12));
  }
  SECTION("non-finite gradient names the offending block") {
    std::vector<tr::ParamBlock> blocks{{"net1/L0/W", ad::Tape::scalar(1.0), 1.0}};
    auto state = tr::AdamState::for_blocks(blocks, 0.9, 0.999, 1e-8);
    Matrix bad = ad::Tape::scalar(std::numeric_limits<double>::quiet_NaN());
    CHECK_THROWS_WITH(tr::adam_step(state, blocks, {bad}, 1e-3),
                      Catch::Matchers::ContainsSubstring("net1/L0/W"));
  }
}

TEST_CASE("train: K = 0 returns the initial parameters and an empty trace") {
  const an::AnalyticCase1D c;
  auto data = an::generate_dataset(c, 32, 2);
  auto cfg = tiny_config_1d();
  cfg.max_iters = 0;
  auto result = tr::train(cfg, tiny_sampler(), data, c.geometry);
  CHECK(result.trace.records.empty());
  // Parameters are exactly the seeded initialization.
  auto fresh = nn::init_network({2, 8, 8, 2}, cfg.activation, Rng::splitmix64(cfg.seed + 1));
  CHECK(result.model.net1.layers[0].weights == fresh.layers[0].weights);
  CHECK(result.model.lambda.mu2 == cfg.lambda0.mu2);
  CHECK(result.model.lambda.d == 12.0);  // clamp is a no-op here
}

TEST_CASE("train: one iteration with lr = 0 leaves lambda exactly unchanged") {
  const an::AnalyticCase1D c;
  auto data = an::generate_dataset(c, 32, 2);
  auto cfg = tiny_config_1d();
  cfg.max_iters = 1;
  cfg.learning_rate = 0.0;
  auto result = tr::train(cfg, tiny_sampler(), data, c.geometry);
  REQUIRE(result.trace.records.size() == 1);
  CHECK(result.model.lambda.mu1 == cfg.lambda0.mu1);
  CHECK(result.model.lambda.eps2 == cfg.lambda0.eps2);
  CHECK(result.model.lambda.d == cfg.lambda0.d);
}

TEST_CASE("train: d is clamped into [delta, B - delta]") {
  const an::AnalyticCase1D c;
  auto data = an::generate_dataset(c, 32, 2);
  auto cfg = tiny_config_1d();
  cfg.max_iters = 1;
  cfg.lambda0.d = 35.0;  // outside the domain
  auto result = tr::train(cfg, tiny_sampler(), data, c.geometry);
  const double delta = cfg.clamp_margin_frac * c.geometry.x_bound;
  CHECK(result.trace.records[0].lambda.d == 20.0 - delta);
}

TEST_CASE("train: deterministic trace for fixed seed, across thread counts") {
  const an::AnalyticCase1D c;
  auto data = an::generate_dataset(c, 48, 2);
  auto cfg = tiny_config_1d();
  cfg.max_iters = 12;
  auto a = tr::train(cfg, tiny_sampler(), data, c.geometry);
  auto b = tr::train(cfg, tiny_sampler(), data, c.geometry);
  CHECK(a.trace.numerically_equal(b.trace));

  auto cfg4 = cfg;
  cfg4.threads = 4;
  auto d = tr::train(cfg4, tiny_sampler(), data, c.geometry);
  CHECK(a.trace.numerically_equal(d.trace));

  auto cfg_other = cfg;
  cfg_other.seed += 1;
  auto e = tr::train(cfg_other, tiny_sampler(), data, c.geometry);
  CHECK_FALSE(a.trace.numerically_equal(e.trace));
}

TEST_CASE("train: frozen resampling with small lr decreases the loss nearly monotonically") {
  const an::AnalyticCase1D c;
  auto data = an::generate_dataset(c, 48, 2);
  int good_trials = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto cfg = tiny_config_1d();
    cfg.seed = seed;
    cfg.max_iters = 21;
    cfg.learning_rate = 1e-4;
    cfg.resample_period = 1000;  // frozen for the whole run
    auto result = tr::train(cfg, tiny_sampler(), data, c.geometry);
    int decreases = 0;
    for (std::size_t i = 1; i < result.trace.records.size(); ++i)
      if (result.trace.records[i].loss.total < result.trace.records[i - 1].loss.total)
        ++decreases;
    if (decreases >= 18) ++good_trials;
  }
  CHECK(good_trials == 10);
}

TEST_CASE("train: non-finite loss aborts with the last good checkpoint") {
  const an::AnalyticCase1D c;
  sp::Dataset data;
  Rng rng(5);
  for (int i = 0; i < 8; ++i) {
    sp::DataPoint p;
    p.t = rng.uniform(0.0, 10.0);
    p.x = rng.uniform(0.0, 20.0);
    p.u = Eigen::VectorXd::Constant(2, 1e200);  // blows the squared misfit to inf
    data.push_back(p);
  }
  auto cfg = tiny_config_1d();
  cfg.max_iters = 3;
  auto result = tr::train(cfg, tiny_sampler(), data, c.geometry);
  CHECK(result.aborted);
  CHECK_THAT(result.abort_reason, Catch::Matchers::ContainsSubstring("non-finite"));
}

TEST_CASE("train_baseline: identity at K = 0 and analytic-oracle physics loss") {
  const an::AnalyticCase1D c;
  auto data = an::generate_dataset(c, 16, 2);
  auto cfg = tiny_config_1d();
  cfg.mode = tr::Mode::kBaseline;
  cfg.max_iters = 0;
  auto result = tr::train(cfg, tiny_sampler(), data, c.geometry);
  CHECK(result.trace.records.empty());
  CHECK(result.model.mode == tr::Mode::kBaseline);

  // Baseline loss graph with the analytic fields and true lambda.
  ad::Tape tape;
  auto lam = tr::register_lambda(tape, c.truth);
  oracle::AnalyticProvider1D provider(c, 0);  // route by x, as the baseline does
  sp::CollocationSet colloc;
  Rng rng(6);
  const int n = 32;
  colloc.t.resize(n);
  colloc.x.resize(n);
  for (int i = 0; i < n; ++i) {
    colloc.x(i) = rng.uniform(0.0, 20.0);
    colloc.t(i) = rng.uniform(0.0, 10.0);
  }
  auto parts = tr::baseline_loss_graph(tape, provider, lam, data, colloc, c.truth.d,
                                       c.geometry, {});
  CHECK(tape.value(parts.physics)(0, 0) <= 1e-12);
  CHECK(tape.value(parts.data)(0, 0) <= 1e-12);
  CHECK(tape.value(parts.interface_)(0, 0) == 0.0);
}

TEST_CASE("predict: sub-domain routing") {
  const an::AnalyticCase1D c;
  tr::Model model;
  model.mode = tr::Mode::kDaPinn;
  model.geometry = c.geometry;
  model.lambda = c.truth;  // d = 10
  model.net1 = nn::init_network({2, 6, 2}, ad::Activation::kTanh, 1);
  model.net2 = nn::init_network({2, 6, 2}, ad::Activation::kTanh, 2);

  SECTION("x = d goes to net1; just beyond to net2") {
    Matrix pts(3, 2);
    pts << 1.0, 10.0, 1.0, 10.0 - 1e-9, 1.0, 10.0 + 1e-9;
    Matrix out = tr::predict(model, pts);
    const auto n1 = nn::forward(model.net1, Eigen::Vector2d(1.0, 10.0));
    CHECK(out(0, 0) == n1(0));
    CHECK(out(1, 0) ==
          nn::forward(model.net1, Eigen::Vector2d(1.0, 10.0 - 1e-9))(0));
    CHECK(out(2, 0) ==
          nn::forward(model.net2, Eigen::Vector2d(1.0, 10.0 + 1e-9))(0));
    CHECK(out(0, 0) != out(2, 0));
  }
  SECTION("all points on side 1 match raw net1 forward") {
    Rng rng(9);
    Matrix pts(20, 2);
    for (int i = 0; i < 20; ++i) {
      pts(i, 0) = rng.uniform(0.0, 10.0);
      pts(i, 1) = rng.uniform(0.0, 10.0);
    }
    Matrix out = tr::predict(model, pts);
    Matrix direct = nn::forward_batch(model.net1, pts);
    CHECK(out == direct);
  }
  SECTION("out-of-domain point raises a range error") {
    Matrix pts(1, 2);
    pts << 1.0, 25.0;
    CHECK_THROWS_AS(tr::predict(model, pts), dapinn::range_error);
  }
  SECTION("baseline uses its single network everywhere") {
    model.mode = tr::Mode::kBaseline;
    Matrix pts(2, 2);
    pts << 1.0, 5.0, 1.0, 15.0;
    Matrix out = tr::predict(model, pts);
    Matrix direct = nn::forward_batch(model.net1, pts);
    CHECK(out == direct);
  }
}

TEST_CASE("checkpoint: json round trip preserves every value") {
  const an::AnalyticCase1D c;
  auto data = an::generate_dataset(c, 24, 2);
  auto cfg = tiny_config_1d();
  cfg.max_iters = 3;
  auto result = tr::train(cfg, tiny_sampler(), data, c.geometry);

  tr::Checkpoint ckpt;
  ckpt.model = result.model;
  ckpt.iterations_done = 3;
  auto j = tr::checkpoint_to_json(ckpt);
  auto back = tr::checkpoint_from_json(nlohmann::json::parse(j.dump()));
  CHECK(back.model.lambda.d == result.model.lambda.d);
  CHECK(back.model.lambda.eps2 == result.model.lambda.eps2);
  CHECK(back.model.net1.layers[1].weights == result.model.net1.layers[1].weights);
  CHECK(back.model.net2.layers[0].bias == result.model.net2.layers[0].bias);
  CHECK(back.iterations_done == 3);
  CHECK(back.model.geometry.x_bound == 20.0);
}

TEST_CASE("trace: csv round trip and numeric comparison ignore only wall time") {
  tr::TrainTrace trace;
  for (int i = 0; i < 3; ++i) {
    tr::TraceRecord r;
    r.iter = i;
    r.loss = {0.1 / (i + 1), 0.2, 0.3, 0.1 / (i + 1) + 0.5};
    r.lambda = {1, 1, 9 + 1e-13 * i, 1, 10};
    r.ms = 17.0 * i;
    trace.records.push_back(r);
  }
  const std::string path = "trace_roundtrip_test.csv";
  trace.write_csv(path);
  auto back = tr::TrainTrace::read_csv(path);
  CHECK(back.numerically_equal(trace));
  std::remove(path.c_str());

  auto other = trace;
  other.records[2].ms = 999.0;
  CHECK(trace.numerically_equal(other));  // ms excluded
  other.records[2].lambda.mu2 += 1e-15;
  CHECK_FALSE(trace.numerically_equal(other));
}
