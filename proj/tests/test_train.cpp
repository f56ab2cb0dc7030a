// Copyright 2026 The Specterra Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "specterra/train.hpp"

namespace ad = specterra::ad;
using TD = ad::Tensor<double>;
using specterra::TrainConfig;

namespace {

TD t3(std::vector<double> v) {
  const std::size_t n = v.size();
  return TD::constant({1, 1, n}, std::move(v));
}

std::vector<specterra::UtterancePair> tiny_corpus(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<specterra::UtterancePair> pairs(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& p = pairs[i];
    p.source.magnitude = specterra::FrameMatrix<double>(8, 3 + i % 3);
    p.target_mag = specterra::FrameMatrix<double>(8, 2 + i % 4);
    for (double& v : p.source.magnitude.data) v = u(rng);
    for (double& v : p.target_mag.data) v = u(rng);
  }
  return pairs;
}

specterra::ModelConfig tiny_model() {
  specterra::ModelConfig c;
  c.d_model = 8;
  c.n_layers_enc = c.n_layers_dec = 1;
  c.n_heads = 2;
  c.d_ff = 16;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Loss, WorkedExamples) {
  // d = (1, -2): L1 = 3, MSE = 0.5 * 5 = 2.5, final = 2.75.
  auto y = t3({1.0, 2.0}), yh = t3({2.0, 0.0});
  EXPECT_DOUBLE_EQ(specterra::loss_l1(y, yh, {}, true).item(), 3.0);
  EXPECT_DOUBLE_EQ(specterra::loss_mse(y, yh, {}, true).item(), 2.5);
  EXPECT_DOUBLE_EQ(specterra::loss_final(y, yh, {}, true).item(), 2.75);
  EXPECT_DOUBLE_EQ(specterra::loss_final(y, yh, {}).item(), 2.75 / 2.0);
  EXPECT_EQ(specterra::loss_final(y, y, {}, true).item(), 0.0);
  auto z = t3({0.0, 0.0});
  EXPECT_DOUBLE_EQ(specterra::loss_final(z, t3({1.0, 1.0}), {}, true).item(), 0.5 * 2.0 + 0.5 * 1.0);
}

TEST(Loss, MaskedRowsIgnored) {
  auto y = TD::constant({1, 3, 2}, {1, 1, 2, 2, 3, 3});
  auto yh = TD::constant({1, 3, 2}, {0, 1, 2, 0, 50, -50});
  const std::vector<std::uint8_t> mask{0, 0, 1};
  auto base = specterra::loss_final(y, yh, mask, true).item();
  auto yh2 = TD::constant({1, 3, 2}, {0, 1, 2, 0, -7, 9});
  EXPECT_EQ(base, specterra::loss_final(y, yh2, mask, true).item());
  EXPECT_DOUBLE_EQ(base, 0.5 * 3.0 + 0.25 * 5.0);
  EXPECT_DOUBLE_EQ(specterra::loss_final(y, yh, mask).item(), base / 4.0);
  EXPECT_THROW(specterra::loss_final(y, yh, {0, 1}), specterra::ShapeError);
}

TEST(Loss, MseGradientIsResidual) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  std::vector<double> a(12), b(12);
  for (std::size_t i = 0; i < 12; ++i) {
    a[i] = n(rng);
    b[i] = n(rng);
  }
  auto y = TD::constant({2, 3, 2}, a);
  auto yh = TD::parameter({2, 3, 2}, b);
  ad::backward(specterra::loss_mse(y, yh, {}, true));
  for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(yh.grad()[i], b[i] - a[i], 1e-12);
}

TEST(Loss, BruteForceOracle) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t bsz = 1 + rng() % 3, steps = 1 + rng() % 5, f = 1 + rng() % 6;
    std::vector<double> a(bsz * steps * f), b(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = n(rng);
      b[i] = n(rng);
    }
    std::vector<std::uint8_t> mask(bsz * steps);
    for (auto& m : mask) m = rng() % 4 == 0;
    auto got = specterra::loss_final(TD::constant({bsz, steps, f}, a), TD::constant({bsz, steps, f}, b), mask, true);
    EXPECT_NEAR(got.item(), oracle::loss_final_raw(a, b, mask, f), 1e-6);
  }
}

TEST(Schedule, ExponentialDecay) {
  TrainConfig cfg;
  EXPECT_EQ(specterra::lr_at(0, cfg), 1e-4);
  EXPECT_NEAR(specterra::lr_at(4000, cfg), 9.6e-5, 1e-18);
  EXPECT_NEAR(specterra::lr_at(8000, cfg), 9.216e-5, 1e-18);
  EXPECT_NEAR(specterra::lr_at(2000, cfg), 1e-4 * std::sqrt(0.96), 1e-18);
  for (std::uint64_t s = 1; s < 20000; s += 97) EXPECT_LT(specterra::lr_at(s, cfg), specterra::lr_at(s - 1, cfg));
  cfg.staircase = true;
  EXPECT_EQ(specterra::lr_at(3999, cfg), 1e-4);
  EXPECT_NEAR(specterra::lr_at(4000, cfg), 9.6e-5, 1e-18);
  cfg.decay_rate = 1.0;
  EXPECT_EQ(specterra::lr_at(123456, cfg), 1e-4);
}

TEST(Adam, ZeroGradientLeavesParametersButDecaysMoments) {
  auto s = specterra::init_model<double>(tiny_model(), 1);
  TrainConfig cfg;
  auto before = s.param("enc.0.ffn.w1");
  std::vector<double> w0(before.values().begin(), before.values().end());
  for (auto& [name, p] : s.params) {
    s.adam_m[name].assign(p.size(), 0.0);
    s.adam_v[name].assign(p.size(), 0.0);
  }
  s.adam_m["enc.0.ffn.w1"].assign(w0.size(), 0.0);
  specterra::adam_step(s, 1e-3, cfg);
  auto after = s.param("enc.0.ffn.w1").values();
  for (std::size_t i = 0; i < w0.size(); ++i) EXPECT_EQ(after[i], w0[i]);
  EXPECT_EQ(s.step, 1u);

  // Non-zero first moment with zero gradient decays by beta1.
  s.adam_m["enc.0.ffn.w1"].assign(w0.size(), 1.0);
  specterra::adam_step(s, 0.0, cfg);
  EXPECT_DOUBLE_EQ(s.adam_m["enc.0.ffn.w1"][0], 0.9);
}

TEST(Adam, FirstStepHasMagnitudeLr) {
  auto s = specterra::init_model<double>(tiny_model(), 2);
  TrainConfig cfg;
  auto& p = s.params.at("dec.0.ffn.w2");
  std::vector<double> w0(p.values().begin(), p.values().end());
  auto loss = ad::sum(ad::mul_scalar(p, 3.0));
  ad::backward(loss);
  specterra::adam_step(s, 1e-3, cfg);
  for (std::size_t i = 0; i < w0.size(); ++i) EXPECT_NEAR(w0[i] - p.values()[i], 1e-3, 1e-9);
}

TEST(Adam, TwoHalfStepsDifferFromOneFullStep) {
  TrainConfig cfg;
  auto run = [&](int steps, double lr) {
    auto s = specterra::init_model<double>(tiny_model(), 3);
    for (int k = 0; k < steps; ++k) {
      s.zero_grad();
      auto& p = s.params.at("enc.0.ffn.b1");
      ad::backward(ad::sum(ad::square(p)));
      auto& q = s.params.at("enc.0.ffn.w1");
      ad::backward(ad::sum(ad::square(q)));
      specterra::adam_step(s, lr, cfg);
    }
    auto v = s.param("enc.0.ffn.w1").values();
    return std::vector<double>(v.begin(), v.end());
  };
  auto one = run(1, 2e-3), two = run(2, 1e-3);
  double diff = 0.0;
  for (std::size_t i = 0; i < one.size(); ++i) diff = std::max(diff, std::abs(one[i] - two[i]));
  EXPECT_GT(diff, 1e-6);
}

TEST(Adam, NonFiniteGradientThrowsWithoutMutation) {
  auto s = specterra::init_model<double>(tiny_model(), 4);
  TrainConfig cfg;
  auto& p = s.params.at("enc.0.ln1.gain");
  ad::backward(ad::sum(ad::mul_scalar(p, 1.0)));
  s.params.at("enc.0.ln1.gain").mutable_grad()[0] = std::numeric_limits<double>::quiet_NaN();
  auto w = s.param("enc.0.self_attn.wq").values();
  std::vector<double> w0(w.begin(), w.end());
  EXPECT_THROW(specterra::adam_step(s, 1e-3, cfg), specterra::NumericError);
  EXPECT_EQ(s.step, 0u);
  EXPECT_TRUE(s.adam_m.empty());
  auto w1 = s.param("enc.0.self_attn.wq").values();
  EXPECT_TRUE(std::equal(w0.begin(), w0.end(), w1.begin()));
}

TEST(TrainLoop, ZeroStepsKeepsInitialState) {
  auto pairs = tiny_corpus(3, 1);
  TrainConfig cfg;
  cfg.max_steps = 0;
  cfg.seed = 9;
  auto r = specterra::train(pairs, tiny_model(), cfg);
  EXPECT_TRUE(r.metrics.empty());
  EXPECT_FALSE(r.halted);
  auto fresh = specterra::init_model<float>(tiny_model(), 9);
  for (const auto& [name, p] : fresh.params)
    EXPECT_TRUE(std::equal(p.values().begin(), p.values().end(), r.state.param(name).values().begin())) << name;
  EXPECT_EQ(r.state.step, 0u);
}

TEST(TrainLoop, DeterministicMetricsAndCheckpoints) {
  oracle::TempDir dir("train");
  auto pairs = tiny_corpus(5, 2);
  TrainConfig cfg;
  cfg.lr0 = 1e-3;
  cfg.batch_size = 2;
  cfg.max_steps = 12;
  cfg.checkpoint_every = 5;
  cfg.checkpoint_path = dir / "a.vfvc";
  cfg.metrics_path = dir / "a.csv";
  auto a = specterra::train(pairs, tiny_model(), cfg);
  cfg.checkpoint_path = dir / "b.vfvc";
  cfg.metrics_path = dir / "b.csv";
  auto b = specterra::train(pairs, tiny_model(), cfg);
  EXPECT_EQ(slurp(dir / "a.csv"), slurp(dir / "b.csv"));
  EXPECT_EQ(oracle::read_bytes(dir / "a.vfvc"), oracle::read_bytes(dir / "b.vfvc"));
  ASSERT_EQ(a.metrics.size(), 12u);
  EXPECT_EQ(a.state.step, 12u);

  std::istringstream csv(slurp(dir / "a.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "step,lr,loss_final,loss_l1,loss_mse");
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    std::istringstream fields(line);
    std::string f;
    std::vector<double> v;
    while (std::getline(fields, f, ',')) v.push_back(std::stod(f));
    ASSERT_EQ(v.size(), 5u);
    EXPECT_EQ(v[0], static_cast<double>(rows));
    EXPECT_NEAR(v[1], specterra::lr_at(rows, cfg), 1e-12);
    EXPECT_NEAR(v[2], 0.5 * v[3] + 0.5 * v[4], 1e-6 * v[2]);
    ++rows;
  }
  EXPECT_EQ(rows, 12u);

  auto loaded = specterra::load_checkpoint<float>(dir / "a.vfvc");
  EXPECT_EQ(loaded.step, 12u);
  EXPECT_EQ(loaded.metadata.at("corpus.max_target_frames"), "5");
}

TEST(TrainLoop, LossDecreasesOnFixedBatch) {
  auto pairs = tiny_corpus(2, 3);
  TrainConfig cfg;
  cfg.lr0 = 3e-3;
  cfg.batch_size = 2;
  cfg.max_steps = 150;
  auto model = tiny_model();
  model.dropout = 0.0;
  auto init = specterra::init_model<float>(model, cfg.seed);
  const double before = specterra::evaluate_loss(pairs, init).loss_final;
  auto r = specterra::train(pairs, model, cfg);
  EXPECT_LT(specterra::evaluate_loss(pairs, r.state).loss_final, 0.5 * before);
}

TEST(TrainLoop, HaltsOnNumericError) {
  oracle::TempDir dir("halt");
  auto pairs = tiny_corpus(2, 4);
  pairs[1].target_mag.data[0] = 1e30;  // squared residual overflows float
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.max_steps = 5;
  cfg.checkpoint_path = dir / "h.vfvc";
  auto r = specterra::train(pairs, tiny_model(), cfg);
  EXPECT_TRUE(r.halted);
  EXPECT_FALSE(r.halt_reason.empty());
  EXPECT_TRUE(r.metrics.empty());
  EXPECT_TRUE(std::filesystem::exists(dir / "h.vfvc"));
}

TEST(TrainLoop, RejectsBadInputs) {
  TrainConfig cfg;
  EXPECT_THROW(specterra::train({}, tiny_model(), cfg), specterra::ConfigError);
  auto wide = tiny_model();
  wide.d_model = 16;
  EXPECT_THROW(specterra::train(tiny_corpus(2, 5), wide, cfg), specterra::ShapeError);
  cfg.decay_rate = 1.5;
  EXPECT_THROW(specterra::train(tiny_corpus(2, 5), tiny_model(), cfg), specterra::ConfigError);
}
