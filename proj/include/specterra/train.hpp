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

#pragma once

// Teacher-forced training: masked L1/MSE composite loss, Adam with
// exponential learning-rate decay, checkpoints and a CSV metrics log.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "specterra/seq_prep.hpp"
#include "specterra/tensor.hpp"
#include "specterra/transformer.hpp"

namespace specterra {

struct TrainConfig {
  double lr0 = 1e-4;
  double decay_step = 4000.0;
  double decay_rate = 0.96;
  bool staircase = false;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;
  std::size_t batch_size = 8;
  std::size_t max_steps = 20000;
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 1000;
  // Plain sums instead of per-element means.
  bool raw_sum_loss = false;
  std::filesystem::path checkpoint_path;  // empty: no checkpoints
  std::filesystem::path metrics_path;     // empty: no CSV

  void validate() const {
    if (!(decay_rate > 0.0 && decay_rate <= 1.0)) throw ConfigError("decay_rate must be in (0, 1]");
    if (!(decay_step > 0.0)) throw ConfigError("decay_step must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must be in [0, 1)");
    if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
  }
};

// ---------------------------------------------------------------------------
// Loss

template <typename T>
struct LossTerms {
  ad::Tensor<T> final_loss;
  ad::Tensor<T> l1;
  ad::Tensor<T> mse;
};

// Per-element weights (B, Td, F): 1 on real decoder steps, 0 on padding.
// An empty mask scores every element.
template <typename T>
ad::Tensor<T> loss_weights(const ad::Shape& shape, const std::vector<std::uint8_t>& pad_mask) {
  if (shape.size() != 3) throw ShapeError("loss: expected (B, T, F) tensors");
  const std::size_t rows = shape[0] * shape[1], f = shape[2];
  if (!pad_mask.empty() && pad_mask.size() != rows) throw ShapeError("loss: mask does not match tensors");
  std::vector<T> w(rows * f, T(1));
  if (!pad_mask.empty())
    for (std::size_t r = 0; r < rows; ++r)
      if (pad_mask[r]) std::fill_n(w.begin() + static_cast<std::ptrdiff_t>(r * f), f, T{});
  return ad::Tensor<T>::constant(shape, std::move(w));
}

// L1 = sum |y - y_hat|, MSE = 1/2 sum (y - y_hat)^2, final = 0.5 L1 + 0.5 MSE,
// all over unmasked elements. Unless raw_sum, each term is divided by the
// unmasked element count.
template <typename T>
LossTerms<T> loss_terms(const ad::Tensor<T>& y_true, const ad::Tensor<T>& y_pred,
                        const std::vector<std::uint8_t>& pad_mask, bool raw_sum = false) {
  ad::detail::require_same_shape("loss", y_true.shape(), y_pred.shape());
  auto w = loss_weights<T>(y_pred.shape(), pad_mask);
  double count = 0.0;
  for (T v : w.values()) count += static_cast<double>(v);
  const T scale = raw_sum || count == 0.0 ? T(1) : static_cast<T>(1.0 / count);
  auto diff = ad::sub(y_pred, y_true);
  auto l1 = ad::mul_scalar(ad::sum(ad::mul(ad::abs(diff), w)), scale);
  auto mse = ad::mul_scalar(ad::sum(ad::mul(ad::square(diff), w)), static_cast<T>(0.5) * scale);
  auto total = ad::add(ad::mul_scalar(l1, T(0.5)), ad::mul_scalar(mse, T(0.5)));
  return {total, l1, mse};
}

template <typename T>
ad::Tensor<T> loss_l1(const ad::Tensor<T>& y_true, const ad::Tensor<T>& y_pred,
                      const std::vector<std::uint8_t>& pad_mask, bool raw_sum = false) {
  return loss_terms(y_true, y_pred, pad_mask, raw_sum).l1;
}
template <typename T>
ad::Tensor<T> loss_mse(const ad::Tensor<T>& y_true, const ad::Tensor<T>& y_pred,
                       const std::vector<std::uint8_t>& pad_mask, bool raw_sum = false) {
  return loss_terms(y_true, y_pred, pad_mask, raw_sum).mse;
}
template <typename T>
ad::Tensor<T> loss_final(const ad::Tensor<T>& y_true, const ad::Tensor<T>& y_pred,
                         const std::vector<std::uint8_t>& pad_mask, bool raw_sum = false) {
  return loss_terms(y_true, y_pred, pad_mask, raw_sum).final_loss;
}

// ---------------------------------------------------------------------------
// Optimizer

// lr0 * decay_rate^(step / decay_step); the exponent is floored in staircase mode.
inline double lr_at(std::uint64_t step, const TrainConfig& cfg) {
  double e = static_cast<double>(step) / cfg.decay_step;
  if (cfg.staircase) e = std::floor(e);
  return cfg.lr0 * std::pow(cfg.decay_rate, e);
}

// Bias-corrected Adam. Parameters without a gradient are treated as having a
// zero gradient. Any non-finite gradient aborts before anything is modified.
template <typename T>
void adam_step(ModelState<T>& s, double lr, const TrainConfig& cfg) {
  for (const auto& [name, p] : s.params)
    for (T g : p.grad())
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in " + name);

  const double t = static_cast<double>(s.step + 1);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, p] : s.params) {
    auto& m = s.adam_m[name];
    auto& v = s.adam_v[name];
    if (m.empty()) m.assign(p.size(), T{});
    if (v.empty()) v.assign(p.size(), T{});
    auto values = p.mutable_values();
    auto grad = p.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad.empty() ? 0.0 : static_cast<double>(grad[i]);
      const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      values[i] = static_cast<T>(values[i] - lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.epsilon));
    }
  }
  ++s.step;
}

// ---------------------------------------------------------------------------
// Loop

struct MetricsRow {
  std::uint64_t step = 0;
  double lr = 0.0;
  double loss_final = 0.0;
  double loss_l1 = 0.0;
  double loss_mse = 0.0;
};

inline std::string metrics_header() { return "step,lr,loss_final,loss_l1,loss_mse"; }

inline std::string format_metrics_row(const MetricsRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%llu,%.9g,%.9g,%.9g,%.9g", static_cast<unsigned long long>(r.step), r.lr,
                r.loss_final, r.loss_l1, r.loss_mse);
  return buf;
}

struct TrainResult {
  ModelState<float> state;
  std::vector<MetricsRow> metrics;
  bool halted = false;  // stopped by a numeric error
  std::string halt_reason;
};

// Records corpus statistics used at inference time: the mean target frame
// (EOS radius) and the longest target (decode cap).
template <typename T>
void record_corpus_stats(ModelState<T>& s, const std::vector<UtterancePair>& pairs) {
  const std::size_t f = s.config.d_model;
  std::vector<double> acc(f, 0.0);
  std::size_t frames = 0, longest = 0;
  for (const auto& p : pairs) {
    for (std::size_t t = 0; t < p.target_mag.frames; ++t)
      for (std::size_t k = 0; k < f; ++k) acc[k] += p.target_mag(k, t);
    frames += p.target_mag.frames;
    longest = std::max(longest, p.target_mag.frames);
  }
  s.mean_frame.assign(f, 0.0f);
  if (frames > 0)
    for (std::size_t k = 0; k < f; ++k) s.mean_frame[k] = static_cast<float>(acc[k] / static_cast<double>(frames));
  s.metadata["corpus.max_target_frames"] = std::to_string(longest);
  if (s.config.max_decode_len == 0) s.config.max_decode_len = longest + 16;
}

// Deterministic batch order: Fisher-Yates reshuffle per pass over the corpus.
class BatchSampler {
 public:
  BatchSampler(std::size_t corpus, std::size_t batch, std::uint64_t seed)
      : corpus_(corpus), batch_(std::min(batch, corpus)), rng_(seed) {}

  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    while (out.size() < batch_) {
      if (cursor_ == order_.size()) reshuffle();
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    order_.resize(corpus_);
    for (std::size_t i = 0; i < corpus_; ++i) order_[i] = i;
    for (std::size_t i = corpus_; i > 1; --i) {
      auto j = static_cast<std::size_t>(ad::uniform01(rng_) * static_cast<double>(i));
      std::swap(order_[i - 1], order_[j]);
    }
    cursor_ = 0;
  }
  std::size_t corpus_, batch_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

// Teacher-forced, eval-mode loss over the whole corpus (per element).
template <typename T>
MetricsRow evaluate_loss(const std::vector<UtterancePair>& pairs, const ModelState<T>& s, std::size_t batch_size = 8) {
  double l1 = 0.0, mse = 0.0, count = 0.0;
  for (std::size_t i = 0; i < pairs.size(); i += batch_size) {
    std::vector<const UtterancePair*> chunk;
    for (std::size_t j = i; j < std::min(pairs.size(), i + batch_size); ++j) chunk.push_back(&pairs[j]);
    auto batch = build_batch<T>(chunk, s.tokens);
    auto pred = model_forward(batch, s);
    auto terms = loss_terms(batch.decoder_target, pred, batch.tgt_pad_mask, true);
    l1 += terms.l1.item();
    mse += terms.mse.item();
    for (auto m : batch.tgt_pad_mask) count += m ? 0.0 : static_cast<double>(batch.features());
  }
  MetricsRow row;
  row.step = s.step;
  row.loss_l1 = l1 / count;
  row.loss_mse = mse / count;
  row.loss_final = 0.5 * row.loss_l1 + 0.5 * row.loss_mse;
  return row;
}

// Runs up to cfg.max_steps updates on `state`. `on_step` sees each metrics
// row and may return false to stop early. A numeric error saves a checkpoint
// of the last good state and halts.
inline TrainResult train_loop(const std::vector<UtterancePair>& pairs, ModelState<float> state, const TrainConfig& cfg,
                              const std::function<bool(const MetricsRow&, const ModelState<float>&)>& on_step = {}) {
  cfg.validate();
  if (pairs.empty()) throw ConfigError("training corpus is empty");
  TrainResult result;
  std::ofstream metrics;
  if (!cfg.metrics_path.empty()) {
    if (cfg.metrics_path.has_parent_path()) std::filesystem::create_directories(cfg.metrics_path.parent_path());
    metrics.open(cfg.metrics_path, std::ios::trunc);
    if (!metrics) throw IoError("cannot open metrics file " + cfg.metrics_path.string());
    metrics << metrics_header() << '\n';
  }
  auto checkpoint = [&](const ModelState<float>& s) {
    if (!cfg.checkpoint_path.empty()) save_checkpoint(s, cfg.checkpoint_path);
  };

  BatchSampler sampler(pairs.size(), cfg.batch_size, sub_seed(cfg.seed, "batches"));
  std::mt19937_64 dropout_rng(sub_seed(cfg.seed, "dropout"));
  ForwardOptions opt{true, &dropout_rng};

  for (std::size_t i = 0; i < cfg.max_steps; ++i) {
    std::vector<const UtterancePair*> chunk;
    for (std::size_t idx : sampler.next()) chunk.push_back(&pairs[idx]);
    const double lr = lr_at(state.step, cfg);
    MetricsRow row;
    try {
      auto batch = build_batch<float>(chunk, state.tokens);
      auto pred = model_forward(batch, state, opt);
      auto terms = loss_terms(batch.decoder_target, pred, batch.tgt_pad_mask, cfg.raw_sum_loss);
      state.zero_grad();
      ad::backward(terms.final_loss);
      row = {state.step, lr, terms.final_loss.item(), terms.l1.item(), terms.mse.item()};
      adam_step(state, lr, cfg);
    } catch (const NumericError& e) {
      result.halted = true;
      result.halt_reason = e.what();
      checkpoint(state);
      break;
    }
    result.metrics.push_back(row);
    if (metrics.is_open()) metrics << format_metrics_row(row) << '\n' << std::flush;
    if (cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0) checkpoint(state);
    if (on_step && !on_step(row, state)) break;
  }
  state.zero_grad();
  if (!result.halted) checkpoint(state);
  result.state = std::move(state);
  return result;
}

// Initializes a model from `model_cfg` and trains it.
inline TrainResult train(const std::vector<UtterancePair>& pairs, const ModelConfig& model_cfg, const TrainConfig& cfg,
                         const std::function<bool(const MetricsRow&, const ModelState<float>&)>& on_step = {}) {
  if (pairs.empty()) throw ConfigError("training corpus is empty");
  auto state = init_model<float>(model_cfg, cfg.seed);
  if (pairs.front().source.magnitude.bins != model_cfg.d_model)
    throw ShapeError("feature width " + std::to_string(pairs.front().source.magnitude.bins) +
                     " differs from d_model " + std::to_string(model_cfg.d_model));
  record_corpus_stats(state, pairs);
  return train_loop(pairs, std::move(state), cfg, on_step);
}

}  // namespace specterra
