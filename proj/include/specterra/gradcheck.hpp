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

// Central finite-difference verification of the autodiff engine, in double
// precision.

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "specterra/tensor.hpp"
#include "specterra/train.hpp"
#include "specterra/transformer.hpp"

namespace specterra {

struct GradCheckReport {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t checked = 0;
  bool passed = false;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Relative error is |a - n| / max(|a|, |n|, floor).
  double floor = 1e-3;
};

// Compares the analytic gradient of scalar `loss` w.r.t. every element of
// `inputs` against central differences (f(x+h) - f(x-h)) / 2h.
inline GradCheckReport check_gradients(const std::string& name,
                                       const std::function<ad::Tensor<double>()>& loss,
                                       std::vector<ad::Tensor<double>> inputs, const GradCheckOptions& opt = {}) {
  GradCheckReport report{name, 0.0, opt.tolerance, 0, false};
  for (auto& x : inputs) x.zero_grad();
  ad::backward(loss());
  for (auto& x : inputs) {
    std::vector<double> analytic(x.grad().begin(), x.grad().end());
    if (analytic.empty()) analytic.assign(x.size(), 0.0);
    auto values = x.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + opt.step;
      const double up = loss().item();
      values[i] = orig - opt.step;
      const double down = loss().item();
      values[i] = orig;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), opt.floor});
      report.max_rel_error = std::max(report.max_rel_error, std::abs(analytic[i] - numeric) / denom);
      ++report.checked;
    }
  }
  report.passed = report.max_rel_error <= opt.tolerance;
  return report;
}

namespace detail {

inline std::vector<double> random_values(std::mt19937_64& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = lo + (hi - lo) * ad::uniform01(rng);
  return v;
}

// Values with |x| in [0.1, 1], away from relu/abs kinks.
inline std::vector<double> values_off_kink(std::mt19937_64& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) {
    const double mag = 0.1 + 0.9 * ad::uniform01(rng);
    x = ad::uniform01(rng) < 0.5 ? -mag : mag;
  }
  return v;
}

// sum(op(...) * R) for a fixed random R, so every output element matters.
inline ad::Tensor<double> weighted_sum(const ad::Tensor<double>& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ad::sum(ad::mul(y, ad::Tensor<double>::constant(y.shape(), random_values(rng, y.size()))));
}

}  // namespace detail

// Tiny model used by the end-to-end check.
inline ModelConfig tiny_model_config() {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_layers_enc = 1;
  cfg.n_layers_dec = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 16;
  cfg.dropout = 0.0;
  return cfg;
}

// Gradient check of the full teacher-forced loss of a small model (d_model 8,
// one layer each side, 2 heads, sequences of up to 4 frames with padding).
inline GradCheckReport check_model_gradients(std::uint64_t seed, double tolerance = 1e-3) {
  auto state = init_model<double>(tiny_model_config(), seed);
  std::mt19937_64 rng(sub_seed(seed, "gradcheck/data"));
  auto frames = [&](std::size_t n) {
    FrameMatrix<double> m(8, n);
    for (double& v : m.data) v = ad::uniform01(rng);
    return m;
  };
  auto s0 = frames(4), s1 = frames(3), t0 = frames(4), t1 = frames(2);
  auto batch = build_batch<double>({&s0, &s1}, {&t0, &t1}, state.tokens);
  std::vector<ad::Tensor<double>> params;
  for (auto& [name, p] : state.params) params.push_back(p);
  GradCheckOptions opt;
  opt.tolerance = tolerance;
  return check_gradients(
      "model_loss(d_model=8,N=1,heads=2,T=4)",
      [&] { return loss_final(batch.decoder_target, model_forward(batch, state), batch.tgt_pad_mask); }, params, opt);
}

// Checks every differentiable op, multi-head attention and the end-to-end
// model loss. With inject_fault an op with a deliberately wrong backward
// rule is added; its entry must fail.
inline std::vector<GradCheckReport> run_gradcheck_suite(std::uint64_t seed, bool inject_fault = false) {
  using ad::Tensor;
  using T = Tensor<double>;
  std::mt19937_64 rng(seed);
  auto param = [&](ad::Shape s) { return T::parameter(s, detail::random_values(rng, ad::numel(s))); };
  auto param_off_kink = [&](ad::Shape s) { return T::parameter(s, detail::values_off_kink(rng, ad::numel(s))); };
  std::vector<GradCheckReport> out;
  std::uint64_t w = seed * 131 + 17;

  {
    auto a = param({2, 3, 4}), b = param({4, 5});
    out.push_back(check_gradients("matmul(shared)", [=] { return detail::weighted_sum(ad::matmul(a, b), w); }, {a, b}));
  }
  {
    auto a = param({2, 3, 4}), b = param({2, 4, 2});
    out.push_back(check_gradients("matmul(batched)", [=] { return detail::weighted_sum(ad::matmul(a, b), w); }, {a, b}));
  }
  {
    auto a = param({2, 2, 3, 4}), b = param({2, 2, 5, 4});
    out.push_back(check_gradients("matmul(transpose_b)", [=] { return detail::weighted_sum(ad::matmul(a, b, true), w); }, {a, b}));
  }
  {
    auto a = param({3, 4}), b = param({3, 4});
    out.push_back(check_gradients("add", [=] { return detail::weighted_sum(ad::add(a, b), w); }, {a, b}));
    out.push_back(check_gradients("sub", [=] { return detail::weighted_sum(ad::sub(a, b), w); }, {a, b}));
    out.push_back(check_gradients("mul", [=] { return detail::weighted_sum(ad::mul(a, b), w); }, {a, b}));
    out.push_back(check_gradients("mul_scalar", [=] { return detail::weighted_sum(ad::mul_scalar(a, 2.5), w); }, {a}));
  }
  {
    auto x = param({2, 3, 4}), b = param({4});
    out.push_back(check_gradients("add_bias", [=] { return detail::weighted_sum(ad::add_bias(x, b), w); }, {x, b}));
  }
  {
    auto s = param({2, 2, 3, 4});
    auto bias = T::constant({2, 1, 4}, {0, 0, -1e9, 0, 0, 0, 0, -1e9});
    out.push_back(check_gradients("add_attention_bias",
                                  [=] { return detail::weighted_sum(ad::softmax_lastdim(ad::add_attention_bias(s, bias)), w); },
                                  {s}));
  }
  {
    auto x = param_off_kink({3, 5});
    out.push_back(check_gradients("relu", [=] { return detail::weighted_sum(ad::relu(x), w); }, {x}));
    out.push_back(check_gradients("abs", [=] { return detail::weighted_sum(ad::abs(x), w); }, {x}));
    out.push_back(check_gradients("square", [=] { return detail::weighted_sum(ad::square(x), w); }, {x}));
    out.push_back(check_gradients("sum", [=] { return ad::mul_scalar(ad::sum(x), 0.7); }, {x}));
  }
  {
    auto x = param({3, 6});
    out.push_back(check_gradients("softmax_lastdim", [=] { return detail::weighted_sum(ad::softmax_lastdim(x), w); }, {x}));
  }
  {
    auto x = param({3, 6}), g = param({6}), b = param({6});
    out.push_back(check_gradients("layer_norm", [=] { return detail::weighted_sum(ad::layer_norm(x, g, b), w); }, {x, g, b}));
  }
  {
    auto x = param({4, 5});
    out.push_back(check_gradients("dropout", [=] {
      std::mt19937_64 mask_rng(seed + 99);  // same mask on every evaluation
      return detail::weighted_sum(ad::dropout(x, 0.3, true, mask_rng), w);
    }, {x}));
  }
  {
    auto x = param({2, 3, 4});
    out.push_back(check_gradients("reshape", [=] { return detail::weighted_sum(ad::reshape(x, {6, 4}), w); }, {x}));
  }
  {
    auto x = param({2, 3, 4, 2});
    out.push_back(check_gradients("swap_axes_12", [=] { return detail::weighted_sum(ad::swap_axes_12(x), w); }, {x}));
  }
  {
    auto state = init_model<double>(tiny_model_config(), seed);
    auto q = param({2, 3, 8}), kv = param({2, 4, 8});
    auto bias = T::constant({2, 1, 4}, {0, 0, 0, 0, 0, 0, -1e9, -1e9});
    std::vector<T> inputs{q, kv};
    for (const char* n : {"wq", "wk", "wv", "wo"}) inputs.push_back(state.param(std::string("dec.0.cross_attn.") + n));
    out.push_back(check_gradients("multi_head_attention", [=] {
      return detail::weighted_sum(multi_head_attention(q, kv, bias, state, "dec.0.cross_attn"), w);
    }, inputs));
  }
  {
    auto y = param({2, 3, 4}), t = T::constant({2, 3, 4}, detail::random_values(rng, 24, 0.0, 1.0));
    std::vector<std::uint8_t> mask{0, 0, 1, 0, 0, 0};
    out.push_back(check_gradients("loss_final", [=] { return loss_final(t, y, mask); }, {y}));
  }
  out.push_back(check_model_gradients(seed));

  if (inject_fault) {
    auto x = param_off_kink({3, 4});
    auto broken_square = [](const T& v) {
      std::vector<double> vals(v.values().begin(), v.values().end());
      for (double& e : vals) e *= e;
      return ad::detail::make_result<double>("broken_square", v.shape(), std::move(vals), {v}, [](ad::Node<double>& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += 3.0 * self.parents[0]->value[i] * self.grad[i];
      });
    };
    out.push_back(check_gradients("fault_injection(broken_square)", [=] { return detail::weighted_sum(broken_square(x), w); }, {x}));
  }
  return out;
}

}  // namespace specterra
