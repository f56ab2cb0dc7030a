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

// A small reverse-mode automatic differentiation engine.
//
// Every op returns a Tensor holding a shared graph node. A node records its
// parents and a backward rule only when at least one input requires a
// gradient, so inference builds no graph. Nodes carry a global creation
// sequence number: parents are always older than children, so sorting the
// reachable nodes by descending sequence number yields the tape in reverse
// topological order and each node is visited exactly once.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "specterra/common.hpp"

namespace specterra::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
  os << ')';
  return os.str();
}

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::uint64_t seq = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T{});
    return grad;
  }
};

inline std::uint64_t next_sequence() {
  static std::atomic<std::uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, std::vector<T> values) {
    if (numel(shape) != values.size())
      throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->seq = next_sequence();
    return Tensor(std::move(n));
  }
  static Tensor zeros(Shape shape) {
    auto count = numel(shape);
    return constant(std::move(shape), std::vector<T>(count, T{}));
  }
  static Tensor parameter(Shape shape, std::vector<T> values) {
    Tensor t = constant(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    return t;
  }
  static Tensor scalar(T v) { return constant({}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }
  std::span<const T> values() const { return node_->value; }
  // Direct write access, used by optimizers and finite-difference probes.
  std::span<T> mutable_values() { return node_->value; }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  bool has_grad() const { return !node_->grad.empty(); }
  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad() { node_->grad.clear(); }
  T item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

template <typename T>
void check_finite(const char* op, const std::vector<T>& v) {
  for (const T& x : v)
    if (!std::isfinite(x)) throw NumericError(std::string("non-finite value produced by ") + op);
}

template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::initializer_list<Tensor<T>> inputs, std::function<void(Node<T>&)> backward) {
  check_finite(op, value);
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->seq = next_sequence();
  n->op = op;
  bool needs = std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>& t) { return t.requires_grad(); });
  if (needs) {
    n->requires_grad = true;
    for (const auto& t : inputs) n->parents.push_back(t.node_ptr());
    n->backward = std::move(backward);
  }
  return Tensor<T>(std::move(n));
}

inline void require_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// c[M,N] += a[M,K] * b[K,N]
template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  parallel_for(m, 16, [=](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      T* crow = c + i * n;
      const T* arow = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = arow[p];
        const T* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  });
}

// c[M,N] += a[M,K] * b[N,K]^T
template <typename T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  parallel_for(m, 16, [=](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const T* arow = a + i * k;
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        const T* brow = b + j * k;
        T acc{};
        for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        crow[j] += acc;
      }
    }
  });
}

// c[K,N] += a[M,K]^T * d[M,N]
template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* d, T* c) {
  parallel_for(k, 16, [=](std::size_t begin, std::size_t end) {
    for (std::size_t i = 0; i < m; ++i) {
      const T* arow = a + i * k;
      const T* drow = d + i * n;
      for (std::size_t p = begin; p < end; ++p) {
        const T av = arow[p];
        T* crow = c + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * drow[j];
      }
    }
  });
}

}  // namespace detail

// Batched product over the last two dimensions. `b` is either a matrix shared
// by every batch entry or has the same leading dimensions as `a`. With
// transpose_b, b's last two dimensions are read as (n, k).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false) {
  if (a.rank() < 2 || b.rank() < 2) throw ShapeError("matmul: operands need rank >= 2");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  const std::size_t m = as[as.size() - 2], k = as.back();
  const std::size_t bk = transpose_b ? bs.back() : bs[bs.size() - 2];
  const std::size_t n = transpose_b ? bs[bs.size() - 2] : bs.back();
  if (bk != k) throw ShapeError("matmul: inner dimensions differ " + shape_str(as) + " x " + shape_str(bs));
  const bool shared_b = b.rank() == 2;
  if (!shared_b && (bs.size() != as.size() || !std::equal(as.begin(), as.end() - 2, bs.begin())))
    throw ShapeError("matmul: batch dimensions differ " + shape_str(as) + " x " + shape_str(bs));
  const std::size_t batch = a.size() / (m * k);

  Shape out_shape(as.begin(), as.end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<T> out(batch * m * n, T{});
  const T* av = a.values().data();
  const T* bv = b.values().data();
  for (std::size_t i = 0; i < batch; ++i) {
    const T* bi = shared_b ? bv : bv + i * k * n;
    if (transpose_b)
      detail::gemm_nt(m, k, n, av + i * m * k, bi, out.data() + i * m * n);
    else
      detail::gemm_nn(m, k, n, av + i * m * k, bi, out.data() + i * m * n);
  }

  auto backward = [=](Node<T>& self) {
    Node<T>* pa = self.parents[0].get();
    Node<T>* pb = self.parents[1].get();
    const T* g = self.grad.data();
    for (std::size_t i = 0; i < batch; ++i) {
      const T* gi = g + i * m * n;
      const T* ai = pa->value.data() + i * m * k;
      const std::size_t boff = shared_b ? 0 : i * k * n;
      const T* bi = pb->value.data() + boff;
      if (pa->requires_grad) {
        T* da = pa->ensure_grad().data() + i * m * k;
        if (transpose_b)
          detail::gemm_nn(m, n, k, gi, bi, da);  // dA = dC * B, B is (n,k)
        else
          detail::gemm_nt(m, n, k, gi, bi, da);  // dA = dC * B^T, B is (k,n)
      }
      if (pb->requires_grad) {
        T* db = pb->ensure_grad().data() + boff;
        if (transpose_b)
          detail::gemm_tn(m, n, k, gi, ai, db);  // dB(n,k) = dC^T * A
        else
          detail::gemm_tn(m, k, n, ai, gi, db);  // dB(k,n) = A^T * dC
      }
    }
  };
  return detail::make_result<T>("matmul", std::move(out_shape), std::move(out), {a, b}, backward);
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("add", a.shape(), b.shape());
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return detail::make_result<T>("add", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("sub", a.shape(), b.shape());
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return detail::make_result<T>("sub", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t side = 0; side < 2; ++side) {
      Node<T>* p = self.parents[side].get();
      if (!p->requires_grad) continue;
      const T sign = side == 0 ? T(1) : T(-1);
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

// Elementwise product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("mul", a.shape(), b.shape());
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return detail::make_result<T>("mul", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    Node<T>* pa = self.parents[0].get();
    Node<T>* pb = self.parents[1].get();
    if (pa->requires_grad) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->value[i];
    }
  });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T c) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * c;
  return detail::make_result<T>("mul_scalar", x.shape(), std::move(out), {x}, [c](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * self.grad[i];
  });
}

// x[..., d] + bias[d]
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  if (bias.rank() != 1 || x.rank() == 0 || x.shape().back() != bias.size())
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match " + shape_str(x.shape()));
  const std::size_t d = bias.size();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] + bias.values()[i % d];
  return detail::make_result<T>("add_bias", x.shape(), std::move(out), {x, bias}, [d](Node<T>& self) {
    Node<T>* px = self.parents[0].get();
    Node<T>* pb = self.parents[1].get();
    if (px->requires_grad) {
      auto& g = px->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % d] += self.grad[i];
    }
  });
}

// scores (B, H, Tq, Tk) + bias (1 or B, 1 or Tq, Tk), broadcast over heads
// and over any unit dimension of the bias. The bias is treated as constant.
template <typename T>
Tensor<T> add_attention_bias(const Tensor<T>& scores, const Tensor<T>& bias) {
  if (scores.rank() != 4 || bias.rank() != 3) throw ShapeError("add_attention_bias: expected ranks 4 and 3");
  const std::size_t b = scores.dim(0), h = scores.dim(1), tq = scores.dim(2), tk = scores.dim(3);
  const std::size_t bb = bias.dim(0), bq = bias.dim(1);
  if ((bb != 1 && bb != b) || bias.dim(2) != tk || (bq != 1 && bq != tq))
    throw ShapeError("add_attention_bias: bias " + shape_str(bias.shape()) + " does not broadcast to " +
                     shape_str(scores.shape()));
  std::vector<T> out(scores.values().begin(), scores.values().end());
  const T* bv = bias.values().data();
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < h; ++j)
      for (std::size_t q = 0; q < tq; ++q) {
        T* row = out.data() + ((i * h + j) * tq + q) * tk;
        const T* brow = bv + ((bb == 1 ? 0 : i) * bq + (bq == 1 ? 0 : q)) * tk;
        for (std::size_t k = 0; k < tk; ++k) row[k] += brow[k];
      }
  return detail::make_result<T>("add_attention_bias", scores.shape(), std::move(out), {scores},
                                [](Node<T>& self) {
                                  auto& g = self.parents[0]->ensure_grad();
                                  for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                                });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(x.values()[i], T{});
  return detail::make_result<T>("relu", x.shape(), std::move(out), {x}, [](Node<T>& self) {
    Node<T>* p = self.parents[0].get();
    auto& g = p->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (p->value[i] > T{}) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(x.values()[i]);
  return detail::make_result<T>("abs", x.shape(), std::move(out), {x}, [](Node<T>& self) {
    Node<T>* p = self.parents[0].get();
    auto& g = p->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = p->value[i];
      g[i] += v > T{} ? self.grad[i] : (v < T{} ? -self.grad[i] : T{});
    }
  });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * x.values()[i];
  return detail::make_result<T>("square", x.shape(), std::move(out), {x}, [](Node<T>& self) {
    Node<T>* p = self.parents[0].get();
    auto& g = p->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += T(2) * p->value[i] * self.grad[i];
  });
}

// Sum of all elements, as a rank-0 tensor. Accumulates in double.
template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0.0;
  for (const T& v : x.values()) acc += v;
  return detail::make_result<T>("sum", {}, {static_cast<T>(acc)}, {x}, [](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    const T up = self.grad[0];
    for (T& v : g) v += up;
  });
}

// Softmax over the last dimension; each row is shifted by its maximum.
template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  if (x.rank() == 0) throw ShapeError("softmax_lastdim: rank-0 input");
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.size() / d;
  std::vector<T> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.values().data() + r * d;
    T* o = out.data() + r * d;
    const T mx = *std::max_element(in, in + d);
    T total{};
    for (std::size_t j = 0; j < d; ++j) {
      o[j] = std::exp(in[j] - mx);
      total += o[j];
    }
    for (std::size_t j = 0; j < d; ++j) o[j] /= total;
  }
  return detail::make_result<T>("softmax", x.shape(), std::move(out), {x}, [d, rows](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.value.data() + r * d;
      const T* gy = self.grad.data() + r * d;
      T dot{};
      for (std::size_t j = 0; j < d; ++j) dot += gy[j] * y[j];
      for (std::size_t j = 0; j < d; ++j) g[r * d + j] += y[j] * (gy[j] - dot);
    }
  });
}

// Normalizes each row over the last dimension, then applies gain and bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-6)) {
  if (x.rank() == 0) throw ShapeError("layer_norm: rank-0 input");
  const std::size_t d = x.shape().back();
  if (gain.rank() != 1 || bias.rank() != 1 || gain.size() != d || bias.size() != d)
    throw ShapeError("layer_norm: gain/bias must have shape (" + std::to_string(d) + ")");
  const std::size_t rows = x.size() / d;
  std::vector<T> out(x.size());
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.values().data() + r * d;
    T mean{};
    for (std::size_t j = 0; j < d; ++j) mean += in[j];
    mean /= static_cast<T>(d);
    T var{};
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= static_cast<T>(d);
    const T inv = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (in[j] - mean) * inv;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = gain.values()[j] * h + bias.values()[j];
    }
  }
  return detail::make_result<T>(
      "layer_norm", x.shape(), std::move(out), {x, gain, bias}, [d, rows, xhat, inv_std](Node<T>& self) {
        Node<T>* px = self.parents[0].get();
        Node<T>* pg = self.parents[1].get();
        Node<T>* pb = self.parents[2].get();
        const T* gy = self.grad.data();
        if (pg->requires_grad) {
          auto& gg = pg->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) gg[i % d] += gy[i] * (*xhat)[i];
        }
        if (pb->requires_grad) {
          auto& gb = pb->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i % d] += gy[i];
        }
        if (px->requires_grad) {
          auto& gx = px->ensure_grad();
          std::vector<T> dh(d);
          for (std::size_t r = 0; r < rows; ++r) {
            T sum_dh{}, sum_dh_h{};
            for (std::size_t j = 0; j < d; ++j) {
              dh[j] = gy[r * d + j] * pg->value[j];
              sum_dh += dh[j];
              sum_dh_h += dh[j] * (*xhat)[r * d + j];
            }
            const T scale = (*inv_std)[r] / static_cast<T>(d);
            for (std::size_t j = 0; j < d; ++j)
              gx[r * d + j] += scale * (static_cast<T>(d) * dh[j] - sum_dh - (*xhat)[r * d + j] * sum_dh_h);
          }
        }
      });
}

// Uniform double in [0, 1) from the top 53 bits; identical on every platform.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// Inverted dropout: kept units are scaled by 1/(1-rate), so evaluation needs
// no rescaling. Identity when not training or rate is zero.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0, 1)");
  if (!training || rate == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<T>>(x.size());
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = uniform01(rng) >= rate ? keep_scale : T{};
    out[i] = x.values()[i] * (*mask)[i];
  }
  return detail::make_result<T>("dropout", x.shape(), std::move(out), {x}, [mask](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*mask)[i];
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size())
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  std::vector<T> out(x.values().begin(), x.values().end());
  return detail::make_result<T>("reshape", std::move(shape), std::move(out), {x}, [](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

// (A, B, C, D) -> (A, C, B, D)
template <typename T>
Tensor<T> swap_axes_12(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("swap_axes_12: expected rank 4, got " + shape_str(x.shape()));
  const std::size_t a = x.dim(0), b = x.dim(1), c = x.dim(2), d = x.dim(3);
  std::vector<T> out(x.size());
  const T* in = x.values().data();
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < b; ++j)
      for (std::size_t k = 0; k < c; ++k)
        std::copy_n(in + ((i * b + j) * c + k) * d, d, out.data() + ((i * c + k) * b + j) * d);
  return detail::make_result<T>("swap_axes_12", {a, c, b, d}, std::move(out), {x}, [a, b, c, d](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < a; ++i)
      for (std::size_t j = 0; j < b; ++j)
        for (std::size_t k = 0; k < c; ++k) {
          T* dst = g.data() + ((i * b + j) * c + k) * d;
          const T* src = self.grad.data() + ((i * c + k) * b + j) * d;
          for (std::size_t e = 0; e < d; ++e) dst[e] += src[e];
        }
  });
}

// Populates grads of every requires_grad node reachable from `loss`. Leaf
// gradients accumulate across calls; interior gradients are reset first.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.size() != 1) throw ShapeError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;
  std::vector<Node<T>*> tape;
  std::unordered_set<Node<T>*> seen;
  std::vector<Node<T>*> stack{loss.node()};
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    tape.push_back(n);
    for (auto& p : n->parents)
      if (p->requires_grad) stack.push_back(p.get());
  }
  std::sort(tape.begin(), tape.end(), [](const Node<T>* x, const Node<T>* y) { return x->seq > y->seq; });
  for (Node<T>* n : tape)
    if (n->backward) n->grad.clear();
  loss.node()->ensure_grad()[0] += T(1);
  for (Node<T>* n : tape) {
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

}  // namespace specterra::ad
