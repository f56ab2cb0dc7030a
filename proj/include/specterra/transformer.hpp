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

// Encoder-decoder transformer over raw magnitude frames. There is no input
// embedding and no output projection: frames enter at width d_model (plus a
// sinusoidal position code) and the last decoder layer's output is the
// predicted magnitude frame. Layers are post-norm.

#include <zlib.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "specterra/seq_prep.hpp"
#include "specterra/tensor.hpp"

namespace specterra {

struct ModelConfig {
  std::size_t d_model = 256;
  std::size_t n_layers_enc = 6;
  std::size_t n_layers_dec = 6;
  std::size_t n_heads = 8;
  std::size_t d_ff = 1024;
  double dropout = 0.1;
  std::size_t max_decode_len = 0;  // 0: derive from the training corpus
  double layer_norm_eps = 1e-6;

  std::size_t head_dim() const { return d_model / n_heads; }
  void validate() const {
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
      throw ConfigError("d_model must be a positive multiple of n_heads");
    if (d_model % 2 != 0) throw ConfigError("d_model must be even");
    if (d_ff == 0) throw ConfigError("d_ff must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
  }
};

template <typename T>
struct ModelState {
  ModelConfig config;
  std::map<std::string, ad::Tensor<T>> params;
  SpecialTokens tokens;
  // Adam first/second moments, keyed like params; empty before the first step.
  std::map<std::string, std::vector<T>> adam_m;
  std::map<std::string, std::vector<T>> adam_v;
  std::uint64_t step = 0;
  // Free-form run settings persisted in the checkpoint config block
  // (analysis settings, corpus statistics, seeds).
  std::map<std::string, std::string> metadata;
  // Average training target frame; used to derive the EOS stopping radius.
  std::vector<float> mean_frame;

  const ad::Tensor<T>& param(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw ConfigError("model has no parameter " + name);
    return it->second;
  }
  void zero_grad() {
    for (auto& [name, p] : params) p.zero_grad();
  }
};

// Parameter shapes in a fixed order. Weights are (in, out): y = x W.
inline std::vector<std::pair<std::string, ad::Shape>> parameter_layout(const ModelConfig& cfg) {
  const std::size_t d = cfg.d_model, ff = cfg.d_ff;
  std::vector<std::pair<std::string, ad::Shape>> out;
  auto attention = [&](const std::string& p) {
    for (const char* w : {"wq", "wk", "wv", "wo"}) out.push_back({p + "." + w, {d, d}});
  };
  auto norm = [&](const std::string& p) {
    out.push_back({p + ".gain", {d}});
    out.push_back({p + ".bias", {d}});
  };
  auto ffn = [&](const std::string& p) {
    out.push_back({p + ".w1", {d, ff}});
    out.push_back({p + ".b1", {ff}});
    out.push_back({p + ".w2", {ff, d}});
    out.push_back({p + ".b2", {d}});
  };
  for (std::size_t l = 0; l < cfg.n_layers_enc; ++l) {
    const std::string p = "enc." + std::to_string(l);
    attention(p + ".self_attn");
    norm(p + ".ln1");
    ffn(p + ".ffn");
    norm(p + ".ln2");
  }
  for (std::size_t l = 0; l < cfg.n_layers_dec; ++l) {
    const std::string p = "dec." + std::to_string(l);
    attention(p + ".self_attn");
    norm(p + ".ln1");
    attention(p + ".cross_attn");
    norm(p + ".ln2");
    ffn(p + ".ffn");
    norm(p + ".ln3");
  }
  return out;
}

inline bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Glorot-uniform matrices, zero biases, unit norm gains.
template <typename T>
ModelState<T> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelState<T> state;
  state.config = cfg;
  state.tokens = make_special_tokens(sub_seed(seed, "tokens"), cfg.d_model);
  std::mt19937_64 rng(sub_seed(seed, "init"));
  for (auto& [name, shape] : parameter_layout(cfg)) {
    std::vector<T> values(ad::numel(shape), T{});
    if (shape.size() == 2) {
      const double limit = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
      for (T& v : values) v = static_cast<T>((2.0 * ad::uniform01(rng) - 1.0) * limit);
    } else if (ends_with(name, ".gain")) {
      std::fill(values.begin(), values.end(), T(1));
    }
    state.params.emplace(name, ad::Tensor<T>::parameter(shape, std::move(values)));
  }
  state.metadata["seed"] = std::to_string(seed);
  return state;
}

// PE[t, 2i] = sin(t / 10000^(2i/d)), PE[t, 2i+1] = cos(same angle).
template <typename T = double>
std::vector<T> positional_encoding(std::size_t steps, std::size_t d_model) {
  if (d_model % 2 != 0) throw ConfigError("positional encoding needs an even width");
  std::vector<T> pe(steps * d_model);
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t i = 0; i < d_model / 2; ++i) {
      const double angle = static_cast<double>(t) / std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(d_model));
      pe[t * d_model + 2 * i] = static_cast<T>(std::sin(angle));
      pe[t * d_model + 2 * i + 1] = static_cast<T>(std::cos(angle));
    }
  return pe;
}

struct ForwardOptions {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // required when training with dropout
};

namespace detail {

template <typename T>
ad::Tensor<T> maybe_dropout(const ad::Tensor<T>& x, const ModelConfig& cfg, const ForwardOptions& opt) {
  if (!opt.training || cfg.dropout == 0.0) return x;
  if (opt.rng == nullptr) throw ConfigError("training forward pass needs a dropout generator");
  return ad::dropout(x, cfg.dropout, true, *opt.rng);
}

template <typename T>
ad::Tensor<T> add_positions(const ad::Tensor<T>& x) {
  const std::size_t b = x.dim(0), steps = x.dim(1), d = x.dim(2);
  auto pe = positional_encoding<T>(steps, d);
  std::vector<T> tiled(b * steps * d);
  for (std::size_t i = 0; i < b; ++i) std::copy(pe.begin(), pe.end(), tiled.begin() + static_cast<std::ptrdiff_t>(i * pe.size()));
  return ad::add(x, ad::Tensor<T>::constant(x.shape(), std::move(tiled)));
}

template <typename T>
ad::Tensor<T> norm(const ModelState<T>& s, const std::string& p, const ad::Tensor<T>& x) {
  return ad::layer_norm(x, s.param(p + ".gain"), s.param(p + ".bias"), static_cast<T>(s.config.layer_norm_eps));
}

template <typename T>
ad::Tensor<T> feed_forward(const ModelState<T>& s, const std::string& p, const ad::Tensor<T>& x,
                           const ForwardOptions& opt) {
  auto h = ad::relu(ad::add_bias(ad::matmul(x, s.param(p + ".w1")), s.param(p + ".b1")));
  h = maybe_dropout(h, s.config, opt);
  return ad::add_bias(ad::matmul(h, s.param(p + ".w2")), s.param(p + ".b2"));
}

// (B, T, H*dh) -> (B, H, T, dh)
template <typename T>
ad::Tensor<T> split_heads(const ad::Tensor<T>& x, std::size_t heads) {
  const std::size_t b = x.dim(0), steps = x.dim(1), d = x.dim(2);
  return ad::swap_axes_12(ad::reshape(x, {b, steps, heads, d / heads}));
}

template <typename T>
ad::Tensor<T> merge_heads(const ad::Tensor<T>& x) {
  const std::size_t b = x.dim(0), heads = x.dim(1), steps = x.dim(2), dh = x.dim(3);
  return ad::reshape(ad::swap_axes_12(x), {b, steps, heads * dh});
}

}  // namespace detail

// softmax((x_q Wq)(x_kv Wk)^T / sqrt(d_head) + bias) (x_kv Wv), per head,
// heads concatenated and projected by Wo. `prefix` names the weight group,
// e.g. "dec.0.cross_attn".
template <typename T>
ad::Tensor<T> multi_head_attention(const ad::Tensor<T>& queries, const ad::Tensor<T>& keys_values,
                                   const ad::Tensor<T>& bias, const ModelState<T>& s, const std::string& prefix,
                                   const ForwardOptions& opt = {}) {
  const ModelConfig& cfg = s.config;
  if (queries.rank() != 3 || keys_values.rank() != 3 || queries.dim(2) != cfg.d_model ||
      keys_values.dim(2) != cfg.d_model || queries.dim(0) != keys_values.dim(0))
    throw ShapeError("multi_head_attention: expected (B, T, d_model) inputs, got " + ad::shape_str(queries.shape()) +
                     " and " + ad::shape_str(keys_values.shape()));
  const std::size_t heads = cfg.n_heads;
  auto q = detail::split_heads(ad::matmul(queries, s.param(prefix + ".wq")), heads);
  auto k = detail::split_heads(ad::matmul(keys_values, s.param(prefix + ".wk")), heads);
  auto v = detail::split_heads(ad::matmul(keys_values, s.param(prefix + ".wv")), heads);
  auto scores = ad::mul_scalar(ad::matmul(q, k, true), static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg.head_dim()))));
  scores = ad::add_attention_bias(scores, bias);
  auto weights = detail::maybe_dropout(ad::softmax_lastdim(scores), cfg, opt);
  auto context = detail::merge_heads(ad::matmul(weights, v));
  return ad::matmul(context, s.param(prefix + ".wo"));
}

// src (B, Ts, d) -> memory (B, Ts, d). src_bias masks padded source keys.
template <typename T>
ad::Tensor<T> encoder_forward(const ad::Tensor<T>& src, const ad::Tensor<T>& src_bias, const ModelState<T>& s,
                              const ForwardOptions& opt = {}) {
  auto x = detail::maybe_dropout(detail::add_positions(src), s.config, opt);
  for (std::size_t l = 0; l < s.config.n_layers_enc; ++l) {
    const std::string p = "enc." + std::to_string(l);
    auto attn = multi_head_attention(x, x, src_bias, s, p + ".self_attn", opt);
    x = detail::norm(s, p + ".ln1", ad::add(x, attn));
    auto ff = detail::feed_forward(s, p + ".ffn", x, opt);
    x = detail::norm(s, p + ".ln2", ad::add(x, ff));
  }
  return x;
}

// tgt_in (B, Td, d) starting with SOS -> predicted frames (B, Td, d).
// self_bias combines look-ahead and target padding; memory_bias masks padded
// source positions.
template <typename T>
ad::Tensor<T> decoder_forward(const ad::Tensor<T>& tgt_in, const ad::Tensor<T>& memory, const ad::Tensor<T>& self_bias,
                              const ad::Tensor<T>& memory_bias, const ModelState<T>& s, const ForwardOptions& opt = {}) {
  auto y = detail::maybe_dropout(detail::add_positions(tgt_in), s.config, opt);
  for (std::size_t l = 0; l < s.config.n_layers_dec; ++l) {
    const std::string p = "dec." + std::to_string(l);
    auto self_attn = multi_head_attention(y, y, self_bias, s, p + ".self_attn", opt);
    y = detail::norm(s, p + ".ln1", ad::add(y, self_attn));
    auto cross = multi_head_attention(y, memory, memory_bias, s, p + ".cross_attn", opt);
    y = detail::norm(s, p + ".ln2", ad::add(y, cross));
    auto ff = detail::feed_forward(s, p + ".ffn", y, opt);
    y = detail::norm(s, p + ".ln3", ad::add(y, ff));
  }
  return y;
}

// Teacher-forced pass over a padded batch.
template <typename T>
ad::Tensor<T> model_forward(const PaddedBatch<T>& batch, const ModelState<T>& s, const ForwardOptions& opt = {}) {
  const std::size_t b = batch.batch();
  auto src_bias = attention_bias<T>(batch.src_pad_mask, b, batch.src_steps());
  auto tgt_bias = combine_biases(causal_bias<T>(batch.dec_steps()),
                                 attention_bias<T>(batch.tgt_pad_mask, b, batch.dec_steps()));
  auto memory = encoder_forward(batch.encoder_input, src_bias, s, opt);
  return decoder_forward(batch.decoder_input, memory, tgt_bias, src_bias, s, opt);
}

// ---------------------------------------------------------------------------
// Checkpoint file
//
//   "VFVC", u32 version,
//   u32 config length, UTF-8 `key=value` lines,
//   repeated { u32 name length, name, u32 rank, u32 dims[rank], f32 data },
//   u32 CRC-32 of every preceding byte.
// All integers and floats little-endian.

constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void put_f32(std::vector<unsigned char>& out, float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  put_u32le(out, u);
}

inline void put_named_tensor(std::vector<unsigned char>& out, const std::string& name, const ad::Shape& shape,
                             auto&& values) {
  put_u32le(out, static_cast<std::uint32_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
  put_u32le(out, static_cast<std::uint32_t>(shape.size()));
  for (auto dim : shape) put_u32le(out, static_cast<std::uint32_t>(dim));
  for (auto v : values) put_f32(out, static_cast<float>(v));
}

class ByteReader {
 public:
  ByteReader(const unsigned char* p, std::size_t n) : p_(p), end_(p + n) {}
  bool done() const { return p_ == end_; }
  std::uint32_t u32() {
    need(4);
    auto v = read_u32le(p_);
    p_ += 4;
    return v;
  }
  float f32() {
    std::uint32_t u = u32();
    float f;
    std::memcpy(&f, &u, 4);
    return f;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p_), n);
    p_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (static_cast<std::size_t>(end_ - p_) < n) throw CheckpointError("checkpoint truncated");
  }
  const unsigned char* p_;
  const unsigned char* end_;
};

}  // namespace detail

template <typename T>
std::vector<unsigned char> encode_checkpoint(const ModelState<T>& s) {
  std::map<std::string, std::string> kv = s.metadata;
  const ModelConfig& c = s.config;
  kv["model.d_model"] = std::to_string(c.d_model);
  kv["model.n_layers_enc"] = std::to_string(c.n_layers_enc);
  kv["model.n_layers_dec"] = std::to_string(c.n_layers_dec);
  kv["model.n_heads"] = std::to_string(c.n_heads);
  kv["model.d_ff"] = std::to_string(c.d_ff);
  kv["model.dropout"] = detail::format_double(c.dropout);
  kv["model.max_decode_len"] = std::to_string(c.max_decode_len);
  kv["model.layer_norm_eps"] = detail::format_double(c.layer_norm_eps);
  kv["tokens.seed"] = std::to_string(s.tokens.rng_seed);
  kv["global_step"] = std::to_string(s.step);
  std::string block;
  for (const auto& [k, v] : kv) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
      throw CheckpointError("metadata entry cannot be encoded: " + k);
    block += k + "=" + v + "\n";
  }

  std::vector<unsigned char> out{'V', 'F', 'V', 'C'};
  detail::put_u32le(out, kCheckpointVersion);
  detail::put_u32le(out, static_cast<std::uint32_t>(block.size()));
  out.insert(out.end(), block.begin(), block.end());
  for (const auto& [name, t] : s.params) detail::put_named_tensor(out, "param/" + name, t.shape(), t.values());
  for (const auto& [name, m] : s.adam_m) detail::put_named_tensor(out, "adam_m/" + name, s.param(name).shape(), m);
  for (const auto& [name, v] : s.adam_v) detail::put_named_tensor(out, "adam_v/" + name, s.param(name).shape(), v);
  detail::put_named_tensor(out, "tokens/sos", {s.tokens.sos.size()}, s.tokens.sos);
  detail::put_named_tensor(out, "tokens/eos", {s.tokens.eos.size()}, s.tokens.eos);
  if (!s.mean_frame.empty()) detail::put_named_tensor(out, "stats/mean_frame", {s.mean_frame.size()}, s.mean_frame);
  const auto crc = static_cast<std::uint32_t>(crc32(0L, out.data(), static_cast<uInt>(out.size())));
  detail::put_u32le(out, crc);
  return out;
}

template <typename T>
ModelState<T> decode_checkpoint(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "VFVC", 4) != 0)
    throw CheckpointError("not a checkpoint (bad magic)");
  const std::size_t body = bytes.size() - 4;
  const auto stored_crc = detail::read_u32le(bytes.data() + body);
  if (stored_crc != static_cast<std::uint32_t>(crc32(0L, bytes.data(), static_cast<uInt>(body))))
    throw CheckpointError("checkpoint CRC mismatch");
  detail::ByteReader r(bytes.data() + 4, body - 4);
  if (r.u32() != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version");

  std::map<std::string, std::string> kv;
  {
    std::istringstream block(r.str(r.u32()));
    std::string line;
    while (std::getline(block, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw CheckpointError("malformed config line: " + line);
      kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }
  auto take = [&kv](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw CheckpointError("checkpoint config lacks " + key);
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  ModelState<T> s;
  s.config.d_model = std::stoul(take("model.d_model"));
  s.config.n_layers_enc = std::stoul(take("model.n_layers_enc"));
  s.config.n_layers_dec = std::stoul(take("model.n_layers_dec"));
  s.config.n_heads = std::stoul(take("model.n_heads"));
  s.config.d_ff = std::stoul(take("model.d_ff"));
  s.config.dropout = std::stod(take("model.dropout"));
  s.config.max_decode_len = std::stoul(take("model.max_decode_len"));
  s.config.layer_norm_eps = std::stod(take("model.layer_norm_eps"));
  s.tokens.rng_seed = std::stoull(take("tokens.seed"));
  s.step = std::stoull(take("global_step"));
  s.metadata = std::move(kv);
  s.config.validate();

  while (!r.done()) {
    const std::string name = r.str(r.u32());
    ad::Shape shape(r.u32());
    for (auto& d : shape) d = r.u32();
    std::vector<float> data(ad::numel(shape));
    for (float& f : data) f = r.f32();
    auto as_t = [&data] { return std::vector<T>(data.begin(), data.end()); };
    if (name.rfind("param/", 0) == 0) {
      s.params.emplace(name.substr(6), ad::Tensor<T>::parameter(shape, as_t()));
    } else if (name.rfind("adam_m/", 0) == 0) {
      s.adam_m.emplace(name.substr(7), as_t());
    } else if (name.rfind("adam_v/", 0) == 0) {
      s.adam_v.emplace(name.substr(7), as_t());
    } else if (name == "tokens/sos") {
      s.tokens.sos = std::move(data);
    } else if (name == "tokens/eos") {
      s.tokens.eos = std::move(data);
    } else if (name == "stats/mean_frame") {
      s.mean_frame = std::move(data);
    } else {
      throw CheckpointError("unknown tensor in checkpoint: " + name);
    }
  }
  for (const auto& [name, shape] : parameter_layout(s.config)) {
    auto it = s.params.find(name);
    if (it == s.params.end()) throw CheckpointError("checkpoint lacks parameter " + name);
    if (it->second.shape() != shape) throw CheckpointError("parameter " + name + " has wrong shape");
  }
  if (s.tokens.sos.size() != s.config.d_model || s.tokens.eos.size() != s.config.d_model)
    throw CheckpointError("checkpoint tokens do not match d_model");
  return s;
}

template <typename T>
void save_checkpoint(const ModelState<T>& s, const std::filesystem::path& path) {
  auto bytes = encode_checkpoint(s);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

template <typename T>
ModelState<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint<T>(bytes);
}

}  // namespace specterra
