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

// Sequence preparation: the utterance analysis pipeline, source/target
// pairing, start/end tokens, padded batches with attention biases, and a
// synthetic paired corpus.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "specterra/audio_io.hpp"
#include "specterra/dsp_spectrum.hpp"
#include "specterra/tensor.hpp"
#include "specterra/vad.hpp"

namespace specterra {

// Additive attention bias for excluded keys.
constexpr double kMaskBias = -1e9;

// waveform -> resample -> trim -> pre-emphasis -> STFT -> magnitude/phase
struct AnalysisConfig {
  int sample_rate = 16000;
  bool apply_vad = true;
  VadConfig vad;
  StftConfig stft;
};

// Round-trips an AnalysisConfig through string key/value pairs (checkpoint
// config block).
inline void store_analysis_config(const AnalysisConfig& cfg, std::map<std::string, std::string>& kv) {
  auto num = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  kv["analysis.sample_rate"] = std::to_string(cfg.sample_rate);
  kv["analysis.vad"] = cfg.apply_vad ? "1" : "0";
  kv["vad.frame_ms"] = num(cfg.vad.frame_ms);
  kv["vad.hop_ms"] = num(cfg.vad.hop_ms);
  kv["vad.threshold_db"] = num(cfg.vad.threshold_db);
  kv["vad.hangover_frames"] = std::to_string(cfg.vad.hangover_frames);
  kv["stft.nfft"] = std::to_string(cfg.stft.nfft);
  kv["stft.hop"] = std::to_string(cfg.stft.hop);
  kv["stft.window"] = to_string(cfg.stft.window);
  kv["stft.preemphasis"] = num(cfg.stft.preemphasis_coeff);
}

inline AnalysisConfig load_analysis_config(const std::map<std::string, std::string>& kv) {
  auto get = [&kv](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError("missing analysis setting " + key);
    return it->second;
  };
  AnalysisConfig cfg;
  cfg.sample_rate = std::stoi(get("analysis.sample_rate"));
  cfg.apply_vad = get("analysis.vad") == "1";
  cfg.vad.frame_ms = std::stod(get("vad.frame_ms"));
  cfg.vad.hop_ms = std::stod(get("vad.hop_ms"));
  cfg.vad.threshold_db = std::stod(get("vad.threshold_db"));
  cfg.vad.hangover_frames = std::stoul(get("vad.hangover_frames"));
  cfg.stft.nfft = std::stoul(get("stft.nfft"));
  cfg.stft.hop = std::stoul(get("stft.hop"));
  cfg.stft.window = window_from_string(get("stft.window"));
  cfg.stft.preemphasis_coeff = std::stod(get("stft.preemphasis"));
  return cfg;
}

inline AudioBuffer prepare_waveform(const AudioBuffer& in, const AnalysisConfig& cfg) {
  AudioBuffer buf = resample(in, cfg.sample_rate);
  if (cfg.apply_vad) buf = trim_silence(buf, cfg.vad);
  return preemphasis(buf, cfg.stft.preemphasis_coeff);
}

inline ComplexSpectrum analyze_spectrum(const AudioBuffer& in, const AnalysisConfig& cfg) {
  return stft(prepare_waveform(in, cfg), cfg.stft);
}

inline MagPhase analyze(const AudioBuffer& in, const AnalysisConfig& cfg) {
  return split_mag_phase(analyze_spectrum(in, cfg));
}

struct SpecialTokens {
  std::vector<float> sos;
  std::vector<float> eos;
  std::uint64_t rng_seed = 0;
};

// Entries i.i.d. uniform on [0, 1), fully determined by the seed.
inline SpecialTokens make_special_tokens(std::uint64_t seed, std::size_t dim = 256) {
  std::mt19937_64 rng(seed);
  SpecialTokens tok{std::vector<float>(dim), std::vector<float>(dim), seed};
  for (float& v : tok.sos) v = static_cast<float>(ad::uniform01(rng));
  for (float& v : tok.eos) v = static_cast<float>(ad::uniform01(rng));
  // float rounding can reach 1.0 from values just below it
  for (auto* vec : {&tok.sos, &tok.eos})
    for (float& v : *vec) v = std::min(v, std::nextafter(1.0f, 0.0f));
  return tok;
}

struct UtterancePair {
  std::string source_id;
  std::string target_id;
  std::string text_label;
  MagPhase source;                 // magnitude fed to the encoder, phase kept for synthesis
  FrameMatrix<double> target_mag;  // feature_bins x frames

  const FrameMatrix<double>& source_mag() const { return source.magnitude; }
};

template <typename T>
struct PaddedBatch {
  ad::Tensor<T> encoder_input;   // (B, Ts, F)
  ad::Tensor<T> decoder_input;   // (B, Tt + 1, F), SOS first
  ad::Tensor<T> decoder_target;  // (B, Tt + 1, F), EOS after the last frame
  std::vector<std::size_t> src_lengths;
  std::vector<std::size_t> tgt_lengths;
  // Row-major (B, Ts) and (B, Tt + 1); 1 marks padding.
  std::vector<std::uint8_t> src_pad_mask;
  std::vector<std::uint8_t> tgt_pad_mask;

  std::size_t batch() const { return src_lengths.size(); }
  std::size_t src_steps() const { return encoder_input.dim(1); }
  std::size_t dec_steps() const { return decoder_input.dim(1); }
  std::size_t features() const { return encoder_input.dim(2); }
};

// Pads each sequence to the batch maximum. Decoder sequences are one step
// longer than the target: SOS + frames on the input side, frames + EOS on the
// prediction side.
template <typename T>
PaddedBatch<T> build_batch(const std::vector<const FrameMatrix<double>*>& sources,
                           const std::vector<const FrameMatrix<double>*>& targets,
                           const SpecialTokens& tokens) {
  if (sources.empty() || sources.size() != targets.size())
    throw ShapeError("build_batch: need equal, non-zero numbers of sources and targets");
  const std::size_t f = tokens.sos.size();
  if (tokens.eos.size() != f) throw ShapeError("build_batch: SOS and EOS dimensions differ");
  const std::size_t b = sources.size();
  std::size_t ts = 0, tt = 0;
  for (std::size_t i = 0; i < b; ++i) {
    if (sources[i]->bins != f || targets[i]->bins != f)
      throw ShapeError("build_batch: magnitude rows must equal token dimension " + std::to_string(f));
    ts = std::max(ts, sources[i]->frames);
    tt = std::max(tt, targets[i]->frames);
  }
  const std::size_t td = tt + 1;

  PaddedBatch<T> out;
  std::vector<T> enc(b * ts * f, T{}), dec_in(b * td * f, T{}), dec_tgt(b * td * f, T{});
  out.src_pad_mask.assign(b * ts, 0);
  out.tgt_pad_mask.assign(b * td, 0);
  for (std::size_t i = 0; i < b; ++i) {
    const auto& src = *sources[i];
    const auto& tgt = *targets[i];
    out.src_lengths.push_back(src.frames);
    out.tgt_lengths.push_back(tgt.frames);
    for (std::size_t j = 0; j < src.data.size(); ++j) enc[i * ts * f + j] = static_cast<T>(src.data[j]);
    T* din = dec_in.data() + i * td * f;
    T* dtg = dec_tgt.data() + i * td * f;
    for (std::size_t k = 0; k < f; ++k) din[k] = static_cast<T>(tokens.sos[k]);
    for (std::size_t j = 0; j < tgt.data.size(); ++j) {
      din[f + j] = static_cast<T>(tgt.data[j]);
      dtg[j] = static_cast<T>(tgt.data[j]);
    }
    for (std::size_t k = 0; k < f; ++k) dtg[tgt.frames * f + k] = static_cast<T>(tokens.eos[k]);
    for (std::size_t t = src.frames; t < ts; ++t) out.src_pad_mask[i * ts + t] = 1;
    for (std::size_t t = tgt.frames + 1; t < td; ++t) out.tgt_pad_mask[i * td + t] = 1;
  }
  out.encoder_input = ad::Tensor<T>::constant({b, ts, f}, std::move(enc));
  out.decoder_input = ad::Tensor<T>::constant({b, td, f}, std::move(dec_in));
  out.decoder_target = ad::Tensor<T>::constant({b, td, f}, std::move(dec_tgt));
  return out;
}

template <typename T>
PaddedBatch<T> build_batch(const std::vector<const UtterancePair*>& pairs, const SpecialTokens& tokens) {
  std::vector<const FrameMatrix<double>*> src, tgt;
  for (const auto* p : pairs) {
    src.push_back(&p->source.magnitude);
    tgt.push_back(&p->target_mag);
  }
  return build_batch<T>(src, tgt, tokens);
}

template <typename T>
PaddedBatch<T> build_batch(const std::vector<UtterancePair>& pairs, const SpecialTokens& tokens) {
  std::vector<const UtterancePair*> ptrs;
  for (const auto& p : pairs) ptrs.push_back(&p);
  return build_batch<T>(ptrs, tokens);
}

// Key-padding bias of shape (B, 1, T): kMaskBias at padded keys, else 0.
template <typename T>
ad::Tensor<T> attention_bias(const std::vector<std::uint8_t>& pad_mask, std::size_t batch, std::size_t steps) {
  if (pad_mask.size() != batch * steps) throw ShapeError("attention_bias: mask size mismatch");
  std::vector<T> bias(pad_mask.size());
  for (std::size_t i = 0; i < bias.size(); ++i) bias[i] = pad_mask[i] ? static_cast<T>(kMaskBias) : T{};
  return ad::Tensor<T>::constant({batch, 1, steps}, std::move(bias));
}

// Look-ahead bias of shape (1, T, T): strictly upper triangle masked.
template <typename T>
ad::Tensor<T> causal_bias(std::size_t steps) {
  if (steps == 0) throw ShapeError("causal_bias: need at least one step");
  std::vector<T> bias(steps * steps, T{});
  for (std::size_t q = 0; q < steps; ++q)
    for (std::size_t k = q + 1; k < steps; ++k) bias[q * steps + k] = static_cast<T>(kMaskBias);
  return ad::Tensor<T>::constant({1, steps, steps}, std::move(bias));
}

// Sum of two biases after broadcasting unit batch/query dimensions.
template <typename T>
ad::Tensor<T> combine_biases(const ad::Tensor<T>& a, const ad::Tensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(2) != b.dim(2)) throw ShapeError("combine_biases: incompatible");
  auto pick = [](std::size_t x, std::size_t y) {
    if (x != 1 && y != 1 && x != y) throw ShapeError("combine_biases: incompatible");
    return std::max(x, y);
  };
  const std::size_t nb = pick(a.dim(0), b.dim(0)), nq = pick(a.dim(1), b.dim(1)), nk = a.dim(2);
  std::vector<T> out(nb * nq * nk);
  auto at = [nk](const ad::Tensor<T>& t, std::size_t i, std::size_t q, std::size_t k) {
    return t.values()[((t.dim(0) == 1 ? 0 : i) * t.dim(1) + (t.dim(1) == 1 ? 0 : q)) * nk + k];
  };
  for (std::size_t i = 0; i < nb; ++i)
    for (std::size_t q = 0; q < nq; ++q)
      for (std::size_t k = 0; k < nk; ++k) out[(i * nq + q) * nk + k] = at(a, i, q, k) + at(b, i, q, k);
  return ad::Tensor<T>::constant({nb, nq, nk}, std::move(out));
}

// ---------------------------------------------------------------------------
// Synthetic corpus

struct ToyCorpusConfig {
  std::size_t n_pairs = 4;
  int rate = 4000;
  double min_seconds = 0.4;
  double max_seconds = 0.6;
  double f0_src = 150.0;
  double f0_tgt = 300.0;
  double amplitude = 0.5;
  std::uint64_t seed = 7;
};

inline const std::array<const char*, 11>& digit_labels() {
  static const std::array<const char*, 11> labels{"one", "two",   "three", "four", "five", "six",
                                                  "seven", "eight", "nine",  "zero", "oh"};
  return labels;
}

struct ToyUtterance {
  std::string label;
  AudioBuffer source;
  AudioBuffer target;
};

// Pseudo-word i: a label-specific two-bump amplitude envelope over a
// decaying harmonic series. Source and target share everything but f0.
inline ToyUtterance render_toy_pair(const ToyCorpusConfig& cfg, std::size_t index) {
  const auto& labels = digit_labels();
  ToyUtterance u;
  u.label = labels[index % labels.size()];
  std::mt19937_64 rng(sub_seed(cfg.seed, "toy/" + u.label + "/" + std::to_string(index / labels.size())));
  auto uni = [&rng](double lo, double hi) { return lo + (hi - lo) * ad::uniform01(rng); };

  const double seconds = uni(cfg.min_seconds, cfg.max_seconds);
  const auto n = static_cast<std::size_t>(std::lround(seconds * cfg.rate));
  const double c1 = uni(0.2, 0.4), c2 = uni(0.55, 0.8);
  const double w1 = uni(0.08, 0.16), w2 = uni(0.08, 0.16);
  const double a1 = uni(0.6, 1.0), a2 = uni(0.4, 1.0);
  const std::array<double, 4> harm{1.0, uni(0.2, 0.4), uni(0.05, 0.15), uni(0.02, 0.06)};
  std::array<double, 4> phase0{};
  for (double& p : phase0) p = uni(0.0, 2.0 * std::numbers::pi);

  std::vector<double> env(n);
  double env_peak = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(i) / static_cast<double>(n);
    const double fade = std::sin(std::numbers::pi * x);
    env[i] = fade * (a1 * std::exp(-0.5 * std::pow((x - c1) / w1, 2)) + a2 * std::exp(-0.5 * std::pow((x - c2) / w2, 2)));
    env_peak = std::max(env_peak, env[i]);
  }
  double harm_total = 0.0;
  for (double h : harm) harm_total += h;

  auto render = [&](double f0) {
    AudioBuffer b;
    b.sample_rate = cfg.rate;
    b.samples.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / cfg.rate;
      double s = 0.0;
      for (std::size_t k = 0; k < harm.size(); ++k) {
        const double f = f0 * static_cast<double>(k + 1);
        if (f >= 0.5 * cfg.rate) break;
        s += harm[k] * std::sin(2.0 * std::numbers::pi * f * t + phase0[k]);
      }
      b.samples[i] = cfg.amplitude * env[i] / env_peak * s / harm_total;
    }
    return b;
  };
  u.source = render(cfg.f0_src);
  u.target = render(cfg.f0_tgt);
  return u;
}

inline std::vector<UtterancePair> make_toy_corpus(const ToyCorpusConfig& cfg, const AnalysisConfig& analysis) {
  if (cfg.f0_src >= 0.5 * cfg.rate || cfg.f0_tgt >= 0.5 * cfg.rate)
    throw ConfigError("toy corpus f0 must be below Nyquist");
  std::vector<UtterancePair> pairs;
  for (std::size_t i = 0; i < cfg.n_pairs; ++i) {
    ToyUtterance u = render_toy_pair(cfg, i);
    UtterancePair p;
    p.source_id = "toy-src";
    p.target_id = "toy-tgt";
    p.text_label = u.label;
    p.source = analyze(u.source, analysis);
    p.target_mag = analyze(u.target, analysis).magnitude;
    pairs.push_back(std::move(p));
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// Manifest-driven ingestion

struct ManifestEntry {
  std::string label;
  std::filesystem::path source;
  std::filesystem::path target;
};

// Lines are `label<TAB>source_wav<TAB>target_wav`; blank lines and lines
// starting with '#' are skipped. Malformed lines are reported in `errors`.
inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest,
                                                std::vector<std::string>& errors) {
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open manifest " + manifest.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    if (fields.size() != 3) {
      errors.push_back(manifest.string() + ":" + std::to_string(lineno) + ": expected 3 tab-separated fields");
      continue;
    }
    entries.push_back({fields[0], fields[1], fields[2]});
  }
  return entries;
}

struct IngestResult {
  std::vector<UtterancePair> pairs;
  // Complex spectra in the same order, for the feature cache.
  std::vector<ComplexSpectrum> source_spectra;
  std::vector<ComplexSpectrum> target_spectra;
  std::vector<std::string> errors;
};

inline IngestResult ingest_corpus(const std::filesystem::path& root, const std::filesystem::path& manifest,
                                  const AnalysisConfig& cfg) {
  IngestResult result;
  auto entries = read_manifest(manifest, result.errors);
  if (entries.empty() && result.errors.empty()) throw ConfigError("manifest " + manifest.string() + " lists no pairs");
  for (const auto& e : entries) {
    const auto src_path = e.source.is_absolute() ? e.source : root / e.source;
    const auto tgt_path = e.target.is_absolute() ? e.target : root / e.target;
    bool ok = true;
    for (const auto& p : {src_path, tgt_path}) {
      if (!std::filesystem::exists(p)) {
        result.errors.push_back("missing file: " + p.string());
        ok = false;
      }
    }
    if (!ok) continue;
    try {
      ComplexSpectrum src = analyze_spectrum(read_wav(src_path), cfg);
      ComplexSpectrum tgt = analyze_spectrum(read_wav(tgt_path), cfg);
      UtterancePair pair;
      pair.source_id = src_path.stem().string();
      pair.target_id = tgt_path.stem().string();
      pair.text_label = e.label;
      pair.source = split_mag_phase(src);
      pair.target_mag = split_mag_phase(tgt).magnitude;
      result.pairs.push_back(std::move(pair));
      result.source_spectra.push_back(std::move(src));
      result.target_spectra.push_back(std::move(tgt));
    } catch (const Error& err) {
      result.errors.push_back(e.label + ": " + err.what());
    }
  }
  return result;
}

}  // namespace specterra
