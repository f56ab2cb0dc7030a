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

// Greedy frame-by-frame conversion and waveform reconstruction from the
// predicted magnitude and the source phase.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include <json.hpp>

#include "specterra/dsp_spectrum.hpp"
#include "specterra/seq_prep.hpp"
#include "specterra/transformer.hpp"

namespace specterra {

enum class StopReason { eos, max_len };

inline const char* to_string(StopReason r) { return r == StopReason::eos ? "eos" : "max_len"; }

struct DecodeResult {
  FrameMatrix<double> predicted;  // feature_bins x frames
  StopReason stop_reason = StopReason::max_len;
};

// 0.5 * ||EOS - mean training frame||, or 0.5 * ||EOS|| without statistics.
template <typename T>
double default_eos_radius(const ModelState<T>& s) {
  double acc = 0.0;
  for (std::size_t k = 0; k < s.tokens.eos.size(); ++k) {
    const double mean = s.mean_frame.empty() ? 0.0 : s.mean_frame[k];
    acc += (s.tokens.eos[k] - mean) * (s.tokens.eos[k] - mean);
  }
  return 0.5 * std::sqrt(acc);
}

template <typename T>
std::size_t default_decode_cap(const ModelState<T>& s) {
  if (s.config.max_decode_len > 0) return s.config.max_decode_len;
  auto it = s.metadata.find("corpus.max_target_frames");
  return (it == s.metadata.end() ? 0 : std::stoul(it->second)) + 16;
}

// Encodes the source once, then grows the decoder input from [SOS] by one
// predicted frame per step, re-running the decoder over the whole prefix.
// Stops when a frame lands within eos_radius of the EOS token (that frame is
// not emitted) or after max_len frames.
template <typename T>
DecodeResult greedy_decode(const FrameMatrix<double>& source_mag, const ModelState<T>& s, std::size_t max_len,
                           double eos_radius) {
  const std::size_t f = s.config.d_model;
  if (source_mag.bins != f) throw ShapeError("source has " + std::to_string(source_mag.bins) + " bins, model expects " + std::to_string(f));
  if (source_mag.frames == 0) throw InputTooShortError("source has no frames");
  DecodeResult out;
  out.predicted = FrameMatrix<double>(f, 0);
  if (max_len == 0) return out;

  std::vector<T> src(source_mag.data.begin(), source_mag.data.end());
  auto src_t = ad::Tensor<T>::constant({1, source_mag.frames, f}, std::move(src));
  auto src_bias = ad::Tensor<T>::zeros({1, 1, source_mag.frames});
  auto memory = encoder_forward(src_t, src_bias, s);

  std::vector<T> prefix(s.tokens.sos.begin(), s.tokens.sos.end());
  for (std::size_t step = 0; step < max_len; ++step) {
    const std::size_t n = step + 1;
    auto dec_in = ad::Tensor<T>::constant({1, n, f}, prefix);
    auto y = decoder_forward(dec_in, memory, causal_bias<T>(n), src_bias, s);
    auto last = y.values().subspan((n - 1) * f, f);
    double dist = 0.0;
    for (std::size_t k = 0; k < f; ++k) dist += (last[k] - s.tokens.eos[k]) * (last[k] - s.tokens.eos[k]);
    if (std::sqrt(dist) < eos_radius) {
      out.stop_reason = StopReason::eos;
      return out;
    }
    out.predicted.data.insert(out.predicted.data.end(), last.begin(), last.end());
    ++out.predicted.frames;
    prefix.insert(prefix.end(), last.begin(), last.end());
  }
  out.stop_reason = StopReason::max_len;
  return out;
}

// Clamps the prediction at zero, aligns it with the source phase by
// truncating both to the shorter length, re-applies the phase (and the
// held-out Nyquist row), inverts the STFT and undoes pre-emphasis.
inline AudioBuffer reconstruct(const FrameMatrix<double>& pred_mag, const MagPhase& source, int sample_rate,
                               std::size_t* frames_used = nullptr) {
  const std::size_t used = std::min(pred_mag.frames, source.frames());
  if (frames_used) *frames_used = used;
  if (used == 0) throw EmptyAudioError("no frames to reconstruct");
  if (pred_mag.bins != source.magnitude.bins) throw ShapeError("predicted magnitude width differs from source");
  MagPhase mp = truncate_frames(source, used);
  mp.magnitude = pred_mag.head(used);
  for (double& v : mp.magnitude.data) v = std::max(v, 0.0);
  AudioBuffer audio = istft(merge_mag_phase(mp), sample_rate);
  return deemphasis(audio, source.config.preemphasis_coeff);
}

struct ConversionResult {
  FrameMatrix<double> predicted_mag;
  std::size_t frames_used = 0;
  AudioBuffer audio;
  StopReason stop_reason = StopReason::max_len;
};

struct ConvertOptions {
  std::optional<double> eos_radius;    // default: default_eos_radius
  std::optional<std::size_t> max_len;  // default: default_decode_cap
  std::filesystem::path log_path;      // JSON-lines log; empty: none
};

template <typename T>
ConversionResult convert_audio(const AudioBuffer& input, const ModelState<T>& s, const ConvertOptions& opt = {}) {
  auto stage = [](const char* name, auto&& fn) {
    try {
      return fn();
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(name, e.what());
    }
  };
  const AnalysisConfig analysis = stage("config", [&] { return load_analysis_config(s.metadata); });
  AudioBuffer buf = stage("resample", [&] { return resample(input, analysis.sample_rate); });
  if (analysis.apply_vad) buf = stage("vad", [&] { return trim_silence(buf, analysis.vad); });
  buf = stage("preemphasis", [&] { return preemphasis(buf, analysis.stft.preemphasis_coeff); });
  auto spec = stage("stft", [&] { return stft(buf, analysis.stft); });
  auto mp = stage("split", [&] { return split_mag_phase(spec); });
  auto decoded = stage("decode", [&] {
    return greedy_decode(mp.magnitude, s, opt.max_len.value_or(default_decode_cap(s)),
                         opt.eos_radius.value_or(default_eos_radius(s)));
  });
  ConversionResult r;
  r.stop_reason = decoded.stop_reason;
  r.audio = stage("reconstruct", [&] { return reconstruct(decoded.predicted, mp, analysis.sample_rate, &r.frames_used); });
  r.predicted_mag = std::move(decoded.predicted);
  return r;
}

inline void append_conversion_log(const std::filesystem::path& log, const std::string& input, const ConversionResult& r,
                                  double seconds) {
  if (log.empty()) return;
  nlohmann::json line{{"input", input},
                      {"frames_pred", r.predicted_mag.frames},
                      {"frames_used", r.frames_used},
                      {"stop_reason", to_string(r.stop_reason)},
                      {"seconds_elapsed", seconds}};
  std::ofstream out(log, std::ios::app);
  if (!out) throw IoError("cannot open conversion log " + log.string());
  out << line.dump() << '\n';
}

// read -> convert -> write, with a JSON-lines log entry.
template <typename T>
ConversionResult convert_file(const std::filesystem::path& in_wav, const std::filesystem::path& out_wav,
                              const ModelState<T>& s, const ConvertOptions& opt = {}) {
  const auto start = std::chrono::steady_clock::now();
  AudioBuffer input;
  try {
    input = read_wav(in_wav);
  } catch (const std::exception& e) {
    throw StageError("read", e.what());
  }
  ConversionResult r = convert_audio(input, s, opt);
  try {
    write_wav(r.audio, out_wav);
  } catch (const std::exception& e) {
    throw StageError("write", e.what());
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  append_conversion_log(opt.log_path, in_wav.string(), r, seconds);
  return r;
}

}  // namespace specterra
