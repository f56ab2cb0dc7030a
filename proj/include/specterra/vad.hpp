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

// Energy-threshold trimming of leading and trailing silence.

#include <cmath>
#include <optional>
#include <vector>

#include "specterra/audio_io.hpp"

namespace specterra {

struct VadConfig {
  double frame_ms = 25.0;
  double hop_ms = 10.0;
  double threshold_db = -40.0;  // relative to the loudest frame
  std::size_t hangover_frames = 3;

  void validate() const {
    if (!(hop_ms > 0.0) || frame_ms < hop_ms) throw ConfigError("VAD requires frame_ms >= hop_ms > 0");
    if (!(threshold_db < 0.0)) throw ConfigError("VAD threshold must be negative");
  }
};

// Half-open sample range [begin, end) kept by trim_silence.
struct VoicedSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
};

// The signal is cut into hop-sized segments; segment k is voiced when the
// RMS of a frame_ms window centred on it is within threshold_db of the
// loudest segment. The span runs from the first to the last voiced segment,
// widened by hangover_frames segments on each side. nullopt if nothing is
// voiced.
inline std::optional<VoicedSpan> find_voiced_span(const AudioBuffer& buf, const VadConfig& cfg) {
  cfg.validate();
  const std::size_t n = buf.samples.size();
  if (n == 0) return std::nullopt;
  const auto hop = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(cfg.hop_ms * 1e-3 * buf.sample_rate)));
  const auto frame = std::max(hop, static_cast<std::size_t>(std::lround(cfg.frame_ms * 1e-3 * buf.sample_rate)));
  const std::size_t segments = (n + hop - 1) / hop;

  // Prefix sums of squares for O(1) window energies.
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + buf.samples[i] * buf.samples[i];

  std::vector<double> rms(segments);
  double peak = 0.0;
  for (std::size_t k = 0; k < segments; ++k) {
    const double centre = (static_cast<double>(k) + 0.5) * static_cast<double>(hop);
    const double half = 0.5 * static_cast<double>(frame);
    const auto lo = static_cast<std::size_t>(std::max(0.0, std::floor(centre - half)));
    const auto hi = std::min(n, static_cast<std::size_t>(std::ceil(centre + half)));
    rms[k] = hi > lo ? std::sqrt((prefix[hi] - prefix[lo]) / static_cast<double>(hi - lo)) : 0.0;
    peak = std::max(peak, rms[k]);
  }
  if (peak <= 0.0) return std::nullopt;

  const double floor_rms = peak * std::pow(10.0, cfg.threshold_db / 20.0);
  std::optional<std::size_t> first, last;
  for (std::size_t k = 0; k < segments; ++k) {
    if (rms[k] >= floor_rms) {
      if (!first) first = k;
      last = k;
    }
  }
  if (!first) return std::nullopt;

  const std::size_t a = *first > cfg.hangover_frames ? *first - cfg.hangover_frames : 0;
  const std::size_t b = std::min(segments, *last + 1 + cfg.hangover_frames);
  return VoicedSpan{a * hop, std::min(n, b * hop)};
}

// Returns the original buffer when no segment is voiced.
inline AudioBuffer trim_silence(const AudioBuffer& buf, const VadConfig& cfg = {}) {
  auto span = find_voiced_span(buf, cfg);
  if (!span) return buf;
  AudioBuffer out;
  out.sample_rate = buf.sample_rate;
  out.samples.assign(buf.samples.begin() + static_cast<std::ptrdiff_t>(span->begin),
                     buf.samples.begin() + static_cast<std::ptrdiff_t>(span->end));
  return out;
}

}  // namespace specterra
