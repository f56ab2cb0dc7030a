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

// Mono 16-bit PCM WAV input/output and band-limited sample-rate conversion.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "specterra/common.hpp"

namespace specterra {

struct AudioBuffer {
  std::vector<double> samples;
  int sample_rate = 16000;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  double seconds() const { return static_cast<double>(samples.size()) / sample_rate; }
};

namespace detail {

inline std::uint32_t read_u32le(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
         (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}
inline std::uint16_t read_u16le(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline void put_u32le(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}
inline void put_u16le(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

}  // namespace detail

constexpr std::uint16_t kWavFormatPcm = 1;

// Decodes an in-memory RIFF/WAVE image.
inline AudioBuffer decode_wav(const std::vector<unsigned char>& bytes) {
  using detail::read_u16le;
  using detail::read_u32le;
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw FormatError("not a RIFF/WAVE file");

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* hdr = bytes.data() + pos;
    std::uint32_t size = read_u32le(hdr + 4);
    std::size_t body = pos + 8;
    if (body + size > bytes.size()) {
      // Tolerate a truncated trailing data chunk, reject anything else.
      if (std::memcmp(hdr, "data", 4) != 0) throw FormatError("chunk overruns file");
      size = static_cast<std::uint32_t>(bytes.size() - body);
    }
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (size < 16) throw FormatError("fmt chunk too small");
      const unsigned char* f = bytes.data() + body;
      format = read_u16le(f);
      channels = read_u16le(f + 2);
      rate = read_u32le(f + 4);
      bits = read_u16le(f + 14);
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data = bytes.data() + body;
      data_size = size;
    }
    pos = body + size + (size & 1u);
  }
  if (!have_fmt) throw FormatError("missing fmt chunk");
  if (data == nullptr) throw FormatError("missing data chunk");
  if (format != kWavFormatPcm) throw UnsupportedFormatError("only integer PCM is supported");
  if (channels != 1) throw UnsupportedFormatError("only mono audio is supported");
  if (bits != 16) throw UnsupportedFormatError("only 16-bit samples are supported");
  if (rate == 0) throw FormatError("zero sample rate");

  AudioBuffer buf;
  buf.sample_rate = static_cast<int>(rate);
  std::size_t n = data_size / 2;
  buf.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto s = static_cast<std::int16_t>(read_u16le(data + 2 * i));
    buf.samples[i] = s / 32768.0;
  }
  return buf;
}

inline AudioBuffer read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return decode_wav(bytes);
}

inline std::int16_t quantize_sample(double x) {
  constexpr double kMax = 1.0 - 1.0 / 32768.0;
  x = std::clamp(x, -1.0, kMax);
  return static_cast<std::int16_t>(std::lround(x * 32768.0));
}

inline std::vector<unsigned char> encode_wav(const AudioBuffer& buf) {
  std::vector<unsigned char> out;
  const auto data_bytes = static_cast<std::uint32_t>(buf.samples.size() * 2);
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  detail::put_u32le(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  detail::put_u32le(out, 16);
  detail::put_u16le(out, kWavFormatPcm);
  detail::put_u16le(out, 1);
  detail::put_u32le(out, static_cast<std::uint32_t>(buf.sample_rate));
  detail::put_u32le(out, static_cast<std::uint32_t>(buf.sample_rate) * 2);
  detail::put_u16le(out, 2);
  detail::put_u16le(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  detail::put_u32le(out, data_bytes);
  for (double x : buf.samples) {
    if (!std::isfinite(x)) throw NumericError("non-finite sample");
    detail::put_u16le(out, static_cast<std::uint16_t>(quantize_sample(x)));
  }
  return out;
}

inline void write_wav(const AudioBuffer& buf, const std::filesystem::path& path) {
  auto bytes = encode_wav(buf);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

// Polyphase windowed-sinc resampler (Kaiser window). The passband edge is
// 0.9 of the lower Nyquist frequency; each phase is normalized to unit DC gain.
struct ResamplerOptions {
  double cutoff_fraction = 0.9;
  int zero_crossings = 16;
  double kaiser_beta = 8.6;
};

inline AudioBuffer resample(const AudioBuffer& buf, int target_rate,
                            const ResamplerOptions& opt = {}) {
  if (target_rate <= 0 || buf.sample_rate <= 0) throw ConfigError("sample rate must be positive");
  if (target_rate == buf.sample_rate) return buf;

  const auto g = std::gcd(buf.sample_rate, target_rate);
  const std::int64_t up = target_rate / g;      // L
  const std::int64_t down = buf.sample_rate / g;  // M
  const auto n_in = static_cast<std::int64_t>(buf.samples.size());
  const std::int64_t n_out = (n_in * up + down / 2) / down;

  // Cutoff in cycles per input sample.
  const double fc = opt.cutoff_fraction * 0.5 * std::min(buf.sample_rate, target_rate) / buf.sample_rate;
  const double half_width = opt.zero_crossings / (2.0 * fc);
  const auto taps_side = static_cast<std::int64_t>(std::ceil(half_width));
  const std::int64_t taps = 2 * taps_side;
  const double i0_beta = std::cyl_bessel_i(0.0, opt.kaiser_beta);

  auto kernel = [&](double tau) {
    double r = tau / half_width;
    if (std::abs(r) >= 1.0) return 0.0;
    double w = std::cyl_bessel_i(0.0, opt.kaiser_beta * std::sqrt(1.0 - r * r)) / i0_beta;
    double x = 2.0 * fc * tau;
    double sinc = x == 0.0 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
    return 2.0 * fc * sinc * w;
  };

  // table[p][j] weights input sample (base + j - taps_side + 1) for phase p.
  std::vector<double> table(static_cast<std::size_t>(up * taps));
  for (std::int64_t p = 0; p < up; ++p) {
    double frac = static_cast<double>(p) / up;
    double* row = table.data() + p * taps;
    double sum = 0.0;
    for (std::int64_t j = 0; j < taps; ++j) {
      row[j] = kernel(frac - static_cast<double>(j - taps_side + 1));
      sum += row[j];
    }
    for (std::int64_t j = 0; j < taps; ++j) row[j] /= sum;
  }

  AudioBuffer out;
  out.sample_rate = target_rate;
  out.samples.assign(static_cast<std::size_t>(n_out), 0.0);
  for (std::int64_t n = 0; n < n_out; ++n) {
    std::int64_t pos = n * down;
    std::int64_t base = pos / up;
    std::int64_t phase = pos % up;
    const double* row = table.data() + phase * taps;
    double acc = 0.0;
    for (std::int64_t j = 0; j < taps; ++j) {
      std::int64_t k = base + j - taps_side + 1;
      if (k >= 0 && k < n_in) acc += row[j] * buf.samples[static_cast<std::size_t>(k)];
    }
    out.samples[static_cast<std::size_t>(n)] = acc;
  }
  return out;
}

}  // namespace specterra
