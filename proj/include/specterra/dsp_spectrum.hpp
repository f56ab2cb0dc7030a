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

// Analysis/synthesis chain: pre-emphasis, framing, windowing, one-sided
// STFT, overlap-add inverse, and the magnitude/phase factorization with the
// Nyquist bin held aside so the model sees a power-of-two feature width.

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "specterra/audio_io.hpp"
#include "specterra/common.hpp"

namespace specterra {

using Complex = std::complex<double>;

enum class WindowKind { hann, hamming };

inline std::string to_string(WindowKind w) { return w == WindowKind::hann ? "hann" : "hamming"; }

inline WindowKind window_from_string(const std::string& s) {
  if (s == "hann" || s == "hanning") return WindowKind::hann;
  if (s == "hamming") return WindowKind::hamming;
  throw ConfigError("unknown window: " + s);
}

struct StftConfig {
  std::size_t nfft = 512;
  std::size_t hop = 256;
  WindowKind window = WindowKind::hann;
  double preemphasis_coeff = 0.97;

  std::size_t freq_bins() const { return nfft / 2 + 1; }
  // Width of the model-facing magnitude (Nyquist row removed).
  std::size_t feature_bins() const { return nfft / 2; }

  void validate() const {
    if (nfft < 2 || (nfft & (nfft - 1)) != 0) throw ConfigError("nfft must be a power of two");
    if (hop == 0 || hop > nfft) throw ConfigError("hop must be in (0, nfft]");
    if (preemphasis_coeff < 0.0 || preemphasis_coeff >= 1.0)
      throw ConfigError("pre-emphasis coefficient must be in [0, 1)");
  }
  // Overlap-add reconstruction is only guaranteed at 50% overlap.
  void validate_for_synthesis() const {
    validate();
    if (2 * hop != nfft) throw ConfigError("inverse STFT requires hop == nfft / 2");
  }
};

// Frame-major matrix: element (bin, frame) lives at data[frame * bins + bin],
// so each frame is a contiguous row. A (bins x frames) spectrum is therefore
// the same memory as a (frames x bins) row-major feature matrix.
template <typename T>
struct FrameMatrix {
  std::size_t bins = 0;
  std::size_t frames = 0;
  std::vector<T> data;

  FrameMatrix() = default;
  FrameMatrix(std::size_t b, std::size_t f, T fill = T{}) : bins(b), frames(f), data(b * f, fill) {}

  T& operator()(std::size_t bin, std::size_t frame) { return data[frame * bins + bin]; }
  const T& operator()(std::size_t bin, std::size_t frame) const { return data[frame * bins + bin]; }
  std::span<T> frame(std::size_t t) { return {data.data() + t * bins, bins}; }
  std::span<const T> frame(std::size_t t) const { return {data.data() + t * bins, bins}; }

  // First `n` frames.
  FrameMatrix head(std::size_t n) const {
    FrameMatrix out(bins, std::min(n, frames));
    std::copy_n(data.begin(), out.data.size(), out.data.begin());
    return out;
  }
  bool operator==(const FrameMatrix&) const = default;
};

struct ComplexSpectrum {
  FrameMatrix<Complex> bins;
  StftConfig config;
  std::size_t frames() const { return bins.frames; }
};

struct MagPhase {
  FrameMatrix<double> magnitude;       // feature_bins x frames
  FrameMatrix<Complex> phase;          // freq_bins x frames, unit modulus
  std::vector<Complex> dropped_bin;    // Nyquist row, one value per frame
  StftConfig config;
  std::size_t frames() const { return magnitude.frames; }
};

inline std::vector<double> make_window(WindowKind kind, std::size_t n) {
  std::vector<double> w(n);
  const double a = kind == WindowKind::hann ? 0.5 : 0.54;
  for (std::size_t i = 0; i < n; ++i)
    w[i] = a - (1.0 - a) * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

inline AudioBuffer preemphasis(const AudioBuffer& buf, double coeff) {
  AudioBuffer out = buf;
  for (std::size_t n = 1; n < buf.samples.size(); ++n)
    out.samples[n] = buf.samples[n] - coeff * buf.samples[n - 1];
  return out;
}

inline AudioBuffer deemphasis(const AudioBuffer& buf, double coeff) {
  AudioBuffer out = buf;
  for (std::size_t n = 1; n < out.samples.size(); ++n)
    out.samples[n] = buf.samples[n] + coeff * out.samples[n - 1];
  return out;
}

namespace detail {

// FFTW plans are created once per size under a lock; execution through the
// new-array interface is thread-safe.
class FftPlans {
 public:
  static FftPlans& instance() {
    static FftPlans plans;
    return plans;
  }

  struct Pair {
    fftw_plan forward = nullptr;
    fftw_plan inverse = nullptr;
  };

  Pair get(std::size_t n) {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = plans_.find(n);
    if (it != plans_.end()) return it->second;
    double* real = fftw_alloc_real(n);
    fftw_complex* cplx = fftw_alloc_complex(n / 2 + 1);
    Pair p;
    const int sz = static_cast<int>(n);
    p.forward = fftw_plan_dft_r2c_1d(sz, real, cplx, FFTW_ESTIMATE | FFTW_UNALIGNED);
    p.inverse = fftw_plan_dft_c2r_1d(sz, cplx, real, FFTW_ESTIMATE | FFTW_UNALIGNED);
    fftw_free(real);
    fftw_free(cplx);
    plans_.emplace(n, p);
    return p;
  }

  ~FftPlans() {
    for (auto& [n, p] : plans_) {
      fftw_destroy_plan(p.forward);
      fftw_destroy_plan(p.inverse);
    }
  }

 private:
  std::mutex mutex_;
  std::map<std::size_t, Pair> plans_;
};

}  // namespace detail

// One-sided DFT of a real frame (length n) into n/2 + 1 bins.
inline void rfft(std::span<const double> frame, std::span<Complex> out) {
  auto plan = detail::FftPlans::instance().get(frame.size());
  std::vector<double> in(frame.begin(), frame.end());  // r2c may clobber input
  fftw_execute_dft_r2c(plan.forward, in.data(), reinterpret_cast<fftw_complex*>(out.data()));
}

// Inverse of rfft, normalized by 1/n. Imaginary parts of the DC and Nyquist
// bins are ignored.
inline void irfft(std::span<const Complex> bins, std::span<double> out) {
  auto plan = detail::FftPlans::instance().get(out.size());
  std::vector<Complex> in(bins.begin(), bins.end());  // c2r clobbers input
  fftw_execute_dft_c2r(plan.inverse, reinterpret_cast<fftw_complex*>(in.data()), out.data());
  const double scale = 1.0 / static_cast<double>(out.size());
  for (double& x : out) x *= scale;
}

inline std::size_t frame_count(std::size_t length, const StftConfig& cfg) {
  return length < cfg.nfft ? 0 : 1 + (length - cfg.nfft) / cfg.hop;
}

inline ComplexSpectrum stft(const AudioBuffer& buf, const StftConfig& cfg) {
  cfg.validate();
  if (buf.samples.size() < cfg.nfft)
    throw InputTooShortError("buffer has " + std::to_string(buf.samples.size()) +
                             " samples, need at least " + std::to_string(cfg.nfft));
  const std::size_t frames = frame_count(buf.samples.size(), cfg);
  const auto window = make_window(cfg.window, cfg.nfft);
  ComplexSpectrum spec{FrameMatrix<Complex>(cfg.freq_bins(), frames), cfg};
  parallel_for(frames, 64, [&](std::size_t begin, std::size_t end) {
    std::vector<double> frame(cfg.nfft);
    for (std::size_t t = begin; t < end; ++t) {
      const double* src = buf.samples.data() + t * cfg.hop;
      for (std::size_t i = 0; i < cfg.nfft; ++i) frame[i] = src[i] * window[i];
      rfft(frame, spec.bins.frame(t));
    }
  });
  return spec;
}

// Weighted overlap-add with the synthesis window, normalized by the summed
// squared window. Samples whose normalizer vanishes (only the outermost edge
// samples for hann) are set to zero.
inline AudioBuffer istft(const ComplexSpectrum& spec, int sample_rate = 16000) {
  const StftConfig& cfg = spec.config;
  cfg.validate_for_synthesis();
  if (spec.bins.bins != cfg.freq_bins()) throw ShapeError("spectrum has wrong number of bins");
  AudioBuffer out;
  out.sample_rate = sample_rate;
  const std::size_t frames = spec.frames();
  if (frames == 0) return out;
  const std::size_t length = (frames - 1) * cfg.hop + cfg.nfft;
  const auto window = make_window(cfg.window, cfg.nfft);
  std::vector<double> acc(length, 0.0), norm(length, 0.0), frame(cfg.nfft);
  for (std::size_t t = 0; t < frames; ++t) {
    irfft(spec.bins.frame(t), frame);
    const std::size_t start = t * cfg.hop;
    for (std::size_t i = 0; i < cfg.nfft; ++i) {
      acc[start + i] += frame[i] * window[i];
      norm[start + i] += window[i] * window[i];
    }
  }
  constexpr double kTiny = 1e-10;
  const std::size_t edge = cfg.nfft / 2;
  out.samples.resize(length);
  for (std::size_t n = 0; n < length; ++n) {
    if (norm[n] > kTiny) {
      out.samples[n] = acc[n] / norm[n];
    } else {
      if (n >= edge && n + edge < length) throw ConfigError("window normalizer vanishes in the interior");
      out.samples[n] = 0.0;
    }
  }
  return out;
}

inline MagPhase split_mag_phase(const ComplexSpectrum& spec) {
  const std::size_t frames = spec.frames();
  const std::size_t full = spec.bins.bins;
  const std::size_t kept = full - 1;
  MagPhase mp{FrameMatrix<double>(kept, frames), FrameMatrix<Complex>(full, frames),
              std::vector<Complex>(frames), spec.config};
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t k = 0; k < full; ++k) {
      const Complex v = spec.bins(k, t);
      const double mag = std::abs(v);
      mp.phase(k, t) = mag > 0.0 ? v / mag : Complex(1.0, 0.0);
      if (k < kept) mp.magnitude(k, t) = mag;
    }
    mp.dropped_bin[t] = spec.bins(kept, t);
  }
  return mp;
}

inline ComplexSpectrum merge_mag_phase(const MagPhase& mp) {
  const std::size_t frames = mp.magnitude.frames;
  const std::size_t kept = mp.magnitude.bins;
  if (mp.phase.frames != frames)
    throw AlignmentError("magnitude has " + std::to_string(frames) + " frames, phase has " +
                         std::to_string(mp.phase.frames));
  if (mp.phase.bins != kept + 1) throw ShapeError("phase must have one more row than magnitude");
  if (!mp.dropped_bin.empty() && mp.dropped_bin.size() != frames)
    throw AlignmentError("dropped bin length differs from frame count");
  ComplexSpectrum spec{FrameMatrix<Complex>(kept + 1, frames), mp.config};
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t k = 0; k < kept; ++k) spec.bins(k, t) = mp.magnitude(k, t) * mp.phase(k, t);
    spec.bins(kept, t) = mp.dropped_bin.empty() ? Complex{} : mp.dropped_bin[t];
  }
  return spec;
}

// Keeps the first n frames of every component.
inline MagPhase truncate_frames(const MagPhase& mp, std::size_t n) {
  MagPhase out{mp.magnitude.head(n), mp.phase.head(n), {}, mp.config};
  out.dropped_bin.assign(mp.dropped_bin.begin(),
                         mp.dropped_bin.begin() + static_cast<std::ptrdiff_t>(std::min(n, mp.dropped_bin.size())));
  return out;
}

// Signal-to-noise ratio (dB) of `test` against `reference` over [begin, end).
// Returns +inf when the error is exactly zero.
inline double snr_db(std::span<const double> reference, std::span<const double> test,
                     std::size_t begin, std::size_t end) {
  double sig = 0.0, err = 0.0;
  for (std::size_t i = begin; i < end; ++i) {
    sig += reference[i] * reference[i];
    const double d = reference[i] - test[i];
    err += d * d;
  }
  if (err == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(sig / err);
}

// Feature cache: "VFSP", u32 version, u32 freq_bins, u32 frames, then the
// spectrum as interleaved little-endian float32 (re, im), frame by frame.
constexpr std::uint32_t kFeatureCacheVersion = 1;

inline void write_feature_cache(const ComplexSpectrum& spec, const std::filesystem::path& path) {
  std::vector<unsigned char> out;
  out.insert(out.end(), {'V', 'F', 'S', 'P'});
  detail::put_u32le(out, kFeatureCacheVersion);
  detail::put_u32le(out, static_cast<std::uint32_t>(spec.bins.bins));
  detail::put_u32le(out, static_cast<std::uint32_t>(spec.bins.frames));
  for (const Complex& c : spec.bins.data) {
    for (float f : {static_cast<float>(c.real()), static_cast<float>(c.imag())}) {
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      detail::put_u32le(out, u);
    }
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot open " + path.string() + " for writing");
  file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!file) throw IoError("write failed: " + path.string());
}

// The hop and window are not stored; they come from `cfg`, whose nfft must
// match the cached bin count.
inline ComplexSpectrum read_feature_cache(const std::filesystem::path& path, StftConfig cfg) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "VFSP", 4) != 0)
    throw FormatError(path.string() + ": not a feature cache");
  if (detail::read_u32le(bytes.data() + 4) != kFeatureCacheVersion)
    throw FormatError(path.string() + ": unsupported cache version");
  const std::uint32_t bins = detail::read_u32le(bytes.data() + 8);
  const std::uint32_t frames = detail::read_u32le(bytes.data() + 12);
  if (bytes.size() != 16 + std::size_t(bins) * frames * 8) throw FormatError(path.string() + ": size mismatch");
  if (bins != cfg.freq_bins()) throw ConfigError(path.string() + ": cached bin count does not match nfft");
  ComplexSpectrum spec{FrameMatrix<Complex>(bins, frames), cfg};
  const unsigned char* p = bytes.data() + 16;
  for (auto& c : spec.bins.data) {
    float re, im;
    std::uint32_t u = detail::read_u32le(p);
    std::memcpy(&re, &u, 4);
    u = detail::read_u32le(p + 4);
    std::memcpy(&im, &u, 4);
    c = Complex(re, im);
    p += 8;
  }
  return spec;
}

}  // namespace specterra
