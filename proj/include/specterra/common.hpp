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

// Error types, seeding and the worker-count knob shared by every module.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace specterra {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define SPECTERRA_DEFINE_ERROR(Name)          \
  class Name : public Error {                 \
   public:                                    \
    using Error::Error;                       \
  }

SPECTERRA_DEFINE_ERROR(FormatError);
SPECTERRA_DEFINE_ERROR(UnsupportedFormatError);
SPECTERRA_DEFINE_ERROR(IoError);
SPECTERRA_DEFINE_ERROR(InputTooShortError);
SPECTERRA_DEFINE_ERROR(ConfigError);
SPECTERRA_DEFINE_ERROR(AlignmentError);
SPECTERRA_DEFINE_ERROR(ShapeError);
SPECTERRA_DEFINE_ERROR(NumericError);
SPECTERRA_DEFINE_ERROR(EmptyAudioError);
SPECTERRA_DEFINE_ERROR(CheckpointError);

#undef SPECTERRA_DEFINE_ERROR

// Raised by multi-stage pipelines; the message is prefixed with the stage.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// FNV-1a, stable across platforms (std::hash is not).
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Every random stream in a run is derived from the run seed plus a name
// ("tokens", "init", "dropout", "batches", ...).
inline std::uint64_t sub_seed(std::uint64_t run_seed, std::string_view name) {
  return splitmix64(run_seed ^ fnv1a(name));
}

// Worker count: hardware concurrency, capped by SPECTERRA_THREADS.
inline std::size_t worker_count() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SPECTERRA_THREADS")) {
    char* end = nullptr;
    long cap = std::strtol(env, &end, 10);
    if (end != env && cap >= 1) n = std::min<std::size_t>(n, cap);
  }
  return n;
}

// Runs fn(begin, end) over contiguous chunks of [0, n). Each index is
// processed by exactly one worker, so results do not depend on the split.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t min_chunk, Fn&& fn) {
  std::size_t workers = std::min(worker_count(), (n + min_chunk - 1) / std::max<std::size_t>(min_chunk, 1));
  if (workers <= 1) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 1; w < workers; ++w) {
    std::size_t b = w * chunk, e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  fn(std::size_t{0}, std::min(n, chunk));
  for (auto& t : pool) t.join();
}

}  // namespace specterra
