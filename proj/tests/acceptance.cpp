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

// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "oracles.hpp"
#include "specterra/commands.hpp"

namespace ad = specterra::ad;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(const char* id, bool ok, const std::string& what) {
  std::printf("[%s] %s %s\n", ok ? "PASS" : "FAIL", id, what.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void progress(const std::string& s) { std::fprintf(stderr, "  .. %s\n", s.c_str()); }

// ---------------------------------------------------------------------------

void criterion_1() {
  const auto t0 = Clock::now();
  specterra::StftConfig cfg;  // hann, 512 / 256
  double worst = 1e300;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    specterra::AudioBuffer x{oracle::noise(1000 + seed, 16000), 16000};
    auto y = specterra::istft(specterra::stft(x, cfg), 16000);
    const std::size_t edge = cfg.nfft / 2;
    worst = std::min(worst, oracle::snr_db(x.samples, y.samples, edge, y.size() - edge));
  }
  const double t = seconds_since(t0);
  report("1", worst >= 40.0 && t < 5.0, fmt("DSP round trip: min interior SNR %.1f dB over 20 signals (>= 40), %.2f s (< 5)", worst, t));
}

void criterion_2() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  bool nyquist_checked = false;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    specterra::AudioBuffer x{oracle::noise(2000 + seed, 16000), 16000};
    auto spec = specterra::stft(x, {});
    auto back = specterra::merge_mag_phase(specterra::split_mag_phase(spec));
    if (back.bins.bins != spec.bins.bins || back.frames() != spec.frames()) {
      worst = 1e300;
      continue;
    }
    for (std::size_t i = 0; i < spec.bins.data.size(); ++i)
      worst = std::max(worst, std::abs(back.bins.data[i] - spec.bins.data[i]));
    nyquist_checked = spec.bins.bins == 257;
  }
  const double t = seconds_since(t0);
  report("2", worst <= 1e-6 && nyquist_checked && t < 1.0,
         fmt("split/merge: max |D - merge(split(D))| = %.2e over 257 bins incl. Nyquist (<= 1e-6), %.2f s (< 1)", worst, t));
}

void criterion_3() {
  const auto t0 = Clock::now();
  auto reports = specterra::run_gradcheck_suite(1);
  bool ok = true;
  double worst_op = 0.0, worst_model = 0.0;
  std::string failed;
  for (const auto& r : reports) {
    ok = ok && r.passed;
    if (!r.passed) failed += " " + r.name;
    if (r.name.rfind("model_loss", 0) == 0) {
      worst_model = std::max(worst_model, r.max_rel_error);
      ok = ok && r.tolerance <= 1e-3;
    } else {
      worst_op = std::max(worst_op, r.max_rel_error);
      ok = ok && r.tolerance <= 1e-4;
    }
  }
  const double t = seconds_since(t0);
  report("3", ok && t < 60.0,
         fmt("gradient suite: %zu checks, worst op rel err %.2e (<= 1e-4), tiny model %.2e (<= 1e-3), %.2f s (< 60)%s",
             reports.size(), worst_op, worst_model, t, failed.empty() ? "" : (" failed:" + failed).c_str()));
}

void criterion_4() {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = 1 + rng() % 4, steps = 1 + rng() % 8, f = 1 + rng() % 16;
    std::vector<double> y(b * steps * f), p(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
      y[i] = n(rng);
      p[i] = n(rng);
    }
    std::vector<std::uint8_t> mask(b * steps);
    for (auto& m : mask) m = rng() % 3 == 0;
    const double got = specterra::loss_final(ad::Tensor<double>::constant({b, steps, f}, y),
                                             ad::Tensor<double>::constant({b, steps, f}, p), mask, true)
                           .item();
    worst = std::max(worst, std::abs(got - oracle::loss_final_raw(y, p, mask, f)));
  }
  const double example = specterra::loss_final(ad::Tensor<double>::constant({1, 1, 2}, {1.0, 2.0}),
                                               ad::Tensor<double>::constant({1, 1, 2}, {0.0, 0.0}), {}, true)
                             .item();
  report("4", worst <= 1e-6 && std::abs(example - 2.75) <= 1e-12,
         fmt("loss oracle: max |loss - brute force| = %.2e over 100 pairs (<= 1e-6); worked example %.6g (2.75)", worst,
             example));
}

specterra::PaddedBatch<double> random_batch(std::mt19937_64& rng, const specterra::ModelState<double>& s) {
  const std::size_t f = s.config.d_model, b = 3;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<specterra::FrameMatrix<double>> src, tgt;
  for (std::size_t i = 0; i < b; ++i) {
    specterra::FrameMatrix<double> a(f, 2 + rng() % 6), t(f, 2 + rng() % 6);
    for (double& v : a.data) v = u(rng);
    for (double& v : t.data) v = u(rng);
    src.push_back(std::move(a));
    tgt.push_back(std::move(t));
  }
  std::vector<const specterra::FrameMatrix<double>*> sp, tp;
  for (std::size_t i = 0; i < b; ++i) {
    sp.push_back(&src[i]);
    tp.push_back(&tgt[i]);
  }
  return specterra::build_batch<double>(sp, tp, s.tokens);
}

void criterion_5() {
  specterra::ModelConfig mc;
  mc.d_model = 16;
  mc.n_layers_enc = mc.n_layers_dec = 2;
  mc.n_heads = 2;
  mc.d_ff = 32;
  auto s = specterra::init_model<double>(mc, 5);
  std::mt19937_64 rng(55);
  std::normal_distribution<double> n(0.0, 5.0);
  const std::size_t f = mc.d_model;

  double worst_pad = 0.0;
  int pad_trials = 0;
  while (pad_trials < 50) {
    auto batch = random_batch(rng, s);
    if (std::count(batch.src_pad_mask.begin(), batch.src_pad_mask.end(), 1) == 0) continue;
    ++pad_trials;
    auto base = specterra::model_forward(batch, s);
    auto changed = batch;
    std::vector<double> v(batch.encoder_input.values().begin(), batch.encoder_input.values().end());
    for (std::size_t i = 0; i < v.size(); ++i)
      if (batch.src_pad_mask[i / f]) v[i] += n(rng);
    changed.encoder_input = ad::Tensor<double>::constant(batch.encoder_input.shape(), v);
    auto out = specterra::model_forward(changed, s);
    for (std::size_t i = 0; i < out.size(); ++i)
      if (!batch.tgt_pad_mask[i / f]) worst_pad = std::max(worst_pad, std::abs(out.values()[i] - base.values()[i]));
  }

  double worst_causal = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    auto batch = random_batch(rng, s);
    const std::size_t td = batch.dec_steps(), t = 1 + rng() % (td - 1);
    auto base = specterra::model_forward(batch, s);
    auto changed = batch;
    std::vector<double> v(batch.decoder_input.values().begin(), batch.decoder_input.values().end());
    for (std::size_t b = 0; b < batch.batch(); ++b)
      for (std::size_t k = 0; k < f; ++k) v[(b * td + t) * f + k] += n(rng);
    changed.decoder_input = ad::Tensor<double>::constant(batch.decoder_input.shape(), v);
    auto out = specterra::model_forward(changed, s);
    for (std::size_t b = 0; b < batch.batch(); ++b)
      for (std::size_t i = b * td * f; i < (b * td + t) * f; ++i)
        worst_causal = std::max(worst_causal, std::abs(out.values()[i] - base.values()[i]));
  }
  report("5", worst_pad <= 1e-6 && worst_causal <= 1e-6,
         fmt("masking: padded-source perturbation moves real outputs by %.2e, future-step perturbation moves earlier "
             "steps by %.2e, 50 trials each (<= 1e-6)",
             worst_pad, worst_causal));
}

void criterion_6() {
  specterra::TrainConfig cfg;
  const double expect[3] = {1e-4, 1e-4 * 0.96, 1e-4 * 0.96 * 0.96};
  const double lit[3] = {1e-4, 9.6e-5, 9.216e-5};
  bool ok = true;
  std::string values;
  for (int i = 0; i < 3; ++i) {
    const double got = specterra::lr_at(static_cast<std::uint64_t>(4000 * i), cfg);
    const double ulp = std::nextafter(expect[i], 1.0) - expect[i];
    ok = ok && std::abs(got - expect[i]) <= ulp && std::abs(got - lit[i]) <= 2 * ulp;
    values += fmt(" lr_at(%d)=%.17g", 4000 * i, got);
  }
  report("6", ok, "schedule:" + values + " (within 1 ulp of closed form)");
}

// ---------------------------------------------------------------------------
// Toy-corpus training runs

specterra::AnalysisConfig toy_analysis() {
  specterra::AnalysisConfig a;
  a.sample_rate = 4000;
  a.stft.nfft = 128;
  a.stft.hop = 64;
  return a;
}

specterra::ModelConfig toy_model() {
  specterra::ModelConfig m;
  m.d_model = 64;
  m.n_layers_enc = m.n_layers_dec = 2;
  m.n_heads = 4;
  m.d_ff = 256;
  return m;
}

specterra::TrainConfig toy_train(std::size_t steps) {
  specterra::TrainConfig t;
  t.lr0 = 1e-3;
  t.batch_size = 4;
  t.max_steps = steps;
  return t;
}

constexpr std::size_t kOverfitSteps = 2000;
constexpr std::size_t kDecodeSteps = 4000;

std::size_t dominant_bin(const specterra::FrameMatrix<double>& m) {
  std::vector<double> acc(m.bins, 0.0);
  for (std::size_t t = 0; t < m.frames; ++t)
    for (std::size_t k = 0; k < m.bins; ++k) acc[k] += m(k, t);
  return static_cast<std::size_t>(std::max_element(acc.begin() + 1, acc.end()) - acc.begin());
}

void criteria_7_and_9(specterra::ModelState<float>& trained) {
  const auto analysis = toy_analysis();
  specterra::ToyCorpusConfig toy;  // 4 pairs, 150 Hz -> 300 Hz
  auto pairs = specterra::make_toy_corpus(toy, analysis);

  const auto t0 = Clock::now();
  double best = 1e300;
  std::size_t reached_at = 0;
  double overfit_seconds = 0.0;
  auto result = specterra::train(pairs, toy_model(), toy_train(kDecodeSteps),
                                 [&](const specterra::MetricsRow& row, const specterra::ModelState<float>& s) {
                                   const std::uint64_t step = row.step + 1;
                                   if (step <= kOverfitSteps && step % 100 == 0) {
                                     const double e = specterra::evaluate_loss(pairs, s).loss_final;
                                     if (e < best) best = e;
                                     if (e < 0.01 && reached_at == 0) reached_at = step;
                                     if (step == kOverfitSteps) overfit_seconds = seconds_since(t0);
                                     progress(fmt("pitch model step %llu eval loss %.5f", static_cast<unsigned long long>(step), e));
                                   }
                                   return true;
                                 });
  report("7", reached_at > 0 && overfit_seconds < 600.0,
         fmt("overfit: teacher-forced loss first < 0.01 at step %zu (<= %zu), best %.5f by step %zu, %.1f s (< 600)",
             reached_at, kOverfitSteps, best, kOverfitSteps, overfit_seconds));
  if (result.halted) std::printf("       training halted: %s\n", result.halt_reason.c_str());

  trained = std::move(result.state);
  specterra::store_analysis_config(analysis, trained.metadata);
  const std::size_t target_bin =
      static_cast<std::size_t>(std::lround(toy.f0_tgt * static_cast<double>(analysis.stft.nfft) / analysis.sample_rate));
  std::size_t pitch_hits = 0, count_hits = 0;
  std::string detail_bins, detail_frames;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto u = specterra::render_toy_pair(toy, i);
    auto r = specterra::convert_audio(u.source, trained);
    const std::size_t bin = r.predicted_mag.frames ? dominant_bin(r.predicted_mag) : 0;
    const long diff = static_cast<long>(bin) - static_cast<long>(target_bin);
    if (r.predicted_mag.frames && std::abs(diff) <= 2) ++pitch_hits;
    const double ratio = static_cast<double>(r.predicted_mag.frames) / static_cast<double>(pairs[i].target_mag.frames);
    if (std::abs(ratio - 1.0) <= 0.2) ++count_hits;
    detail_bins += fmt(" %zu", bin);
    detail_frames += fmt(" %zu/%zu", r.predicted_mag.frames, pairs[i].target_mag.frames);
  }
  report("9", pitch_hits >= 3,
         fmt("pitch shift: dominant bin within +-2 of target bin %zu on %zu/4 utterances (>= 3); bins:%s (source bin %ld, %zu steps)",
             target_bin, pitch_hits, detail_bins.c_str(),
             std::lround(toy.f0_src * static_cast<double>(analysis.stft.nfft) / analysis.sample_rate), kDecodeSteps));
  report("9a", count_hits == pairs.size(),
         fmt("decode length: predicted/target frames within 20%% on %zu/4 utterances; frames:%s", count_hits,
             detail_frames.c_str()));
}

void criterion_8() {
  const auto analysis = toy_analysis();
  specterra::ToyCorpusConfig toy;
  auto pairs = specterra::make_toy_corpus(toy, analysis);
  for (auto& p : pairs) p.target_mag = p.source.magnitude;
  auto result = specterra::train(pairs, toy_model(), toy_train(kDecodeSteps),
                                 [&](const specterra::MetricsRow& row, const specterra::ModelState<float>&) {
                                   if ((row.step + 1) % 1000 == 0)
                                     progress(fmt("identity model step %llu train loss %.5f",
                                                  static_cast<unsigned long long>(row.step + 1), row.loss_final));
                                   return true;
                                 });
  auto& s = result.state;
  specterra::store_analysis_config(analysis, s.metadata);

  double worst_mae = 0.0, worst_snr = 1e300;
  std::string detail;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto u = specterra::render_toy_pair(toy, i);
    auto r = specterra::convert_audio(u.source, s);
    const auto& src = pairs[i].source;
    const std::size_t n = std::min(r.predicted_mag.frames, src.frames());
    double mae = 1e300;
    if (n > 0) {
      double acc = 0.0;
      for (std::size_t t = 0; t < n; ++t) {
        double frame = 0.0;
        for (std::size_t k = 0; k < src.magnitude.bins; ++k) frame += std::abs(r.predicted_mag(k, t) - src.magnitude(k, t));
        acc += frame / static_cast<double>(src.magnitude.bins);
      }
      mae = acc / static_cast<double>(n);
    }
    double snr = -1e300;
    if (r.frames_used > 0) {
      auto ref = specterra::deemphasis(
          specterra::istft(specterra::merge_mag_phase(specterra::truncate_frames(src, r.frames_used)), analysis.sample_rate),
          analysis.stft.preemphasis_coeff);
      const std::size_t edge = analysis.stft.nfft / 2, len = std::min(ref.size(), r.audio.size());
      snr = oracle::snr_db(ref.samples, r.audio.samples, edge, len - edge);
    }
    worst_mae = std::max(worst_mae, mae);
    worst_snr = std::min(worst_snr, snr);
    detail += fmt(" [%zu/%zu frames, mae %.4f, snr %.1f dB]", r.predicted_mag.frames, src.frames(), mae, snr);
  }
  report("8", worst_mae < 0.05 && worst_snr >= 10.0,
         fmt("identity conversion: worst per-frame MAE %.4f (< 0.05), worst interior SNR %.1f dB (>= 10) over 4 sources,"
             " %zu steps;%s",
             worst_mae, worst_snr, kDecodeSteps, detail.c_str()));
}

void criterion_10(const specterra::ModelState<float>& trained) {
  oracle::TempDir dir("acceptance");
  specterra::RunConfig c;
  c.analysis = toy_analysis();
  c.model = toy_model();
  c.train = toy_train(25);
  c.out = dir / "toy";
  c.manifest = dir / "toy/manifest.tsv";
  c.cache_dir = dir / "cache";
  std::ostringstream log;
  specterra::cmd_toy(c, log);
  specterra::cmd_prep(c, log);
  c.checkpoint = dir / "a/model.vfvc";
  c.out = dir / "a/metrics.csv";
  specterra::cmd_train(c, log);
  c.checkpoint = dir / "b/model.vfvc";
  c.out = dir / "b/metrics.csv";
  specterra::cmd_train(c, log);
  const auto ma = oracle::read_bytes(dir / "a/metrics.csv"), mb = oracle::read_bytes(dir / "b/metrics.csv");
  const bool metrics_same = !ma.empty() && ma == mb;
  const bool ckpt_same = oracle::read_bytes(dir / "a/model.vfvc") == oracle::read_bytes(dir / "b/model.vfvc");

  specterra::save_checkpoint(trained, dir / "s1.vfvc");
  specterra::save_checkpoint(specterra::load_checkpoint<float>(dir / "s1.vfvc"), dir / "s2.vfvc");
  const auto s1 = oracle::read_bytes(dir / "s1.vfvc");
  const bool roundtrip_same = !trained.params.empty() && s1 == oracle::read_bytes(dir / "s2.vfvc");
  report("10", metrics_same && ckpt_same && roundtrip_same,
         fmt("reproducibility: metrics CSVs %s (%zu bytes), final checkpoints %s, save/load/save of the trained model %s (%zu bytes)",
             metrics_same ? "identical" : "DIFFER", ma.size(), ckpt_same ? "identical" : "DIFFER",
             roundtrip_same ? "identical" : "DIFFERS", s1.size()));
}

template <typename F>
void guarded(const char* id, F&& f) {
  try {
    f();
  } catch (const std::exception& e) {
    report(id, false, std::string("threw: ") + e.what());
  }
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  guarded("1", criterion_1);
  guarded("2", criterion_2);
  guarded("3", criterion_3);
  guarded("4", criterion_4);
  guarded("5", criterion_5);
  guarded("6", criterion_6);
  specterra::ModelState<float> trained;
  guarded("7/9", [&] { criteria_7_and_9(trained); });
  guarded("8", criterion_8);
  guarded("10", [&] { criterion_10(trained); });
  std::printf("acceptance: %d failure(s), %.1f s\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
