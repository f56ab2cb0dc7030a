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

// Command implementations behind the `specterra` executable.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "specterra/audio_io.hpp"
#include "specterra/dsp_spectrum.hpp"
#include "specterra/gradcheck.hpp"
#include "specterra/infer.hpp"
#include "specterra/seq_prep.hpp"
#include "specterra/train.hpp"
#include "specterra/transformer.hpp"

namespace specterra {

namespace fs = std::filesystem;

struct RunConfig {
  AnalysisConfig analysis;
  ModelConfig model;
  TrainConfig train;
  std::uint64_t seed = 1;

  fs::path corpus_root;  // relative manifest paths resolve here; default: manifest directory
  fs::path manifest;
  fs::path cache_dir;
  fs::path checkpoint;
  fs::path out;
  fs::path input;
  fs::path log;  // conversion JSON-lines log

  std::optional<double> eos_radius;
  std::optional<std::size_t> max_len;
  bool inject_fault = false;
  ToyCorpusConfig toy;
};

// Effective configuration as `key = value` lines. Keys match the long flag
// names, so the output is itself a valid config file.
inline std::string describe(const RunConfig& c) {
  std::ostringstream os;
  auto num = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  auto line = [&os](const char* k, const std::string& v) { os << k << " = " << v << '\n'; };
  line("seed", std::to_string(c.seed));
  line("sample-rate", std::to_string(c.analysis.sample_rate));
  line("vad", c.analysis.apply_vad ? "true" : "false");
  line("vad-frame-ms", num(c.analysis.vad.frame_ms));
  line("vad-hop-ms", num(c.analysis.vad.hop_ms));
  line("vad-threshold-db", num(c.analysis.vad.threshold_db));
  line("vad-hangover", std::to_string(c.analysis.vad.hangover_frames));
  line("nfft", std::to_string(c.analysis.stft.nfft));
  line("hop", std::to_string(c.analysis.stft.hop));
  line("window", to_string(c.analysis.stft.window));
  line("preemphasis", num(c.analysis.stft.preemphasis_coeff));
  line("d-model", std::to_string(c.model.d_model));
  line("enc-layers", std::to_string(c.model.n_layers_enc));
  line("dec-layers", std::to_string(c.model.n_layers_dec));
  line("heads", std::to_string(c.model.n_heads));
  line("d-ff", std::to_string(c.model.d_ff));
  line("dropout", num(c.model.dropout));
  line("max-decode-len", std::to_string(c.model.max_decode_len));
  line("lr0", num(c.train.lr0));
  line("decay-step", num(c.train.decay_step));
  line("decay-rate", num(c.train.decay_rate));
  line("staircase", c.train.staircase ? "true" : "false");
  line("beta1", num(c.train.beta1));
  line("beta2", num(c.train.beta2));
  line("epsilon", num(c.train.epsilon));
  line("batch-size", std::to_string(c.train.batch_size));
  line("max-steps", std::to_string(c.train.max_steps));
  line("checkpoint-every", std::to_string(c.train.checkpoint_every));
  line("raw-sum-loss", c.train.raw_sum_loss ? "true" : "false");
  line("corpus-root", c.corpus_root.string());
  line("manifest", c.manifest.string());
  line("cache-dir", c.cache_dir.string());
  line("checkpoint", c.checkpoint.string());
  line("out", c.out.string());
  line("log", c.log.string());
  line("eos-radius", c.eos_radius ? num(*c.eos_radius) : "");
  line("max-len", c.max_len ? std::to_string(*c.max_len) : "");
  return os.str();
}

namespace detail {

inline void require_path(const fs::path& p, const char* flag) {
  if (p.empty()) throw ConfigError(std::string("missing required option --") + flag);
}

inline void require_file(const fs::path& p, const char* flag) {
  require_path(p, flag);
  if (!fs::is_regular_file(p)) throw IoError("no such file: " + p.string());
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::map<std::string, std::string> read_key_values(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

inline std::string cache_name(std::size_t i, const char* side) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "pair-%04zu.%s.vfsp", i, side);
  return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// prep

struct PrepSummary {
  std::size_t processed = 0;
  std::size_t skipped = 0;
  std::size_t max_source_frames = 0;
  std::size_t max_target_frames = 0;
  std::vector<std::string> errors;
};

// Cache directory layout:
//   analysis.cfg       analysis settings, key=value
//   index.tsv          label, source id, target id, source cache, target cache
//   pair-NNNN.src.vfsp / pair-NNNN.tgt.vfsp
//   summary.json
inline PrepSummary cmd_prep(const RunConfig& cfg, std::ostream& log) {
  detail::require_file(cfg.manifest, "manifest");
  detail::require_path(cfg.cache_dir, "cache-dir");
  cfg.analysis.stft.validate_for_synthesis();
  cfg.analysis.vad.validate();
  const fs::path root = cfg.corpus_root.empty() ? cfg.manifest.parent_path() : cfg.corpus_root;
  IngestResult ingest = ingest_corpus(root, cfg.manifest, cfg.analysis);

  PrepSummary summary;
  summary.processed = ingest.pairs.size();
  summary.errors = ingest.errors;
  summary.skipped = ingest.errors.size();
  for (const std::string& e : ingest.errors) log << "skipped: " << e << '\n';
  if (ingest.pairs.empty()) throw ConfigError("no usable pairs in " + cfg.manifest.string());

  fs::create_directories(cfg.cache_dir);
  std::map<std::string, std::string> analysis;
  store_analysis_config(cfg.analysis, analysis);
  std::string text;
  for (const auto& [k, v] : analysis) text += k + "=" + v + "\n";
  detail::write_text(cfg.cache_dir / "analysis.cfg", text);

  std::string index;
  for (std::size_t i = 0; i < ingest.pairs.size(); ++i) {
    const auto& p = ingest.pairs[i];
    const std::string src = detail::cache_name(i, "src"), tgt = detail::cache_name(i, "tgt");
    write_feature_cache(ingest.source_spectra[i], cfg.cache_dir / src);
    write_feature_cache(ingest.target_spectra[i], cfg.cache_dir / tgt);
    index += p.text_label + "\t" + p.source_id + "\t" + p.target_id + "\t" + src + "\t" + tgt + "\n";
    summary.max_source_frames = std::max(summary.max_source_frames, p.source.frames());
    summary.max_target_frames = std::max(summary.max_target_frames, p.target_mag.frames);
  }
  detail::write_text(cfg.cache_dir / "index.tsv", index);

  nlohmann::json j{{"pairs_processed", summary.processed},
                   {"pairs_skipped", summary.skipped},
                   {"max_source_frames", summary.max_source_frames},
                   {"max_target_frames", summary.max_target_frames},
                   {"errors", summary.errors}};
  detail::write_text(cfg.cache_dir / "summary.json", j.dump(2) + "\n");
  log << "prep: " << summary.processed << " pairs cached, " << summary.skipped << " skipped, max frames "
      << summary.max_source_frames << " (source) / " << summary.max_target_frames << " (target)\n";
  return summary;
}

struct CachedCorpus {
  AnalysisConfig analysis;
  std::vector<UtterancePair> pairs;
};

inline CachedCorpus load_cached_corpus(const fs::path& cache_dir) {
  CachedCorpus corpus;
  corpus.analysis = load_analysis_config(detail::read_key_values(cache_dir / "analysis.cfg"));
  std::ifstream in(cache_dir / "index.tsv");
  if (!in) throw IoError("cannot open " + (cache_dir / "index.tsv").string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) f.push_back(field);
    if (f.size() != 5) throw FormatError("malformed cache index line: " + line);
    UtterancePair p;
    p.text_label = f[0];
    p.source_id = f[1];
    p.target_id = f[2];
    p.source = split_mag_phase(read_feature_cache(cache_dir / f[3], corpus.analysis.stft));
    p.target_mag = split_mag_phase(read_feature_cache(cache_dir / f[4], corpus.analysis.stft)).magnitude;
    corpus.pairs.push_back(std::move(p));
  }
  if (corpus.pairs.empty()) throw ConfigError("feature cache " + cache_dir.string() + " is empty");
  return corpus;
}

// ---------------------------------------------------------------------------
// train

// Metrics CSV goes to --out, or next to the checkpoint as metrics.csv.
inline fs::path metrics_path_for(const RunConfig& cfg) {
  if (!cfg.out.empty()) return cfg.out;
  return cfg.checkpoint.parent_path() / "metrics.csv";
}

inline TrainResult cmd_train(const RunConfig& cfg, std::ostream& log,
                             const std::function<bool(const MetricsRow&, const ModelState<float>&)>& on_step = {}) {
  detail::require_path(cfg.cache_dir, "cache-dir");
  detail::require_path(cfg.checkpoint, "checkpoint");
  if (!fs::is_directory(cfg.cache_dir)) throw IoError("no such cache directory: " + cfg.cache_dir.string());
  cfg.model.validate();
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  tc.checkpoint_path = cfg.checkpoint;
  tc.metrics_path = metrics_path_for(cfg);
  tc.validate();

  CachedCorpus corpus = load_cached_corpus(cfg.cache_dir);
  const std::size_t width = corpus.pairs.front().source.magnitude.bins;
  if (width != cfg.model.d_model)
    throw ConfigError("d-model " + std::to_string(cfg.model.d_model) + " must equal the feature width " +
                      std::to_string(width) + " (nfft/2)");
  auto state = init_model<float>(cfg.model, cfg.seed);
  record_corpus_stats(state, corpus.pairs);
  store_analysis_config(corpus.analysis, state.metadata);
  log << "train: " << corpus.pairs.size() << " pairs, " << tc.max_steps << " steps, metrics -> "
      << tc.metrics_path.string() << '\n';
  TrainResult result = train_loop(corpus.pairs, std::move(state), tc, on_step);
  if (result.halted) {
    log << "train: halted at step " << result.state.step << ": " << result.halt_reason << '\n';
  } else if (!result.metrics.empty()) {
    log << "train: step " << result.state.step << " loss " << result.metrics.back().loss_final << '\n';
  }
  return result;
}

// ---------------------------------------------------------------------------
// convert

inline ConversionResult cmd_convert(const RunConfig& cfg, std::ostream& log) {
  detail::require_file(cfg.checkpoint, "checkpoint");
  detail::require_file(cfg.input, "input");
  detail::require_path(cfg.out, "out");
  auto state = load_checkpoint<float>(cfg.checkpoint);
  ConvertOptions opt;
  opt.eos_radius = cfg.eos_radius;
  opt.max_len = cfg.max_len;
  opt.log_path = cfg.log;
  ConversionResult r = convert_file(cfg.input, cfg.out, state, opt);
  log << "convert: " << r.predicted_mag.frames << " frames predicted, " << r.frames_used << " used, stop "
      << to_string(r.stop_reason) << ", " << r.audio.size() << " samples -> " << cfg.out.string() << '\n';
  return r;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckSummary {
  std::vector<GradCheckReport> reports;
  bool passed = false;
};

inline GradcheckSummary cmd_gradcheck(const RunConfig& cfg, std::ostream& log) {
  GradcheckSummary s;
  s.reports = run_gradcheck_suite(cfg.seed, cfg.inject_fault);
  s.passed = true;
  for (const auto& r : s.reports) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-40s max_rel_err=%.3e tol=%.0e n=%zu %s", r.name.c_str(), r.max_rel_error,
                  r.tolerance, r.checked, r.passed ? "PASS" : "FAIL");
    log << buf << '\n';
    s.passed = s.passed && r.passed;
  }
  return s;
}

// ---------------------------------------------------------------------------
// roundtrip

struct RoundtripReport {
  std::size_t samples = 0;
  std::size_t frames = 0;
  std::size_t interior_begin = 0;
  std::size_t interior_end = 0;
  double snr_db = 0.0;
  bool passed = false;
};

constexpr double kRoundtripMinSnrDb = 40.0;

// resample -> pre-emphasis -> STFT -> ISTFT -> de-emphasis, compared with the
// resampled input away from the first and last nfft/2 samples.
inline RoundtripReport roundtrip(const AudioBuffer& input, const AnalysisConfig& analysis) {
  AudioBuffer x = resample(input, analysis.sample_rate);
  auto spec = stft(preemphasis(x, analysis.stft.preemphasis_coeff), analysis.stft);
  AudioBuffer y = deemphasis(istft(spec, analysis.sample_rate), analysis.stft.preemphasis_coeff);
  RoundtripReport r;
  r.samples = x.size();
  r.frames = spec.frames();
  const std::size_t n = y.size(), edge = analysis.stft.nfft / 2;
  r.interior_begin = std::min(edge, n);
  r.interior_end = n > 2 * edge ? n - edge : r.interior_begin;
  r.snr_db = snr_db(x.samples, y.samples, r.interior_begin, r.interior_end);
  r.passed = r.snr_db >= kRoundtripMinSnrDb;
  return r;
}

inline RoundtripReport cmd_roundtrip(const RunConfig& cfg, std::ostream& log) {
  detail::require_file(cfg.input, "input");
  RoundtripReport r = roundtrip(read_wav(cfg.input), cfg.analysis);
  log << "roundtrip: " << r.samples << " samples, " << r.frames << " frames, interior [" << r.interior_begin << ", "
      << r.interior_end << "), snr " << r.snr_db << " dB " << (r.passed ? "PASS" : "FAIL") << '\n';
  return r;
}

// ---------------------------------------------------------------------------
// toy

// Writes the synthetic corpus as WAV files plus a manifest under --out.
inline fs::path cmd_toy(const RunConfig& cfg, std::ostream& log) {
  detail::require_path(cfg.out, "out");
  fs::create_directories(cfg.out / "wav");
  std::string manifest = "# label\tsource\ttarget\n";
  for (std::size_t i = 0; i < cfg.toy.n_pairs; ++i) {
    ToyUtterance u = render_toy_pair(cfg.toy, i);
    char name[64];
    std::snprintf(name, sizeof name, "%02zu-%s", i, u.label.c_str());
    const fs::path src = fs::path("wav") / (std::string(name) + ".src.wav");
    const fs::path tgt = fs::path("wav") / (std::string(name) + ".tgt.wav");
    write_wav(u.source, cfg.out / src);
    write_wav(u.target, cfg.out / tgt);
    manifest += u.label + "\t" + src.string() + "\t" + tgt.string() + "\n";
  }
  const fs::path path = cfg.out / "manifest.tsv";
  detail::write_text(path, manifest);
  log << "toy: " << cfg.toy.n_pairs << " pairs -> " << path.string() << '\n';
  return path;
}

}  // namespace specterra
