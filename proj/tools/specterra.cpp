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

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "specterra/commands.hpp"

namespace {

using specterra::RunConfig;

void add_common_options(CLI::App& app, RunConfig& c, std::string& window) {
  app.set_config("--config", "", "INI file of `key = value` settings; flags override it");
  app.add_option("--seed", c.seed, "Run seed");
  app.add_option("--manifest", c.manifest, "Pair manifest (label<TAB>source<TAB>target)");
  app.add_option("--corpus-root", c.corpus_root, "Base directory for relative manifest paths");
  app.add_option("--cache-dir", c.cache_dir, "Feature cache directory");
  app.add_option("--checkpoint", c.checkpoint, "Checkpoint file");
  app.add_option("--max-steps", c.train.max_steps, "Training steps");
  app.add_option("--out", c.out, "Output path");
  app.add_option("--log", c.log, "Conversion JSON-lines log");

  app.add_option("--sample-rate", c.analysis.sample_rate, "Analysis sample rate (Hz)");
  app.add_option("--vad", c.analysis.apply_vad, "Trim silence before analysis");
  app.add_option("--vad-frame-ms", c.analysis.vad.frame_ms);
  app.add_option("--vad-hop-ms", c.analysis.vad.hop_ms);
  app.add_option("--vad-threshold-db", c.analysis.vad.threshold_db);
  app.add_option("--vad-hangover", c.analysis.vad.hangover_frames);
  app.add_option("--nfft", c.analysis.stft.nfft, "FFT size");
  app.add_option("--hop", c.analysis.stft.hop, "Hop size (must be nfft/2)");
  app.add_option("--window", window, "Window: hann or hamming");
  app.add_option("--preemphasis", c.analysis.stft.preemphasis_coeff);

  app.add_option("--d-model", c.model.d_model, "Model width (equals nfft/2)");
  app.add_option("--enc-layers", c.model.n_layers_enc);
  app.add_option("--dec-layers", c.model.n_layers_dec);
  app.add_option("--heads", c.model.n_heads);
  app.add_option("--d-ff", c.model.d_ff);
  app.add_option("--dropout", c.model.dropout);
  app.add_option("--max-decode-len", c.model.max_decode_len, "0: longest training target + 16");

  app.add_option("--lr0", c.train.lr0);
  app.add_option("--decay-step", c.train.decay_step);
  app.add_option("--decay-rate", c.train.decay_rate);
  app.add_option("--staircase", c.train.staircase);
  app.add_option("--beta1", c.train.beta1);
  app.add_option("--beta2", c.train.beta2);
  app.add_option("--epsilon", c.train.epsilon);
  app.add_option("--batch-size", c.train.batch_size);
  app.add_option("--checkpoint-every", c.train.checkpoint_every);
  app.add_option("--raw-sum-loss", c.train.raw_sum_loss);

  app.add_option("--eos-radius", c.eos_radius, "EOS stopping distance; default from corpus statistics");
  app.add_option("--max-len", c.max_len, "Decode cap; default from corpus statistics");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"specterra: transformer magnitude-spectrogram voice conversion"};
  app.require_subcommand(1);
  RunConfig cfg;
  std::string window = "hann";
  add_common_options(app, cfg, window);

  auto* prep = app.add_subcommand("prep", "Analyze a manifest into a feature cache");
  auto* train = app.add_subcommand("train", "Train from a feature cache");
  auto* convert = app.add_subcommand("convert", "Convert a WAV file with a checkpoint");
  convert->add_option("input", cfg.input, "Input WAV")->required();
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  gradcheck->add_flag("--inject-fault", cfg.inject_fault, "Add an op with a wrong backward rule");
  auto* roundtrip = app.add_subcommand("roundtrip", "STFT/ISTFT reconstruction SNR of a WAV file");
  roundtrip->add_option("input", cfg.input, "Input WAV")->required();
  auto* toy = app.add_subcommand("toy", "Write the synthetic toy corpus and its manifest");
  toy->add_option("--pairs", cfg.toy.n_pairs);
  toy->add_option("--toy-rate", cfg.toy.rate);
  toy->add_option("--f0-src", cfg.toy.f0_src);
  toy->add_option("--f0-tgt", cfg.toy.f0_tgt);
  for (auto* sub : {prep, train, convert, gradcheck, roundtrip, toy}) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    cfg.analysis.stft.window = specterra::window_from_string(window);
    std::cerr << "# effective configuration\n" << specterra::describe(cfg);
    std::ostream& log = std::cerr;
    if (prep->parsed()) {
      specterra::cmd_prep(cfg, log);
    } else if (train->parsed()) {
      auto r = specterra::cmd_train(cfg, log);
      if (r.halted) return 3;
    } else if (convert->parsed()) {
      specterra::cmd_convert(cfg, log);
    } else if (gradcheck->parsed()) {
      if (!specterra::cmd_gradcheck(cfg, std::cout).passed) {
        std::cerr << "gradcheck: FAILED\n";
        return 1;
      }
    } else if (roundtrip->parsed()) {
      if (!specterra::cmd_roundtrip(cfg, std::cout).passed) return 1;
    } else if (toy->parsed()) {
      specterra::cmd_toy(cfg, log);
    }
  } catch (const specterra::StageError& e) {
    std::cerr << "error [" << e.stage() << "]: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
