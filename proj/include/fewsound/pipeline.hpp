#pragma once

#include <string>
#include <vector>

#include "fewsound/config.hpp"
#include "fewsound/engine.hpp"
#include "fewsound/mel.hpp"
#include "fewsound/report.hpp"

namespace fewsound {

// Dataset preparation: decode + resample + log-mel every clip of an
// ESC-50-layout directory into <out_dir>/<stem>.lmel, assign a class split,
// fit normalization statistics on the train split, and write
// manifest.csv / norm_stats.json / cache_index.json. Re-runs skip clips whose
// source digest and feature config are unchanged.
struct PrepareOptions {
  std::string data_dir;
  std::string out_dir;
  std::string meta_path;  // empty: look for meta/esc50.csv, esc50.csv, meta.csv
  SplitCfg split;
  MelConfig mel;
};

struct PrepareResult {
  std::size_t n_clips = 0;
  std::size_t n_extracted = 0;
  std::size_t n_cache_hits = 0;
  std::vector<std::string> errors;  // one line per failed file
};

PrepareResult run_prepare(const PrepareOptions& opt);

// noiseESC-50 synthesis: every clip of the source dataset is mixed with a
// random excerpt of a random scene recording at an SNR drawn uniformly from
// [snr_min, snr_max] dB. Everything is derived from the seed; the synthesis
// manifest records scene file, offset, SNR, gain and peak scaling per clip.
struct SynthNoiseOptions {
  std::string esc_dir;
  std::string scenes_dir;
  std::string out_dir;
  std::string meta_path;  // empty: autodetect inside esc_dir
  std::uint64_t seed = 1;
  double snr_min = 5.0;
  double snr_max = 20.0;
};

struct SynthNoiseResult {
  std::size_t n_clips = 0;
  std::vector<std::string> errors;
};

SynthNoiseResult run_synth_noise(const SynthNoiseOptions& opt);

// Split reconstructed from the manifest's split column.
ClassSplit split_from_manifest(const std::vector<ManifestRow>& rows);

struct TrainOutput {
  TrainResult result;
  Digest256 digest;
};

// Trains per the config and writes the selected checkpoint (and a JSONL
// training log when log_path is non-empty).
TrainOutput run_train(const RunConfig& cfg, const std::string& checkpoint_path,
                      const std::string& log_path);

struct EvalOutput {
  EvalResult result;
  std::size_t params = 0;
  std::string depth;
};

// Evaluates a checkpoint; refuses it when its stored digest does not match
// the supplied config.
EvalOutput run_eval(const RunConfig& cfg, const std::string& checkpoint_path);

}  // namespace fewsound
