#pragma once

#include <cstdint>
#include <string>

#include "fewsound/audio.hpp"

namespace fewsound {

// Synthetic transient-event corpus: each class is a distinct short
// tone/chirp pattern (0.2-0.8 s) placed at a random offset inside a clip of
// seeded background noise. Clips are fully determined by
// (seed, class index, clip index).
struct ToyConfig {
  std::size_t n_classes = 15;
  std::size_t clips_per_class = 200;
  int sample_rate = 16000;
  double clip_seconds = 5.0;
  std::uint64_t seed = 1234;
  double noise_level = 0.06;  // background RMS
  double event_min_s = 0.2;
  double event_max_s = 0.8;
  double amp_min = 0.25;
  double amp_max = 0.6;
  double fmin = 350.0;
  double fmax = 5200.0;
};

std::string toy_class_name(std::size_t class_idx);
std::string toy_clip_name(std::size_t class_idx, std::size_t clip_idx);

AudioClip synth_toy_clip(const ToyConfig& cfg, std::size_t class_idx,
                         std::size_t clip_idx);

// ESC-50-layout output: <dir>/audio/*.wav plus <dir>/meta.csv with
// filename,category columns.
void write_toy_dataset(const std::string& dir, const ToyConfig& cfg);

}  // namespace fewsound
