#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fewsound/rng.hpp"

namespace fewsound {

struct AudioClip {
  std::vector<float> samples;  // mono, in [-1, 1]
  int sample_rate = 0;
  std::string source_id;
};

AudioClip load_wav_clip(const std::string& path, const std::string& source_id);

// Band-limited sample-rate reduction (windowed-sinc polyphase bank).
// Output length = round(len * target / source). Upsampling is unsupported;
// equal rates return the clip unchanged.
AudioClip resample(const AudioClip& clip, int target_hz);

// Mean-square power over the full sample span.
double signal_power(const std::vector<float>& samples);

struct MixResult {
  AudioClip clip;
  std::size_t scene_offset = 0;  // crop start in the scene, samples
  double gain = 0.0;             // applied to the scene crop
  double peak_scale = 1.0;       // < 1 when peak normalization triggered
};

// event + g * scene_crop, with g chosen so the power ratio between the event
// and the scaled crop is snr_db. The crop position within the scene is drawn
// from rng. snr_db = +inf is the no-noise sentinel. Peak-normalizes the mix
// when it would clip. A zero-power scene crop is an error.
MixResult mix_noise(const AudioClip& event, const AudioClip& scene, double snr_db,
                    Rng& rng);

}  // namespace fewsound
