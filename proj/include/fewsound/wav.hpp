#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fewsound {

// Mono float audio in [-1, 1].
struct WavData {
  std::vector<float> samples;
  int sample_rate = 0;
};

// Reads a PCM WAV file: 16-bit integer or 32-bit float, any channel count
// (channels are averaged to mono). Throws DataError with the path on any
// malformed or unsupported input.
WavData read_wav(const std::string& path);

// Writes mono 16-bit PCM. Samples are scaled by 32768 and clamped, so a
// write/read round trip moves any sample by at most 1/32768.
void write_wav16(const std::string& path, const std::vector<float>& samples,
                 int sample_rate);

}  // namespace fewsound
