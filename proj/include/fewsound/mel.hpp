#pragma once

#include <string>
#include <vector>

#include "fewsound/audio.hpp"
#include "fewsound/tensor.hpp"

namespace fewsound {

struct MelConfig {
  std::size_t window = 1024;  // Hann analysis window (samples)
  std::size_t hop = 500;      // 160 frames for a 5 s clip at 16 kHz
  std::size_t n_mels = 128;
  double fmin = 0.0;
  double fmax = 8000.0;
  std::size_t target_frames = 160;  // 0 = natural framing, no crop/pad
  double log_floor = 1e-10;
};

struct MelSpectrogram {
  Tensor<float> bins;  // [n_mels, n_frames], log mel energies
  std::size_t frame_hop = 0;
  std::string clip_ref;

  std::size_t n_mels() const { return bins.shape[0]; }
  std::size_t n_frames() const { return bins.shape[1]; }
};

// Triangular mel filterbank on the Slaney scale (linear below 1 kHz,
// logarithmic above), area-normalized, spanning [fmin, fmax].
// Returned dense as [n_mels, n_fft/2 + 1].
Tensor<double> mel_filterbank(std::size_t n_mels, std::size_t n_fft, double sample_rate,
                              double fmin, double fmax);

// Magnitude STFT -> mel filterbank -> log(x + floor). The clip must be at
// 16 kHz and at least one window long. With target_frames > 0 the audio is
// zero-padded at the tail or center-cropped so the output has exactly that
// many frames.
MelSpectrogram logmel(const AudioClip& clip, const MelConfig& cfg);

// Per-bin z-score statistics, fitted on training-split spectrograms only.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> stdev;  // floored at 1e-8
  std::size_t n_clips_fitted = 0;
};

NormStats fit_norm(const std::vector<const MelSpectrogram*>& train_specs);
MelSpectrogram apply_norm(const MelSpectrogram& spec, const NormStats& stats);

void save_norm_stats(const std::string& path, const NormStats& stats);
NormStats load_norm_stats(const std::string& path);

// Feature cache: u32 rows, u32 cols (little-endian), then row-major
// little-endian f32 values.
void write_lmel(const std::string& path, const Tensor<float>& m);
Tensor<float> read_lmel(const std::string& path);

}  // namespace fewsound
