#include "fewsound/audio.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fewsound/common.hpp"
#include "fewsound/wav.hpp"

namespace fewsound {

AudioClip load_wav_clip(const std::string& path, const std::string& source_id) {
  WavData w = read_wav(path);
  return AudioClip{std::move(w.samples), w.sample_rate, source_id};
}

namespace {

constexpr double kPi = 3.14159265358979323846;

double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = kPi * x;
  return std::sin(px) / px;
}

// Blackman-windowed sinc tap at offset t (source samples) for cutoff fc
// (cycles per source sample) and half-width hw.
double kernel_tap(double t, double fc, double hw) {
  if (std::abs(t) >= hw) return 0.0;
  const double w = 0.42 + 0.5 * std::cos(kPi * t / hw) + 0.08 * std::cos(2.0 * kPi * t / hw);
  return 2.0 * fc * sinc(2.0 * fc * t) * w;
}

}  // namespace

AudioClip resample(const AudioClip& clip, int target_hz) {
  if (clip.sample_rate == target_hz) return clip;
  if (clip.sample_rate < target_hz) {
    throw DataError("resample: upsampling " + std::to_string(clip.sample_rate) + " -> " +
                    std::to_string(target_hz) + " Hz is unsupported (" + clip.source_id + ")");
  }
  const std::uint64_t g = std::gcd(static_cast<std::uint64_t>(clip.sample_rate),
                                   static_cast<std::uint64_t>(target_hz));
  const std::uint64_t M = clip.sample_rate / g;  // source step
  const std::uint64_t L = target_hz / g;         // phase count

  const double ratio = static_cast<double>(M) / static_cast<double>(L);
  const double fc = 0.5 * 0.92 / ratio;  // keep the transition band under Nyquist
  const double hw = 12.0 * ratio / 0.92;
  const long half = static_cast<long>(std::ceil(hw));

  const std::size_t in_len = clip.samples.size();
  const std::size_t out_len =
      static_cast<std::size_t>((in_len * L + M / 2) / M);  // round(len * target/source)

  // One tap set per output phase, normalized to unit DC gain.
  std::vector<std::vector<double>> bank;
  const bool use_bank = L <= 8192;
  if (use_bank) {
    bank.resize(L);
    for (std::uint64_t p = 0; p < L; ++p) {
      const double frac = static_cast<double>(p) / static_cast<double>(L);
      auto& taps = bank[p];
      taps.resize(2 * half + 1);
      double sum = 0.0;
      for (long k = -half; k <= half; ++k) {
        const double v = kernel_tap(static_cast<double>(k) - frac, fc, hw);
        taps[k + half] = v;
        sum += v;
      }
      for (auto& v : taps) v /= sum;
    }
  }

  AudioClip out;
  out.sample_rate = target_hz;
  out.source_id = clip.source_id;
  out.samples.resize(out_len);

  for (std::size_t n = 0; n < out_len; ++n) {
    const std::uint64_t num = static_cast<std::uint64_t>(n) * M;
    const long base = static_cast<long>(num / L);
    const std::uint64_t phase = num % L;
    // Renormalize by the in-range tap mass so DC survives at the clip edges.
    double acc = 0.0, wsum = 0.0;
    if (use_bank) {
      const auto& taps = bank[phase];
      for (long k = -half; k <= half; ++k) {
        const long idx = base + k;
        if (idx < 0 || idx >= static_cast<long>(in_len)) continue;
        acc += taps[k + half] * static_cast<double>(clip.samples[idx]);
        wsum += taps[k + half];
      }
    } else {
      const double frac = static_cast<double>(phase) / static_cast<double>(L);
      double total = 0.0;
      for (long k = -half; k <= half; ++k) {
        const double tap = kernel_tap(static_cast<double>(k) - frac, fc, hw);
        total += tap;
        const long idx = base + k;
        if (idx < 0 || idx >= static_cast<long>(in_len)) continue;
        acc += tap * static_cast<double>(clip.samples[idx]);
        wsum += tap;
      }
      wsum /= total;
      acc /= total;
    }
    out.samples[n] = static_cast<float>(wsum > 1e-9 ? acc / wsum : 0.0);
  }
  return out;
}

double signal_power(const std::vector<float>& samples) {
  double acc = 0.0;
  for (const float s : samples) acc += static_cast<double>(s) * s;
  return samples.empty() ? 0.0 : acc / static_cast<double>(samples.size());
}

MixResult mix_noise(const AudioClip& event, const AudioClip& scene, double snr_db,
                    Rng& rng) {
  if (event.sample_rate != scene.sample_rate) {
    throw DataError("mix_noise: sample rates differ (" + std::to_string(event.sample_rate) +
                    " vs " + std::to_string(scene.sample_rate) + ")");
  }
  if (scene.samples.size() < event.samples.size()) {
    throw DataError("mix_noise: scene '" + scene.source_id + "' shorter than event '" +
                    event.source_id + "'");
  }

  MixResult result;
  if (std::isinf(snr_db) && snr_db > 0) {  // no-noise sentinel
    result.clip = event;
    result.gain = 0.0;
    return result;
  }

  const std::size_t span = scene.samples.size() - event.samples.size() + 1;
  result.scene_offset = static_cast<std::size_t>(rng.below(span));

  std::vector<float> crop(event.samples.size());
  std::copy(scene.samples.begin() + result.scene_offset,
            scene.samples.begin() + result.scene_offset + event.samples.size(),
            crop.begin());

  const double p_event = signal_power(event.samples);
  const double p_scene = signal_power(crop);
  if (p_scene <= 0.0) {
    throw DataError("mix_noise: silent scene crop in '" + scene.source_id + "'");
  }
  // 10*log10(p_event / (g^2 * p_scene)) = snr_db
  result.gain = std::sqrt(p_event / (p_scene * std::pow(10.0, snr_db / 10.0)));

  result.clip.sample_rate = event.sample_rate;
  result.clip.source_id = event.source_id;
  result.clip.samples.resize(event.samples.size());
  float peak = 0.0f;
  for (std::size_t i = 0; i < event.samples.size(); ++i) {
    const float v = event.samples[i] + static_cast<float>(result.gain) * crop[i];
    result.clip.samples[i] = v;
    peak = std::max(peak, std::abs(v));
  }
  if (peak > 1.0f) {
    result.peak_scale = 1.0 / static_cast<double>(peak);
    for (auto& v : result.clip.samples) v = static_cast<float>(v * result.peak_scale);
  }
  return result;
}

}  // namespace fewsound
