#include "fewsound/toyset.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "fewsound/common.hpp"
#include "fewsound/wav.hpp"

namespace fewsound {

namespace {

constexpr double kPi = 3.14159265358979323846;

double class_frequency(const ToyConfig& cfg, std::size_t class_idx) {
  if (cfg.n_classes <= 1) return cfg.fmin;
  const double t = static_cast<double>(class_idx) / static_cast<double>(cfg.n_classes - 1);
  return cfg.fmin * std::pow(cfg.fmax / cfg.fmin, t);
}

// Event phase argument at sample i of n for the class's pattern kind.
double pattern_sample(std::size_t kind, double f0, double t, double dur, Rng& rng) {
  (void)rng;
  switch (kind % 5) {
    case 0:  // steady tone
      return std::sin(2.0 * kPi * f0 * t);
    case 1:  // upward chirp f0 -> 1.6 f0
      return std::sin(2.0 * kPi * f0 * (t + 0.3 * t * t / dur));
    case 2:  // downward chirp 1.6 f0 -> f0
      return std::sin(2.0 * kPi * f0 * (1.6 * t - 0.3 * t * t / dur));
    case 3:  // tremolo tone, 10 Hz amplitude modulation
      return std::sin(2.0 * kPi * f0 * t) * (0.55 + 0.45 * std::sin(2.0 * kPi * 10.0 * t));
    default:  // 50 ms on/off burst train
      return (static_cast<long>(t / 0.05) % 2 == 0) ? std::sin(2.0 * kPi * f0 * t) : 0.0;
  }
}

}  // namespace

std::string toy_class_name(std::size_t class_idx) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "pattern%02zu", class_idx);
  return buf;
}

std::string toy_clip_name(std::size_t class_idx, std::size_t clip_idx) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "toy_c%02zu_i%03zu", class_idx, clip_idx);
  return buf;
}

AudioClip synth_toy_clip(const ToyConfig& cfg, std::size_t class_idx,
                         std::size_t clip_idx) {
  if (class_idx >= cfg.n_classes) throw ConfigError("synth_toy_clip: class out of range");
  Rng rng = Rng(cfg.seed).derive(class_idx * 1000003ULL + clip_idx);

  const std::size_t n =
      static_cast<std::size_t>(cfg.clip_seconds * static_cast<double>(cfg.sample_rate));
  AudioClip clip;
  clip.sample_rate = cfg.sample_rate;
  clip.source_id = toy_clip_name(class_idx, clip_idx);
  clip.samples.resize(n);

  for (auto& s : clip.samples) {
    s = static_cast<float>(cfg.noise_level * rng.gaussian());
  }

  const double dur = rng.uniform(cfg.event_min_s, cfg.event_max_s);
  const std::size_t ev_len =
      static_cast<std::size_t>(dur * static_cast<double>(cfg.sample_rate));
  const std::size_t offset = static_cast<std::size_t>(rng.below(n - ev_len + 1));
  const double amp = rng.uniform(cfg.amp_min, cfg.amp_max);
  const double f0 = class_frequency(cfg, class_idx);
  const std::size_t fade = static_cast<std::size_t>(0.01 * cfg.sample_rate);

  for (std::size_t i = 0; i < ev_len; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(cfg.sample_rate);
    double env = 1.0;
    if (i < fade) env = static_cast<double>(i) / static_cast<double>(fade);
    if (ev_len - i <= fade) env = static_cast<double>(ev_len - i) / static_cast<double>(fade);
    clip.samples[offset + i] +=
        static_cast<float>(amp * env * pattern_sample(class_idx, f0, t, dur, rng));
  }

  float peak = 0.0f;
  for (const float s : clip.samples) peak = std::max(peak, std::abs(s));
  if (peak > 1.0f) {
    for (auto& s : clip.samples) s /= peak;
  }
  return clip;
}

void write_toy_dataset(const std::string& dir, const ToyConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "audio");
  std::ofstream meta(fs::path(dir) / "meta.csv");
  if (!meta) throw DataError("cannot write toy dataset metadata in " + dir);
  meta << "filename,category\n";
  for (std::size_t c = 0; c < cfg.n_classes; ++c) {
    for (std::size_t i = 0; i < cfg.clips_per_class; ++i) {
      const AudioClip clip = synth_toy_clip(cfg, c, i);
      const std::string name = toy_clip_name(c, i) + ".wav";
      write_wav16((fs::path(dir) / "audio" / name).string(), clip.samples,
                  clip.sample_rate);
      meta << name << ',' << toy_class_name(c) << '\n';
    }
  }
}

}  // namespace fewsound
