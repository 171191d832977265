#include "fewsound/mel.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>

#include <json.hpp>

#include "fewsound/common.hpp"

namespace fewsound {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Iterative radix-2 FFT, in place. n must be a power of two.
void fft_radix2(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * kPi / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

// Slaney mel scale: linear below 1 kHz, logarithmic above.
double hz_to_mel(double hz) {
  const double f_sp = 200.0 / 3.0;
  const double min_log_hz = 1000.0;
  const double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  if (hz < min_log_hz) return hz / f_sp;
  return min_log_mel + std::log(hz / min_log_hz) / logstep;
}

double mel_to_hz(double mel) {
  const double f_sp = 200.0 / 3.0;
  const double min_log_hz = 1000.0;
  const double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  if (mel < min_log_mel) return mel * f_sp;
  return min_log_hz * std::exp(logstep * (mel - min_log_mel));
}

}  // namespace

Tensor<double> mel_filterbank(std::size_t n_mels, std::size_t n_fft, double sample_rate,
                              double fmin, double fmax) {
  const std::size_t n_bins = n_fft / 2 + 1;
  Tensor<double> fb({n_mels, n_bins});

  const double mel_lo = hz_to_mel(fmin);
  const double mel_hi = hz_to_mel(fmax);
  std::vector<double> hz_pts(n_mels + 2);
  for (std::size_t i = 0; i < hz_pts.size(); ++i) {
    const double mel = mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                    static_cast<double>(n_mels + 1);
    hz_pts[i] = mel_to_hz(mel);
  }

  for (std::size_t m = 0; m < n_mels; ++m) {
    const double f0 = hz_pts[m], f1 = hz_pts[m + 1], f2 = hz_pts[m + 2];
    const double enorm = 2.0 / (f2 - f0);  // area normalization
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double fk = sample_rate * static_cast<double>(k) / static_cast<double>(n_fft);
      double w = 0.0;
      if (fk > f0 && fk < f1) {
        w = (fk - f0) / (f1 - f0);
      } else if (fk >= f1 && fk < f2) {
        w = (f2 - fk) / (f2 - f1);
      }
      fb.at(m, k) = w * enorm;
    }
  }
  return fb;
}

MelSpectrogram logmel(const AudioClip& clip, const MelConfig& cfg) {
  if (clip.sample_rate != 16000) {
    throw DataError("logmel: expected a 16 kHz clip, got " +
                    std::to_string(clip.sample_rate) + " Hz (" + clip.source_id + ")");
  }
  if ((cfg.window & (cfg.window - 1)) != 0) {
    throw ConfigError("logmel: window size must be a power of two");
  }

  std::vector<float> audio = clip.samples;
  std::size_t n_frames;
  if (cfg.target_frames > 0) {
    const std::size_t needed = cfg.window + (cfg.target_frames - 1) * cfg.hop;
    if (audio.size() < needed) {
      audio.resize(needed, 0.0f);  // zero-pad at the tail
    } else if (audio.size() > needed) {
      const std::size_t off = (audio.size() - needed) / 2;  // center crop
      audio.assign(audio.begin() + off, audio.begin() + off + needed);
    }
    n_frames = cfg.target_frames;
  } else {
    if (audio.size() < cfg.window) {
      throw DataError("logmel: clip shorter than one analysis window (" +
                      std::to_string(audio.size()) + " < " + std::to_string(cfg.window) +
                      " samples, " + clip.source_id + ")");
    }
    n_frames = 1 + (audio.size() - cfg.window) / cfg.hop;
  }

  // Periodic Hann window.
  std::vector<double> hann(cfg.window);
  for (std::size_t i = 0; i < cfg.window; ++i) {
    hann[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(i) /
                                   static_cast<double>(cfg.window));
  }

  const std::size_t n_bins = cfg.window / 2 + 1;
  const Tensor<double> fb = mel_filterbank(cfg.n_mels, cfg.window, 16000.0, cfg.fmin, cfg.fmax);

  // Sparse view of the filterbank: each filter covers a contiguous bin range.
  struct Band {
    std::size_t lo, hi;
  };
  std::vector<Band> bands(cfg.n_mels);
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    std::size_t lo = n_bins, hi = 0;
    for (std::size_t k = 0; k < n_bins; ++k) {
      if (fb.at(m, k) != 0.0) {
        lo = std::min(lo, k);
        hi = std::max(hi, k + 1);
      }
    }
    if (lo >= hi) lo = hi = 0;
    bands[m] = {lo, hi};
  }

  MelSpectrogram out;
  out.bins = Tensor<float>({cfg.n_mels, n_frames});
  out.frame_hop = cfg.hop;
  out.clip_ref = clip.source_id;

  std::vector<std::complex<double>> buf(cfg.window);
  std::vector<double> mag(n_bins);
  for (std::size_t f = 0; f < n_frames; ++f) {
    const std::size_t start = f * cfg.hop;
    for (std::size_t i = 0; i < cfg.window; ++i) {
      const double s = start + i < audio.size() ? audio[start + i] : 0.0;
      buf[i] = std::complex<double>(s * hann[i], 0.0);
    }
    fft_radix2(buf);
    for (std::size_t k = 0; k < n_bins; ++k) mag[k] = std::abs(buf[k]);
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      double acc = 0.0;
      for (std::size_t k = bands[m].lo; k < bands[m].hi; ++k) acc += fb.at(m, k) * mag[k];
      out.bins.at(m, f) = static_cast<float>(std::log(acc + cfg.log_floor));
    }
  }
  return out;
}

NormStats fit_norm(const std::vector<const MelSpectrogram*>& train_specs) {
  if (train_specs.empty()) throw DataError("fit_norm: no spectrograms supplied");
  const std::size_t n_mels = train_specs[0]->n_mels();
  NormStats stats;
  stats.mean.assign(n_mels, 0.0);
  stats.stdev.assign(n_mels, 0.0);
  stats.n_clips_fitted = train_specs.size();

  // Two passes: exact mean first, then variance about it.
  std::vector<std::size_t> counts(n_mels, 0);
  for (const auto* s : train_specs) {
    if (s->n_mels() != n_mels) throw ShapeError("fit_norm: inconsistent bin counts");
    for (std::size_t m = 0; m < n_mels; ++m) {
      for (std::size_t f = 0; f < s->n_frames(); ++f) stats.mean[m] += s->bins.at(m, f);
      counts[m] += s->n_frames();
    }
  }
  for (std::size_t m = 0; m < n_mels; ++m) stats.mean[m] /= static_cast<double>(counts[m]);

  for (const auto* s : train_specs) {
    for (std::size_t m = 0; m < n_mels; ++m)
      for (std::size_t f = 0; f < s->n_frames(); ++f) {
        const double d = s->bins.at(m, f) - stats.mean[m];
        stats.stdev[m] += d * d;
      }
  }
  for (std::size_t m = 0; m < n_mels; ++m) {
    stats.stdev[m] = std::max(std::sqrt(stats.stdev[m] / static_cast<double>(counts[m])), 1e-8);
  }
  return stats;
}

MelSpectrogram apply_norm(const MelSpectrogram& spec, const NormStats& stats) {
  if (stats.n_clips_fitted == 0) {
    throw DataError("apply_norm: statistics have not been fitted");
  }
  if (spec.n_mels() != stats.mean.size()) {
    throw ShapeError("apply_norm: spectrogram has " + std::to_string(spec.n_mels()) +
                     " bins, statistics have " + std::to_string(stats.mean.size()));
  }
  MelSpectrogram out = spec;
  for (std::size_t m = 0; m < spec.n_mels(); ++m) {
    const float mu = static_cast<float>(stats.mean[m]);
    const float inv = static_cast<float>(1.0 / stats.stdev[m]);
    for (std::size_t f = 0; f < spec.n_frames(); ++f) {
      out.bins.at(m, f) = (spec.bins.at(m, f) - mu) * inv;
    }
  }
  return out;
}

void save_norm_stats(const std::string& path, const NormStats& stats) {
  nlohmann::json j;
  j["mean"] = stats.mean;
  j["stdev"] = stats.stdev;
  j["n_clips_fitted"] = stats.n_clips_fitted;
  std::ofstream f(path);
  if (!f) throw DataError("cannot write norm stats: " + path);
  f << j.dump(2) << '\n';
}

NormStats load_norm_stats(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot read norm stats: " + path);
  nlohmann::json j;
  f >> j;
  NormStats stats;
  stats.mean = j.at("mean").get<std::vector<double>>();
  stats.stdev = j.at("stdev").get<std::vector<double>>();
  stats.n_clips_fitted = j.at("n_clips_fitted").get<std::size_t>();
  return stats;
}

void write_lmel(const std::string& path, const Tensor<float>& m) {
  if (m.rank() != 2) throw ShapeError("write_lmel: expected rank-2, got " + shape_str(m.shape));
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write feature cache: " + path);
  const std::uint32_t rows = static_cast<std::uint32_t>(m.shape[0]);
  const std::uint32_t cols = static_cast<std::uint32_t>(m.shape[1]);
  unsigned char hdr[8] = {
      static_cast<unsigned char>(rows & 0xff),         static_cast<unsigned char>((rows >> 8) & 0xff),
      static_cast<unsigned char>((rows >> 16) & 0xff), static_cast<unsigned char>((rows >> 24) & 0xff),
      static_cast<unsigned char>(cols & 0xff),         static_cast<unsigned char>((cols >> 8) & 0xff),
      static_cast<unsigned char>((cols >> 16) & 0xff), static_cast<unsigned char>((cols >> 24) & 0xff)};
  f.write(reinterpret_cast<const char*>(hdr), 8);
  static_assert(sizeof(float) == 4);
  f.write(reinterpret_cast<const char*>(m.data.data()),
          static_cast<std::streamsize>(m.data.size() * 4));
  if (!f) throw DataError("failed writing feature cache: " + path);
}

Tensor<float> read_lmel(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read feature cache: " + path);
  unsigned char hdr[8];
  f.read(reinterpret_cast<char*>(hdr), 8);
  if (f.gcount() != 8) throw DataError("truncated feature cache header: " + path);
  const std::uint32_t rows = hdr[0] | (hdr[1] << 8) | (hdr[2] << 16) |
                             (static_cast<std::uint32_t>(hdr[3]) << 24);
  const std::uint32_t cols = hdr[4] | (hdr[5] << 8) | (hdr[6] << 16) |
                             (static_cast<std::uint32_t>(hdr[7]) << 24);
  Tensor<float> m({rows, cols});
  f.read(reinterpret_cast<char*>(m.data.data()),
         static_cast<std::streamsize>(m.data.size() * 4));
  if (static_cast<std::size_t>(f.gcount()) != m.data.size() * 4) {
    throw DataError("truncated feature cache data: " + path);
  }
  return m;
}

}  // namespace fewsound
