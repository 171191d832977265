#include "fewsound/wav.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "fewsound/common.hpp"

namespace fewsound {

namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::string& s, std::uint32_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
  s.push_back(static_cast<char>((v >> 16) & 0xff));
  s.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
}

}  // namespace

WavData read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open wav file: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw DataError("malformed wav header: " + path);
  }

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::size_t data_off = 0, data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* id = reinterpret_cast<const char*>(bytes.data() + pos);
    const std::uint32_t len = read_u32(bytes.data() + pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) {
      throw DataError("truncated wav chunk '" + std::string(id, 4) + "': " + path);
    }
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (len < 16) throw DataError("short fmt chunk: " + path);
      format = read_u16(bytes.data() + body);
      channels = read_u16(bytes.data() + body + 2);
      rate = read_u32(bytes.data() + body + 4);
      bits = read_u16(bytes.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      data_off = body;
      data_len = len;
    }
    pos = body + len + (len & 1);  // chunks are word-aligned
  }

  if (!have_fmt || data_off == 0) {
    throw DataError("wav file missing fmt or data chunk: " + path);
  }
  if (channels == 0 || rate == 0) {
    throw DataError("wav file with zero channels or rate: " + path);
  }

  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  if (!pcm16 && !f32) {
    throw DataError("unsupported wav codec (format=" + std::to_string(format) +
                    ", bits=" + std::to_string(bits) + "): " + path +
                    " (expected 16-bit PCM or 32-bit float)");
  }

  const std::size_t bytes_per_sample = bits / 8;
  const std::size_t frame_bytes = bytes_per_sample * channels;
  const std::size_t n_frames = data_len / frame_bytes;

  WavData out;
  out.sample_rate = static_cast<int>(rate);
  out.samples.resize(n_frames);
  const unsigned char* d = bytes.data() + data_off;
  const float inv_channels = 1.0f / static_cast<float>(channels);

  for (std::size_t i = 0; i < n_frames; ++i) {
    float acc = 0.0f;
    for (std::uint16_t c = 0; c < channels; ++c) {
      const unsigned char* s = d + i * frame_bytes + c * bytes_per_sample;
      if (pcm16) {
        const std::int16_t v = static_cast<std::int16_t>(s[0] | (s[1] << 8));
        acc += static_cast<float>(v) / 32768.0f;
      } else {
        float v;
        std::memcpy(&v, s, 4);
        acc += v;
      }
    }
    const float value = acc * inv_channels;
    if (!std::isfinite(value)) {
      throw DataError("non-finite sample in wav file: " + path);
    }
    out.samples[i] = value;
  }
  return out;
}

void write_wav16(const std::string& path, const std::vector<float>& samples,
                 int sample_rate) {
  const std::uint32_t data_len = static_cast<std::uint32_t>(samples.size() * 2);
  std::string buf;
  buf.reserve(44 + data_len);
  buf.append("RIFF");
  put_u32(buf, 36 + data_len);
  buf.append("WAVE");
  buf.append("fmt ");
  put_u32(buf, 16);
  put_u16(buf, 1);  // PCM
  put_u16(buf, 1);  // mono
  put_u32(buf, static_cast<std::uint32_t>(sample_rate));
  put_u32(buf, static_cast<std::uint32_t>(sample_rate * 2));
  put_u16(buf, 2);   // block align
  put_u16(buf, 16);  // bits
  buf.append("data");
  put_u32(buf, data_len);
  for (const float s : samples) {
    long q = std::lround(static_cast<double>(s) * 32768.0);
    q = std::min(32767L, std::max(-32768L, q));
    put_u16(buf, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot create wav file: " + path);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw DataError("failed writing wav file: " + path);
}

}  // namespace fewsound
