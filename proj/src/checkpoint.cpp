#include "fewsound/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "fewsound/common.hpp"

namespace fewsound {

namespace {

void put_u16(std::ofstream& f, std::uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>(v >> 8)};
  f.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ofstream& f, std::uint32_t v) {
  const unsigned char b[4] = {
      static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
      static_cast<unsigned char>((v >> 16) & 0xff),
      static_cast<unsigned char>((v >> 24) & 0xff)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::ifstream& f, const std::string& path) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (f.gcount() != 4) throw DataError("truncated checkpoint: " + path);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const std::string& path, Model<float>& model,
                     const Digest256& config_digest) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot create checkpoint: " + path);
  f.write(kCheckpointMagic, 4);
  put_u32(f, kCheckpointVersion);
  f.write(reinterpret_cast<const char*>(config_digest.data()), 32);

  for (const auto& entry : model.state_entries()) {
    if (entry.name.size() > 0xffff) throw DataError("checkpoint: name too long");
    put_u16(f, static_cast<std::uint16_t>(entry.name.size()));
    f.write(entry.name.data(), static_cast<std::streamsize>(entry.name.size()));
    const auto& shape = entry.tensor->shape;
    f.put(static_cast<char>(shape.size()));
    for (const std::size_t d : shape) put_u32(f, static_cast<std::uint32_t>(d));
    f.write(reinterpret_cast<const char*>(entry.tensor->data.data()),
            static_cast<std::streamsize>(entry.tensor->data.size() * 4));
  }
  if (!f) throw DataError("failed writing checkpoint: " + path);
}

Digest256 load_checkpoint(const std::string& path, Model<float>& model,
                          const Digest256* expect_digest) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  f.read(magic, 4);
  if (f.gcount() != 4 || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw DataError("not a checkpoint (bad magic): " + path);
  }
  const std::uint32_t version = get_u32(f, path);
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version) + ": " +
                    path);
  }
  Digest256 digest;
  f.read(reinterpret_cast<char*>(digest.data()), 32);
  if (f.gcount() != 32) throw DataError("truncated checkpoint: " + path);
  if (expect_digest && digest != *expect_digest) {
    throw DataError("checkpoint config digest mismatch: " + path +
                    " was trained with a different model configuration (stored " +
                    to_hex(digest).substr(0, 12) + "..., expected " +
                    to_hex(*expect_digest).substr(0, 12) + "...)");
  }

  std::map<std::string, Tensor<float>*> entries;
  for (auto& e : model.state_entries()) entries[e.name] = e.tensor;
  std::size_t loaded = 0;

  while (true) {
    unsigned char peek[2];
    f.read(reinterpret_cast<char*>(peek), 2);
    if (f.gcount() == 0) break;
    if (f.gcount() != 2) throw DataError("truncated checkpoint record: " + path);
    const std::uint16_t name_len = static_cast<std::uint16_t>(peek[0] | (peek[1] << 8));
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    if (f.gcount() != name_len) throw DataError("truncated checkpoint record: " + path);
    const int rank = f.get();
    if (rank < 0) throw DataError("truncated checkpoint record: " + path);
    std::vector<std::size_t> shape(static_cast<std::size_t>(rank));
    for (auto& d : shape) d = get_u32(f, path);

    const auto it = entries.find(name);
    if (it == entries.end()) {
      throw DataError("checkpoint record '" + name + "' does not exist in this model: " +
                      path);
    }
    if (it->second->shape != shape) {
      throw DataError("checkpoint record '" + name + "' has shape " + shape_str(shape) +
                      ", model expects " + shape_str(it->second->shape) + ": " + path);
    }
    f.read(reinterpret_cast<char*>(it->second->data.data()),
           static_cast<std::streamsize>(it->second->data.size() * 4));
    if (static_cast<std::size_t>(f.gcount()) != it->second->data.size() * 4) {
      throw DataError("truncated checkpoint data for '" + name + "': " + path);
    }
    ++loaded;
  }
  if (loaded != entries.size()) {
    throw DataError("checkpoint is missing " + std::to_string(entries.size() - loaded) +
                    " state records: " + path);
  }
  model.mark_bn_initialized();
  return digest;
}

Digest256 read_checkpoint_digest(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  f.read(magic, 4);
  if (f.gcount() != 4 || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw DataError("not a checkpoint (bad magic): " + path);
  }
  get_u32(f, path);
  Digest256 digest;
  f.read(reinterpret_cast<char*>(digest.data()), 32);
  if (f.gcount() != 32) throw DataError("truncated checkpoint: " + path);
  return digest;
}

}  // namespace fewsound
