#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace fewsound {

using Digest256 = std::array<std::uint8_t, 32>;

Digest256 sha256(const void* data, std::size_t len);
Digest256 sha256(const std::string& s);
Digest256 sha256_file(const std::string& path);

std::string to_hex(const Digest256& d);

}  // namespace fewsound
