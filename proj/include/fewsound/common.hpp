#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fewsound {

// Error taxonomy, mapped onto CLI exit codes by tools/fewsound.
// usage/config -> 1, data/shape -> 2, numeric -> 3.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitData = 2,
  kExitNumeric = 3,
};

inline std::string shape_str(const std::vector<std::size_t>& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ']';
  return os.str();
}

// Scalar-multiply accounting for the similarity cost checks. Every dense
// kernel (matmul, matvec, dot, conv) bumps this by its multiply count.
inline std::uint64_t& mul_op_counter() {
  thread_local std::uint64_t count = 0;
  return count;
}

inline void reset_mul_ops() { mul_op_counter() = 0; }
inline std::uint64_t mul_ops() { return mul_op_counter(); }

}  // namespace fewsound
