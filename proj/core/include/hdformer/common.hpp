#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hdf {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents disagree with what an operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Numeric contract violated (non-finite input, division by zero, ...).
class ValueError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration (bad key, missing per-order map, bad topology, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File-format or filesystem failure.
class IoError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename... Args>
std::string format_msg(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

/// splitmix64; used to derive independent child seeds from one base seed.
inline std::uint64_t split_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace hdf
