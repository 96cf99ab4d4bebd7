#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace domaintemp {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed file headers / containers.
struct FormatError : Error {
  using Error::Error;
};
// Mutually inconsistent inputs (e.g. image/label count mismatch).
struct ConsistencyError : Error {
  using Error::Error;
};
// Not enough data, missing class/domain, degenerate inputs.
struct DataError : Error {
  using Error::Error;
};
// Argument outside its mathematical domain.
struct DomainError : Error {
  using Error::Error;
};
// Tensor shape disagreement.
struct ShapeError : Error {
  using Error::Error;
};
// NaN/Inf detected where finite values are required.
struct NumericError : Error {
  using Error::Error;
};
// API misuse (e.g. backward on a consumed tape).
struct UsageError : Error {
  using Error::Error;
};
// Filesystem failures.
struct IoError : Error {
  using Error::Error;
};
// Invalid experiment configuration.
struct ConfigError : Error {
  using Error::Error;
};

// FNV-1a, used for dataset hashing and RNG stream derivation.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  return fnv1a64(s.data(), s.size());
}

}  // namespace domaintemp
