#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace svc {

// All model math runs in double: the gradient checks and the bit-exactness
// contracts (checkpoint round-trips, incremental-vs-batch decoding) leave no
// headroom for float32 noise at the sequence lengths we run.
using Real = double;

// Checkpoint/config mismatch (wrong fingerprint, mutated manifest, ...).
class VersionError : public std::runtime_error {
 public:
  explicit VersionError(const std::string& what) : std::runtime_error(what) {}
};

// Operation called on an object in the wrong lifecycle state
// (feeding a closed stream session, incremental feed on a batch session, ...).
class StateError : public std::logic_error {
 public:
  explicit StateError(const std::string& what) : std::logic_error(what) {}
};

// Evaluation protocol violation (train/test speaker overlap).
class ProtocolError : public std::runtime_error {
 public:
  explicit ProtocolError(const std::string& what) : std::runtime_error(what) {}
};

// FNV-1a over raw bytes; used for parameter-group hashes and config
// fingerprints. Not cryptographic, just a stable content id.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t seed = 14695981039346656037ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s,
                           std::uint64_t seed = 14695981039346656037ull) {
  return fnv1a(s.data(), s.size(), seed);
}

std::string hex64(std::uint64_t v);

}  // namespace svc
