#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace hidac {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// 64-bit FNV-1a. Used for token bucketing, parameter checksums and
// content hashes in run manifests.
inline std::uint64_t fnv1a64(std::string_view data,
                             std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64_bytes(const void* data, std::size_t n,
                                   std::uint64_t h = 1469598103934665603ULL) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::string to_hex(std::uint64_t value);

// Derives an independent RNG stream from a master seed and a stream tag,
// so e.g. data shuffling and dropout never share a sequence.
inline std::mt19937_64 seeded_rng(std::uint64_t seed, std::string_view stream) {
  return std::mt19937_64(fnv1a64(stream, seed ^ 0x9e3779b97f4a7c15ULL));
}

// Uniform draw from [0, n). Rejection sampling instead of
// std::uniform_int_distribution, whose output is implementation-defined;
// fixtures and example pools must be byte-stable across toolchains.
inline std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t n) {
  if (n < 2) return 0;
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x = rng();
  while (x >= limit) x = rng();
  return x % n;
}

// Fisher-Yates with the portable draw above (std::shuffle is likewise
// implementation-defined).
template <typename T>
void shuffle_in_place(std::vector<T>& values, std::mt19937_64& rng) {
  for (std::size_t i = values.size(); i > 1; --i) {
    std::swap(values[i - 1], values[bounded(rng, i)]);
  }
}

bool all_finite(const Mat& m);

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);

}  // namespace hidac
