#pragma once

// Named, independent random substreams derived from a master seed by keyed
// hashing. A stream's seed depends only on (master, name), never on the
// order in which streams are requested.

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace hepco {

using Rng = std::mt19937_64;

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view name) {
  return splitmix64(splitmix64(master) ^ fnv1a64(name));
}

class SeedStreams {
 public:
  explicit SeedStreams(std::uint64_t master) : master_(master) {}

  std::uint64_t master() const { return master_; }
  std::uint64_t seed(std::string_view name) const { return derive_seed(master_, name); }
  Rng rng(std::string_view name) const { return Rng(seed(name)); }

  /// Substream scoped under `name`, e.g. streams.child("task3").seed("client2").
  SeedStreams child(std::string_view name) const { return SeedStreams(seed(name)); }

 private:
  std::uint64_t master_;
};

inline std::string stream_name(std::string_view prefix, std::uint64_t index) {
  return std::string(prefix) + "/" + std::to_string(index);
}

}  // namespace hepco
