#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dckit {

// splitmix64, used to derive stream seeds from a master seed.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t hash_name(std::string_view name) {
  uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
  for (char c : name) {
    h ^= static_cast<uint64_t>(static_cast<unsigned char>(c));
    h *= 0x100000001b3ull;
  }
  return h;
}

// All randomness in a run flows from one master seed through named
// sub-streams, so adding a consumer to one stream never perturbs another.
class RngPool {
 public:
  explicit RngPool(uint64_t master) : master_(master) {}

  uint64_t stream_seed(std::string_view name, uint64_t a = 0, uint64_t b = 0) const {
    uint64_t s = mix64(master_ ^ hash_name(name));
    s = mix64(s ^ mix64(a + 0x51ull));
    s = mix64(s ^ mix64(b + 0xa3ull));
    return s;
  }

  std::mt19937_64 stream(std::string_view name, uint64_t a = 0, uint64_t b = 0) const {
    return std::mt19937_64(stream_seed(name, a, b));
  }

  uint64_t master() const { return master_; }

 private:
  uint64_t master_;
};

}  // namespace dckit
