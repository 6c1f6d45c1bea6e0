#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace wsda {

// Deterministic, splittable random stream. A stream is a 64-bit key plus a
// draw counter; fork() derives an independent child stream from a tag or
// name. All draws are computed from (key, counter) only, so identical keys
// give identical sequences regardless of construction order.
class RngStream {
 public:
  explicit RngStream(uint64_t key) : key_(mix(key ^ 0x6a09e667f3bcc909ull)) {}

  RngStream fork(uint64_t tag) const { return RngStream(key_ ^ mix(tag ^ 0x2545f4914f6cdd1dull)); }

  RngStream fork(std::string_view name) const {
    uint64_t h = 1469598103934665603ull;
    for (char c : name) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
    return fork(h);
  }

  uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ull * ++ctr_); }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  int uniform_int(int n) {
    return static_cast<int>((static_cast<unsigned __int128>(next_u64()) * static_cast<unsigned __int128>(n)) >> 64);
  }

  // Box-Muller; consumes two uniforms per draw.
  double normal() {
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  uint64_t key() const { return key_; }

 private:
  static uint64_t mix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  uint64_t key_;
  uint64_t ctr_ = 0;
};

}  // namespace wsda
