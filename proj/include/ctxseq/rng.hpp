#pragma once

#include <cmath>
#include <cstdint>
#include <string>

namespace ctxseq {

// Deterministic 64-bit generator (splitmix64). The same seed yields the
// same stream on every platform; independent streams are derived with
// child(), which re-seeds through the same mixing function so streams do
// not overlap in practice.
class SeededRng {
 public:
  explicit SeededRng(uint64_t seed = 0) : state_(seed) {}

  uint64_t seed() const { return state_; }

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform double in [0, 1): top 53 bits, exact conversion.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Box-Muller, no cached spare: two u64 draws per sample.
  double gaussian(double mu, double sigma) {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    double r = std::sqrt(-2.0 * std::log(u1));
    return mu + sigma * r * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Integer in [0, n). n must be positive.
  uint64_t next_below(uint64_t n) { return next_u64() % n; }

  // Derived stream: mixes the current seed with a salt through splitmix.
  SeededRng child(uint64_t salt) const {
    SeededRng mixer(state_ ^ (salt * 0xd6e8feb86659fd93ULL + 0x2545f4914f6cdd1dULL));
    return SeededRng(mixer.next_u64());
  }

  SeededRng child(const std::string& label) const {
    uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (unsigned char ch : label) {
      h ^= ch;
      h *= 1099511628211ULL;
    }
    return child(h);
  }

  // Fisher-Yates over an index container.
  template <class Vec>
  void shuffle(Vec& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
};

}  // namespace ctxseq
