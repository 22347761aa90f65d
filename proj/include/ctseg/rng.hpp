#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctseg {

// Deterministic RNG. Distributions are implemented explicitly (not via
// std::*_distribution, whose output is implementation-defined) so that a
// given seed produces the same stream on every platform.
class Rng {
 public:
  Rng() : eng_(0) {}
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, bound).
  uint64_t integer(uint64_t bound) {
    if (bound == 0) throw std::invalid_argument("Rng::integer: bound must be > 0");
    const uint64_t threshold = (0 - bound) % bound;  // 2^64 mod bound
    uint64_t x = eng_();
    while (x < threshold) x = eng_();
    return x % bound;
  }

  // Standard normal via Box-Muller; one draw consumed per call pair.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // u1 in (0, 1], u2 in [0, 1)
    const double u1 = (static_cast<double>(eng_() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Fisher-Yates; identical permutation for identical state.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(integer(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derive an independent child seed; SplitMix64 finalizer.
  static uint64_t derive(uint64_t seed, uint64_t stream) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Textual engine state (standardized for mt19937_64), for checkpoints.
  std::string serialize() const {
    std::ostringstream os;
    os << eng_;
    if (have_spare_) os << " 1 " << spare_;
    else os << " 0 0";
    return os.str();
  }

  void deserialize(const std::string& s) {
    std::istringstream is(s);
    is >> eng_;
    int flag = 0;
    is >> flag >> spare_;
    if (is.fail()) throw std::runtime_error("Rng::deserialize: malformed state");
    have_spare_ = (flag != 0);
  }

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ctseg
