#pragma once

#include <cstdint>
#include <random>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "scala/error.hpp"

namespace scala {

// Deterministic random source. The engine is std::mt19937_64 (fully specified
// by the standard); the value transforms below are spelled out here instead of
// using std:: distributions, whose output is implementation-defined. State
// round-trips through text, which is what checkpoint resume relies on.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0,1) with 53 random bits.
  double uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  bool bernoulli(double p) { return uniform01() < p; }

  // Box-Muller without the cached spare, so the draw count per call is fixed.
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = 1.0 - uniform01();  // (0,1], keeps log finite
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(6.283185307179586477 * u2);
  }

  // Uniform integer in [0,n), bias-free via rejection.
  int uniform_int(int n) {
    check_runtime(n > 0, "Rng::uniform_int: n must be positive");
    uint64_t un = static_cast<uint64_t>(n);
    uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return static_cast<int>(x % un);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(static_cast<int>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct values drawn uniformly from `pool` (partial Fisher-Yates).
  // If k >= pool.size() the whole pool is returned, shuffled.
  template <typename T>
  std::vector<T> sample_without_replacement(std::vector<T> pool, size_t k) {
    if (k > pool.size()) k = pool.size();
    for (size_t i = 0; i < k; ++i) {
      size_t j = i + static_cast<size_t>(
                         uniform_int(static_cast<int>(pool.size() - i)));
      std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
  }

  std::string serialize() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  void deserialize(const std::string& state) {
    std::istringstream is(state);
    is >> engine_;
    check_data(!is.fail(), "Rng::deserialize: malformed state");
  }

  // Independent stream derived from (seed, salt); used to keep model init,
  // data generation, and the training loop on separate streams.
  static Rng substream(uint64_t seed, uint64_t salt) {
    uint64_t x = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return Rng(x ^ (x >> 31));
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace scala
