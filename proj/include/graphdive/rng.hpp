#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace graphdive {

// mt19937_64 with hand-written conversions. The std distributions are
// implementation-defined, which would make golden values and dataset bytes
// depend on the standard library in use.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // [0, n), rejection sampled.
  std::uint64_t below(std::uint64_t n);
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Independent stream for (seed, stream) pairs, e.g. one per epoch.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace graphdive
