#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace devlbert {

/// Deterministic random stream (splitmix64 core). All sampling used anywhere in
/// the project goes through this type so that identical seeds give bit-identical
/// runs regardless of standard-library distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n)); }

  /// Standard normal via Box-Muller; draws two uniforms per call.
  double gaussian() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  /// Normal(0, sigma) resampled until within clip_sigmas standard deviations.
  double truncated_normal(double sigma, double clip_sigmas = 2.0) {
    for (;;) {
      double g = gaussian();
      if (std::fabs(g) <= clip_sigmas) return g * sigma;
    }
  }

  /// Fisher-Yates shuffle with this stream.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      int j = uniform_int(i + 1);
      std::swap(v[i], v[static_cast<std::size_t>(j)]);
    }
  }

  /// Independent stream derived from the original seed and an index. Used to
  /// give each corpus record its own stream so generation can shard.
  Rng substream(std::uint64_t index) const {
    Rng mixer(seed_ ^ (0xA0761D6478BD642FULL * (index + 1)));
    return Rng(mixer.next_u64());
  }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
};

}  // namespace devlbert
