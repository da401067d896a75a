#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace mgrl {

/// PCG32 (pcg_xsh_rr_64_32). Small counter-based generator with 64-bit state,
/// embedded here so streams are identical across platforms and compilers.
/// One "draw" everywhere in this library means one call to next_u32().
class Pcg32 {
 public:
  explicit Pcg32(std::uint64_t seed = 0, std::uint64_t stream = 0) {
    state_ = 0u;
    inc_ = (stream << 1u) | 1u;
    next_u32();
    state_ += seed;
    next_u32();
  }

  std::uint32_t next_u32() {
    std::uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    std::uint32_t xorshifted =
        static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    std::uint32_t rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
  }

  /// Uniform double in [0, 1). Exactly one draw.
  double uniform() { return next_u32() * 0x1p-32; }

  /// Uniform integer in {0, ..., n-1}. Exactly one draw.
  int uniform_int(int n) {
    if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
    int k = static_cast<int>(uniform() * n);
    return k < n ? k : n - 1;  // guard the k == n edge from rounding
  }

  /// Bernoulli(p). Exactly one draw.
  bool bernoulli(double p) { return uniform() < p; }

  /// Index sampled from an (unnormalized is tolerated) categorical
  /// distribution by CDF inversion. Exactly one draw.
  int categorical(const double* w, int n) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += w[i];
    double u = uniform() * total;
    double cum = 0.0;
    for (int i = 0; i < n; ++i) {
      cum += w[i];
      if (u < cum) return i;
    }
    return n - 1;
  }
  int categorical(const std::vector<double>& w) {
    return categorical(w.data(), static_cast<int>(w.size()));
  }

  /// Standard normal via Box-Muller. Two draws per pair; the second value of
  /// each pair is cached, so consecutive calls alternate 2 draws / 0 draws.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();  // log(0) guard
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_ = 0;
  std::uint64_t inc_ = 1;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace mgrl
