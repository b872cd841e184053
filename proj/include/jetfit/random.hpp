#ifndef JETFIT_RANDOM_HPP
#define JETFIT_RANDOM_HPP

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <random>

namespace jetfit {

// Portable seeded generator: mt19937_64 with explicit output mappings.
// std::uniform_real_distribution / std::normal_distribution are not
// specified bit-exactly across standard libraries, so the mappings below
// are spelled out (53-bit uniform, Box-Muller gaussian) and the consumed
// engine outputs per call are fixed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection-free modulo is fine at these scales;
  /// bias is < n / 2^64.
  std::uint64_t index(std::uint64_t n) { return engine_() % n; }

  /// Standard gaussian via Box-Muller; consumes two engine outputs per pair.
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  Eigen::Vector3d gaussian3() {
    Eigen::Vector3d g;
    g << gaussian(), gaussian(), gaussian();
    return g;
  }

  /// Random unit vector (isotropic).
  Eigen::Vector3d unit3() {
    Eigen::Vector3d g = gaussian3();
    double n = g.norm();
    while (n < 1e-12) {
      g = gaussian3();
      n = g.norm();
    }
    return g / n;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace jetfit

#endif  // JETFIT_RANDOM_HPP
