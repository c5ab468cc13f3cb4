#pragma once

#include <ralc/se2.hpp>

#include <cmath>
#include <cstdint>
#include <limits>

namespace ralc {

// splitmix64: the whole generator state is one 64-bit word, so it can be checkpointed verbatim.
// Normal deviates use Box-Muller without a cached second value; draws depend only on the state.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in (0, 1).
  double uniform() { return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53; }

  double normal() {
    const double u1 = uniform(), u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double sigma) { return sigma * normal(); }

  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t s) { state_ = s; }

 private:
  std::uint64_t state_;
};

/// Zero-mean pose perturbation with independent per-axis deviations; always consumes three draws.
inline Pose2 sample_pose_noise(Rng& rng, const Eigen::Vector3d& sigma) {
  const double dx = rng.normal(sigma.x());
  const double dy = rng.normal(sigma.y());
  const double dt = rng.normal(sigma.z());
  return Pose2(dx, dy, dt);
}

}  // namespace ralc
