#pragma once

#include <cstdint>
#include <limits>
#include <random>

#include <Eigen/Dense>

namespace hjbac::sim {

/// What a stream is used for; part of the stream key so the critic batch, the
/// actor batch, the boundary batch and validation never share draws.
enum class StreamPurpose : std::uint64_t {
  Critic = 1,
  Actor = 2,
  Boundary = 3,
  Validation = 4,
  Density = 5,
  Test = 6,
};

std::uint64_t splitmix64(std::uint64_t x);

/// Seed for the stream keyed by (seed, iteration, purpose, index).
std::uint64_t stream_key(std::uint64_t seed, std::uint64_t iteration, StreamPurpose purpose,
                         std::uint64_t index);

/// Per-trajectory random source. Usable as a UniformRandomBitGenerator so the
/// samplers in problems/ can draw from it directly.
class NoiseStream {
 public:
  using result_type = std::mt19937_64::result_type;

  NoiseStream() : NoiseStream(0, 0, StreamPurpose::Test, 0) {}
  NoiseStream(std::uint64_t seed, std::uint64_t iteration, StreamPurpose purpose, std::uint64_t index)
      : engine_(stream_key(seed, iteration, purpose, index)) {}

  static constexpr result_type min() { return std::mt19937_64::min(); }
  static constexpr result_type max() { return std::mt19937_64::max(); }
  result_type operator()() { return engine_(); }

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  Eigen::VectorXd normal_vector(int n) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace hjbac::sim
