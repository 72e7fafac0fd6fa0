#pragma once

#include "cteg/tensor.hpp"

#include <cstdint>
#include <random>
#include <string>

namespace cteg {

/// Seeded random stream.
///
/// Engine: std::mt19937_64, whose output sequence is fixed by the C++
/// standard. Uniform doubles take the top 53 bits of one draw; Gaussian
/// samples use Box-Muller on two uniforms and cache the second variate.
/// Neither path depends on the standard library's distribution classes, so
/// equal seeds reproduce equal streams on any conforming platform.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0);

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64();
  /// Uniform on [0, 1).
  double uniform();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  Matrix normal_matrix(Index rows, Index cols);

  /// Independent stream derived from this stream's seed and `key`; does not
  /// advance this stream.
  RngStream split(std::uint64_t key) const;

  /// Full engine state (including the cached Box-Muller variate) as text.
  std::string state() const;
  void set_state(const std::string& state);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// SplitMix64 finalizer, used to derive seeds.
std::uint64_t mix64(std::uint64_t x);

}  // namespace cteg
