#pragma once

#include <cstdint>
#include <random>

namespace bilevel {

// Reproducible random stream identified by (seed, stream_id). Child streams
// are derived by hashing the parent id with a child index, so task sampling,
// parameter init and noise never share draws.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }

  RngStream derive(std::uint64_t child) const;

  std::uint64_t next_u64();
  double uniform(double lo, double hi);
  double normal(double mean, double sd);
  // Uniform integer in [0, n).
  std::size_t uniform_index(std::size_t n);

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
};

// splitmix64 finalizer; exposed for tests.
std::uint64_t mix64(std::uint64_t x) noexcept;

}  // namespace bilevel
