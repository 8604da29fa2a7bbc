#pragma once

#include <cstddef>
#include <cstdint>

namespace star {

// Counter-based generator: the n-th draw is splitmix64(key + n * golden),
// so a stream is fully described by (seed, stream id, counter) and draws
// are identical across platforms and standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next_u64();
  double uniform();                           // [0, 1)
  double uniform(double lo, double hi);       // [lo, hi)
  double normal();                            // standard normal, Box-Muller
  std::size_t uniform_index(std::size_t n);   // [0, n)
  bool bernoulli(double p);

  // Independent child stream, e.g. one per training step.
  Rng fork(std::uint64_t stream) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace star
