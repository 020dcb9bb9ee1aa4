#pragma once

#include <cstdint>

namespace anchorlab::nn {

// Well-known stream ids. Every consumer of randomness draws from its own
// stream so that ablations differ only in the ablated factor.
enum class Stream : std::uint64_t {
  kSim = 1,
  kData = 2,
  kDiffusion = 3,
  kInit = 4,
  kEval = 5,
  kGradcheck = 6,
  kSePretrain = 7,
  kTest = 99,
};

// Counter-based generator: draw n of stream (seed, id) is a pure function of
// (seed, id, n), computed with the SplitMix64 finalizer.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id);
  RngStream(std::uint64_t seed, Stream stream) : RngStream(seed, static_cast<std::uint64_t>(stream)) {}

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 bits of precision.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Unbiased integer in [0, n). n must be > 0.
  std::uint64_t uniform_int(std::uint64_t n);
  // Standard normal via Box-Muller; consumes exactly two draws.
  double normal();

  // Child stream whose draws are independent of this one's.
  RngStream fork(std::uint64_t child) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace anchorlab::nn
