#include "anchorlab/nn/rng.hpp"

#include <cmath>
#include <numbers>

#include "anchorlab/common/errors.hpp"

namespace anchorlab::nn {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), stream_(stream_id), key_(splitmix64(seed ^ splitmix64(stream_id ^ 0x632be59bd9b4e019ULL))) {}

std::uint64_t RngStream::next_u64() {
  std::uint64_t c = counter_++;
  return splitmix64(key_ ^ splitmix64(c));
}

double RngStream::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t RngStream::uniform_int(std::uint64_t n) {
  if (n == 0) throw UsageError("uniform_int(0)");
  // Lemire's multiply-shift with rejection.
  for (;;) {
    unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low >= n || low >= (-n) % n) return static_cast<std::uint64_t>(m >> 64);
  }
}

double RngStream::normal() {
  double u1 = uniform();
  double u2 = uniform();
  // 1 - u1 lies in (0, 1], so the log is finite.
  return std::sqrt(-2.0 * std::log(1.0 - u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

RngStream RngStream::fork(std::uint64_t child) const {
  return RngStream(seed_, splitmix64(stream_ * 0x9e3779b97f4a7c15ULL + child + 1));
}

}  // namespace anchorlab::nn
