#pragma once

#include <cstdint>
#include <span>

namespace rangeaug {

enum class Stream : std::uint64_t { Sampling = 1, Noise = 2, Data = 3, Init = 4 };

// Counter-based randomness: every draw is a pure function of (seed, stream,
// counter, index), so the order in which draws are requested never matters.
struct RngContext {
  std::uint64_t global_seed = 0;
  Stream stream = Stream::Sampling;
  std::uint64_t epoch = 0;
  std::uint64_t sample = 0;
  std::uint64_t op = 0;

  RngContext with_op(std::uint64_t o) const {
    RngContext c = *this;
    c.op = o;
    return c;
  }

  std::uint64_t bits(std::uint64_t index = 0) const;
  // Uniform in [0, 1).
  double uniform(std::uint64_t index = 0) const;
  // Standard normal via Box-Muller on the pair (2k, 2k+1); even and odd
  // indices take the cosine and sine branch of the same pair.
  double normal(std::uint64_t index = 0) const;

  // out[i] == normal(i) for every i, computed one Box-Muller pair at a time.
  void fill_normal(std::span<double> out) const;

 private:
  std::uint64_t prefix() const;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace rangeaug
