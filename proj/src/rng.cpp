#include "rangeaug/rng.hpp"

#include <array>
#include <cmath>
#include <numbers>

namespace rangeaug {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t RngContext::prefix() const {
  std::uint64_t h = splitmix64(global_seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(stream));
  h = splitmix64(h ^ epoch);
  h = splitmix64(h ^ sample);
  return splitmix64(h ^ op);
}

std::uint64_t RngContext::bits(std::uint64_t index) const { return splitmix64(prefix() ^ index); }

double RngContext::uniform(std::uint64_t index) const {
  return static_cast<double>(bits(index) >> 11) * 0x1.0p-53;
}

namespace {

struct Polar {
  double r;
  double theta;
};

Polar box_muller(std::uint64_t h, std::uint64_t pair) {
  // u1 in (0, 1] keeps the logarithm finite.
  const double u1 = static_cast<double>((splitmix64(h ^ (2 * pair)) >> 11) + 1) * 0x1.0p-53;
  const double u2 = static_cast<double>(splitmix64(h ^ (2 * pair + 1)) >> 11) * 0x1.0p-53;
  return {std::sqrt(-2.0 * std::log(u1)), 2.0 * std::numbers::pi * u2};
}

// One out-of-line body so single draws and bulk fills round identically
// (the compiler may otherwise fuse cos/sin differently at each call site).
[[gnu::noinline]] std::array<double, 2> normal_pair(std::uint64_t h, std::uint64_t pair) {
  const Polar p = box_muller(h, pair);
  return {p.r * std::cos(p.theta), p.r * std::sin(p.theta)};
}

}  // namespace

double RngContext::normal(std::uint64_t index) const {
  return normal_pair(prefix(), index / 2)[index % 2];
}

void RngContext::fill_normal(std::span<double> out) const {
  const std::uint64_t h = prefix();
  for (std::size_t i = 0; i < out.size(); i += 2) {
    const auto pair = normal_pair(h, i / 2);
    out[i] = pair[0];
    if (i + 1 < out.size()) out[i + 1] = pair[1];
  }
}

}  // namespace rangeaug
