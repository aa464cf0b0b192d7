#pragma once

// Counter-based Gaussian streams. Every draw is a pure function of its key,
// so results do not depend on evaluation order or thread count.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace msmv {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

// uniform in (0,1), never exactly 0 or 1
inline double to_unit(std::uint64_t u) {
  return (static_cast<double>(u >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace detail

enum class NoiseRole : std::uint64_t { Slow = 1, Fast = 2, Aux = 3 };

// Standard normal draw keyed by (seed, stream, step, component).
// `stream` is typically the particle index (or replica id), `step` the global
// substep counter within the run, `component` the coordinate of the increment.
inline double gaussian(std::uint64_t seed, NoiseRole role, std::uint64_t stream,
                       std::uint64_t step, std::uint64_t component) {
  std::uint64_t k = detail::mix(seed, static_cast<std::uint64_t>(role));
  k = detail::mix(k, stream);
  k = detail::mix(k, step);
  k = detail::mix(k, component);
  const double u1 = detail::to_unit(k);
  const double u2 = detail::to_unit(detail::splitmix64(k));
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

// uniform in (0,1) with the same keying scheme
inline double uniform(std::uint64_t seed, NoiseRole role, std::uint64_t stream,
                      std::uint64_t step, std::uint64_t component) {
  std::uint64_t k = detail::mix(seed, static_cast<std::uint64_t>(role));
  k = detail::mix(k, stream);
  k = detail::mix(k, step);
  k = detail::mix(k, component ^ 0x5bf03635ULL);
  return detail::to_unit(k);
}

}  // namespace msmv
