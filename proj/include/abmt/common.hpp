#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace abmt {

// Error taxonomy. Every contract violation maps to one of these so tests
// can distinguish failure modes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DimensionError : Error {
  using Error::Error;
};
struct ContractError : Error {
  using Error::Error;
};
struct StateError : Error {
  using Error::Error;
};
struct ParameterError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct DegenerateClusteringError : Error {
  using Error::Error;
};
struct EvaluationError : Error {
  using Error::Error;
};
struct BatchError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derive an independent stream seed from a base seed and a stream tag.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  return splitmix64(base ^ splitmix64(stream + 0x6a09e667f3bcc909ULL));
}

// Deterministic RNG. Uses only the raw xorshift-style state transitions, no
// std::*_distribution, so sequences are identical across platforms and
// standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(splitmix64(seed ^ 0x853c49e6748fea9bULL)) {
    // warm up
    next();
    next();
  }

  std::uint64_t next() {
    state_ = splitmix64(state_);
    return state_;
  }

  // Uniform in [0, n). Rejection sampling keeps it exactly uniform.
  std::uint64_t index(std::uint64_t n) {
    if (n == 0) throw ParameterError("Rng::index: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = next();
    while (v >= limit) v = next();
    return v % n;
  }

  // Uniform in [0, 1) with 53 bits of precision.
  double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

  // Standard normal via Box-Muller, one cached spare per pair.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = unit();
    while (u1 <= 0.0) u1 = unit();
    const double u2 = unit();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace abmt
