#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace evplab {

inline constexpr const char* kVersion = "0.1.0";

inline constexpr double kFeetPerMile = 5280.0;
inline constexpr double kSecondsPerHour = 3600.0;

inline constexpr double mph_to_fps(double mph) { return mph * kFeetPerMile / kSecondsPerHour; }
inline constexpr double fps_to_mph(double fps) { return fps * kSecondsPerHour / kFeetPerMile; }

/// Malformed or schema-violating input files.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inconsistent or missing data handed between pipeline stages.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Violated simulation precondition (duplicate ERV, bad injection time, ...).
class SimError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Deterministic random stream. Uses explicit inversion sampling so results
// do not depend on the standard library's distribution implementations.
class RandomStream {
 public:
  RandomStream() : gen_(0) {}
  explicit RandomStream(std::uint64_t seed) : gen_(seed) {}

  // uniform in [0, 1), 53-bit resolution
  double uniform01() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  // exponential with the given rate (events per unit time)
  double exponential(double rate) {
    double u = uniform01();
    return -std::log(1.0 - u) / rate;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  std::uint64_t next_u64() { return gen_(); }

 private:
  std::mt19937_64 gen_;
};

// Stream seeds derived from a master seed so each arrival process and each
// training job gets an independent deterministic generator.
inline std::uint64_t substream_seed(std::uint64_t master, std::uint64_t index) {
  std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace evplab
