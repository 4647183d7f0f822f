#pragma once

// Shared plumbing: error taxonomy, counter-based RNG, finite checks,
// small numeric helpers. Everything downstream includes this first.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace lsp {

// ---------------------------------------------------------------- errors

// Bad user-facing configuration (unknown keys, invalid values, missing files).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

// Corrupt or mismatched serialized artifacts (datasets, checkpoints).
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& m) : std::runtime_error(m) {}
};

// Non-finite values or numerically impossible requests.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};

// Programming-contract violations (shape mismatches, bad op usage).
struct ShapeError : std::logic_error {
  explicit ShapeError(const std::string& m) : std::logic_error(m) {}
};

// ---------------------------------------------------------------- hashing

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

// ---------------------------------------------------------------- rng

// Counter-based splittable generator. State is (key, counter); output i is a
// strong 64-bit mix of key and counter, so streams can be forked with split()
// without any shared mutable state. Copying the struct copies the stream.
struct CounterRng {
  uint64_t key = 0;
  uint64_t counter = 0;

  static uint64_t mix(uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  explicit CounterRng(uint64_t seed = 0) : key(mix(seed ^ 0x2545f4914f6cdd1dULL)) {}

  uint64_t next_u64() { return mix(key ^ (0x9e3779b97f4a7c15ULL * ++counter)); }

  // Forks an independent stream identified by tag. Child streams with
  // different tags (or from different parents) do not collide.
  CounterRng split(uint64_t tag) const {
    CounterRng c(0);
    c.key = mix(key ^ mix(tag ^ 0x5851f42d4c957f2dULL));
    c.counter = 0;
    return c;
  }
  CounterRng split(const std::string& tag) const { return split(fnv1a64(tag)); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n).
  uint64_t below(uint64_t n) {
    if (n == 0) throw NumericError("CounterRng::below: n must be positive");
    uint64_t v = static_cast<uint64_t>(uniform() * static_cast<double>(n));
    return v >= n ? n - 1 : v;
  }

  // Standard normal via Box-Muller; draws two uniforms per call.
  double normal() {
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  double normal(double mean, double std) { return mean + std * normal(); }

  uint64_t poisson(double lambda) {
    if (!(lambda >= 0.0)) throw NumericError("CounterRng::poisson: lambda must be >= 0");
    // Knuth inversion; fine for small lambda.
    double limit = std::exp(-lambda);
    uint64_t k = 0;
    double prod = uniform();
    while (prod > limit) {
      ++k;
      prod *= uniform();
    }
    return k;
  }
};

// ---------------------------------------------------------------- numerics

inline bool is_finite(double v) { return std::isfinite(v); }

inline void check_finite(const char* where, double v) {
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite value in ") + where);
}

inline void check_finite(const char* where, const double* p, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    if (!std::isfinite(p[i]))
      throw NumericError(std::string("non-finite value in ") + where + " at index " +
                         std::to_string(i));
  }
}

inline void check_finite(const char* where, const std::vector<double>& v) {
  check_finite(where, v.data(), v.size());
}

// Shortest decimal form that parses back to the same double; stable output
// for CSV and JSON logs.
inline std::string fmt_double(double v) {
  char buf[40];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

constexpr double kPi = 3.14159265358979323846;

// Wraps an angle to [-pi, pi).
inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * kPi);
  if (a >= kPi) a -= 2.0 * kPi;
  if (a < -kPi) a += 2.0 * kPi;
  return a;
}

}  // namespace lsp
