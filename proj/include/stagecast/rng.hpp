#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace stagecast {

// Deterministic PRNG with hand-rolled distributions. The std distributions
// are not bit-stable across standard libraries, so everything that feeds a
// persisted artifact goes through this class instead.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  // SplitMix64 step.
  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Derive an independent stream from a base seed, e.g. per repo or metric.
  static uint64_t derive(uint64_t seed, uint64_t stream) {
    Rng r(seed ^ (0x9E3779B97F4A7C15ULL + stream * 0xBF58476D1CE4E5B9ULL));
    r.next_u64();
    return r.next_u64();
  }

  // Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive integer range.
  long uniform_int(long lo, long hi) {
    if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
    uint64_t span = uint64_t(hi - lo) + 1;
    return lo + long(next_u64() % span);
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mu, double sd) { return mu + sd * normal(); }

  double exponential() {
    double u = uniform();
    while (u <= 1e-300) u = uniform();
    return -std::log(u);
  }

  // Marsaglia-Tsang; shape > 0, scale 1.
  double gamma(double shape) {
    if (shape <= 0) throw std::invalid_argument("gamma: shape must be > 0");
    if (shape < 1.0) {
      double u = uniform();
      while (u <= 1e-300) u = uniform();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    double d = shape - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0) continue;
      v = v * v * v;
      double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 1e-300 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  double gamma(double shape, double scale) { return gamma(shape) * scale; }

  double beta(double a, double b) {
    double x = gamma(a);
    double y = gamma(b);
    return x / (x + y);
  }

  long poisson(double lambda) {
    if (lambda <= 0) return 0;
    if (lambda < 60.0) {
      // Knuth product method.
      double limit = std::exp(-lambda);
      double prod = uniform();
      long n = 0;
      while (prod > limit) {
        prod *= uniform();
        ++n;
      }
      return n;
    }
    // Normal approximation is adequate for the large-count regime here.
    double x = std::round(normal(lambda, std::sqrt(lambda)));
    return x < 0 ? 0 : long(x);
  }

  // Negative binomial via the Gamma-Poisson mixture; mean > 0, dispersion r
  // (smaller r = more over-dispersion; variance = mean + mean^2 / r).
  long neg_binomial(double mean, double r) {
    if (mean <= 0) return 0;
    double rate = gamma(r, mean / r);
    return poisson(rate);
  }

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace stagecast
