#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace hsi {

// Error taxonomy. The CLI maps these onto process exit codes, everything
// else propagates them as-is.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct ValueError : Error {
  using Error::Error;
};
struct NumericsError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct DivergenceError : Error {
  using Error::Error;
};

/// Deterministic RNG (splitmix64 core). All randomness in the project flows
/// through this type so runs are reproducible bit-for-bit across platforms;
/// stdlib distributions are avoided on purpose.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; caches the second value of each pair.
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1], keeps the log finite
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * kPi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  /// Uniform index in [0, n). n must be positive.
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(next_u64() % n); }

  template <typename It>
  void shuffle(It first, It last) {
    auto n = static_cast<std::size_t>(last - first);
    for (std::size_t i = n; i > 1; --i) {
      std::swap(first[i - 1], first[index(i)]);
    }
  }

  /// Derives an independent stream seed, e.g. per epoch or per item.
  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  static constexpr double kPi = 3.14159265358979323846;
  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

class ParamFlopScope;

/// Per-thread multiply-add counter fed by every tensor op. Convention:
/// one fused multiply-add (or one add / one divide / one transcendental
/// evaluation) counts as 1. Work that depends only on parameters, not on
/// the batch, is routed to a separate bucket (see ParamFlopScope) so the
/// main counter stays exactly linear in batch size.
class FlopCounter {
 public:
  static void reset() {
    data_flops() = 0;
    param_flops() = 0;
  }
  static void add(std::uint64_t n) {
    if (param_scope()) {
      param_flops() += n;
    } else {
      data_flops() += n;
    }
  }
  static std::uint64_t total() { return data_flops(); }
  static std::uint64_t param_total() { return param_flops(); }

 private:
  friend class ParamFlopScope;
  static std::uint64_t& data_flops() {
    thread_local std::uint64_t v = 0;
    return v;
  }
  static std::uint64_t& param_flops() {
    thread_local std::uint64_t v = 0;
    return v;
  }
  static bool& param_scope() {
    thread_local bool v = false;
    return v;
  }
};

/// RAII marker: ops executed inside count as parameter preprocessing.
class ParamFlopScope {
 public:
  ParamFlopScope() : prev_(FlopCounter::param_scope()) { FlopCounter::param_scope() = true; }
  ~ParamFlopScope() { FlopCounter::param_scope() = prev_; }
  ParamFlopScope(const ParamFlopScope&) = delete;
  ParamFlopScope& operator=(const ParamFlopScope&) = delete;

 private:
  bool prev_;
};

/// High-water tracker for tensor storage (data + grad buffers).
class MemoryMeter {
 public:
  static void on_alloc(std::size_t bytes) {
    live() += bytes;
    peak() = std::max(peak(), live());
  }
  static void on_free(std::size_t bytes) { live() -= bytes; }
  static void reset_peak() { peak() = live(); }
  static std::size_t live_bytes() { return live(); }
  static std::size_t peak_bytes() { return peak(); }
  static double peak_mb() { return static_cast<double>(peak()) / (1024.0 * 1024.0); }

 private:
  static std::size_t& live() {
    thread_local std::size_t v = 0;
    return v;
  }
  static std::size_t& peak() {
    thread_local std::size_t v = 0;
    return v;
  }
};

}  // namespace hsi
