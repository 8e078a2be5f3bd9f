#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace eqcbf {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

inline constexpr double kPi = 3.141592653589793238462643383279502884;

// ---------------------------------------------------------------------------
// Errors

enum class Err {
  NonFiniteState,
  UnknownSystem,
  MissingParam,
  BadShapeParam,
  NotSupporting,
  UnknownTransform,
  BadParam,
  NoUnitEigenvalue,
  EmptyRegion,
  OutOfDomain,
  NaNCell,
  BadMagic,
  VersionMismatch,
  TruncatedPayload,
  DimMismatch,
  BadGrid,
  OutsideKnownRegion,
  EmptyParamSet,
  OutsideMHat,
  ChartInvariantViolated,
  OutsideL0,
  NoSafeInput,
  ShiftConditionFailed,
  ConservativenessViolated,
  BadConfig,
};

inline const char* err_name(Err e) {
  switch (e) {
    case Err::NonFiniteState: return "NonFiniteState";
    case Err::UnknownSystem: return "UnknownSystem";
    case Err::MissingParam: return "MissingParam";
    case Err::BadShapeParam: return "BadShapeParam";
    case Err::NotSupporting: return "NotSupporting";
    case Err::UnknownTransform: return "UnknownTransform";
    case Err::BadParam: return "BadParam";
    case Err::NoUnitEigenvalue: return "NoUnitEigenvalue";
    case Err::EmptyRegion: return "EmptyRegion";
    case Err::OutOfDomain: return "OutOfDomain";
    case Err::NaNCell: return "NaNCell";
    case Err::BadMagic: return "BadMagic";
    case Err::VersionMismatch: return "VersionMismatch";
    case Err::TruncatedPayload: return "TruncatedPayload";
    case Err::DimMismatch: return "DimMismatch";
    case Err::BadGrid: return "BadGrid";
    case Err::OutsideKnownRegion: return "OutsideKnownRegion";
    case Err::EmptyParamSet: return "EmptyParamSet";
    case Err::OutsideMHat: return "OutsideMHat";
    case Err::ChartInvariantViolated: return "ChartInvariantViolated";
    case Err::OutsideL0: return "OutsideL0";
    case Err::NoSafeInput: return "NoSafeInput";
    case Err::ShiftConditionFailed: return "ShiftConditionFailed";
    case Err::ConservativenessViolated: return "ConservativenessViolated";
    case Err::BadConfig: return "BadConfig";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Err code, const std::string& msg)
      : std::runtime_error(std::string(err_name(code)) + ": " + msg), code_(code) {}
  Err code() const { return code_; }

 private:
  Err code_;
};

// ---------------------------------------------------------------------------
// Angles

// Wrap to (-pi, pi]; values landing exactly on -pi map to +pi.
inline double wrap_angle(double a) {
  double r = std::fmod(a, 2.0 * kPi);
  if (r <= -kPi) r += 2.0 * kPi;
  else if (r > kPi) r -= 2.0 * kPi;
  return r;
}

// Difference a-b wrapped to (-pi, pi].
inline double angle_diff(double a, double b) { return wrap_angle(a - b); }

// ---------------------------------------------------------------------------
// Deterministic seeding / hashing

// SplitMix64 step; used to derive independent per-point RNG streams.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Quasi-random (Halton) samples for deterministic probing

inline double halton(std::uint64_t index, unsigned base) {
  double f = 1.0, r = 0.0;
  for (std::uint64_t i = index + 1; i > 0; i /= base) {
    f /= base;
    r += f * static_cast<double>(i % base);
  }
  return r;
}

inline unsigned nth_prime(int n) {
  static const unsigned primes[] = {2,  3,  5,  7,  11, 13, 17, 19, 23, 29,
                                    31, 37, 41, 43, 47, 53, 59, 61, 67, 71};
  return primes[n % 20];
}

// Point i of a Halton sequence scaled into the box [lo, hi].
inline Vec halton_point(std::uint64_t i, const Vec& lo, const Vec& hi) {
  Vec x(lo.size());
  for (int d = 0; d < lo.size(); ++d)
    x[d] = lo[d] + (hi[d] - lo[d]) * halton(i, nth_prime(d));
  return x;
}

// ---------------------------------------------------------------------------
// Worker pool

// Resolve a worker count: explicit request > EQCBF_WORKERS > hardware.
inline int resolve_workers(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("EQCBF_WORKERS")) {
    int w = std::atoi(env);
    if (w > 0) return w;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

// Run fn(i) for i in [0, n) on `workers` threads. Work items must be
// independent; results should be written to preallocated per-index slots so
// output does not depend on scheduling.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  workers = resolve_workers(workers);
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex err_mutex;
  auto body = [&] {
    while (true) {
      std::size_t i = next.fetch_add(1);
      if (i >= n || failed.load()) break;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
        failed.store(true);
        break;
      }
    }
  };
  std::vector<std::thread> pool;
  int count = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(workers), n));
  pool.reserve(count);
  for (int t = 0; t < count; ++t) pool.emplace_back(body);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

// ---------------------------------------------------------------------------
// Misc numeric helpers

inline bool all_finite(const Vec& x) { return x.allFinite(); }

inline Mat2 rot2(double a) {
  Mat2 r;
  r << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
  return r;
}

}  // namespace eqcbf
