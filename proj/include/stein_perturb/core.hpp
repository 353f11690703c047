#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace stein_perturb {

using Vector = Eigen::VectorXd;
// Samples are stored one observation per row.
using Matrix = Eigen::MatrixXd;
using Rng = std::mt19937_64;

/// Raised for invalid arguments or malformed input data. Maps to CLI exit code 1.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InputError(message);
}

inline void require_same_dim(Eigen::Index a, Eigen::Index b, const char* what) {
  if (a != b) {
    throw InputError(std::string(what) + ": dimension mismatch (" + std::to_string(a) +
                     " vs " + std::to_string(b) + ")");
  }
}

// splitmix64 finaliser; used to derive independent substream seeds.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Seed for the substream identified by (seed, a, b). Streams with different keys
/// are statistically independent; the mapping is stable across runs and platforms.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return mix64(mix64(mix64(seed) ^ (a + 0x632be59bd9b4e019ULL)) ^ (b + 0x85157af5ULL));
}

/// Named stream tags so that derived seeds of different purposes never collide.
enum class Stream : std::uint64_t {
  kBootstrap = 1,
  kPerturb = 2,
  kModeInit = 3,
  kSplit = 4,
  kProxy = 5,
  kData = 6,
  kWeights = 7,
};

inline std::uint64_t derive_seed(std::uint64_t seed, Stream tag, std::uint64_t index = 0) {
  return derive_seed(seed, static_cast<std::uint64_t>(tag) << 40, index);
}

inline double standard_normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline double log_sum_exp(const double* values, std::size_t count) {
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < count; ++i) hi = std::max(hi, values[i]);
  if (!std::isfinite(hi)) return hi;
  double acc = 0.0;
  for (std::size_t i = 0; i < count; ++i) acc += std::exp(values[i] - hi);
  return hi + std::log(acc);
}

inline double log_sum_exp(const std::vector<double>& values) {
  return log_sum_exp(values.data(), values.size());
}

// ---------------------------------------------------------------------------
// Parallelism. Work is split into index ranges; every caller derives its random
// streams from indices, so results never depend on the thread count.

/// Worker count: STEIN_PERTURB_THREADS if set (>= 1), else hardware concurrency.
inline unsigned thread_count() {
  static const unsigned count = [] {
    if (const char* env = std::getenv("STEIN_PERTURB_THREADS")) {
      const long v = std::strtol(env, nullptr, 10);
      if (v >= 1) return static_cast<unsigned>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
  }();
  return count;
}

namespace detail {
inline thread_local bool in_parallel_region = false;
}

/// Runs body(i) for i in [0, n). Nested calls run serially on the calling thread.
/// The first exception thrown by any body is rethrown after all workers stop.
template <typename Body>
void parallel_for(std::size_t n, Body&& body) {
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(thread_count(), n));
  if (workers <= 1 || detail::in_parallel_region) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto run = [&] {
    detail::in_parallel_region = true;
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n || failed.load()) break;
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        failed.store(true);
      }
    }
    detail::in_parallel_region = false;
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (unsigned t = 1; t < workers; ++t) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

/// count equally spaced values from lo to hi, both endpoints exact.
inline std::vector<double> linspace(double lo, double hi, int count) {
  require(count >= 1, "linspace: count must be >= 1");
  std::vector<double> out(static_cast<std::size_t>(count), lo);
  for (int i = 1; i < count; ++i) out[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (count - 1);
  if (count > 1) out.back() = hi;
  return out;
}

}  // namespace stein_perturb
