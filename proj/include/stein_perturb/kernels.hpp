#pragma once

#include "stein_perturb/core.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace stein_perturb {

enum class KernelFamily { kIMQ, kRBF };

/// Radial kernel k(x, y) = f(||x - y||^2) with the derivatives a Stein kernel needs.
///
/// IMQ: f(r2) = (1 + r2 / bandwidth)^beta, beta = -1/2 by default.
/// RBF: f(r2) = exp(-r2 / (2 bandwidth)).
/// bandwidth is a squared-distance scale (as returned by median_heuristic).
class Kernel {
 public:
  /// Radial profile and its first two derivatives with respect to r2.
  struct Profile {
    double f;
    double df;
    double d2f;
  };

  Kernel(KernelFamily family, double bandwidth, double imq_beta = -0.5)
      : family_(family), bandwidth_(bandwidth), beta_(imq_beta) {
    require(bandwidth > 0.0 && std::isfinite(bandwidth), "kernel bandwidth must be positive");
    require(imq_beta > -1.0 && imq_beta < 0.0, "IMQ exponent must lie in (-1, 0)");
  }

  static Kernel imq(double bandwidth) { return Kernel(KernelFamily::kIMQ, bandwidth); }
  static Kernel rbf(double bandwidth) { return Kernel(KernelFamily::kRBF, bandwidth); }

  KernelFamily family() const { return family_; }
  double bandwidth() const { return bandwidth_; }
  double imq_beta() const { return beta_; }

  Profile profile(double r2) const {
    if (family_ == KernelFamily::kIMQ) {
      const double base = 1.0 + r2 / bandwidth_;
      if (beta_ == -0.5) {
        const double inv = 1.0 / base;
        const double f = std::sqrt(inv);
        const double df = -0.5 / bandwidth_ * (f * inv);
        const double d2f = 0.75 / (bandwidth_ * bandwidth_) * (f * inv * inv);
        return {f, df, d2f};
      }
      const double f = std::pow(base, beta_);
      const double df = beta_ / bandwidth_ * f / base;
      const double d2f = beta_ * (beta_ - 1.0) / (bandwidth_ * bandwidth_) * f / (base * base);
      return {f, df, d2f};
    }
    const double f = std::exp(-r2 / (2.0 * bandwidth_));
    return {f, -f / (2.0 * bandwidth_), f / (4.0 * bandwidth_ * bandwidth_)};
  }

  double eval(const Vector& x, const Vector& y) const {
    require_same_dim(x.size(), y.size(), "kernel eval");
    return profile((x - y).squaredNorm()).f;
  }

  Vector grad_x(const Vector& x, const Vector& y) const {
    require_same_dim(x.size(), y.size(), "kernel grad_x");
    const Vector diff = x - y;
    return 2.0 * profile(diff.squaredNorm()).df * diff;
  }

  Vector grad_y(const Vector& x, const Vector& y) const {
    require_same_dim(x.size(), y.size(), "kernel grad_y");
    const Vector diff = x - y;
    return -2.0 * profile(diff.squaredNorm()).df * diff;
  }

  /// sum_i d^2 k / (dx_i dy_i).
  double cross_grad_trace(const Vector& x, const Vector& y) const {
    require_same_dim(x.size(), y.size(), "kernel cross_grad_trace");
    const double r2 = (x - y).squaredNorm();
    return cross_trace_from(profile(r2), r2, static_cast<double>(x.size()));
  }

  static double cross_trace_from(const Profile& p, double r2, double dim) {
    return -4.0 * p.d2f * r2 - 2.0 * dim * p.df;
  }

 private:
  KernelFamily family_;
  double bandwidth_;
  double beta_;
};

struct MedianBandwidth {
  double bandwidth;
  // True when every pairwise distance was zero and the fallback of 1.0 was used.
  bool degenerate;
};

/// Median of the squared pairwise distances over i < j (mean of the two central
/// order statistics for an even count).
inline MedianBandwidth median_heuristic(const Matrix& samples) {
  const Eigen::Index n = samples.rows();
  require(n >= 2, "median_heuristic needs at least two samples");
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(n) * static_cast<std::size_t>(n - 1) / 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      dists.push_back((samples.row(i) - samples.row(j)).squaredNorm());
    }
  }
  const std::size_t m = dists.size();
  const std::size_t upper = m / 2;
  std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(upper), dists.end());
  double median = dists[upper];
  if (m % 2 == 0) {
    const double lower =
        *std::max_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(upper));
    median = 0.5 * (lower + median);
  }
  if (!(median > 0.0)) return {1.0, true};
  return {median, false};
}

inline Kernel imq_median_kernel(const Matrix& samples) {
  return Kernel::imq(median_heuristic(samples).bandwidth);
}

inline const char* to_string(KernelFamily family) {
  return family == KernelFamily::kIMQ ? "imq" : "rbf";
}

}  // namespace stein_perturb
