#pragma once

#include "stein_perturb/core.hpp"
#include "stein_perturb/kernels.hpp"
#include "stein_perturb/score_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace stein_perturb {

/// Stein kernel u_P(x, y) = s(x)'s(y) k + s(x)'grad_y k + grad_x k's(y) + tr(grad_x grad_y k).
inline double stein_kernel_eval(const ScoreModel& model, const Kernel& kernel, const Vector& x,
                                const Vector& y) {
  require_same_dim(x.size(), y.size(), "stein_kernel_eval");
  require_same_dim(x.size(), model.dim(), "stein_kernel_eval");
  const Vector sx = model.score(x);
  const Vector sy = model.score(y);
  return sx.dot(sy) * kernel.eval(x, y) + sx.dot(kernel.grad_y(x, y)) +
         kernel.grad_x(x, y).dot(sy) + kernel.cross_grad_trace(x, y);
}

/// Symmetric n x n matrix of u_P(x_i, x_j), diagonal included.
struct SteinGram {
  Matrix values;

  Eigen::Index size() const { return values.rows(); }
  double trace() const { return values.trace(); }
};

namespace detail {

// Assembles the Gram matrix from samples and their scores. Every entry is a
// function of the two points only (not of their positions in the sample), is
// bit-identical under swapping the points, and is computed once for i <= j.
inline Matrix stein_gram_values(const Matrix& samples, const Matrix& scores, const Kernel& kernel) {
  const Eigen::Index n = samples.rows();
  const Eigen::Index d = samples.cols();
  require(scores.rows() == n && scores.cols() == d, "stein_gram: scores shape mismatch");
  const Matrix points = samples.transpose();  // column per point
  const Matrix grads = scores.transpose();
  Matrix gram(n, n);
  const double dim = static_cast<double>(d);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t col) {
    const auto i = static_cast<Eigen::Index>(col);
    const double* xi = points.col(i).data();
    const double* si = grads.col(i).data();
    double* out = gram.col(i).data();
    for (Eigen::Index j = i; j < n; ++j) {
      const double* xj = points.col(j).data();
      const double* sj = grads.col(j).data();
      double r2 = 0.0;
      double ss = 0.0;
      double drift = 0.0;  // <s_i, x_j - x_i> + <s_j, x_i - x_j>
      for (Eigen::Index k = 0; k < d; ++k) {
        const double dx = xi[k] - xj[k];
        r2 += dx * dx;
        ss += si[k] * sj[k];
        drift -= (si[k] - sj[k]) * dx;
      }
      const Kernel::Profile p = kernel.profile(r2);
      out[j] = p.f * ss + 2.0 * p.df * drift + Kernel::cross_trace_from(p, r2, dim);
    }
  });
  gram.triangularView<Eigen::StrictlyUpper>() = gram.transpose();
  return gram;
}

// Sum over i < j, accumulated in sorted order so the result does not depend
// on the order of the sample.
inline double upper_triangle_sum(const Matrix& values) {
  const Eigen::Index n = values.rows();
  std::vector<double> upper;
  upper.reserve(static_cast<std::size_t>(n) * static_cast<std::size_t>(n > 0 ? n - 1 : 0) / 2);
  for (Eigen::Index j = 1; j < n; ++j) {
    for (Eigen::Index i = 0; i < j; ++i) upper.push_back(values(i, j));
  }
  std::sort(upper.begin(), upper.end());
  double total = 0.0;
  for (double v : upper) total += v;
  return total;
}

}  // namespace detail

inline SteinGram stein_gram(const Matrix& samples, const Matrix& scores, const Kernel& kernel) {
  return SteinGram{detail::stein_gram_values(samples, scores, kernel)};
}

inline SteinGram stein_gram(const Matrix& samples, const ScoreModel& model, const Kernel& kernel) {
  require_same_dim(samples.cols(), model.dim(), "stein_gram");
  return stein_gram(samples, model.scores(samples), kernel);
}

/// Off-diagonal mean (1 / (n (n - 1))) sum_{i != j} G_ij of a symmetric matrix.
inline double offdiag_mean(const Matrix& values) {
  const Eigen::Index n = values.rows();
  require(n >= 2, "U-statistic needs at least two samples");
  return 2.0 * detail::upper_triangle_sum(values) / (static_cast<double>(n) * static_cast<double>(n - 1));
}

inline double ksd_ustat(const SteinGram& gram) { return offdiag_mean(gram.values); }

inline double ksd_ustat(const Matrix& samples, const ScoreModel& model, const Kernel& kernel) {
  require(samples.rows() >= 2, "ksd_ustat needs at least two samples");
  return ksd_ustat(stein_gram(samples, model, kernel));
}

/// V-statistic (1 / n^2) sum_{i, j} u_P(x_i, x_j), diagonal included.
inline double ksd_vstat(const SteinGram& gram) {
  const double n = static_cast<double>(gram.size());
  require(n >= 1, "ksd_vstat needs at least one sample");
  return gram.values.sum() / (n * n);
}

inline double ksd_vstat(const Matrix& samples, const ScoreModel& model, const Kernel& kernel) {
  require(samples.rows() >= 1, "ksd_vstat needs at least one sample");
  return ksd_vstat(stein_gram(samples, model, kernel));
}

// ---------------------------------------------------------------------------
// Multinomial bootstrap

/// n x B matrix whose column b is a Mult(n; 1/n, ..., 1/n) draw from the
/// substream (seed, b).
inline Matrix multinomial_weights(Eigen::Index n, int num_bootstrap, std::uint64_t seed) {
  require(num_bootstrap >= 1, "bootstrap count must be >= 1");
  require(n >= 1, "multinomial_weights needs n >= 1");
  Matrix w = Matrix::Zero(n, num_bootstrap);
  parallel_for(static_cast<std::size_t>(num_bootstrap), [&](std::size_t b) {
    Rng rng(derive_seed(seed, Stream::kBootstrap, b));
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    auto col = w.col(static_cast<Eigen::Index>(b));
    for (Eigen::Index draw = 0; draw < n; ++draw) col(pick(rng)) += 1.0;
  });
  return w;
}

/// Replicates (1 / n^2) sum_{i != j} (w_i - 1)(w_j - 1) G_ij for given weight columns.
inline std::vector<double> bootstrap_stats_from_weights(const SteinGram& gram, const Matrix& weights) {
  const Eigen::Index n = gram.size();
  require(n >= 2, "bootstrap needs a Gram matrix of at least two points");
  require(weights.rows() == n && weights.cols() >= 1, "bootstrap weights shape mismatch");
  const Matrix centred = weights.array() - 1.0;
  const Matrix product = gram.values * centred;
  const Vector diag = gram.values.diagonal();
  std::vector<double> out(static_cast<std::size_t>(weights.cols()));
  const double scale = 1.0 / (static_cast<double>(n) * static_cast<double>(n));
  for (Eigen::Index b = 0; b < weights.cols(); ++b) {
    const auto e = centred.col(b);
    const double full = e.dot(product.col(b));
    const double self = e.cwiseAbs2().dot(diag);
    out[static_cast<std::size_t>(b)] = (full - self) * scale;
  }
  return out;
}

inline std::vector<double> bootstrap_stats(const SteinGram& gram, int num_bootstrap,
                                           std::uint64_t seed) {
  require(num_bootstrap >= 1, "bootstrap count must be >= 1");
  return bootstrap_stats_from_weights(gram, multinomial_weights(gram.size(), num_bootstrap, seed));
}

// ---------------------------------------------------------------------------
// Test results

struct TestResult {
  double statistic = 0.0;
  double bootstrap_quantile = 0.0;
  double p_value = 1.0;
  bool reject = false;
  double alpha = 0.05;
  int num_bootstrap = 0;
  std::uint64_t seed = 0;
  std::map<std::string, double> extras;
};

/// Bootstrap calibration shared by every test in the library.
///
/// p = (1 + #{b : D_b >= D}) / (B + 1), reject iff p <= alpha. The reported
/// quantile is the m-th largest replicate with m = floor(alpha (B + 1)); apart
/// from exact ties, reject holds iff the statistic exceeds it.
inline TestResult calibrate(const SteinGram& gram, double statistic, double alpha, int num_bootstrap,
                            std::uint64_t seed) {
  require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
  std::vector<double> reps = bootstrap_stats(gram, num_bootstrap, seed);
  TestResult r;
  r.statistic = statistic;
  r.alpha = alpha;
  r.num_bootstrap = num_bootstrap;
  r.seed = seed;
  const auto exceed = std::count_if(reps.begin(), reps.end(), [&](double v) { return v >= statistic; });
  r.p_value = (1.0 + static_cast<double>(exceed)) / (num_bootstrap + 1.0);
  r.reject = r.p_value <= alpha;
  std::sort(reps.begin(), reps.end(), std::greater<>());
  const auto m = static_cast<long>(std::floor(alpha * (num_bootstrap + 1.0)));
  r.bootstrap_quantile = m >= 1 ? reps[static_cast<std::size_t>(m - 1)]
                                : std::numeric_limits<double>::infinity();
  return r;
}

/// Plain KSD goodness-of-fit test.
inline TestResult ksd_test(const Matrix& samples, const ScoreModel& model, const Kernel& kernel,
                           double alpha, int num_bootstrap, std::uint64_t seed) {
  require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
  require(num_bootstrap >= 1, "bootstrap count must be >= 1");
  const SteinGram gram = stein_gram(samples, model, kernel);
  return calibrate(gram, ksd_ustat(gram), alpha, num_bootstrap, seed);
}

// ---------------------------------------------------------------------------

/// Monte Carlo estimate of E_Q |s_p(x) - s_q(x)|^2 from draws of Q.
inline double fisher_divergence_mc(const Matrix& samples_from_q, const ScoreModel::ScoreFn& score_p,
                                   const ScoreModel::ScoreFn& score_q) {
  require(samples_from_q.rows() >= 1, "fisher_divergence_mc needs samples");
  double total = 0.0;
  Vector x(samples_from_q.cols());
  for (Eigen::Index i = 0; i < samples_from_q.rows(); ++i) {
    x = samples_from_q.row(i).transpose();
    const Vector sp = score_p(x);
    const Vector sq = score_q(x);
    require_same_dim(sp.size(), x.size(), "fisher_divergence_mc score_p");
    require_same_dim(sq.size(), x.size(), "fisher_divergence_mc score_q");
    total += (sp - sq).squaredNorm();
  }
  return total / static_cast<double>(samples_from_q.rows());
}

}  // namespace stein_perturb
