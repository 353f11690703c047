#pragma once

#include "stein_perturb/core.hpp"
#include "stein_perturb/score_model.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <utility>
#include <vector>

namespace stein_perturb {

// ---------------------------------------------------------------------------
// BFGS on -log p*

struct BfgsOptions {
  int max_iter = 1000;
  double grad_tol = 1e-8;
  // Accepted as converged when the line search stalls at this gradient norm.
  double stall_grad_tol = 1e-4;
  double armijo = 1e-4;
};

struct BfgsResult {
  Vector x;
  // Hessian of -log p* at x: inverse of the final BFGS inverse-Hessian
  // approximation, symmetrised and eigenvalue-floored.
  Matrix hessian;
  bool converged = false;
  int iterations = 0;
  double log_density = 0.0;
};

namespace detail {

/// Symmetrises and floors eigenvalues at floor_ratio * max eigenvalue. Returns
/// false if the matrix has no positive eigenvalue or is not finite.
inline bool repair_spd(const Matrix& m, Matrix* out, double floor_ratio = 1e-8) {
  if (!m.allFinite()) return false;
  const Matrix sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  if (eig.info() != Eigen::Success) return false;
  const double top = eig.eigenvalues().maxCoeff();
  if (!(top > 0.0) || !std::isfinite(top)) return false;
  const Vector vals = eig.eigenvalues().cwiseMax(floor_ratio * top);
  *out = eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose();
  return true;
}

inline Matrix invert_inverse_hessian(const Matrix& inv_h) {
  const Matrix sym = 0.5 * (inv_h + inv_h.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  Vector vals = eig.eigenvalues();
  const double top = vals.maxCoeff();
  if (eig.info() != Eigen::Success || !(top > 0.0)) return Matrix::Identity(sym.rows(), sym.cols());
  // Hessian eigenvalues are reciprocals; non-positive directions get the smallest
  // admissible curvature before flooring.
  for (Eigen::Index i = 0; i < vals.size(); ++i) vals(i) = vals(i) > 0.0 ? 1.0 / vals(i) : 0.0;
  const double hmax = vals.maxCoeff();
  vals = vals.cwiseMax(1e-8 * hmax);
  return eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace detail

/// Quasi-Newton minimisation of -log p* with backtracking (Armijo) line search.
inline BfgsResult bfgs_minimize(const ScoreModel& model, const Vector& x0,
                                const BfgsOptions& options = {}) {
  require_same_dim(x0.size(), model.dim(), "bfgs_minimize");
  require(x0.allFinite(), "bfgs_minimize: initial point must be finite");
  require(options.max_iter >= 1, "bfgs_minimize: max_iter must be >= 1");
  const Eigen::Index d = x0.size();

  Vector x = x0;
  double f = -model.log_density(x);
  require(std::isfinite(f), "bfgs_minimize: objective is not finite at the initial point");
  Vector g = -model.score(x);
  Matrix inv_h = Matrix::Identity(d, d);
  bool scaled = false;

  BfgsResult result;
  int iter = 0;
  for (; iter < options.max_iter; ++iter) {
    if (g.norm() <= options.grad_tol) {
      result.converged = true;
      break;
    }
    Vector dir = -inv_h * g;
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      inv_h.setIdentity();
      dir = -g;
      slope = -g.squaredNorm();
    }
    double step = 1.0;
    Vector x_new;
    double f_new = 0.0;
    bool accepted = false;
    for (int halvings = 0; halvings < 80; ++halvings) {
      x_new = x + step * dir;
      f_new = -model.log_density(x_new);
      if (std::isfinite(f_new) && f_new <= f + options.armijo * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      result.converged = g.norm() <= options.stall_grad_tol;
      break;
    }
    const Vector g_new = -model.score(x_new);
    const Vector s = x_new - x;
    const Vector y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm() && sy > 0.0) {
      if (!scaled) {
        inv_h = (sy / y.squaredNorm()) * Matrix::Identity(d, d);
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const Vector hy = inv_h * y;
      // H+ = (I - rho s y') H (I - rho y s') + rho s s'
      inv_h += rho * ((1.0 + rho * y.dot(hy)) * (s * s.transpose()) - hy * s.transpose() -
                      s * hy.transpose());
    }
    x = x_new;
    f = f_new;
    g = g_new;
  }
  if (iter == options.max_iter && !result.converged) result.converged = g.norm() <= options.grad_tol;
  result.x = x;
  result.iterations = iter;
  result.log_density = -f;
  result.hessian = detail::invert_inverse_hessian(inv_h);
  return result;
}

inline BfgsResult bfgs_minimize(const ScoreModel& model, const Vector& x0, int max_iter) {
  BfgsOptions options;
  options.max_iter = max_iter;
  return bfgs_minimize(model, x0, options);
}

// ---------------------------------------------------------------------------
// Mode sets

/// A local mode of p with the geometry of -log p there. A is the inverse Hessian.
struct Mode {
  Vector mu;
  Matrix hessian;
  Matrix A;
  Matrix sqrt_A;
  Matrix inv_sqrt_A;
  double log_det_A = 0.0;
  double log_density = 0.0;
  // Set when the Hessian could not be repaired and A = I was substituted.
  bool identity_fallback = false;
};

/// Builds a Mode, deriving A, its symmetric square roots and log-determinant from
/// the Hessian by eigendecomposition.
inline Mode make_mode(const Vector& mu, const Matrix& hessian, double log_density) {
  const Eigen::Index d = mu.size();
  require(hessian.rows() == d && hessian.cols() == d, "make_mode: Hessian shape mismatch");
  Mode m;
  m.mu = mu;
  m.log_density = log_density;
  Matrix repaired;
  if (!detail::repair_spd(hessian, &repaired)) {
    repaired = Matrix::Identity(d, d);
    m.identity_fallback = true;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(repaired);
  const Vector h = eig.eigenvalues();
  const Matrix& v = eig.eigenvectors();
  m.hessian = repaired;
  m.A = v * h.cwiseInverse().asDiagonal() * v.transpose();
  m.sqrt_A = v * h.cwiseSqrt().cwiseInverse().asDiagonal() * v.transpose();
  m.inv_sqrt_A = v * h.cwiseSqrt().asDiagonal() * v.transpose();
  m.log_det_A = -h.array().log().sum();
  return m;
}

/// Mode with identity geometry (A = I), as used when curvature is unknown.
inline Mode identity_mode(const Vector& mu, double log_density = 0.0) {
  const Eigen::Index d = mu.size();
  Mode m;
  m.mu = mu;
  m.hessian = m.A = m.sqrt_A = m.inv_sqrt_A = Matrix::Identity(d, d);
  m.log_density = log_density;
  return m;
}

struct ModeSet {
  std::vector<Mode> modes;

  int size() const { return static_cast<int>(modes.size()); }
  int dim() const { return modes.empty() ? 0 : static_cast<int>(modes.front().mu.size()); }
  const Mode& operator[](std::size_t i) const { return modes[i]; }
};

struct RawMode {
  Vector x;
  Matrix hessian;
};

/// Curvature-weighted squared distance used to decide whether two optima coincide:
/// 1/2 (v' H_a v + v' H_b v), v = a - b.
inline double merge_distance(const Vector& a, const Matrix& hess_a, const Vector& b,
                             const Matrix& hess_b) {
  const Vector v = a - b;
  return 0.5 * (v.dot(hess_a * v) + v.dot(hess_b * v));
}

namespace detail {

inline std::vector<Mode> merge_pass(const std::vector<Mode>& candidates, double beta) {
  std::vector<Mode> reps;
  for (const Mode& cand : candidates) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_idx = 0;
    for (std::size_t j = 0; j < reps.size(); ++j) {
      const double dist = merge_distance(reps[j].mu, reps[j].hessian, cand.mu, cand.hessian);
      if (dist < best) {
        best = dist;
        best_idx = j;
      }
    }
    if (best < beta) {
      if (reps[best_idx].log_density < cand.log_density) reps[best_idx] = cand;
    } else {
      reps.push_back(cand);
    }
  }
  return reps;
}

}  // namespace detail

/// Sequential merge of optimiser end points: a candidate joins the nearest
/// representative when their merge distance is below beta (the representative is
/// replaced if the candidate has higher density), otherwise it starts a new one.
/// Passes repeat until no two representatives are within beta of each other.
inline ModeSet merge_modes(const std::vector<RawMode>& raw, const ScoreModel& model, double beta) {
  require(beta > 0.0, "merge_modes: beta must be positive");
  require(!raw.empty(), "merge_modes: no candidates");
  std::vector<Mode> candidates;
  candidates.reserve(raw.size());
  for (const auto& r : raw) {
    require_same_dim(r.x.size(), model.dim(), "merge_modes candidate");
    candidates.push_back(make_mode(r.x, r.hessian, model.log_density(r.x)));
  }
  std::vector<Mode> reps = detail::merge_pass(candidates, beta);
  for (;;) {
    std::vector<Mode> again = detail::merge_pass(reps, beta);
    const bool stable = again.size() == reps.size();
    reps = std::move(again);
    if (stable) break;
  }
  return ModeSet{std::move(reps)};
}

// ---------------------------------------------------------------------------
// Initial points

/// Axis-aligned box [lower_i, upper_i].
struct Box {
  Vector lower;
  Vector upper;

  static Box cube(int dim, double lo, double hi) {
    return Box{Vector::Constant(dim, lo), Vector::Constant(dim, hi)};
  }

  int dim() const { return static_cast<int>(lower.size()); }

  void validate() const {
    require(lower.size() >= 1 && lower.size() == upper.size(), "bounds: dimension mismatch");
    require(lower.allFinite() && upper.allFinite(), "bounds must be finite");
    require((lower.array() < upper.array()).all(), "bounds: need lower < upper in every coordinate");
  }
};

inline Matrix init_uniform(const Box& bounds, int n_init, std::uint64_t seed) {
  bounds.validate();
  require(n_init >= 1, "init_uniform: n_init must be >= 1");
  Rng rng(derive_seed(seed, Stream::kModeInit, 0));
  Matrix out(n_init, bounds.dim());
  for (int i = 0; i < n_init; ++i) {
    for (int k = 0; k < bounds.dim(); ++k) {
      out(i, k) = bounds.lower(k) + (bounds.upper(k) - bounds.lower(k)) * uniform01(rng);
    }
  }
  return out;
}

/// ceil(n_init / 2) rows drawn from the training set (without replacement when it
/// is large enough), the remainder uniform in the box.
inline Matrix init_mixed(const Matrix& train, const Box& bounds, int n_init, std::uint64_t seed) {
  bounds.validate();
  require(train.rows() >= 1, "init_mixed: training set is empty");
  require(n_init >= 1, "init_mixed: n_init must be >= 1");
  require_same_dim(train.cols(), bounds.dim(), "init_mixed");
  const int from_train = (n_init + 1) / 2;
  const int from_box = n_init - from_train;
  Rng rng(derive_seed(seed, Stream::kModeInit, 1));
  Matrix out(n_init, bounds.dim());
  const auto n_train = static_cast<std::size_t>(train.rows());
  if (n_train >= static_cast<std::size_t>(from_train)) {
    std::vector<std::size_t> idx(n_train);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (int i = 0; i < from_train; ++i) {  // partial Fisher-Yates
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), n_train - 1);
      std::swap(idx[static_cast<std::size_t>(i)], idx[pick(rng)]);
      out.row(i) = train.row(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(i)]));
    }
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, n_train - 1);
    for (int i = 0; i < from_train; ++i) out.row(i) = train.row(static_cast<Eigen::Index>(pick(rng)));
  }
  if (from_box > 0) {
    out.bottomRows(from_box) = init_uniform(bounds, from_box, derive_seed(seed, Stream::kModeInit, 2));
  }
  return out;
}

// ---------------------------------------------------------------------------

struct ModeSearchOptions {
  double beta = 0.01;
  BfgsOptions bfgs;
};

/// Runs BFGS from every initial point (in parallel) and merges the converged end
/// points in input order. Falls back to all end points if none converged.
inline ModeSet find_modes(const ScoreModel& model, const Matrix& inits,
                          const ModeSearchOptions& options = {}) {
  require(inits.rows() >= 1, "find_modes: no initial points");
  require_same_dim(inits.cols(), model.dim(), "find_modes");
  std::vector<BfgsResult> runs(static_cast<std::size_t>(inits.rows()));
  parallel_for(runs.size(), [&](std::size_t i) {
    runs[i] = bfgs_minimize(model, inits.row(static_cast<Eigen::Index>(i)).transpose(), options.bfgs);
  });
  std::vector<RawMode> raw;
  for (const auto& r : runs) {
    if (r.converged) raw.push_back({r.x, r.hessian});
  }
  if (raw.empty()) {
    for (const auto& r : runs) raw.push_back({r.x, r.hessian});
  }
  return merge_modes(raw, model, options.beta);
}

}  // namespace stein_perturb
