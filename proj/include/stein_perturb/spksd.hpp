#pragma once

#include "stein_perturb/core.hpp"
#include "stein_perturb/kernels.hpp"
#include "stein_perturb/modes.hpp"
#include "stein_perturb/perturbation.hpp"
#include "stein_perturb/stein.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <utility>
#include <vector>

namespace stein_perturb {

/// Collection S of perturbation kernels; the first one is always the identity.
struct KernelCollection {
  std::vector<PerturbationKernel> kernels;
  // Jump scales behind kernels[1..], in the same order.
  std::vector<double> theta_grid;

  int size() const { return static_cast<int>(kernels.size()); }

  void validate() const {
    require(!kernels.empty(), "kernel collection is empty");
    require(kernels.front().is_identity(), "kernel collection must start with the identity kernel");
  }

  static KernelCollection identity_only() { return {{PerturbationKernel::identity()}, {}}; }

  /// {K_id} plus one jump kernel K_theta^steps per grid value. With fewer than two
  /// modes no jump is defined and the collection is {K_id}.
  static KernelCollection from_grid(std::shared_ptr<const ModeSet> modes, const ScoreModel& model,
                                    const std::vector<double>& theta_grid, int steps,
                                    AcceptRule rule = AcceptRule::kMetropolisHastings) {
    KernelCollection c = identity_only();
    if (!modes || modes->size() < 2) return c;
    for (double theta : theta_grid) {
      c.kernels.push_back(PerturbationKernel::jump(JumpKernel(modes, theta, model, rule), steps));
      c.theta_grid.push_back(theta);
    }
    return c;
  }
};

/// Per-kernel perturbed copies of one base sample; samples[0] is the base sample.
struct PerturbedEnsemble {
  std::vector<Matrix> samples;

  int num_kernels() const { return static_cast<int>(samples.size()); }
  Eigen::Index rows() const { return samples.empty() ? 0 : samples.front().rows(); }
};

/// Kernel s perturbs with the stream family derived from (seed, s).
inline PerturbedEnsemble perturb_ensemble(const KernelCollection& collection, const Matrix& samples,
                                          std::uint64_t seed) {
  collection.validate();
  PerturbedEnsemble e;
  e.samples.reserve(collection.kernels.size());
  for (std::size_t s = 0; s < collection.kernels.size(); ++s) {
    e.samples.push_back(perturb_sample(collection.kernels[s], samples, derive_seed(seed, Stream::kPerturb, s)));
  }
  return e;
}

/// sum_s u_P(x_i^s, x_j^s).
inline double tilde_u(const PerturbedEnsemble& ensemble, const ScoreModel& model, const Kernel& kernel,
                      Eigen::Index i, Eigen::Index j) {
  require(i >= 0 && j >= 0 && i < ensemble.rows() && j < ensemble.rows(), "tilde_u: index out of range");
  double total = 0.0;
  for (const auto& x : ensemble.samples) {
    total += stein_kernel_eval(model, kernel, x.row(i).transpose(), x.row(j).transpose());
  }
  return total;
}

/// Gram matrix of tilde_u: the sum of per-kernel Stein Gram matrices.
inline SteinGram spksd_gram(const PerturbedEnsemble& ensemble, const ScoreModel& model, const Kernel& kernel) {
  require(ensemble.num_kernels() >= 1, "spksd_gram: empty ensemble");
  SteinGram total = stein_gram(ensemble.samples.front(), model, kernel);
  for (std::size_t s = 1; s < ensemble.samples.size(); ++s) {
    require(ensemble.samples[s].rows() == ensemble.rows(), "spksd_gram: row counts differ across kernels");
    total.values += stein_gram(ensemble.samples[s], model, kernel).values;
  }
  return total;
}

inline double spksd_stat(const PerturbedEnsemble& ensemble, const ScoreModel& model, const Kernel& kernel) {
  require(ensemble.rows() >= 2, "spksd_stat needs at least two samples");
  return offdiag_mean(spksd_gram(ensemble, model, kernel).values);
}

/// spKSD goodness-of-fit test: perturb once with every kernel of the collection,
/// then calibrate the summed U-statistic with the multinomial bootstrap.
inline TestResult spksd_test(const Matrix& samples, const ScoreModel& model, const Kernel& kernel,
                             const KernelCollection& collection, double alpha, int num_bootstrap,
                             std::uint64_t seed) {
  collection.validate();
  require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
  require(samples.rows() >= 2, "spksd_test needs at least two samples");
  const PerturbedEnsemble ensemble = perturb_ensemble(collection, samples, seed);
  const SteinGram gram = spksd_gram(ensemble, model, kernel);
  TestResult r = calibrate(gram, ksd_ustat(gram), alpha, num_bootstrap, seed);
  r.extras["num_kernels"] = collection.size();
  return r;
}

// ---------------------------------------------------------------------------
// Power proxy and theta selection

/// (4 / n^3) sum_i (sum_j H_ij)^2 - (4 / n^4) (sum_ij H_ij)^2.
inline double sigma_u2(const Matrix& h) {
  const double n = static_cast<double>(h.rows());
  require(h.rows() >= 1 && h.rows() == h.cols(), "sigma_u2: need a square matrix");
  const Vector rows = h.rowwise().sum();
  const double total = rows.sum();
  return 4.0 / (n * n * n) * rows.squaredNorm() - 4.0 / (n * n * n * n) * total * total;
}

inline constexpr double kSigmaFloor = 1e-12;

/// Ratio of the two-kernel spKSD statistic to its estimated asymptotic standard
/// deviation, for a precomputed identity Gram matrix.
inline double power_proxy(const SteinGram& identity_gram, const Matrix& samples, const ScoreModel& model,
                          const Kernel& kernel, const JumpKernel& jump, int steps, std::uint64_t seed) {
  require(samples.rows() >= 2, "power_proxy needs at least two samples");
  require(identity_gram.size() == samples.rows(), "power_proxy: Gram size mismatch");
  const Matrix moved = perturb_sample(PerturbationKernel::jump(jump, steps), samples, seed);
  const Matrix h = identity_gram.values + stein_gram(moved, model, kernel).values;
  const double sigma = std::max(std::sqrt(std::max(sigma_u2(h), 0.0)), kSigmaFloor);
  const double n = static_cast<double>(h.rows());
  return (h.sum() - h.trace()) / (n * (n - 1.0)) / sigma;
}

inline double power_proxy(const Matrix& samples, const ScoreModel& model, const Kernel& kernel,
                          const JumpKernel& jump, int steps, std::uint64_t seed) {
  require(samples.rows() >= 2, "power_proxy needs at least two samples");
  return power_proxy(stein_gram(samples, model, kernel), samples, model, kernel, jump, steps, seed);
}

struct OspksdOptions {
  double split_frac = 0.5;
  // Initial points for mode estimation on the training split.
  Box bounds;
  int n_init = 20;
  ModeSearchOptions mode_search;
  AcceptRule rule = AcceptRule::kMetropolisHastings;
};

struct SampleSplit {
  std::vector<Eigen::Index> train;
  std::vector<Eigen::Index> test;
};

/// Seeded shuffle into a train part of floor(split_frac n) rows and a held-out
/// test part. Each part keeps the original row order.
inline SampleSplit split_sample(Eigen::Index n, double split_frac, std::uint64_t seed) {
  require(split_frac > 0.0 && split_frac < 1.0, "split fraction must lie in (0, 1)");
  const auto n_train = static_cast<Eigen::Index>(std::floor(split_frac * static_cast<double>(n)));
  require(n_train >= 2 && n - n_train >= 2, "data split leaves fewer than two rows in a half");
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  Rng rng(derive_seed(seed, Stream::kSplit));
  std::shuffle(perm.begin(), perm.end(), rng);
  SampleSplit s;
  s.train.assign(perm.begin(), perm.begin() + n_train);
  s.test.assign(perm.begin() + n_train, perm.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

inline Matrix select_rows(const Matrix& m, const std::vector<Eigen::Index>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

/// Mode estimate used by ospKSD: mixed initialisation from the training split.
inline ModeSet estimate_modes_from_train(const Matrix& train, const ScoreModel& model,
                                         const OspksdOptions& options, std::uint64_t seed) {
  return find_modes(model, init_mixed(train, options.bounds, options.n_init, seed), options.mode_search);
}

struct ThetaSelection {
  double theta = std::numeric_limits<double>::quiet_NaN();
  double proxy = -std::numeric_limits<double>::infinity();
  std::vector<double> proxies;
};

/// Maximises the power proxy over the grid; ties go to the smallest theta.
inline ThetaSelection select_theta(const Matrix& train, const ScoreModel& model, const Kernel& kernel,
                                   std::shared_ptr<const ModeSet> modes, const std::vector<double>& theta_grid,
                                   int steps, AcceptRule rule, std::uint64_t seed) {
  require(!theta_grid.empty(), "theta grid is empty");
  ThetaSelection sel;
  const SteinGram base = stein_gram(train, model, kernel);
  sel.proxies.resize(theta_grid.size());
  for (std::size_t s = 0; s < theta_grid.size(); ++s) {
    const JumpKernel jump(modes, theta_grid[s], model, rule);
    sel.proxies[s] = power_proxy(base, train, model, kernel, jump, steps, derive_seed(seed, Stream::kProxy, s));
  }
  for (std::size_t s = 0; s < theta_grid.size(); ++s) {
    const double v = sel.proxies[s];
    if (v > sel.proxy || (v == sel.proxy && theta_grid[s] < sel.theta)) {
      sel.proxy = v;
      sel.theta = theta_grid[s];
    }
  }
  return sel;
}

/// ospKSD: estimate modes and tune theta on a training split, then run the
/// two-kernel spKSD test {K_id, K_theta*^T} on the held-out split with `seed`.
inline TestResult ospksd_test(const Matrix& samples, const ScoreModel& model, const Kernel& kernel,
                              const std::vector<double>& theta_grid, int steps, double alpha,
                              int num_bootstrap, std::uint64_t seed, const OspksdOptions& options) {
  require(!theta_grid.empty(), "theta grid is empty");
  require(steps >= 0, "perturbation steps must be nonnegative");
  const SampleSplit split = split_sample(samples.rows(), options.split_frac, seed);
  const Matrix train = select_rows(samples, split.train);
  const Matrix test = select_rows(samples, split.test);

  auto modes = std::make_shared<const ModeSet>(
      estimate_modes_from_train(train, model, options, derive_seed(seed, Stream::kModeInit)));
  KernelCollection collection = KernelCollection::identity_only();
  ThetaSelection sel;
  if (modes->size() >= 2) {
    sel = select_theta(train, model, kernel, modes, theta_grid, steps, options.rule, seed);
    collection = KernelCollection::from_grid(modes, model, {sel.theta}, steps, options.rule);
  }
  TestResult r = spksd_test(test, model, kernel, collection, alpha, num_bootstrap, seed);
  r.extras["theta_selected"] = sel.theta;
  r.extras["proxy_max"] = sel.proxy;
  r.extras["num_modes"] = modes->size();
  r.extras["n_train"] = static_cast<double>(train.rows());
  r.extras["n_test"] = static_cast<double>(test.rows());
  return r;
}

}  // namespace stein_perturb
