#pragma once

#include "stein_perturb/core.hpp"
#include "stein_perturb/modes.hpp"
#include "stein_perturb/score_model.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

namespace stein_perturb {

enum class AcceptRule { kMetropolisHastings, kBarker };

/// Ordered pair of distinct mode indices (from, to).
struct ModePair {
  int from;
  int to;
};

struct Proposal {
  Vector x;
  double log_jacobian;
};

/// P-invariant inter-modal jump kernel.
///
/// A move picks an ordered pair (u1, u2) of distinct modes uniformly and maps
///   x' = A_{u2}^{1/2} A_{u1}^{-1/2} (x - theta mu_{u1}) + theta mu_{u2},
/// accepted with a Jacobian-corrected Metropolis-Hastings or Barker probability.
/// The kernel is deliberately not irreducible.
class JumpKernel {
 public:
  JumpKernel(std::shared_ptr<const ModeSet> modes, double theta, ScoreModel model,
             AcceptRule rule = AcceptRule::kMetropolisHastings)
      : modes_(std::move(modes)), theta_(theta), model_(std::move(model)), rule_(rule) {
    require(modes_ != nullptr && modes_->size() >= 2, "jump kernel needs at least two modes");
    require(theta > 0.0 && std::isfinite(theta), "jump scale theta must be positive");
    require_same_dim(modes_->dim(), model_.dim(), "jump kernel modes vs model");
    // Each map is affine, x' = T x + c; cache T and c unless that is too large.
    const double d = static_cast<double>(modes_->dim());
    if (static_cast<double>(num_pairs()) * d * d <= kMaxCachedEntries) {
      maps_.reserve(static_cast<std::size_t>(num_pairs()));
      offsets_.reserve(static_cast<std::size_t>(num_pairs()));
      for (int idx = 0; idx < num_pairs(); ++idx) {
        const ModePair u = pair_at(idx);
        const Mode& a = (*modes_)[static_cast<std::size_t>(u.from)];
        const Mode& b = (*modes_)[static_cast<std::size_t>(u.to)];
        Matrix t = b.sqrt_A * a.inv_sqrt_A;
        offsets_.push_back(theta_ * b.mu - t * (theta_ * a.mu));
        maps_.push_back(std::move(t));
      }
    }
  }

  const ModeSet& modes() const { return *modes_; }
  std::shared_ptr<const ModeSet> shared_modes() const { return modes_; }
  double theta() const { return theta_; }
  AcceptRule rule() const { return rule_; }
  const ScoreModel& model() const { return model_; }

  int num_pairs() const { return modes_->size() * (modes_->size() - 1); }

  /// Index in [0, M(M-1)) to ordered pair; g(u) is uniform over this set.
  ModePair pair_at(int index) const {
    const int m = modes_->size();
    require(index >= 0 && index < num_pairs(), "jump kernel: pair index out of range");
    const int from = index / (m - 1);
    const int k = index % (m - 1);
    return {from, k < from ? k : k + 1};
  }

  int pair_index(ModePair u) const { return u.from * (modes_->size() - 1) + (u.to < u.from ? u.to : u.to - 1); }

  Proposal propose(const Vector& x, ModePair u) const {
    const int m = modes_->size();
    require(u.from >= 0 && u.from < m && u.to >= 0 && u.to < m && u.from != u.to,
            "jump kernel: invalid mode pair");
    require_same_dim(x.size(), model_.dim(), "jump kernel propose");
    const Mode& a = (*modes_)[static_cast<std::size_t>(u.from)];
    const Mode& b = (*modes_)[static_cast<std::size_t>(u.to)];
    Proposal p;
    if (!maps_.empty()) {
      const auto k = static_cast<std::size_t>(pair_index(u));
      p.x = maps_[k] * x + offsets_[k];
    } else {
      p.x = b.sqrt_A * (a.inv_sqrt_A * (x - theta_ * a.mu)) + theta_ * b.mu;
    }
    p.log_jacobian = 0.5 * (b.log_det_A - a.log_det_A);
    return p;
  }

  /// Acceptance probability of moving x -> x_new given the log |Jacobian| of the
  /// map. Computed in log space; non-finite densities give 0.
  double accept_prob(const Vector& x, const Vector& x_new, double log_jacobian) const {
    return accept_from_log_ratio(model_.log_density(x_new) - model_.log_density(x) + log_jacobian);
  }

  double accept_from_log_ratio(double log_ratio) const {
    if (std::isnan(log_ratio) || log_ratio == -std::numeric_limits<double>::infinity()) return 0.0;
    if (rule_ == AcceptRule::kMetropolisHastings) {
      return log_ratio >= 0.0 ? 1.0 : std::exp(log_ratio);
    }
    // t / (1 + t) = 1 / (1 + exp(-log t))
    if (log_ratio >= 0.0) return 1.0 / (1.0 + std::exp(-log_ratio));
    const double e = std::exp(log_ratio);
    return e / (1.0 + e);
  }

  /// One transition from x.
  Vector step(const Vector& x, Rng& rng) const {
    Vector out = x;
    Vector scratch(x.size());
    double log_px = model_.log_density(x);
    step_in_place(out, log_px, rng, scratch);
    return out;
  }

  /// One transition updating x and its cached log density in place. `scratch`
  /// holds the proposal and must have the dimension of x.
  void step_in_place(Vector& x, double& log_px, Rng& rng, Vector& scratch) const {
    std::uniform_int_distribution<int> pick(0, num_pairs() - 1);
    const int index = pick(rng);
    const ModePair u = pair_at(index);
    const double coin = uniform01(rng);
    double log_jacobian;
    if (!maps_.empty()) {
      const auto k = static_cast<std::size_t>(index);
      scratch.noalias() = maps_[k] * x;
      scratch += offsets_[k];
      log_jacobian = 0.5 * ((*modes_)[static_cast<std::size_t>(u.to)].log_det_A -
                            (*modes_)[static_cast<std::size_t>(u.from)].log_det_A);
    } else {
      Proposal prop = propose(x, u);
      scratch = prop.x;
      log_jacobian = prop.log_jacobian;
    }
    if (!scratch.allFinite()) return;
    const double log_new = model_.log_density(scratch);
    if (coin < accept_from_log_ratio(log_new - log_px + log_jacobian)) {
      x.swap(scratch);
      log_px = log_new;
    }
  }

 private:
  static constexpr double kMaxCachedEntries = 1 << 22;

  std::shared_ptr<const ModeSet> modes_;
  double theta_;
  ScoreModel model_;
  AcceptRule rule_;
  std::vector<Matrix> maps_;
  std::vector<Vector> offsets_;
};

/// A transition kernel applied T times: the identity, or a jump kernel.
class PerturbationKernel {
 public:
  static PerturbationKernel identity() { return PerturbationKernel(std::nullopt, 0); }

  static PerturbationKernel jump(JumpKernel kernel, int steps) {
    require(steps >= 0, "perturbation steps must be nonnegative");
    return PerturbationKernel(std::move(kernel), steps);
  }

  bool is_identity() const { return !jump_.has_value(); }
  int steps() const { return steps_; }
  const JumpKernel& jump_kernel() const {
    require(jump_.has_value(), "identity kernel has no jump kernel");
    return *jump_;
  }

  Vector step(const Vector& x, Rng& rng) const {
    if (is_identity()) return x;
    return jump_->step(x, rng);
  }

 private:
  PerturbationKernel(std::optional<JumpKernel> jump, int steps) : jump_(std::move(jump)), steps_(steps) {}

  std::optional<JumpKernel> jump_;
  int steps_;
};

/// Evolves every row T steps. Row i uses its own stream derived from (seed, i),
/// so output is independent of scheduling and thread count.
inline Matrix perturb_sample(const PerturbationKernel& kernel, const Matrix& samples, std::uint64_t seed) {
  if (kernel.is_identity() || kernel.steps() == 0) return samples;
  require_same_dim(samples.cols(), kernel.jump_kernel().model().dim(), "perturb_sample");
  Matrix out(samples.rows(), samples.cols());
  const JumpKernel& jump = kernel.jump_kernel();
  parallel_for(static_cast<std::size_t>(samples.rows()), [&](std::size_t row) {
    const auto i = static_cast<Eigen::Index>(row);
    Rng rng(derive_seed(seed, Stream::kPerturb, row));
    Vector x = samples.row(i).transpose();
    Vector scratch(x.size());
    double log_px = jump.model().log_density(x);
    for (int t = 0; t < kernel.steps(); ++t) jump.step_in_place(x, log_px, rng, scratch);
    out.row(i) = x.transpose();
  });
  return out;
}

/// Limiting density of the two-mode, identity-geometry jump chain started from q:
///   q_inf(x) = p(x) sum_s q(x + s nu) / sum_k p(x + k nu),  s, k in [-K, K].
/// p enters only through a ratio, so the unnormalised model suffices.
inline double limiting_density_1d(const std::function<double(double)>& q_density,
                                  const ScoreModel& model, double nu, double x, int truncation) {
  require(truncation >= 1, "limiting_density_1d: truncation must be >= 1");
  require(model.dim() == 1, "limiting_density_1d: model must be one-dimensional");
  Vector point(1);
  std::vector<double> logs;
  logs.reserve(static_cast<std::size_t>(2 * truncation + 1));
  double numerator = 0.0;
  for (int k = -truncation; k <= truncation; ++k) {
    point(0) = x + k * nu;
    logs.push_back(model.log_density(point));
    numerator += q_density(x + k * nu);
  }
  const double denom = log_sum_exp(logs);
  if (!std::isfinite(denom)) {
    throw InputError("limiting_density_1d: target density underflows on the whole lattice; "
                     "increase the truncation or evaluate closer to the modes");
  }
  point(0) = x;
  return std::exp(model.log_density(point) - denom) * numerator;
}

}  // namespace stein_perturb
