#pragma once

#include "stein_perturb/core.hpp"
#include "stein_perturb/models.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace stein_perturb {

namespace detail {

inline int draw_categorical(const Vector& weights, Rng& rng) {
  const double u = uniform01(rng) * weights.sum();
  double acc = 0.0;
  int last_positive = 0;
  for (Eigen::Index m = 0; m < weights.size(); ++m) {
    if (weights(m) <= 0.0) continue;
    last_positive = static_cast<int>(m);
    acc += weights(m);
    if (u < acc) return static_cast<int>(m);
  }
  return last_positive;
}

inline Vector standard_normal_vector(Eigen::Index d, Rng& rng) {
  Vector z(d);
  for (Eigen::Index k = 0; k < d; ++k) z(k) = standard_normal(rng);
  return z;
}

}  // namespace detail

/// Row i is drawn from its own substream of `seed`.
inline Matrix sample_gaussian_mixture(const GaussianMixtureParams& params, Eigen::Index n, std::uint64_t seed) {
  params.validate();
  require(n >= 1, "sample size must be >= 1");
  const int d = params.dim();
  std::vector<Matrix> factors;
  for (const auto& cov : params.covariances) factors.push_back(Eigen::LLT<Matrix>(cov).matrixL());
  Matrix out(n, d);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t row) {
    Rng rng(derive_seed(seed, Stream::kData, row));
    const int m = detail::draw_categorical(params.weights, rng);
    Vector z = detail::standard_normal_vector(d, rng);
    if (!factors.empty()) z = factors[static_cast<std::size_t>(m)] * z;
    out.row(static_cast<Eigen::Index>(row)) = (params.means[static_cast<std::size_t>(m)] + z).transpose();
  });
  return out;
}

/// t draws as centre + sqrt(shape) z / sqrt(chi2_nu / nu); banana draws apply
/// the inverse shear (z1, z2 - b z1^2 + 100 b, z3, ...).
inline Matrix sample_t_banana(const TBananaMixtureParams& params, Eigen::Index n, std::uint64_t seed) {
  params.validate();
  require(n >= 1, "sample size must be >= 1");
  const int d = params.dim();
  const Vector t_sd = Vector::Constant(d, std::sqrt(params.resolved_t_scale()));
  const Vector banana_sd = params.resolved_banana_shape().cwiseSqrt();
  Matrix out(n, d);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t row) {
    Rng rng(derive_seed(seed, Stream::kData, row));
    const int m = detail::draw_categorical(params.weights, rng);
    const bool banana = m >= params.num_t;
    const Vector z = detail::standard_normal_vector(d, rng);
    const double chi2 = std::chi_squared_distribution<double>(params.dof)(rng);
    const double scale = 1.0 / std::sqrt(chi2 / params.dof);
    Vector x = params.centers[static_cast<std::size_t>(m)] + scale * (banana ? banana_sd : t_sd).cwiseProduct(z);
    if (banana) x(1) += -params.banana_b * x(0) * x(0) + 100.0 * params.banana_b;
    out.row(static_cast<Eigen::Index>(row)) = x.transpose();
  });
  return out;
}

struct RbmDraws {
  Matrix x;  // n x d
  Matrix h;  // n x d_h, entries in {-1, 1}
};

namespace detail {

// h_j | x: P(h_j = 1) = sigmoid((B'x)_j + 2 c_j).
inline void gibbs_hidden(const RBMParams& p, const Vector& x, Vector& h, Rng& rng) {
  const Vector a = p.B.transpose() * x + 2.0 * p.c;
  for (Eigen::Index j = 0; j < a.size(); ++j) {
    const double prob = 1.0 / (1.0 + std::exp(-a(j)));
    h(j) = uniform01(rng) < prob ? 1.0 : -1.0;
  }
}

// x | h ~ N(B h / 2 + b, I).
inline void gibbs_visible(const RBMParams& p, const Vector& h, Vector& x, Rng& rng) {
  x = 0.5 * (p.B * h) + p.b + standard_normal_vector(p.dim(), rng);
}

}  // namespace detail

/// Single Gibbs chain started at x = b: `burnin` sweeps, then one draw every
/// `thin` sweeps. A sweep updates h then x.
inline RbmDraws sample_rbm_gibbs_with_latent(const RBMParams& params, Eigen::Index n, int burnin, int thin,
                                             std::uint64_t seed) {
  params.validate();
  require(n >= 1, "sample size must be >= 1");
  require(burnin >= 0, "burn-in must be nonnegative");
  require(thin >= 1, "thinning must be >= 1");
  Rng rng(derive_seed(seed, Stream::kData));
  Vector x = params.b;
  Vector h(params.hidden_dim());
  RbmDraws out{Matrix(n, params.dim()), Matrix(n, params.hidden_dim())};
  auto sweep = [&] {
    detail::gibbs_hidden(params, x, h, rng);
    detail::gibbs_visible(params, h, x, rng);
  };
  for (int t = 0; t < burnin; ++t) sweep();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int t = 0; t < thin; ++t) sweep();
    out.x.row(i) = x.transpose();
    out.h.row(i) = h.transpose();
  }
  return out;
}

inline Matrix sample_rbm_gibbs(const RBMParams& params, Eigen::Index n, int burnin, int thin, std::uint64_t seed) {
  return sample_rbm_gibbs_with_latent(params, n, burnin, thin, seed).x;
}

/// n independent chains, one per row, each run for `sweeps` sweeps (>= 1) from
/// its own substream; the final state of chain i is row i.
inline Matrix sample_rbm_independent_chains(const RBMParams& params, Eigen::Index n, int sweeps,
                                           std::uint64_t seed) {
  params.validate();
  require(n >= 1, "sample size must be >= 1");
  require(sweeps >= 1, "chain length must be >= 1");
  Matrix out(n, params.dim());
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t row) {
    Rng rng(derive_seed(seed, Stream::kData, row));
    Vector x = params.b;
    Vector h(params.hidden_dim());
    for (int t = 0; t < sweeps; ++t) {
      detail::gibbs_hidden(params, x, h, rng);
      detail::gibbs_visible(params, h, x, rng);
    }
    out.row(static_cast<Eigen::Index>(row)) = x.transpose();
  });
  return out;
}

/// Returns lambda if B = lambda E (E the top d x d_h block of the identity), else throws.
inline double rbm_lambda(const RBMParams& params) {
  params.validate();
  const double lambda = params.B(0, 0);
  const Matrix diff = params.B - lambda * RBMParams::selector(params.dim(), params.hidden_dim());
  require(diff.cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, std::abs(lambda)),
          "rbm: B is not of the form lambda * E");
  return lambda;
}

/// Samples GB-RBM(lambda E, b, c) by Gibbs sampling at lambda' and shifting
/// y = x - (lambda' - lambda) E h / 2. The chain runs with hidden bias
/// c + (lambda - lambda') E'b / 2, which keeps the latent marginal exact when b != 0.
inline Matrix sample_rbm_shifted(const RBMParams& params, Eigen::Index n, int burnin, int thin, std::uint64_t seed,
                                 double lambda_prime = 0.0) {
  const double lambda = rbm_lambda(params);
  const Matrix e = RBMParams::selector(params.dim(), params.hidden_dim());
  RBMParams chain = params;
  chain.B = lambda_prime * e;
  chain.c = params.c + 0.5 * (lambda - lambda_prime) * (e.transpose() * params.b);
  const RbmDraws draws = sample_rbm_gibbs_with_latent(chain, n, burnin, thin, seed);
  return draws.x - 0.5 * (lambda_prime - lambda) * (draws.h * e.transpose());
}

}  // namespace stein_perturb
