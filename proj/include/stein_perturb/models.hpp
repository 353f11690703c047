#pragma once

#include "stein_perturb/core.hpp"
#include "stein_perturb/score_model.hpp"

#include <array>
#include <cmath>
#include <memory>
#include <numbers>
#include <vector>

namespace stein_perturb {

// ---------------------------------------------------------------------------
// Gaussian mixtures

struct GaussianMixtureParams {
  Vector weights;
  std::vector<Vector> means;
  // Empty means identity covariance for every component.
  std::vector<Matrix> covariances;

  int dim() const { return means.empty() ? 0 : static_cast<int>(means.front().size()); }
  int num_components() const { return static_cast<int>(means.size()); }

  /// Two components on the first axis: pi N(0, I) + (1 - pi) N(delta e_1, I).
  static GaussianMixtureParams bimodal(int dim, double pi, double delta) {
    GaussianMixtureParams p;
    p.weights = Vector(2);
    p.weights << pi, 1.0 - pi;
    p.means = {Vector::Zero(dim), Vector::Zero(dim)};
    p.means[1](0) = delta;
    return p;
  }

  void validate() const {
    require(!means.empty(), "gaussian mixture needs at least one component");
    require(weights.size() == num_components(), "gaussian mixture: weights/means length mismatch");
    require(dim() >= 1, "gaussian mixture: empty mean vector");
    for (const auto& m : means) require_same_dim(m.size(), dim(), "gaussian mixture mean");
    require((weights.array() >= 0.0).all() && weights.allFinite(),
            "gaussian mixture: weights must be nonnegative");
    require(weights.sum() > 0.0, "gaussian mixture: weights must have positive sum");
    if (!covariances.empty()) {
      require(static_cast<int>(covariances.size()) == num_components(),
              "gaussian mixture: covariances/means length mismatch");
      for (const auto& c : covariances) {
        require(c.rows() == dim() && c.cols() == dim(), "gaussian mixture: covariance shape");
        require((c - c.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * (1.0 + c.cwiseAbs().maxCoeff()),
                "gaussian mixture: covariance must be symmetric");
        Eigen::LLT<Matrix> llt(c);
        require(llt.info() == Eigen::Success, "gaussian mixture: covariance is not positive definite");
      }
    }
  }
};

namespace detail {

struct GaussianComponent {
  Vector mean;
  double log_weight;
  double log_norm;  // -1/2 log|2 pi Sigma|
  bool identity;
  Eigen::LLT<Matrix> llt;

  // Returns the log of the weighted component density and writes the component score.
  double eval(const Vector& x, Vector* score) const {
    if (identity && !score) return log_weight + log_norm - 0.5 * (x - mean).squaredNorm();
    const Vector diff = x - mean;
    double quad;
    if (identity) {
      quad = diff.squaredNorm();
      if (score) *score = -diff;
    } else {
      const Vector solved = llt.solve(diff);
      quad = diff.dot(solved);
      if (score) *score = -solved;
    }
    return log_weight + log_norm - 0.5 * quad;
  }
};

struct GaussianMixtureImpl {
  std::vector<GaussianComponent> components;

  explicit GaussianMixtureImpl(const GaussianMixtureParams& p) {
    const int d = p.dim();
    for (int m = 0; m < p.num_components(); ++m) {
      if (p.weights(m) <= 0.0) continue;
      GaussianComponent c;
      c.mean = p.means[static_cast<std::size_t>(m)];
      c.log_weight = std::log(p.weights(m));
      c.identity = p.covariances.empty();
      double log_det = 0.0;
      if (!c.identity) {
        c.llt.compute(p.covariances[static_cast<std::size_t>(m)]);
        log_det = 2.0 * c.llt.matrixLLT().diagonal().array().log().sum();
      }
      c.log_norm = -0.5 * (d * std::log(2.0 * std::numbers::pi) + log_det);
      components.push_back(std::move(c));
    }
  }

  double log_density(const Vector& x) const {
    if (components.size() <= 8) {
      std::array<double, 8> terms;
      for (std::size_t m = 0; m < components.size(); ++m) terms[m] = components[m].eval(x, nullptr);
      return log_sum_exp(terms.data(), components.size());
    }
    std::vector<double> terms(components.size());
    for (std::size_t m = 0; m < components.size(); ++m) terms[m] = components[m].eval(x, nullptr);
    return log_sum_exp(terms);
  }

  Vector score(const Vector& x) const {
    const std::size_t k = components.size();
    std::vector<double> terms(k);
    std::vector<Vector> scores(k);
    for (std::size_t m = 0; m < k; ++m) terms[m] = components[m].eval(x, &scores[m]);
    const double lse = log_sum_exp(terms);
    Vector out = Vector::Zero(x.size());
    for (std::size_t m = 0; m < k; ++m) out += std::exp(terms[m] - lse) * scores[m];
    return out;
  }
};

}  // namespace detail

/// Mixture of Gaussians. Weights need not be normalised: the log-density is only
/// defined up to an additive constant anyway.
inline ScoreModel gaussian_mixture_model(const GaussianMixtureParams& params) {
  params.validate();
  auto impl = std::make_shared<const detail::GaussianMixtureImpl>(params);
  return ScoreModel(
      params.dim(), [impl](const Vector& x) { return impl->log_density(x); },
      [impl](const Vector& x) { return impl->score(x); }, "gaussian_mixture");
}

// ---------------------------------------------------------------------------
// Mixture of multivariate t and banana-shaped t distributions

struct TBananaMixtureParams {
  int num_t = 10;
  int num_banana = 10;
  // num_t + num_banana centres; t components first.
  std::vector<Vector> centers;
  Vector weights;
  double dof = 7.0;
  // Shape of the t components is t_scale * I; a non-positive value selects 0.1 sqrt(d).
  double t_scale = -1.0;
  double banana_b = 0.003;
  // Diagonal of the banana shape matrix; empty selects diag(100, 1, ..., 1).
  Vector banana_shape;

  int dim() const { return centers.empty() ? 0 : static_cast<int>(centers.front().size()); }
  int num_components() const { return num_t + num_banana; }

  double resolved_t_scale() const { return t_scale > 0.0 ? t_scale : 0.1 * std::sqrt(dim()); }

  Vector resolved_banana_shape() const {
    if (banana_shape.size() > 0) return banana_shape;
    Vector s = Vector::Ones(dim());
    s(0) = 100.0;
    return s;
  }

  void validate() const {
    require(num_t >= 0 && num_banana >= 0 && num_components() >= 1,
            "t/banana mixture needs at least one component");
    require(static_cast<int>(centers.size()) == num_components(),
            "t/banana mixture: need one centre per component");
    require(dim() >= 1, "t/banana mixture: empty centre");
    for (const auto& c : centers) require_same_dim(c.size(), dim(), "t/banana centre");
    require(weights.size() == num_components(), "t/banana mixture: weights length mismatch");
    require((weights.array() >= 0.0).all() && weights.sum() > 0.0,
            "t/banana mixture: weights must be nonnegative with positive sum");
    require(dof > 2.0, "t/banana mixture: degrees of freedom must exceed 2");
    require(num_banana == 0 || dim() >= 2, "banana components need dimension >= 2");
    if (banana_shape.size() > 0) {
      require_same_dim(banana_shape.size(), dim(), "banana shape");
      require((banana_shape.array() > 0.0).all(), "banana shape must be positive definite");
    }
  }
};

namespace detail {

struct TComponent {
  Vector center;
  Vector shape_diag;
  double log_weight;
  double log_norm;
  bool banana;
};

struct TBananaImpl {
  std::vector<TComponent> components;
  double dof;
  double b;

  explicit TBananaImpl(const TBananaMixtureParams& p) : dof(p.dof), b(p.banana_b) {
    const int d = p.dim();
    const double common = std::lgamma(0.5 * (dof + d)) - std::lgamma(0.5 * dof) -
                          0.5 * d * std::log(dof * std::numbers::pi);
    const Vector t_shape = Vector::Constant(d, p.resolved_t_scale());
    const Vector banana_shape = p.resolved_banana_shape();
    for (int m = 0; m < p.num_components(); ++m) {
      if (p.weights(m) <= 0.0) continue;
      TComponent c;
      c.banana = m >= p.num_t;
      c.center = p.centers[static_cast<std::size_t>(m)];
      c.shape_diag = c.banana ? banana_shape : t_shape;
      c.log_weight = std::log(p.weights(m));
      c.log_norm = common - 0.5 * c.shape_diag.array().log().sum();
      components.push_back(std::move(c));
    }
  }

  // Shear phi_b(x) = (x1, x2 + b x1^2 - 100 b, x3, ...).
  Vector shear(const Vector& x) const {
    Vector z = x;
    z(1) += b * x(0) * x(0) - 100.0 * b;
    return z;
  }

  double eval(const TComponent& c, const Vector& x, Vector* score) const {
    const Vector z = c.banana ? shear(x) : x;
    const Vector diff = z - c.center;
    const Vector scaled = diff.cwiseQuotient(c.shape_diag);
    const double quad = diff.dot(scaled);
    const double d = static_cast<double>(x.size());
    if (score) {
      Vector g = -(dof + d) / (dof + quad) * scaled;
      // Chain rule through the shear; its Jacobian has unit determinant.
      if (c.banana) g(0) += 2.0 * b * x(0) * g(1);
      *score = std::move(g);
    }
    return c.log_weight + c.log_norm - 0.5 * (dof + d) * std::log1p(quad / dof);
  }

  double log_density(const Vector& x) const {
    std::vector<double> terms(components.size());
    for (std::size_t m = 0; m < components.size(); ++m) terms[m] = eval(components[m], x, nullptr);
    return log_sum_exp(terms);
  }

  Vector score(const Vector& x) const {
    const std::size_t k = components.size();
    std::vector<double> terms(k);
    std::vector<Vector> scores(k);
    for (std::size_t m = 0; m < k; ++m) terms[m] = eval(components[m], x, &scores[m]);
    const double lse = log_sum_exp(terms);
    Vector out = Vector::Zero(x.size());
    for (std::size_t m = 0; m < k; ++m) out += std::exp(terms[m] - lse) * scores[m];
    return out;
  }
};

}  // namespace detail

inline ScoreModel t_banana_model(const TBananaMixtureParams& params) {
  params.validate();
  auto impl = std::make_shared<const detail::TBananaImpl>(params);
  return ScoreModel(
      params.dim(), [impl](const Vector& x) { return impl->log_density(x); },
      [impl](const Vector& x) { return impl->score(x); }, "t_banana");
}

// ---------------------------------------------------------------------------
// Sensor network localisation posterior

/// Six sensors in the plane: indices 0..3 have unknown locations (the 8 model
/// coordinates, laid out x0, y0, x1, y1, ...), indices 4 and 5 are known.
struct SensorPosteriorParams {
  static constexpr int kNumSensors = 6;
  static constexpr int kNumUnknown = 4;

  std::vector<Vector> known_sensor_locations;  // two 2-vectors
  Matrix observation_indicators;               // 6x6, symmetric, zero diagonal
  Matrix observed_distances;                   // 6x6, used where indicator = 1
  double prior_sd = 10.0;
  double obs_sd = 0.02;
  double detect_sd = 0.3;

  void validate() const {
    require(known_sensor_locations.size() == 2, "sensor model: need two known sensor locations");
    for (const auto& k : known_sensor_locations) require_same_dim(k.size(), 2, "known sensor");
    const auto& w = observation_indicators;
    const auto& y = observed_distances;
    require(w.rows() == kNumSensors && w.cols() == kNumSensors,
            "sensor model: observation_indicators must be 6x6");
    require(y.rows() == kNumSensors && y.cols() == kNumSensors,
            "sensor model: observed_distances must be 6x6");
    for (int i = 0; i < kNumSensors; ++i) {
      require(w(i, i) == 0.0, "sensor model: observation_indicators diagonal must be zero");
      for (int j = 0; j < kNumSensors; ++j) {
        require(w(i, j) == 0.0 || w(i, j) == 1.0, "sensor model: indicators must be binary");
        require(w(i, j) == w(j, i), "sensor model: indicators must be symmetric");
        if (w(i, j) == 1.0) {
          require(std::isfinite(y(i, j)) && y(i, j) >= 0.0,
                  "sensor model: observed distance missing where indicator is 1");
        }
      }
    }
    require(prior_sd > 0.0 && obs_sd > 0.0 && detect_sd > 0.0,
            "sensor model: standard deviations must be positive");
  }
};

namespace detail {

struct SensorImpl {
  SensorPosteriorParams p;

  Eigen::Vector2d location(const Vector& x, int k) const {
    if (k < SensorPosteriorParams::kNumUnknown) return x.segment<2>(2 * k);
    return p.known_sensor_locations[static_cast<std::size_t>(k - SensorPosteriorParams::kNumUnknown)];
  }

  double log_density(const Vector& x) const {
    double out = -x.squaredNorm() / (2.0 * p.prior_sd * p.prior_sd);
    const double det2 = 2.0 * p.detect_sd * p.detect_sd;
    const double obs2 = 2.0 * p.obs_sd * p.obs_sd;
    for (int i = 0; i < SensorPosteriorParams::kNumSensors; ++i) {
      for (int j = i + 1; j < SensorPosteriorParams::kNumSensors; ++j) {
        if (i >= SensorPosteriorParams::kNumUnknown) continue;  // known-known pair is constant
        const double d2 = (location(x, i) - location(x, j)).squaredNorm();
        if (p.observation_indicators(i, j) == 1.0) {
          const double resid = p.observed_distances(i, j) - std::sqrt(d2);
          out += -resid * resid / obs2 - d2 / det2;
        } else {
          out += std::log(-std::expm1(-d2 / det2));
        }
      }
    }
    return out;
  }

  Vector score(const Vector& x) const {
    Vector g = -x / (p.prior_sd * p.prior_sd);
    const double det_var = p.detect_sd * p.detect_sd;
    const double obs_var = p.obs_sd * p.obs_sd;
    for (int i = 0; i < SensorPosteriorParams::kNumUnknown; ++i) {
      for (int j = i + 1; j < SensorPosteriorParams::kNumSensors; ++j) {
        const Eigen::Vector2d diff = location(x, i) - location(x, j);
        const double d2 = diff.squaredNorm();
        Eigen::Vector2d gi = Eigen::Vector2d::Zero();
        if (d2 > 0.0) {  // coincident sensors: distance gradient taken as zero
          if (p.observation_indicators(i, j) == 1.0) {
            const double dist = std::sqrt(d2);
            gi = ((p.observed_distances(i, j) - dist) / (obs_var * dist) - 1.0 / det_var) * diff;
          } else {
            gi = diff / (det_var * std::expm1(d2 / (2.0 * det_var)));
          }
        }
        g.segment<2>(2 * i) += gi;
        if (j < SensorPosteriorParams::kNumUnknown) g.segment<2>(2 * j) -= gi;
      }
    }
    return g;
  }
};

}  // namespace detail

inline ScoreModel sensor_posterior_model(const SensorPosteriorParams& params) {
  params.validate();
  auto impl = std::make_shared<const detail::SensorImpl>(detail::SensorImpl{params});
  return ScoreModel(
      2 * SensorPosteriorParams::kNumUnknown,
      [impl](const Vector& x) { return impl->log_density(x); },
      [impl](const Vector& x) { return impl->score(x); }, "sensor");
}

/// Draws synthetic observations from the sensor observation model at known true
/// locations (6x2, rows = sensors, the last two rows become the known sensors).
inline SensorPosteriorParams simulate_sensor_observations(const Matrix& true_locations,
                                                          std::uint64_t seed,
                                                          double obs_sd = 0.02,
                                                          double detect_sd = 0.3) {
  require(true_locations.rows() == SensorPosteriorParams::kNumSensors && true_locations.cols() == 2,
          "simulate_sensor_observations: need a 6x2 location matrix");
  SensorPosteriorParams p;
  p.obs_sd = obs_sd;
  p.detect_sd = detect_sd;
  p.known_sensor_locations = {true_locations.row(4).transpose(), true_locations.row(5).transpose()};
  p.observation_indicators = Matrix::Zero(6, 6);
  p.observed_distances = Matrix::Zero(6, 6);
  Rng rng(seed);
  for (int i = 0; i < 6; ++i) {
    for (int j = i + 1; j < 6; ++j) {
      const double dist = (true_locations.row(i) - true_locations.row(j)).norm();
      const double detect = std::exp(-dist * dist / (2.0 * detect_sd * detect_sd));
      if (uniform01(rng) < detect) {
        const double y = std::max(0.0, dist + obs_sd * standard_normal(rng));
        p.observation_indicators(i, j) = p.observation_indicators(j, i) = 1.0;
        p.observed_distances(i, j) = p.observed_distances(j, i) = y;
      }
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Gaussian-Bernoulli restricted Boltzmann machine

/// Joint p(x, h) ∝ exp(x'Bh / 2 + b'x + c'h - |x|^2 / 2), h in {-1, 1}^{d_h}.
struct RBMParams {
  Matrix B;  // d x d_h
  Vector b;  // d
  Vector c;  // d_h

  int dim() const { return static_cast<int>(B.rows()); }
  int hidden_dim() const { return static_cast<int>(B.cols()); }

  /// B = lambda E (E the top d x d_h block of the identity), b = 0.
  static RBMParams multimodal(int dim, int hidden_dim, double lambda, const Vector& c) {
    RBMParams p;
    p.B = lambda * selector(dim, hidden_dim);
    p.b = Vector::Zero(dim);
    p.c = c;
    return p;
  }

  static Matrix selector(int dim, int hidden_dim) {
    Matrix e = Matrix::Zero(dim, hidden_dim);
    for (int i = 0; i < std::min(dim, hidden_dim); ++i) e(i, i) = 1.0;
    return e;
  }

  void validate() const {
    require(B.rows() >= 1 && B.cols() >= 1, "rbm: B must be non-empty");
    require_same_dim(b.size(), B.rows(), "rbm visible bias");
    require_same_dim(c.size(), B.cols(), "rbm hidden bias");
    require(B.allFinite() && b.allFinite() && c.allFinite(), "rbm: parameters must be finite");
  }
};

namespace detail {

// log(2 cosh(a)), stable for large |a|.
inline double log_two_cosh(double a) {
  const double m = std::abs(a);
  return m + std::log1p(std::exp(-2.0 * m));
}

}  // namespace detail

/// Marginal of the GB-RBM over h:
/// log p*(x) = -|x|^2/2 + b'x + sum_j log(2 cosh((B'x)_j / 2 + c_j)).
inline ScoreModel rbm_model(const RBMParams& params) {
  params.validate();
  auto p = std::make_shared<const RBMParams>(params);
  return ScoreModel(
      params.dim(),
      [p](const Vector& x) {
        const Vector a = 0.5 * (p->B.transpose() * x) + p->c;
        double out = -0.5 * x.squaredNorm() + p->b.dot(x);
        for (Eigen::Index j = 0; j < a.size(); ++j) out += detail::log_two_cosh(a(j));
        return out;
      },
      [p](const Vector& x) {
        const Vector a = 0.5 * (p->B.transpose() * x) + p->c;
        return Vector(p->b - x + 0.5 * (p->B * a.array().tanh().matrix()));
      },
      "rbm");
}

}  // namespace stein_perturb
