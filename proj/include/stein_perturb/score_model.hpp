#pragma once

#include "stein_perturb/core.hpp"

#include <functional>
#include <string>
#include <utility>

namespace stein_perturb {

/// A target distribution known through its unnormalised log-density and its
/// score (gradient of the log-density). Cheap to copy; evaluation is pure.
class ScoreModel {
 public:
  using LogDensityFn = std::function<double(const Vector&)>;
  using ScoreFn = std::function<Vector(const Vector&)>;

  ScoreModel(int dim, LogDensityFn log_density, ScoreFn score, std::string name = "custom")
      : dim_(dim), log_density_(std::move(log_density)), score_(std::move(score)),
        name_(std::move(name)) {
    require(dim >= 1, "ScoreModel dimension must be positive");
    require(static_cast<bool>(log_density_) && static_cast<bool>(score_),
            "ScoreModel needs both a log-density and a score function");
  }

  int dim() const { return dim_; }
  const std::string& name() const { return name_; }

  double log_density(const Vector& x) const {
    require_same_dim(x.size(), dim_, name_.c_str());
    return log_density_(x);
  }

  Vector score(const Vector& x) const {
    require_same_dim(x.size(), dim_, name_.c_str());
    return score_(x);
  }

  /// Row-wise scores of a sample matrix.
  Matrix scores(const Matrix& samples) const {
    require_same_dim(samples.cols(), dim_, name_.c_str());
    Matrix out(samples.rows(), samples.cols());
    Vector x(dim_);
    for (Eigen::Index i = 0; i < samples.rows(); ++i) {
      x = samples.row(i).transpose();
      out.row(i) = score_(x).transpose();
    }
    return out;
  }

 private:
  int dim_;
  LogDensityFn log_density_;
  ScoreFn score_;
  std::string name_;
};

}  // namespace stein_perturb
