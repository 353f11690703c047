#include "stein_perturb/kernels.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace stein_perturb;
using test_util::rel_err;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

// Central difference of d^2 k / (dx_k dy_k), summed over k.
double fd_cross_trace(const Kernel& k, const Vector& x, const Vector& y, double h) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    auto shifted = [&](double sx, double sy) {
      Vector a = x;
      Vector b = y;
      a(i) += sx;
      b(i) += sy;
      return k.eval(a, b);
    };
    total += (shifted(h, h) - shifted(h, -h) - shifted(-h, h) + shifted(-h, -h)) / (4.0 * h * h);
  }
  return total;
}

}  // namespace

TEST(Kernel, ForcedValues) {
  const Kernel imq = Kernel::imq(1.0);
  EXPECT_DOUBLE_EQ(imq.eval(vec({0.2, -1.0}), vec({0.2, -1.0})), 1.0);
  EXPECT_DOUBLE_EQ(imq.eval(vec({0.0}), vec({std::sqrt(3.0)})), 0.5);
  EXPECT_NEAR(Kernel::rbf(2.0).eval(vec({0.0}), vec({2.0})), std::exp(-1.0), 1e-15);
}

TEST(Kernel, CoincidentPoints) {
  const Kernel imq = Kernel::imq(1.0);
  const Vector x = vec({0.4, 1.1, -2.0});
  EXPECT_EQ(imq.grad_x(x, x).norm(), 0.0);
  EXPECT_EQ(imq.grad_y(x, x).norm(), 0.0);
  EXPECT_DOUBLE_EQ(imq.cross_grad_trace(vec({0.7}), vec({0.7})), 1.0);
}

TEST(Kernel, ImqGradientMatchesFiniteDifference) {
  const Kernel imq = Kernel::imq(1.0);
  const Vector x = vec({0.3});
  const Vector y = vec({-0.7});
  const Vector fd = test_util::fd_gradient([&](const Vector& a) { return imq.eval(a, y); }, x);
  EXPECT_LE(rel_err(imq.grad_x(x, y), fd), 1e-6);
}

TEST(Kernel, AllDerivativesMatchFiniteDifferences) {
  Rng rng(42);
  const std::vector<Kernel> kernels{Kernel::imq(1.0), Kernel::imq(2.5), Kernel(KernelFamily::kIMQ, 0.7, -0.3),
                                    Kernel::rbf(1.0), Kernel::rbf(3.0)};
  for (const Kernel& k : kernels) {
    for (int t = 0; t < 200; ++t) {
      const Eigen::Index d = 1 + t % 4;
      const Vector x = test_util::random_vector(d, rng);
      const Vector y = test_util::random_vector(d, rng);
      const Vector gx = test_util::fd_gradient([&](const Vector& a) { return k.eval(a, y); }, x);
      const Vector gy = test_util::fd_gradient([&](const Vector& b) { return k.eval(x, b); }, y);
      EXPECT_LE(rel_err(k.grad_x(x, y), gx, 1e-3), 1e-5);
      EXPECT_LE(rel_err(k.grad_y(x, y), gy, 1e-3), 1e-5);
      EXPECT_LE(rel_err(k.cross_grad_trace(x, y), fd_cross_trace(k, x, y, 1e-4), 1e-3), 1e-5);
    }
  }
}

TEST(Kernel, RejectsBadParameters) {
  EXPECT_THROW(Kernel::imq(0.0), InputError);
  EXPECT_THROW(Kernel::rbf(-1.0), InputError);
  EXPECT_THROW(Kernel(KernelFamily::kIMQ, 1.0, -1.5), InputError);
}

TEST(MedianHeuristic, ForcedValues) {
  Matrix a(3, 1);
  a << 0, 1, 3;
  EXPECT_DOUBLE_EQ(median_heuristic(a).bandwidth, 4.0);
  Matrix b(2, 1);
  b << 0, 2;
  EXPECT_DOUBLE_EQ(median_heuristic(b).bandwidth, 4.0);
  Matrix c(4, 2);
  c << 0, 0, 1, 0, 0, 1, 1, 1;
  EXPECT_DOUBLE_EQ(median_heuristic(c).bandwidth, 1.0);
}

TEST(MedianHeuristic, DegenerateSampleFallsBack) {
  const MedianBandwidth m = median_heuristic(Matrix::Constant(5, 2, 3.0));
  EXPECT_TRUE(m.degenerate);
  EXPECT_EQ(m.bandwidth, 1.0);
  EXPECT_THROW(median_heuristic(Matrix::Zero(1, 2)), InputError);
}
