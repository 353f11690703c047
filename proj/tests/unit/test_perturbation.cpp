#include "stein_perturb/perturbation.hpp"
#include "stein_perturb/samplers.hpp"
#include "stein_perturb/stein.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <numbers>

using namespace stein_perturb;

namespace {

std::shared_ptr<const ModeSet> identity_modes(std::vector<Vector> mus) {
  ModeSet s;
  for (auto& m : mus) s.modes.push_back(identity_mode(m));
  return std::make_shared<const ModeSet>(std::move(s));
}

ScoreModel flat_model(int d) {
  return ScoreModel(d, [](const Vector&) { return 0.0; }, [](const Vector& x) { return Vector(Vector::Zero(x.size())); });
}

double normal_pdf(double x, double mean = 0.0) {
  return std::exp(-0.5 * (x - mean) * (x - mean)) / std::sqrt(2.0 * std::numbers::pi);
}

// Three modes in 2D with distinct full covariances, and the matching mixture.
struct CurvedSetup {
  std::shared_ptr<const ModeSet> modes;
  ScoreModel model;
};

CurvedSetup curved_setup() {
  GaussianMixtureParams p;
  p.weights = Vector::Constant(3, 1.0 / 3.0);
  std::vector<Matrix> covs(3);
  covs[0] = (Matrix(2, 2) << 1.0, 0.3, 0.3, 0.5).finished();
  covs[1] = (Matrix(2, 2) << 2.0, -0.4, -0.4, 1.0).finished();
  covs[2] = (Matrix(2, 2) << 0.3, 0.0, 0.0, 3.0).finished();
  p.means = {Vector::Zero(2), (Vector(2) << 7.0, 1.0).finished(), (Vector(2) << -3.0, 8.0).finished()};
  p.covariances = covs;
  ModeSet s;
  for (int m = 0; m < 3; ++m) s.modes.push_back(make_mode(p.means[static_cast<std::size_t>(m)], covs[static_cast<std::size_t>(m)].inverse(), 0.0));
  return {std::make_shared<const ModeSet>(std::move(s)), gaussian_mixture_model(p)};
}

}  // namespace

TEST(JumpKernel, IdentityGeometryTranslates) {
  Vector mu1(2), mu2(2);
  mu1 << 1.0, -1.0;
  mu2 << 4.0, 2.0;
  const JumpKernel k(identity_modes({mu1, mu2}), 0.8, flat_model(2));
  Vector x(2);
  x << 0.3, 0.7;
  const Proposal p = k.propose(x, {0, 1});
  EXPECT_LE((p.x - (x - 0.8 * (mu1 - mu2))).norm(), 1e-14);
  EXPECT_EQ(p.log_jacobian, 0.0);
}

TEST(JumpKernel, RoundTrip) {
  const CurvedSetup s = curved_setup();
  const JumpKernel k(s.modes, 1.3, s.model);
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    const Vector x = test_util::random_vector(2, rng, 3.0);
    const Proposal there = k.propose(x, {0, 2});
    const Proposal back = k.propose(there.x, {2, 0});
    EXPECT_LE((back.x - x).norm(), 1e-10);
    EXPECT_NEAR(there.log_jacobian + back.log_jacobian, 0.0, 1e-14);
  }
}

TEST(JumpKernel, ScaledModeArithmetic) {
  ModeSet s;
  s.modes.push_back(make_mode(Vector::Zero(1), Matrix::Constant(1, 1, 0.25), 0.0));
  s.modes.push_back(make_mode(Vector::Constant(1, 6.0), Matrix::Identity(1, 1), 0.0));
  const JumpKernel k(std::make_shared<const ModeSet>(s), 1.0, flat_model(1));
  const Proposal p = k.propose(Vector::Constant(1, 2.0), {0, 1});
  EXPECT_NEAR(p.x(0), 7.0, 1e-14);
  EXPECT_NEAR(p.log_jacobian, 0.5 * (0.0 - std::log(4.0)), 1e-14);
}

TEST(JumpKernel, AcceptanceValues) {
  const auto modes = identity_modes({Vector::Zero(1), Vector::Constant(1, 1.0)});
  const JumpKernel mh(modes, 1.0, flat_model(1));
  const JumpKernel barker(modes, 1.0, flat_model(1), AcceptRule::kBarker);
  EXPECT_EQ(mh.accept_from_log_ratio(0.0), 1.0);
  EXPECT_EQ(barker.accept_from_log_ratio(0.0), 0.5);
  EXPECT_NEAR(mh.accept_from_log_ratio(std::log(0.3)), 0.3, 1e-15);
  EXPECT_NEAR(barker.accept_from_log_ratio(std::log(0.3)), 0.3 / 1.3, 1e-15);
  EXPECT_EQ(mh.accept_from_log_ratio(-std::numeric_limits<double>::infinity()), 0.0);
  EXPECT_EQ(mh.accept_from_log_ratio(std::numeric_limits<double>::quiet_NaN()), 0.0);
}

TEST(JumpKernel, DetailedBalance) {
  const CurvedSetup s = curved_setup();
  Rng rng(99);
  for (AcceptRule rule : {AcceptRule::kMetropolisHastings, AcceptRule::kBarker}) {
    const JumpKernel k(s.modes, 0.5 + uniform01(rng), s.model, rule);
    for (int t = 0; t < 1000; ++t) {
      const Vector x = test_util::random_vector(2, rng, 4.0);
      const ModePair u = k.pair_at(static_cast<int>(rng() % static_cast<std::uint64_t>(k.num_pairs())));
      const Proposal fwd = k.propose(x, u);
      const Proposal rev = k.propose(fwd.x, {u.to, u.from});
      ASSERT_LE((rev.x - x).norm(), 1e-9);
      const double g = 1.0 / k.num_pairs();
      const double lhs = s.model.log_density(x) + std::log(g) + std::log(k.accept_prob(x, fwd.x, fwd.log_jacobian));
      const double rhs = s.model.log_density(fwd.x) + std::log(g) +
                         std::log(k.accept_prob(fwd.x, x, rev.log_jacobian)) + fwd.log_jacobian;
      EXPECT_LE(std::abs(std::expm1(lhs - rhs)), 1e-10);
    }
  }
}

TEST(JumpKernel, RejectsDegenerateInput) {
  EXPECT_THROW(JumpKernel(identity_modes({Vector::Zero(1)}), 1.0, flat_model(1)), InputError);
  EXPECT_THROW(JumpKernel(identity_modes({Vector::Zero(1), Vector::Ones(1)}), 0.0, flat_model(1)), InputError);
}

TEST(PerturbationKernel, IdentityLeavesPointsAlone) {
  Rng rng(1);
  const Vector x = test_util::random_vector(3, rng);
  EXPECT_EQ(PerturbationKernel::identity().step(x, rng), x);
}

TEST(PerturbationKernel, ForcedAcceptanceIsSymmetric) {
  const JumpKernel k(identity_modes({Vector::Zero(1), Vector::Constant(1, 2.0)}), 1.0, flat_model(1));
  const auto kernel = PerturbationKernel::jump(k, 1);
  Rng rng(17);
  const Vector x = Vector::Constant(1, 0.25);
  int up = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const double y = kernel.step(x, rng)(0);
    ASSERT_TRUE(y == 2.25 || y == -1.75);
    up += y > 0.25 ? 1 : 0;
  }
  const double e = n / 2.0;
  const double chi2 = ((up - e) * (up - e) + (n - up - e) * (n - up - e)) / e;
  EXPECT_LT(chi2, 6.634896601021213);  // chi-squared(1) 0.99 quantile
}

TEST(PerturbationKernel, SeededTrajectories) {
  const CurvedSetup s = curved_setup();
  const auto kernel = PerturbationKernel::jump(JumpKernel(s.modes, 1.0, s.model), 5);
  Rng a(3), b(3);
  Vector x = Vector::Zero(2);
  Vector y = Vector::Zero(2);
  for (int t = 0; t < 100; ++t) {
    x = kernel.step(x, a);
    y = kernel.step(y, b);
    ASSERT_EQ(x, y);
  }
  const Matrix start = Matrix::Random(50, 2);
  EXPECT_EQ(perturb_sample(kernel, start, 4), perturb_sample(kernel, start, 4));
}

TEST(PerturbSample, ZeroStepsIsIdentity) {
  const CurvedSetup s = curved_setup();
  const Matrix x = Matrix::Random(20, 2);
  EXPECT_EQ(perturb_sample(PerturbationKernel::jump(JumpKernel(s.modes, 1.0, s.model), 0), x, 1), x);
  EXPECT_EQ(perturb_sample(PerturbationKernel::identity(), x, 1), x);
}

TEST(PerturbSample, CachedAndDirectMapsAgree) {
  const CurvedSetup s = curved_setup();
  const JumpKernel k(s.modes, 1.1, s.model);
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    const Vector x = test_util::random_vector(2, rng, 3.0);
    const ModePair u = k.pair_at(t % k.num_pairs());
    const Mode& a = s.modes->modes[static_cast<std::size_t>(u.from)];
    const Mode& b = s.modes->modes[static_cast<std::size_t>(u.to)];
    const Vector direct = b.sqrt_A * (a.inv_sqrt_A * (x - 1.1 * a.mu)) + 1.1 * b.mu;
    EXPECT_LE((k.propose(x, u).x - direct).norm(), 1e-12 * (1.0 + direct.norm()));
  }
}

TEST(PerturbSample, TransportsMassAcrossModes) {
  const ScoreModel p = gaussian_mixture_model(GaussianMixtureParams::bimodal(1, 0.5, 6.0));
  const Matrix q = sample_gaussian_mixture(GaussianMixtureParams::bimodal(1, 1.0, 6.0), 1000, 3);
  const auto modes = identity_modes({Vector::Zero(1), Vector::Constant(1, 6.0)});
  const Matrix moved = perturb_sample(PerturbationKernel::jump(JumpKernel(modes, 1.3, p), 10), q, 8);
  const double frac = (moved.col(0).array() > 3.0).cast<double>().mean();
  EXPECT_GT(frac, 0.2);
}

TEST(PerturbSample, PreservesTargetLevel) {
  const auto params = GaussianMixtureParams::bimodal(1, 0.5, 6.0);
  const ScoreModel p = gaussian_mixture_model(params);
  const auto modes = identity_modes({Vector::Zero(1), Vector::Constant(1, 6.0)});
  const auto kernel = PerturbationKernel::jump(JumpKernel(modes, 1.3, p), 10);
  int rejections = 0;
  for (std::uint64_t rep = 0; rep < 100; ++rep) {
    const Matrix x = perturb_sample(kernel, sample_gaussian_mixture(params, 1000, 500 + rep), rep);
    rejections += ksd_test(x, p, imq_median_kernel(x), 0.05, 500, rep).reject ? 1 : 0;
  }
  EXPECT_LE(rejections, 12);
}

TEST(LimitingDensity, TargetIsFixedPoint) {
  const ScoreModel p = gaussian_mixture_model(GaussianMixtureParams::bimodal(1, 0.5, 6.0));
  const auto pdf = [](double x) { return 0.5 * normal_pdf(x) + 0.5 * normal_pdf(x, 6.0); };
  for (double x : {-2.0, 0.0, 1.5, 3.0, 6.0, 8.0}) {
    EXPECT_NEAR(limiting_density_1d(pdf, p, 6.0, x, 10), pdf(x), 1e-12 * (1.0 + pdf(x)));
  }
}

TEST(LimitingDensity, BlindScaleMatchesTargetScore) {
  const ScoreModel p = gaussian_mixture_model(GaussianMixtureParams::bimodal(1, 0.5, 6.0));
  const auto q = [](double x) { return normal_pdf(x); };
  const double h = 1e-4;
  const double score = (std::log(limiting_density_1d(q, p, 6.0, h, 10)) -
                        std::log(limiting_density_1d(q, p, 6.0, -h, 10))) / (2.0 * h);
  EXPECT_NEAR(score, p.score(Vector::Zero(1))(0), 1e-2);
}

TEST(LimitingDensity, MatchesLongRunChain) {
  const ScoreModel p = gaussian_mixture_model(GaussianMixtureParams::bimodal(1, 0.5, 6.0));
  const auto q = [](double x) { return normal_pdf(x); };
  const auto modes = identity_modes({Vector::Zero(1), Vector::Constant(1, 6.0)});
  const Matrix start = sample_gaussian_mixture(GaussianMixtureParams::bimodal(1, 1.0, 6.0), 20000, 4);
  const Matrix end = perturb_sample(PerturbationKernel::jump(JumpKernel(modes, 1.0, p), 500), start, 5);
  std::vector<double> grid;
  std::vector<double> dens;
  for (double x = -8.0; x <= 14.0; x += 0.01) {
    grid.push_back(x);
    dens.push_back(limiting_density_1d(q, p, 6.0, x, 10));
  }
  EXPECT_LE(test_util::wasserstein1_to_density(test_util::column(end, 0), grid, dens), 0.05);
}
