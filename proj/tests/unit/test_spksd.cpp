#include "stein_perturb/experiments.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace stein_perturb;

namespace {

const GaussianMixtureParams kTarget = GaussianMixtureParams::bimodal(1, 0.5, 6.0);

std::shared_ptr<const ModeSet> true_modes() {
  ModeSet s;
  s.modes = {identity_mode(Vector::Zero(1)), identity_mode(Vector::Constant(1, 6.0))};
  return std::make_shared<const ModeSet>(std::move(s));
}

Matrix left_component(Eigen::Index n, std::uint64_t seed) {
  return sample_gaussian_mixture(GaussianMixtureParams::bimodal(1, 1.0, 6.0), n, seed);
}

bool same_result(const TestResult& a, const TestResult& b) {
  return a.statistic == b.statistic && a.p_value == b.p_value && a.reject == b.reject &&
         a.bootstrap_quantile == b.bootstrap_quantile && a.seed == b.seed && a.num_bootstrap == b.num_bootstrap;
}

}  // namespace

TEST(TildeU, SingleKernelIsSteinKernel) {
  const ScoreModel m = gaussian_mixture_model(kTarget);
  const Kernel k = Kernel::imq(1.0);
  const Matrix x = left_component(5, 1);
  const PerturbedEnsemble e = perturb_ensemble(KernelCollection::identity_only(), x, 3);
  for (Eigen::Index i = 0; i < 5; ++i) {
    for (Eigen::Index j = 0; j < 5; ++j) {
      EXPECT_EQ(tilde_u(e, m, k, i, j), stein_kernel_eval(m, k, x.row(i).transpose(), x.row(j).transpose()));
    }
  }
}

TEST(TildeU, SymmetricAndComponentwise) {
  const ScoreModel m = gaussian_mixture_model(kTarget);
  const Kernel k = Kernel::imq(1.0);
  Matrix base(2, 1);
  base << 0.3, -0.4;
  Matrix moved(2, 1);
  moved << 6.3, 5.6;
  PerturbedEnsemble e{{base, moved}};
  const double expected = stein_kernel_eval(m, k, base.row(0).transpose(), base.row(1).transpose()) +
                          stein_kernel_eval(m, k, moved.row(0).transpose(), moved.row(1).transpose());
  EXPECT_NEAR(tilde_u(e, m, k, 0, 1), expected, 1e-12);
  EXPECT_NEAR(tilde_u(e, m, k, 0, 1), tilde_u(e, m, k, 1, 0), 1e-15);

  const auto collection = KernelCollection::from_grid(true_modes(), m, {1.0}, 3);
  const PerturbedEnsemble real = perturb_ensemble(collection, base, 7);
  ASSERT_EQ(real.num_kernels(), 2);
  const double sum = stein_kernel_eval(m, k, base.row(0).transpose(), base.row(1).transpose()) +
                     stein_kernel_eval(m, k, real.samples[1].row(0).transpose(), real.samples[1].row(1).transpose());
  EXPECT_NEAR(tilde_u(real, m, k, 0, 1), sum, 1e-12);
}

TEST(SpksdStat, ReducesToKsdAndIsAdditive) {
  const ScoreModel m = gaussian_mixture_model(kTarget);
  const Matrix x = left_component(200, 2);
  const Kernel k = imq_median_kernel(x);
  const PerturbedEnsemble id = perturb_ensemble(KernelCollection::identity_only(), x, 1);
  EXPECT_EQ(spksd_stat(id, m, k), ksd_ustat(x, m, k));

  const auto collection = KernelCollection::from_grid(true_modes(), m, linspace(0.5, 1.5, 6), 10);
  const PerturbedEnsemble e = perturb_ensemble(collection, x, 4);
  double sum = 0.0;
  for (const Matrix& s : e.samples) sum += ksd_ustat(s, m, k);
  const double total = spksd_stat(e, m, k);
  EXPECT_LE(std::abs(total - sum), 1e-12 * std::max(1.0, std::abs(sum)));
}

TEST(SpksdTest, IdentityCollectionIsKsdTest) {
  const ScoreModel m = gaussian_mixture_model(kTarget);
  const Matrix x = left_component(300, 5);
  const Kernel k = imq_median_kernel(x);
  const TestResult a = spksd_test(x, m, k, KernelCollection::identity_only(), 0.05, 300, 9);
  const TestResult b = ksd_test(x, m, k, 0.05, 300, 9);
  EXPECT_TRUE(same_result(a, b));
}

TEST(SpksdTest, CollectionMustStartWithIdentity) {
  const ScoreModel m = gaussian_mixture_model(kTarget);
  KernelCollection c;
  c.kernels.push_back(PerturbationKernel::jump(JumpKernel(true_modes(), 1.0, m), 1));
  EXPECT_THROW(spksd_test(left_component(10, 1), m, Kernel::imq(1.0), c, 0.05, 10, 1), InputError);
  ModeSet one;
  one.modes = {identity_mode(Vector::Zero(1))};
  EXPECT_EQ(KernelCollection::from_grid(std::make_shared<const ModeSet>(one), m, {1.0, 1.2}, 3).size(), 1);
}

TEST(SpksdTest, LevelUnderNull) {
  const ScoreModel m = gaussian_mixture_model(kTarget);
  const auto collection = KernelCollection::from_grid(true_modes(), m, linspace(0.5, 1.5, 51), 10);
  int accepted = 0;
  for (std::uint64_t rep = 0; rep < 100; ++rep) {
    const Matrix x = sample_gaussian_mixture(kTarget, 1000, 3000 + rep);
    accepted += spksd_test(x, m, imq_median_kernel(x), collection, 0.05, 500, rep).reject ? 0 : 1;
  }
  EXPECT_GE(accepted, 88);
}

TEST(SigmaU2, ConstantGramFloors) {
  const Matrix h = Matrix::Constant(6, 6, 2.5);
  EXPECT_NEAR(sigma_u2(h), 0.0, 1e-12);
}

TEST(SigmaU2, HandExpandedThreePoints) {
  Matrix h(3, 3);
  h << 1.0, 2.0, -1.0, 2.0, 0.5, 3.0, -1.0, 3.0, 4.0;
  // Row sums 2, 5.5, 6; total 13.5.
  const double expected = 4.0 / 27.0 * (4.0 + 30.25 + 36.0) - 4.0 / 81.0 * 13.5 * 13.5;
  EXPECT_NEAR(sigma_u2(h), expected, 1e-14);
}

TEST(PowerProxy, BlindScaleLosesToLargerJump) {
  const ScoreModel m = gaussian_mixture_model(kTarget);
  const Matrix x = left_component(500, 6);
  const Kernel k = imq_median_kernel(x);
  const double at_blind = power_proxy(x, m, k, JumpKernel(true_modes(), 1.0, m), 10, 1);
  const double at_larger = power_proxy(x, m, k, JumpKernel(true_modes(), 1.3, m), 10, 1);
  EXPECT_GT(at_larger, at_blind);
}

TEST(SplitSample, PartitionsRows) {
  const SampleSplit s = split_sample(11, 0.5, 3);
  EXPECT_EQ(s.train.size(), 5u);
  EXPECT_EQ(s.test.size(), 6u);
  std::vector<Eigen::Index> all = s.train;
  all.insert(all.end(), s.test.begin(), s.test.end());
  std::sort(all.begin(), all.end());
  for (Eigen::Index i = 0; i < 11; ++i) EXPECT_EQ(all[static_cast<std::size_t>(i)], i);
  EXPECT_TRUE(std::is_sorted(s.train.begin(), s.train.end()));
  EXPECT_THROW(split_sample(3, 0.5, 1), InputError);
  EXPECT_THROW(split_sample(100, 1.0, 1), InputError);
}

TEST(OspksdTest, SingletonGridIsHeldOutSpksd) {
  const ScoreModel m = gaussian_mixture_model(kTarget);
  const Matrix x = left_component(400, 7);
  const Kernel k = imq_median_kernel(x);
  OspksdOptions o;
  o.bounds = Box::cube(1, -10.0, 16.0);
  const TestResult r = ospksd_test(x, m, k, {1.2}, 10, 0.05, 300, 11, o);
  EXPECT_EQ(r.extras.at("theta_selected"), 1.2);
  EXPECT_EQ(r.extras.at("num_modes"), 2.0);

  const SampleSplit split = split_sample(400, 0.5, 11);
  const Matrix train = select_rows(x, split.train);
  const auto modes = std::make_shared<const ModeSet>(
      estimate_modes_from_train(train, m, o, derive_seed(11, Stream::kModeInit)));
  const auto collection = KernelCollection::from_grid(modes, m, {1.2}, 10);
  const TestResult direct = spksd_test(select_rows(x, split.test), m, k, collection, 0.05, 300, 11);
  EXPECT_TRUE(same_result(r, direct));
}

TEST(OspksdTest, RecordsSelection) {
  const ScoreModel m = gaussian_mixture_model(kTarget);
  const Matrix x = left_component(400, 8);
  OspksdOptions o;
  o.bounds = Box::cube(1, -10.0, 16.0);
  const auto grid = linspace(0.5, 1.5, 11);
  const TestResult r = ospksd_test(x, m, imq_median_kernel(x), grid, 10, 0.05, 200, 3, o);
  const double theta = r.extras.at("theta_selected");
  EXPECT_NE(std::find(grid.begin(), grid.end(), theta), grid.end());
  EXPECT_EQ(r.extras.at("n_train"), 200.0);
  EXPECT_EQ(r.extras.at("n_test"), 200.0);
  EXPECT_THROW(ospksd_test(x, m, imq_median_kernel(x), {}, 10, 0.05, 200, 3, o), InputError);
}

TEST(OspksdTest, SingleModeFallsBackToKsd) {
  GaussianMixtureParams p;
  p.weights = Vector::Ones(1);
  p.means = {Vector::Zero(1)};
  const ScoreModel m = gaussian_mixture_model(p);
  const Matrix x = sample_gaussian_mixture(p, 200, 2);
  OspksdOptions o;
  o.bounds = Box::cube(1, -5.0, 5.0);
  const TestResult r = ospksd_test(x, m, Kernel::imq(1.0), {1.0}, 10, 0.05, 100, 4, o);
  EXPECT_EQ(r.extras.at("num_modes"), 1.0);
  EXPECT_TRUE(std::isnan(r.extras.at("theta_selected")));
}

TEST(OspksdTest, PowerAndLevel) {
  const ScoreModel m = gaussian_mixture_model(kTarget);
  TestSettings s;
  s.bounds = Box::cube(1, -10.0, 16.0);
  int power = 0;
  int level = 0;
  for (std::uint64_t rep = 0; rep < 50; ++rep) {
    power += run_single_test(Method::kOspksd, left_component(1000, 4000 + rep), m, s, rep).reject ? 1 : 0;
    level += run_single_test(Method::kOspksd, sample_gaussian_mixture(kTarget, 1000, 5000 + rep), m, s, rep).reject
                 ? 1
                 : 0;
  }
  EXPECT_GE(power, 45);
  EXPECT_LE(level, 7);  // 99% band upper end for 50 reps at 0.05
}
