#pragma once

#include "stein_perturb/core.hpp"
#include "stein_perturb/io.hpp"
#include "stein_perturb/kernels.hpp"
#include "stein_perturb/models.hpp"
#include "stein_perturb/modes.hpp"
#include "stein_perturb/samplers.hpp"
#include "stein_perturb/spksd.hpp"
#include "stein_perturb/stein.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace stein_perturb {

enum class Method { kKsd, kSpksd, kOspksd };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::kKsd: return "ksd";
    case Method::kSpksd: return "spksd";
    default: return "ospksd";
  }
}

inline Method parse_method(const std::string& s) {
  if (s == "ksd") return Method::kKsd;
  if (s == "spksd") return Method::kSpksd;
  if (s == "ospksd") return Method::kOspksd;
  throw InputError("unknown method '" + s + "' (expected ksd, spksd or ospksd)");
}

inline AcceptRule parse_accept_rule(const std::string& s) {
  if (s == "mh") return AcceptRule::kMetropolisHastings;
  if (s == "barker") return AcceptRule::kBarker;
  throw InputError("unknown acceptance rule '" + s + "' (expected mh or barker)");
}

/// Everything a single test run needs besides data, model and seed.
struct TestSettings {
  double alpha = 0.05;
  int num_bootstrap = 500;
  int steps = 10;
  std::vector<double> theta_grid = linspace(0.5, 1.5, 51);
  // Initialisation box for mode search; empty selects a box around the data.
  std::optional<Box> bounds;
  int n_init = 20;
  ModeSearchOptions mode_search;
  double split_frac = 0.5;
  AcceptRule rule = AcceptRule::kMetropolisHastings;
};

/// Per coordinate [min - r, max + r] with r = max(max - min, 1).
inline Box default_bounds(const Matrix& samples) {
  Box box{samples.colwise().minCoeff().transpose(), samples.colwise().maxCoeff().transpose()};
  const Vector r = (box.upper - box.lower).cwiseMax(1.0);
  box.lower -= r;
  box.upper += r;
  return box;
}

/// Modes for spKSD: BFGS from uniform initial points in the box.
inline ModeSet spksd_modes(const ScoreModel& model, const Box& bounds, const TestSettings& s, std::uint64_t seed) {
  return find_modes(model, init_uniform(bounds, s.n_init, derive_seed(seed, Stream::kModeInit)), s.mode_search);
}

/// Runs one test. The IMQ bandwidth is the median heuristic over all samples.
/// spKSD estimates modes from uniform initial points; ospKSD from the training split.
inline TestResult run_single_test(Method method, const Matrix& samples, const ScoreModel& model,
                                  const TestSettings& s, std::uint64_t seed) {
  require_same_dim(samples.cols(), model.dim(), "samples vs model");
  require(samples.rows() >= 2, "need at least two samples");
  const MedianBandwidth bw = median_heuristic(samples);
  const Kernel kernel = Kernel::imq(bw.bandwidth);
  const Box bounds = s.bounds ? *s.bounds : default_bounds(samples);
  require_same_dim(bounds.dim(), model.dim(), "bounds vs model");
  TestResult r;
  switch (method) {
    case Method::kKsd:
      r = ksd_test(samples, model, kernel, s.alpha, s.num_bootstrap, seed);
      break;
    case Method::kSpksd: {
      auto modes = std::make_shared<const ModeSet>(spksd_modes(model, bounds, s, seed));
      const auto collection = KernelCollection::from_grid(modes, model, s.theta_grid, s.steps, s.rule);
      r = spksd_test(samples, model, kernel, collection, s.alpha, s.num_bootstrap, seed);
      r.extras["num_modes"] = modes->size();
      break;
    }
    case Method::kOspksd: {
      OspksdOptions o;
      o.split_frac = s.split_frac;
      o.bounds = bounds;
      o.n_init = s.n_init;
      o.mode_search = s.mode_search;
      o.rule = s.rule;
      r = ospksd_test(samples, model, kernel, s.theta_grid, s.steps, s.alpha, s.num_bootstrap, seed, o);
      break;
    }
  }
  r.extras["bandwidth"] = bw.bandwidth;
  if (bw.degenerate) r.extras["bandwidth_fallback"] = 1.0;
  return r;
}

// ---------------------------------------------------------------------------
// Experiments

enum class Experiment {
  kGmDeltaSweep,
  kGmPiSweep,
  kGmLevel,
  kTBananaSigmaSweep,
  kRbmStandard,
  kRbmMultimodal,
  kSensorsFromFile,
};

inline Experiment parse_experiment(const std::string& s) {
  if (s == "gm_delta_sweep") return Experiment::kGmDeltaSweep;
  if (s == "gm_pi_sweep") return Experiment::kGmPiSweep;
  if (s == "gm_level") return Experiment::kGmLevel;
  if (s == "tbanana_sigma_sweep") return Experiment::kTBananaSigmaSweep;
  if (s == "rbm_standard") return Experiment::kRbmStandard;
  if (s == "rbm_multimodal") return Experiment::kRbmMultimodal;
  if (s == "sensors_from_file") return Experiment::kSensorsFromFile;
  throw InputError("unknown experiment '" + s + "'");
}

/// Sweep definition. What the sweep value means depends on the experiment:
///   gm_delta_sweep       mode separation delta (samples: pi = sample_pi, default 1)
///   gm_pi_sweep          sample mixing weight pi (target pi = 0.5, delta = 6)
///   gm_level             sample size n (samples drawn from the target)
///   tbanana_sigma_sweep  sd of the log-weight perturbation sigma_s
///   rbm_standard         sd of the noise added to B for the samples
///   rbm_multimodal       c0 in the sample hidden bias (c0, c0, 0, ...)
///   sensors_from_file    ignored; rows are subsampled per repetition
struct ExperimentConfig {
  Experiment experiment = Experiment::kGmDeltaSweep;
  std::vector<Method> methods{Method::kKsd};
  std::vector<double> sweep_values;
  int n = 1000;
  int reps = 100;
  std::uint64_t seed = 0;
  int dim = 1;
  TestSettings test;

  // gm
  double delta = 6.0;
  double sample_pi = 1.0;
  // t/banana
  int num_t = 2;
  int num_banana = 2;
  std::uint64_t model_seed = 1;
  // rbm
  int hidden_dim = 5;
  double lambda = 6.0;
  int gibbs_sweeps = 1000;
  // sensors
  std::string model_path;
  std::string samples_path;

  std::string output;
};

/// Presets per experiment; fields present in the JSON override them.
inline ExperimentConfig parse_experiment_config(const Json& j) {
  const std::string ctx = "config";
  ExperimentConfig c;
  const Json& exp = detail::field(j, "experiment", ctx);
  require(exp.is_string(), "config.experiment must be a string");
  c.experiment = parse_experiment(exp.get<std::string>());

  switch (c.experiment) {
    case Experiment::kGmDeltaSweep:
      c.sweep_values = {1, 2, 3, 4, 5, 6, 7, 8};
      break;
    case Experiment::kGmPiSweep:
      c.sweep_values = {0.1, 0.3, 0.5, 0.7, 0.9};
      break;
    case Experiment::kGmLevel:
      c.dim = 50;
      c.sweep_values = {1000};
      break;
    case Experiment::kTBananaSigmaSweep:
      c.dim = 10;
      c.test.steps = 100;
      c.sweep_values = {0.5, 1.5};
      break;
    case Experiment::kRbmStandard:
      c.dim = 10;
      c.test.steps = 50;
      c.sweep_values = {0.0, 0.02, 0.04, 0.06};
      break;
    case Experiment::kRbmMultimodal:
      c.dim = 10;
      c.test.steps = 50;
      c.sweep_values = {5.0};
      break;
    case Experiment::kSensorsFromFile:
      c.dim = 8;
      c.test.steps = 1000;
      c.sweep_values = {0.0};
      break;
  }

  if (j.contains("methods")) {
    c.methods.clear();
    for (const auto& m : j.at("methods")) c.methods.push_back(parse_method(m.get<std::string>()));
  } else if (j.contains("method")) {
    c.methods = {parse_method(j.at("method").get<std::string>())};
  }
  require(!c.methods.empty(), "config.methods is empty");
  if (j.contains("sweep_values")) {
    const Vector v = detail::as_vector(j.at("sweep_values"), ctx + ".sweep_values");
    c.sweep_values.assign(v.data(), v.data() + v.size());
  }
  c.n = detail::get_int(j, "n", c.n, ctx);
  c.reps = detail::get_int(j, "reps", c.reps, ctx);
  if (j.contains("seed")) {
    c.seed = detail::get_seed(j.at("seed"), "config.seed");
  }
  c.dim = detail::get_int(j, "dim", c.dim, ctx);
  c.test.alpha = detail::get_double(j, "alpha", c.test.alpha, ctx);
  c.test.num_bootstrap = detail::get_int(j, "bootstrap", c.test.num_bootstrap, ctx);
  c.test.steps = detail::get_int(j, "steps", c.test.steps, ctx);
  if (j.contains("theta_grid")) c.test.theta_grid = parse_theta_grid(j.at("theta_grid").get<std::string>());
  c.test.mode_search.beta = detail::get_double(j, "beta", c.test.mode_search.beta, ctx);
  c.test.split_frac = detail::get_double(j, "split_frac", c.test.split_frac, ctx);
  if (j.contains("accept_rule")) c.test.rule = parse_accept_rule(j.at("accept_rule").get<std::string>());

  c.delta = detail::get_double(j, "delta", c.delta, ctx);
  c.sample_pi = detail::get_double(j, "sample_pi", c.sample_pi, ctx);
  c.num_t = detail::get_int(j, "num_t", c.num_t, ctx);
  c.num_banana = detail::get_int(j, "num_banana", c.num_banana, ctx);
  if (j.contains("model_seed")) c.model_seed = detail::get_seed(j.at("model_seed"), "config.model_seed");
  c.hidden_dim = detail::get_int(j, "hidden_dim", c.hidden_dim, ctx);
  c.lambda = detail::get_double(j, "lambda", c.lambda, ctx);
  c.gibbs_sweeps = detail::get_int(j, "gibbs_sweeps", c.gibbs_sweeps, ctx);
  if (j.contains("model")) c.model_path = j.at("model").get<std::string>();
  if (j.contains("samples")) c.samples_path = j.at("samples").get<std::string>();
  if (j.contains("output")) c.output = j.at("output").get<std::string>();

  // Mode-search presets depend on the final dimensions.
  switch (c.experiment) {
    case Experiment::kGmDeltaSweep:
    case Experiment::kGmPiSweep:
    case Experiment::kGmLevel:
      c.test.bounds = Box::cube(c.dim, -10.0, 16.0);
      c.test.n_init = 20;
      break;
    case Experiment::kTBananaSigmaSweep:
      c.test.bounds = Box::cube(c.dim, -20.0, 20.0);
      c.test.n_init = 10 * (c.num_t + c.num_banana);
      break;
    case Experiment::kRbmStandard:
      c.test.bounds = Box::cube(c.dim, -6.0, 6.0);
      c.test.n_init = 20;
      break;
    case Experiment::kRbmMultimodal:
      c.test.bounds = Box::cube(c.dim, -6.0, 6.0);
      c.test.n_init = 10 * (1 << std::min(std::min(c.hidden_dim, c.dim), 10));
      break;
    case Experiment::kSensorsFromFile:
      c.test.bounds = Box::cube(c.dim, -0.5, 1.5);
      c.test.n_init = 50;
      break;
  }
  c.test.n_init = detail::get_int(j, "n_init", c.test.n_init, ctx);
  if (j.contains("bounds")) c.test.bounds = parse_bounds(j.at("bounds").get<std::string>(), c.dim);

  require(c.reps >= 1, "config.reps must be >= 1");
  require(c.n >= 2, "config.n must be >= 2");
  require(c.dim >= 1, "config.dim must be >= 1");
  require(!c.sweep_values.empty(), "config.sweep_values is empty");
  require(c.test.alpha > 0.0 && c.test.alpha < 1.0, "config.alpha must lie in (0, 1)");
  require(c.test.num_bootstrap >= 1, "config.bootstrap must be >= 1");
  require(c.test.steps >= 0, "config.steps must be >= 0");
  require(c.test.n_init >= 1, "config.n_init must be >= 1");
  if (c.experiment == Experiment::kSensorsFromFile) {
    require(!c.model_path.empty() && !c.samples_path.empty(),
            "sensors_from_file needs 'model' and 'samples' file paths");
  }
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  return parse_experiment_config(read_json_file(path));
}

/// Target model and one data set for a (sweep value, repetition seed).
struct Scenario {
  ScoreModel model;
  Matrix samples;
};

namespace detail {

inline std::vector<Vector> random_centers(int count, int dim, std::uint64_t seed) {
  Rng rng(derive_seed(seed, Stream::kData, 0xce));
  std::vector<Vector> out;
  for (int m = 0; m < count; ++m) {
    Vector c(dim);
    for (int k = 0; k < dim; ++k) c(k) = -20.0 + 40.0 * uniform01(rng);
    out.push_back(c);
  }
  return out;
}

// Unimodal "standard" RBM: B entries +-1, b and c standard normal.
inline RBMParams standard_rbm(int dim, int hidden_dim, std::uint64_t seed) {
  Rng rng(derive_seed(seed, Stream::kData, 0xb0));
  RBMParams p;
  p.B.resize(dim, hidden_dim);
  for (Eigen::Index i = 0; i < p.B.size(); ++i) p.B.data()[i] = uniform01(rng) < 0.5 ? -1.0 : 1.0;
  p.b.resize(dim);
  for (int k = 0; k < dim; ++k) p.b(k) = standard_normal(rng);
  p.c.resize(hidden_dim);
  for (int k = 0; k < hidden_dim; ++k) p.c(k) = standard_normal(rng);
  return p;
}

}  // namespace detail

class ScenarioFactory {
 public:
  explicit ScenarioFactory(const ExperimentConfig& config) : c_(config) {
    if (c_.experiment == Experiment::kSensorsFromFile) {
      const ModelSpec spec = load_model_spec(c_.model_path);
      sensor_model_ = make_model(spec);
      sensor_samples_ = read_samples_csv(c_.samples_path);
      require_same_dim(sensor_samples_.cols(), sensor_model_->dim(), "sensor samples vs model");
    }
  }

  Scenario make(double value, std::uint64_t rep_seed) const {
    const int d = c_.dim;
    switch (c_.experiment) {
      case Experiment::kGmDeltaSweep:
        return {gaussian_mixture_model(GaussianMixtureParams::bimodal(d, 0.5, value)),
                sample_gaussian_mixture(GaussianMixtureParams::bimodal(d, c_.sample_pi, value), c_.n, rep_seed)};
      case Experiment::kGmPiSweep:
        return {gaussian_mixture_model(GaussianMixtureParams::bimodal(d, 0.5, c_.delta)),
                sample_gaussian_mixture(GaussianMixtureParams::bimodal(d, value, c_.delta), c_.n, rep_seed)};
      case Experiment::kGmLevel: {
        require(value >= 2 && value == std::floor(value), "gm_level sweep values are sample sizes");
        const auto params = GaussianMixtureParams::bimodal(d, 0.5, c_.delta);
        return {gaussian_mixture_model(params),
                sample_gaussian_mixture(params, static_cast<Eigen::Index>(value), rep_seed)};
      }
      case Experiment::kTBananaSigmaSweep: {
        TBananaMixtureParams target;
        target.num_t = c_.num_t;
        target.num_banana = c_.num_banana;
        target.centers = detail::random_centers(target.num_components(), d, c_.model_seed);
        target.weights = Vector::Constant(target.num_components(), 1.0 / target.num_components());
        TBananaMixtureParams sampled = target;
        // w_j proportional to exp(w~_j), w~_j ~ N(0, sigma_s^2).
        Rng rng(derive_seed(rep_seed, Stream::kWeights));
        for (int m = 0; m < sampled.num_components(); ++m) sampled.weights(m) = std::exp(value * standard_normal(rng));
        sampled.weights /= sampled.weights.sum();
        return {t_banana_model(target), sample_t_banana(sampled, c_.n, rep_seed)};
      }
      case Experiment::kRbmStandard: {
        const RBMParams target = detail::standard_rbm(d, c_.hidden_dim, c_.model_seed);
        RBMParams sampled = target;
        Rng rng(derive_seed(rep_seed, Stream::kWeights));
        for (Eigen::Index i = 0; i < sampled.B.size(); ++i) sampled.B.data()[i] += value * standard_normal(rng);
        return {rbm_model(target), sample_rbm_independent_chains(sampled, c_.n, c_.gibbs_sweeps, rep_seed)};
      }
      case Experiment::kRbmMultimodal: {
        const int dh = c_.hidden_dim;
        const RBMParams target = RBMParams::multimodal(d, dh, c_.lambda, Vector::Zero(dh));
        Vector c0 = Vector::Zero(dh);
        c0.head(std::min(2, dh)).setConstant(value);
        const RBMParams sampled = RBMParams::multimodal(d, dh, c_.lambda, c0);
        return {rbm_model(target), sample_rbm_shifted(sampled, c_.n, 1, 1, rep_seed, 0.0)};
      }
      case Experiment::kSensorsFromFile: {
        const Eigen::Index total = sensor_samples_.rows();
        if (c_.n >= total) return {*sensor_model_, sensor_samples_};
        std::vector<Eigen::Index> idx(static_cast<std::size_t>(total));
        for (Eigen::Index i = 0; i < total; ++i) idx[static_cast<std::size_t>(i)] = i;
        Rng rng(derive_seed(rep_seed, Stream::kData));
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(static_cast<std::size_t>(c_.n));
        std::sort(idx.begin(), idx.end());
        return {*sensor_model_, select_rows(sensor_samples_, idx)};
      }
    }
    throw std::logic_error("unhandled experiment");
  }

 private:
  ExperimentConfig c_;
  std::optional<ScoreModel> sensor_model_;
  Matrix sensor_samples_;
};

// ---------------------------------------------------------------------------
// Sweeps

struct Interval {
  double low;
  double high;
};

/// 95% Wilson score interval for k successes out of n.
inline Interval wilson_interval(int successes, int trials, double z = 1.959963984540054) {
  require(trials >= 1 && successes >= 0 && successes <= trials, "wilson_interval: invalid counts");
  const double n = trials;
  const double p = successes / n;
  const double z2 = z * z;
  const double centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
  const double half = z / (1.0 + z2 / n) * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n));
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

struct SweepRow {
  double sweep_value;
  Method method;
  double rejection_rate;
  double ci_low;
  double ci_high;
  double mean_statistic;
  double wall_time;
  int rejections;
  int reps;
};

struct SweepResult {
  std::vector<SweepRow> rows;

  const SweepRow& find(double value, Method m) const {
    for (const auto& r : rows) {
      if (r.sweep_value == value && r.method == m) return r;
    }
    throw InputError("sweep has no row for value " + format_double(value) + " and method " + to_string(m));
  }
};

/// Repetition r uses seed = config.seed + r for both the data and the test, so
/// all methods and sweep values see common random numbers. Any failing
/// repetition aborts the sweep.
inline SweepResult run_sweep(const ExperimentConfig& config) {
  const ScenarioFactory factory(config);
  SweepResult out;
  for (double value : config.sweep_values) {
    const std::size_t nm = config.methods.size();
    const auto reps = static_cast<std::size_t>(config.reps);
    std::vector<TestResult> results(reps * nm);
    std::vector<double> seconds(reps * nm, 0.0);
    parallel_for(reps, [&](std::size_t rep) {
      const std::uint64_t seed = config.seed + rep;
      const Scenario sc = factory.make(value, seed);
      for (std::size_t m = 0; m < nm; ++m) {
        const auto start = std::chrono::steady_clock::now();
        results[rep * nm + m] = run_single_test(config.methods[m], sc.samples, sc.model, config.test, seed);
        seconds[rep * nm + m] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      }
    });
    for (std::size_t m = 0; m < nm; ++m) {
      int rejections = 0;
      double stat_sum = 0.0;
      double time_sum = 0.0;
      for (std::size_t rep = 0; rep < reps; ++rep) {
        rejections += results[rep * nm + m].reject ? 1 : 0;
        stat_sum += results[rep * nm + m].statistic;
        time_sum += seconds[rep * nm + m];
      }
      const Interval ci = wilson_interval(rejections, config.reps);
      out.rows.push_back({value, config.methods[m], static_cast<double>(rejections) / config.reps, ci.low, ci.high,
                          stat_sum / config.reps, time_sum, rejections, config.reps});
    }
  }
  return out;
}

inline void write_sweep_csv(std::ostream& out, const SweepResult& result) {
  out << "sweep_value,method,rejection_rate,ci_low,ci_high,mean_statistic,wall_time\n";
  for (const auto& r : result.rows) {
    out << format_double(r.sweep_value) << ',' << to_string(r.method) << ',' << format_double(r.rejection_rate)
        << ',' << format_double(r.ci_low) << ',' << format_double(r.ci_high) << ','
        << format_double(r.mean_statistic) << ',' << format_double(r.wall_time) << '\n';
  }
}

inline void write_sweep_csv(const std::string& path, const SweepResult& result) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "cannot open '" + path + "' for writing");
  write_sweep_csv(out, result);
  require(static_cast<bool>(out), "failed writing '" + path + "'");
}

}  // namespace stein_perturb
