// Command-line front end: test, sweep, sample, modes.

#include "stein_perturb/experiments.hpp"
#include "stein_perturb/io.hpp"
#include "stein_perturb/modes.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

namespace sp = stein_perturb;

namespace {

void emit_json(const std::string& path, const sp::Json& j) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << '\n';
  } else {
    sp::write_json_file(path, j);
  }
}

struct TestArgs {
  std::string model;
  std::string samples;
  std::string method = "ksd";
  double alpha = 0.05;
  int bootstrap = 500;
  int steps = 1000;
  std::string theta_grid = "0.5:1.5:51";
  std::uint64_t seed = 0;
  std::string bounds;
  int n_init = 20;
  double beta = 0.01;
  double split_frac = 0.5;
  std::string accept_rule = "mh";
  std::string out;
};

int run_test(const TestArgs& a) {
  const sp::ModelSpec spec = sp::load_model_spec(a.model);
  const sp::ScoreModel model = sp::make_model(spec);
  const sp::Matrix samples = sp::read_samples_csv(a.samples);
  sp::require_same_dim(samples.cols(), model.dim(), "--samples columns vs --model dimension");
  sp::TestSettings s;
  s.alpha = a.alpha;
  s.num_bootstrap = a.bootstrap;
  s.steps = a.steps;
  s.theta_grid = sp::parse_theta_grid(a.theta_grid);
  if (!a.bounds.empty()) s.bounds = sp::parse_bounds(a.bounds, model.dim());
  s.n_init = a.n_init;
  s.mode_search.beta = a.beta;
  s.split_frac = a.split_frac;
  s.rule = sp::parse_accept_rule(a.accept_rule);
  const sp::TestResult r = sp::run_single_test(sp::parse_method(a.method), samples, model, s, a.seed);
  sp::Json j = sp::test_result_json(r);
  j["method"] = a.method;
  j["model"] = spec.name();
  j["n"] = samples.rows();
  emit_json(a.out, j);
  return 0;
}

int run_sweep(const std::string& config_path, const std::string& out_override) {
  sp::ExperimentConfig config = sp::load_experiment_config(config_path);
  const std::string out = out_override.empty() ? config.output : out_override;
  sp::require(!out.empty(), "no output path: pass --out or set 'output' in the config");
  const sp::SweepResult result = sp::run_sweep(config);
  if (out == "-") {
    sp::write_sweep_csv(std::cout, result);
  } else {
    sp::write_sweep_csv(out, result);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kernelized Stein discrepancy goodness-of-fit tests with perturbation kernels"};
  app.require_subcommand(1);

  TestArgs t;
  auto* test = app.add_subcommand("test", "Run a KSD, spKSD or ospKSD test on a sample file");
  test->add_option("--model", t.model, "Model spec JSON")->required();
  test->add_option("--samples", t.samples, "Headerless CSV, one observation per row")->required();
  test->add_option("--method", t.method, "ksd | spksd | ospksd")->capture_default_str();
  test->add_option("--alpha", t.alpha, "Test level")->capture_default_str();
  test->add_option("--bootstrap", t.bootstrap, "Bootstrap replicates")->capture_default_str();
  test->add_option("--steps", t.steps, "Transition steps T")->capture_default_str();
  test->add_option("--theta-grid", t.theta_grid, "lo:hi:count or comma list")->capture_default_str();
  test->add_option("--seed", t.seed, "Seed")->capture_default_str();
  test->add_option("--bounds", t.bounds, "Mode-search box, L:U or L1:U1,L2:U2,...");
  test->add_option("--n-init", t.n_init, "BFGS starting points")->capture_default_str();
  test->add_option("--beta", t.beta, "Mode merge threshold")->capture_default_str();
  test->add_option("--split-frac", t.split_frac, "ospKSD training fraction")->capture_default_str();
  test->add_option("--accept-rule", t.accept_rule, "mh | barker")->capture_default_str();
  test->add_option("--out", t.out, "Result JSON (default stdout)");

  std::string sweep_config;
  std::string sweep_out;
  auto* sweep = app.add_subcommand("sweep", "Run a seeded repetition sweep and write a CSV");
  sweep->add_option("--config", sweep_config, "Experiment config JSON")->required();
  sweep->add_option("--out", sweep_out, "Output CSV ('-' for stdout)");

  std::string sample_model;
  std::string sample_out;
  long sample_n = 1000;
  std::uint64_t sample_seed = 0;
  sp::SamplerOptions sampler;
  auto* sample = app.add_subcommand("sample", "Draw samples from a model spec");
  sample->add_option("--model", sample_model, "Model spec JSON")->required();
  sample->add_option("--n", sample_n, "Number of draws")->capture_default_str();
  sample->add_option("--seed", sample_seed, "Seed")->capture_default_str();
  sample->add_option("--burnin", sampler.burnin, "Gibbs burn-in (RBM)")->capture_default_str();
  sample->add_option("--thin", sampler.thin, "Gibbs thinning (RBM)")->capture_default_str();
  sample->add_option("--lambda-prime", sampler.lambda_prime, "Coupling of the shifted Gibbs chain (RBM)")
      ->capture_default_str();
  sample->add_option("--out", sample_out, "Output CSV (default stdout)");

  std::string modes_model;
  std::string modes_bounds;
  std::string modes_out;
  int modes_n_init = 50;
  std::uint64_t modes_seed = 0;
  sp::ModeSearchOptions mode_opts;
  auto* modes = app.add_subcommand("modes", "Estimate modes and local Hessians");
  modes->add_option("--model", modes_model, "Model spec JSON")->required();
  modes->add_option("--n-init", modes_n_init, "BFGS starting points")->capture_default_str();
  modes->add_option("--bounds", modes_bounds, "Box L:U or L1:U1,L2:U2,...")->required();
  modes->add_option("--seed", modes_seed, "Seed")->capture_default_str();
  modes->add_option("--beta", mode_opts.beta, "Merge threshold")->capture_default_str();
  modes->add_option("--max-iter", mode_opts.bfgs.max_iter, "BFGS iteration cap")->capture_default_str();
  modes->add_option("--out", modes_out, "Output JSON (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*test) return run_test(t);
    if (*sweep) return run_sweep(sweep_config, sweep_out);
    if (*sample) {
      const sp::ModelSpec spec = sp::load_model_spec(sample_model);
      const sp::Matrix x = sp::sample_from_spec(spec, sample_n, sample_seed, sampler);
      if (sample_out.empty() || sample_out == "-") {
        sp::write_samples_csv(std::cout, x);
      } else {
        sp::write_samples_csv(sample_out, x);
      }
      return 0;
    }
    if (*modes) {
      const sp::ScoreModel model = sp::make_model(sp::load_model_spec(modes_model));
      const sp::Box box = sp::parse_bounds(modes_bounds, model.dim());
      const sp::Matrix inits = sp::init_uniform(box, modes_n_init, sp::derive_seed(modes_seed, sp::Stream::kModeInit));
      emit_json(modes_out, sp::mode_set_json(sp::find_modes(model, inits, mode_opts)));
      return 0;
    }
  } catch (const sp::InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const sp::Json::exception& e) {
    std::cerr << "error: malformed JSON input: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
