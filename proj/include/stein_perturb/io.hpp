#pragma once

#include "stein_perturb/core.hpp"
#include "stein_perturb/models.hpp"
#include "stein_perturb/modes.hpp"
#include "stein_perturb/samplers.hpp"
#include "stein_perturb/stein.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace stein_perturb {

using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// CSV samples: headerless, one observation per row.

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline void write_samples_csv(std::ostream& out, const Matrix& samples) {
  std::string line;
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    line.clear();
    for (Eigen::Index k = 0; k < samples.cols(); ++k) {
      if (k > 0) line += ',';
      line += format_double(samples(i, k));
    }
    line += '\n';
    out << line;
  }
}

inline void write_samples_csv(const std::string& path, const Matrix& samples) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "cannot open '" + path + "' for writing");
  write_samples_csv(out, samples);
  require(static_cast<bool>(out), "failed writing '" + path + "'");
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace detail

/// Parses headerless numeric CSV. Blank lines are skipped; every other line must
/// have the same number of finite fields. Errors name the source and line number.
inline Matrix read_samples_csv(std::istream& in, const std::string& source = "<stream>") {
  std::vector<double> values;
  Eigen::Index cols = -1;
  Eigen::Index rows = 0;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view body = detail::trim(line);
    if (body.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    Eigen::Index count = 0;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = body.find(',', start);
      const std::string_view field =
          detail::trim(body.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
      double v = 0.0;
      const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
      if (field.empty() || res.ec != std::errc() || res.ptr != field.data() + field.size()) {
        throw InputError(where + ": malformed number '" + std::string(field) + "'");
      }
      if (!std::isfinite(v)) throw InputError(where + ": non-finite value '" + std::string(field) + "'");
      values.push_back(v);
      ++count;
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (cols < 0) cols = count;
    if (count != cols) {
      throw InputError(where + ": expected " + std::to_string(cols) + " columns, found " + std::to_string(count));
    }
    ++rows;
  }
  if (rows == 0) throw InputError(source + ": no samples (empty file)");
  Matrix out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index k = 0; k < cols; ++k) out(i, k) = values[static_cast<std::size_t>(i * cols + k)];
  }
  return out;
}

inline Matrix read_samples_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "cannot open sample file '" + path + "'");
  return read_samples_csv(in, path);
}

// ---------------------------------------------------------------------------
// JSON helpers

namespace detail {

inline const Json& field(const Json& obj, const char* key, const std::string& ctx) {
  require(obj.is_object(), ctx + ": expected a JSON object");
  const auto it = obj.find(key);
  if (it == obj.end()) throw InputError(ctx + ": missing field '" + key + "'");
  return *it;
}

inline double as_double(const Json& j, const std::string& ctx) {
  require(j.is_number(), ctx + ": expected a number");
  const double v = j.get<double>();
  require(std::isfinite(v), ctx + ": expected a finite number");
  return v;
}

inline double get_double(const Json& obj, const char* key, double fallback, const std::string& ctx) {
  const auto it = obj.find(key);
  return it == obj.end() ? fallback : as_double(*it, ctx + "." + key);
}

inline int get_int(const Json& obj, const char* key, int fallback, const std::string& ctx) {
  const auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  require(it->is_number_integer(), ctx + "." + key + ": expected an integer");
  return it->get<int>();
}

inline std::uint64_t get_seed(const Json& j, const std::string& ctx) {
  const bool ok = j.is_number_unsigned() || (j.is_number_integer() && j.get<std::int64_t>() >= 0);
  require(ok, ctx + " must be a nonnegative integer");
  return j.get<std::uint64_t>();
}

inline Vector as_vector(const Json& j, const std::string& ctx) {
  require(j.is_array(), ctx + ": expected an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = as_double(j[i], ctx);
  return v;
}

// Row-major nested array.
inline Matrix as_matrix(const Json& j, const std::string& ctx) {
  require(j.is_array() && !j.empty(), ctx + ": expected a non-empty array of rows");
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  require(cols > 0, ctx + ": rows must be non-empty arrays");
  Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < j.size(); ++i) {
    require(j[i].is_array() && j[i].size() == cols, ctx + ": ragged matrix");
    for (std::size_t k = 0; k < cols; ++k) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = as_double(j[i][k], ctx);
    }
  }
  return m;
}

inline std::vector<Vector> as_vector_list(const Json& j, const std::string& ctx) {
  require(j.is_array(), ctx + ": expected an array of vectors");
  std::vector<Vector> out;
  for (const auto& v : j) out.push_back(as_vector(v, ctx));
  return out;
}

inline Json vector_json(const Vector& v) { return Json(std::vector<double>(v.data(), v.data() + v.size())); }

inline Json matrix_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vector_json(m.row(i).transpose()));
  return rows;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Model specifications: {"model": name, "params": {...}}

using ModelParams = std::variant<GaussianMixtureParams, TBananaMixtureParams, SensorPosteriorParams, RBMParams>;

struct ModelSpec {
  ModelParams params;

  std::string name() const {
    switch (params.index()) {
      case 0: return "gaussian_mixture";
      case 1: return "t_banana";
      case 2: return "sensor";
      default: return "rbm";
    }
  }
};

inline GaussianMixtureParams parse_gaussian_mixture(const Json& p) {
  const std::string ctx = "params";
  GaussianMixtureParams g;
  // Shorthand for the two-component family pi N(0, I) + (1 - pi) N(delta e1, I).
  if (p.contains("pi") || p.contains("delta")) {
    g = GaussianMixtureParams::bimodal(detail::get_int(p, "dim", 1, ctx), detail::get_double(p, "pi", 0.5, ctx),
                                       detail::get_double(p, "delta", 6.0, ctx));
  } else {
    g.weights = detail::as_vector(detail::field(p, "weights", ctx), ctx + ".weights");
    g.means = detail::as_vector_list(detail::field(p, "means", ctx), ctx + ".means");
    if (p.contains("covariances")) {
      for (const auto& c : p.at("covariances")) g.covariances.push_back(detail::as_matrix(c, ctx + ".covariances"));
    }
  }
  g.validate();
  return g;
}

inline TBananaMixtureParams parse_t_banana(const Json& p) {
  const std::string ctx = "params";
  TBananaMixtureParams t;
  t.num_t = detail::get_int(p, "num_t", t.num_t, ctx);
  t.num_banana = detail::get_int(p, "num_banana", t.num_banana, ctx);
  t.centers = detail::as_vector_list(detail::field(p, "centers", ctx), ctx + ".centers");
  t.weights = detail::as_vector(detail::field(p, "weights", ctx), ctx + ".weights");
  t.dof = detail::get_double(p, "dof", t.dof, ctx);
  t.t_scale = detail::get_double(p, "t_scale", t.t_scale, ctx);
  t.banana_b = detail::get_double(p, "banana_b", t.banana_b, ctx);
  if (p.contains("banana_shape")) t.banana_shape = detail::as_vector(p.at("banana_shape"), ctx + ".banana_shape");
  t.validate();
  return t;
}

inline SensorPosteriorParams parse_sensor(const Json& p) {
  const std::string ctx = "params";
  SensorPosteriorParams s;
  s.known_sensor_locations =
      detail::as_vector_list(detail::field(p, "known_sensor_locations", ctx), ctx + ".known_sensor_locations");
  s.observation_indicators =
      detail::as_matrix(detail::field(p, "observation_indicators", ctx), ctx + ".observation_indicators");
  s.observed_distances = detail::as_matrix(detail::field(p, "observed_distances", ctx), ctx + ".observed_distances");
  s.prior_sd = detail::get_double(p, "prior_sd", s.prior_sd, ctx);
  s.obs_sd = detail::get_double(p, "obs_sd", s.obs_sd, ctx);
  s.detect_sd = detail::get_double(p, "detect_sd", s.detect_sd, ctx);
  s.validate();
  return s;
}

inline RBMParams parse_rbm(const Json& p) {
  const std::string ctx = "params";
  RBMParams r;
  if (p.contains("lambda")) {
    // Multimodal shorthand: B = lambda E, b = 0.
    const int d = detail::get_int(p, "dim", 10, ctx);
    const int dh = detail::get_int(p, "hidden_dim", 5, ctx);
    const Vector c = p.contains("c") ? detail::as_vector(p.at("c"), ctx + ".c") : Vector::Zero(dh);
    r = RBMParams::multimodal(d, dh, detail::as_double(p.at("lambda"), ctx + ".lambda"), c);
  } else {
    r.B = detail::as_matrix(detail::field(p, "B", ctx), ctx + ".B");
    r.b = detail::as_vector(detail::field(p, "b", ctx), ctx + ".b");
    r.c = detail::as_vector(detail::field(p, "c", ctx), ctx + ".c");
  }
  r.validate();
  return r;
}

inline ModelSpec parse_model_spec(const Json& j) {
  const std::string name = [&] {
    const Json& m = detail::field(j, "model", "model spec");
    require(m.is_string(), "model spec: 'model' must be a string");
    return m.get<std::string>();
  }();
  const Json& p = detail::field(j, "params", "model spec");
  if (name == "gaussian_mixture") return {parse_gaussian_mixture(p)};
  if (name == "t_banana") return {parse_t_banana(p)};
  if (name == "sensor") return {parse_sensor(p)};
  if (name == "rbm") return {parse_rbm(p)};
  throw InputError("model spec: unknown model '" + name + "'");
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw InputError(path + ": invalid JSON: " + e.what());
  }
}

inline ModelSpec load_model_spec(const std::string& path) { return parse_model_spec(read_json_file(path)); }

inline Json model_spec_json(const ModelSpec& spec) {
  Json p = Json::object();
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, GaussianMixtureParams>) {
          p["weights"] = detail::vector_json(v.weights);
          Json means = Json::array();
          for (const auto& m : v.means) means.push_back(detail::vector_json(m));
          p["means"] = means;
          if (!v.covariances.empty()) {
            Json covs = Json::array();
            for (const auto& c : v.covariances) covs.push_back(detail::matrix_json(c));
            p["covariances"] = covs;
          }
        } else if constexpr (std::is_same_v<T, TBananaMixtureParams>) {
          p["num_t"] = v.num_t;
          p["num_banana"] = v.num_banana;
          Json centers = Json::array();
          for (const auto& c : v.centers) centers.push_back(detail::vector_json(c));
          p["centers"] = centers;
          p["weights"] = detail::vector_json(v.weights);
          p["dof"] = v.dof;
          p["t_scale"] = v.t_scale;
          p["banana_b"] = v.banana_b;
          if (v.banana_shape.size() > 0) p["banana_shape"] = detail::vector_json(v.banana_shape);
        } else if constexpr (std::is_same_v<T, SensorPosteriorParams>) {
          Json known = Json::array();
          for (const auto& k : v.known_sensor_locations) known.push_back(detail::vector_json(k));
          p["known_sensor_locations"] = known;
          p["observation_indicators"] = detail::matrix_json(v.observation_indicators);
          p["observed_distances"] = detail::matrix_json(v.observed_distances);
          p["prior_sd"] = v.prior_sd;
          p["obs_sd"] = v.obs_sd;
          p["detect_sd"] = v.detect_sd;
        } else {
          p["B"] = detail::matrix_json(v.B);
          p["b"] = detail::vector_json(v.b);
          p["c"] = detail::vector_json(v.c);
        }
      },
      spec.params);
  return Json{{"model", spec.name()}, {"params", p}};
}

inline ScoreModel make_model(const ModelSpec& spec) {
  return std::visit(
      [](const auto& v) -> ScoreModel {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, GaussianMixtureParams>) return gaussian_mixture_model(v);
        else if constexpr (std::is_same_v<T, TBananaMixtureParams>) return t_banana_model(v);
        else if constexpr (std::is_same_v<T, SensorPosteriorParams>) return sensor_posterior_model(v);
        else return rbm_model(v);
      },
      spec.params);
}

struct SamplerOptions {
  int burnin = 1000;
  int thin = 1;
  double lambda_prime = 0.0;
};

/// Draws from the distribution a spec describes. RBMs with B = lambda E use the
/// shifted sampler, other RBMs a plain Gibbs chain. The sensor posterior has no
/// built-in sampler.
inline Matrix sample_from_spec(const ModelSpec& spec, Eigen::Index n, std::uint64_t seed,
                               const SamplerOptions& options = {}) {
  return std::visit(
      [&](const auto& v) -> Matrix {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, GaussianMixtureParams>) {
          return sample_gaussian_mixture(v, n, seed);
        } else if constexpr (std::is_same_v<T, TBananaMixtureParams>) {
          return sample_t_banana(v, n, seed);
        } else if constexpr (std::is_same_v<T, SensorPosteriorParams>) {
          throw InputError("no built-in sampler for the sensor posterior; supply samples from a file");
        } else {
          bool lambda_form = true;
          try {
            rbm_lambda(v);
          } catch (const InputError&) {
            lambda_form = false;
          }
          if (lambda_form) return sample_rbm_shifted(v, n, options.burnin, options.thin, seed, options.lambda_prime);
          return sample_rbm_gibbs(v, n, options.burnin, options.thin, seed);
        }
      },
      spec.params);
}

// ---------------------------------------------------------------------------
// Results and modes

inline Json test_result_json(const TestResult& r) {
  Json extras = Json::object();
  for (const auto& [k, v] : r.extras) extras[k] = std::isfinite(v) ? Json(v) : Json(nullptr);
  return Json{{"statistic", r.statistic},
              {"bootstrap_quantile", std::isfinite(r.bootstrap_quantile) ? Json(r.bootstrap_quantile) : Json(nullptr)},
              {"p_value", r.p_value},
              {"reject", r.reject},
              {"alpha", r.alpha},
              {"num_bootstrap", r.num_bootstrap},
              {"seed", r.seed},
              {"extras", extras}};
}

inline void write_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
  require(static_cast<bool>(out), "failed writing '" + path + "'");
}

inline void write_result_json(const std::string& path, const TestResult& r) {
  write_json_file(path, test_result_json(r));
}

inline Json mode_set_json(const ModeSet& modes) {
  Json out = Json::array();
  for (const Mode& m : modes.modes) {
    out.push_back(Json{{"mu", detail::vector_json(m.mu)},
                       {"A", detail::matrix_json(m.A)},
                       {"log_det_A", m.log_det_A},
                       {"log_density", m.log_density},
                       {"identity_fallback", m.identity_fallback}});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Command-line value formats

namespace detail {

inline double parse_number(std::string_view text, const std::string& ctx) {
  text = trim(text);
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || res.ec != std::errc() || res.ptr != text.data() + text.size() || !std::isfinite(v)) {
    throw InputError(ctx + ": malformed number '" + std::string(text) + "'");
  }
  return v;
}

inline std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = text.find(sep, start);
    out.push_back(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace detail

/// "lo:hi:count" (equally spaced, endpoints included) or a comma-separated list.
inline std::vector<double> parse_theta_grid(const std::string& text) {
  const auto parts = detail::split(text, ':');
  std::vector<double> grid;
  if (parts.size() == 3) {
    const double lo = detail::parse_number(parts[0], "theta grid");
    const double hi = detail::parse_number(parts[1], "theta grid");
    const double count = detail::parse_number(parts[2], "theta grid");
    require(count >= 1 && count == std::floor(count), "theta grid: count must be a positive integer");
    grid = linspace(lo, hi, static_cast<int>(count));
  } else {
    require(parts.size() == 1, "theta grid: expected 'lo:hi:count' or a comma-separated list");
    for (auto p : detail::split(text, ',')) grid.push_back(detail::parse_number(p, "theta grid"));
  }
  for (double t : grid) require(t > 0.0, "theta grid: values must be positive");
  return grid;
}

/// "L:U" for the cube [L, U]^dim, or "L1:U1,L2:U2,..." with one pair per coordinate.
inline Box parse_bounds(const std::string& text, int dim) {
  const auto pairs = detail::split(text, ',');
  Box box{Vector(dim), Vector(dim)};
  require(pairs.size() == 1 || static_cast<int>(pairs.size()) == dim,
          "bounds: expected one 'L:U' pair or one per coordinate");
  for (int k = 0; k < dim; ++k) {
    const auto lu = detail::split(pairs[pairs.size() == 1 ? 0 : static_cast<std::size_t>(k)], ':');
    require(lu.size() == 2, "bounds: expected 'L:U'");
    box.lower(k) = detail::parse_number(lu[0], "bounds");
    box.upper(k) = detail::parse_number(lu[1], "bounds");
  }
  box.validate();
  return box;
}

}  // namespace stein_perturb
