#pragma once

#include <metareg/effect_size.hpp>
#include <metareg/error.hpp>
#include <metareg/inference.hpp>
#include <metareg/linalg.hpp>
#include <metareg/model.hpp>
#include <metareg/random.hpp>
#include <metareg/reml.hpp>
#include <metareg/robust_cov.hpp>
#include <metareg/wls.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace metareg {

// ---------------------------------------------------------------------------
// Scenario description
// ---------------------------------------------------------------------------

enum class RandomEffectDist { Normal, Exponential, Laplace, LogNormal, T3 };

inline constexpr std::array<RandomEffectDist, 5> kAllDists = {
    RandomEffectDist::Normal, RandomEffectDist::Exponential,
    RandomEffectDist::Laplace, RandomEffectDist::LogNormal,
    RandomEffectDist::T3};

inline std::string_view to_string(RandomEffectDist d) {
  switch (d) {
  case RandomEffectDist::Normal: return "normal";
  case RandomEffectDist::Exponential: return "exponential";
  case RandomEffectDist::Laplace: return "laplace";
  case RandomEffectDist::LogNormal: return "lognormal";
  case RandomEffectDist::T3: return "t3";
  }
  return "?";
}

inline std::optional<RandomEffectDist> parse_dist(std::string_view text) {
  for (auto d : kAllDists)
    if (to_string(d) == text)
      return d;
  return std::nullopt;
}

/// Names of the two simulated moderators; fitted model specs index into them.
inline const std::vector<std::string> &simulated_moderator_names() {
  static const std::vector<std::string> names{"x1", "x2"};
  return names;
}

/// Fitted model matching the generative model: x1, x2, x1:x2.
inline ModelSpec default_fit_spec(bool intercept) {
  ModelSpec spec;
  spec.intercept = intercept;
  spec.moderators = {0, 1};
  spec.interactions = {{0, 1}};
  return spec;
}

struct ScenarioSpec {
  int k = 6;
  int nbar = 25;
  double tau2 = 0.5;
  double beta1 = 0.2;
  double beta2 = 0.2;
  double beta12 = 0.0;
  double rho = 0.2;
  RandomEffectDist re_dist = RandomEffectDist::Normal;
  ModelSpec fit = default_fit_spec(false);
  double level = 0.95;
  std::int64_t reps = 1000;
  std::uint64_t seed = 1;
  double eta = kDefaultEta;
  RemlConfig reml{};

  void validate() const;

  /// Human-readable identifier of the generative parameters and fitted model.
  /// Stable across runs and platforms; contains no commas.
  std::string id() const;

  std::uint64_t hash() const { return fnv1a64(id()); }
};

namespace detail {

inline std::string shortest(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

} // namespace detail

inline std::string ScenarioSpec::id() const {
  const auto &names = simulated_moderator_names();
  std::string fit_text = fit.intercept ? "1" : "0";
  for (auto j : fit.moderators)
    fit_text += "+" + names.at(j);
  for (auto [a, b] : fit.interactions)
    fit_text += "+" + names.at(a) + ":" + names.at(b);
  return "k=" + std::to_string(k) + ";nbar=" + std::to_string(nbar) +
         ";tau2=" + detail::shortest(tau2) +
         ";beta1=" + detail::shortest(beta1) +
         ";beta2=" + detail::shortest(beta2) +
         ";beta12=" + detail::shortest(beta12) +
         ";rho=" + detail::shortest(rho) + ";re=" +
         std::string(to_string(re_dist)) + ";fit=" + fit_text;
}

// ---------------------------------------------------------------------------
// Data generation
// ---------------------------------------------------------------------------

/// Per-replication random source: a counter-based stream plus the polar
/// normal sampler's cached deviate.
class ReplicationRng {
public:
  explicit ReplicationRng(RandomStream stream) : stream_(stream) {}

  double uniform() { return stream_.uniform(); }
  double normal() { return normal_(stream_); }
  double exponential() { return sample_exponential(stream_); }
  double chi_square_even(int half_df) {
    return sample_chi_square_even(stream_, half_df);
  }

private:
  RandomStream stream_;
  NormalSampler normal_;
};

/// Group sizes per study. For k = 6 the base vector is followed by one study
/// of size nbar; for k divisible by 5 the base vector is repeated k/5 times.
inline std::vector<int> group_size_vector(int k, int nbar) {
  std::array<int, 5> base{};
  switch (nbar) {
  case 15: base = {6, 8, 9, 10, 42}; break;
  case 25: base = {16, 18, 19, 20, 52}; break;
  case 50: base = {41, 43, 44, 45, 77}; break;
  default:
    throw ValidationError("nbar must be one of 15, 25, 50");
  }
  std::vector<int> sizes;
  if (k == 6) {
    sizes.assign(base.begin(), base.end());
    sizes.push_back(nbar);
  } else if (k > 0 && k % 5 == 0) {
    for (int r = 0; r < k / 5; ++r)
      sizes.insert(sizes.end(), base.begin(), base.end());
  } else {
    throw ValidationError("k must be 6 or a positive multiple of 5");
  }
  return sizes;
}

/// k x 2 bivariate normal moderators with unit variances and correlation rho.
inline Matrix sample_moderators(ReplicationRng &rng, int k, double rho) {
  if (!(std::abs(rho) < 1.0))
    throw ValidationError("rho must satisfy |rho| < 1");
  const double c = std::sqrt(1.0 - rho * rho);
  Matrix x(k, 2);
  for (int i = 0; i < k; ++i) {
    const double z1 = rng.normal();
    const double z2 = rng.normal();
    x(i, 0) = z1;
    x(i, 1) = rho * z1 + c * z2;
  }
  return x;
}

/// exp(1/2) and sqrt(e (e - 1)): mean and sd of a standard log-normal.
inline const double kLogNormalMean = std::exp(0.5);
inline const double kLogNormalSd =
    std::sqrt(std::numbers::e * (std::numbers::e - 1.0));

/// Random effect sqrt(tau2) * q with q standardized to mean 0, variance 1.
inline double sample_random_effect(ReplicationRng &rng, RandomEffectDist dist,
                                   double tau2) {
  if (!(tau2 >= 0.0))
    throw ValidationError("tau2 must be non-negative");
  double q = 0.0;
  switch (dist) {
  case RandomEffectDist::Normal:
    q = rng.normal();
    break;
  case RandomEffectDist::Exponential:
    q = rng.exponential() - 1.0;
    break;
  case RandomEffectDist::Laplace: {
    const double a = rng.exponential();
    const double b = rng.exponential();
    q = (a - b) / std::numbers::sqrt2;
    break;
  }
  case RandomEffectDist::LogNormal:
    q = (std::exp(rng.normal()) - kLogNormalMean) / kLogNormalSd;
    break;
  case RandomEffectDist::T3: {
    const double z = rng.normal();
    const double z2 = rng.normal();
    const double chi3 = rng.chi_square_even(1) + z2 * z2;
    q = z / std::sqrt(chi3 / 3.0) / std::sqrt(3.0);
    break;
  }
  }
  return std::sqrt(tau2) * q;
}

struct StudyDraw {
  double y = 0.0;
  double v = 0.0;
};

/// One balanced two-group study with n per arm and true SMD theta.
inline StudyDraw generate_study(ReplicationRng &rng, double theta, int n) {
  if (n < 2)
    throw ValidationError("group size must be >= 2");
  const double phi = theta + std::sqrt(2.0 / n) * rng.normal();
  const double chi = rng.chi_square_even(n - 1); // df = 2n - 2
  const double g = phi / std::sqrt(chi / (2.0 * n - 2.0));
  StudyDraw out;
  out.y = hedges_correction(2 * n) * g;
  out.v = 2.0 / n + out.y * out.y / (4.0 * n);
  return out;
}

// ---------------------------------------------------------------------------
// Replication
// ---------------------------------------------------------------------------

inline constexpr int kMaxDesignAttempts = 100;

/// The data of one replication, before any fitting.
struct SimulatedData {
  MetaDataset data;
  DesignMatrix design;
  int regenerations = 0; // rank-deficient moderator draws discarded
  bool rank_deficient = false;
};

inline void ScenarioSpec::validate() const {
  group_size_vector(k, nbar);
  if (!(tau2 >= 0.0) || !std::isfinite(tau2))
    throw ValidationError("tau2 must be finite and non-negative");
  if (!(std::abs(rho) < 1.0))
    throw ValidationError("rho must satisfy |rho| < 1");
  if (!std::isfinite(beta1) || !std::isfinite(beta2) || !std::isfinite(beta12))
    throw ValidationError("coefficients must be finite");
  if (!(level > 0.0 && level < 1.0))
    throw ValidationError("level must lie in (0, 1)");
  if (reps < 1)
    throw ValidationError("reps must be >= 1");
  if (!(eta > 0.0 && eta < 1.0))
    throw ValidationError("eta must lie in (0, 1)");
  reml.validate();
  const auto p = fit.num_columns();
  if (p == 0)
    throw ValidationError("fitted model has no columns");
  for (auto j : fit.moderators)
    if (j > 1)
      throw ValidationError("fitted model references unknown moderator");
  for (auto [a, b] : fit.interactions)
    if (a > 1 || b > 1)
      throw ValidationError("fitted model references unknown moderator");
  if (static_cast<long>(k) - static_cast<long>(p) < 1)
    throw ValidationError("k must exceed the number of fitted columns");
}

/// True coefficient of each fitted column under the generative model
/// theta = beta1 x1 + beta2 x2 + beta12 x1 x2 + u.
inline std::vector<double> true_coefficients(const ScenarioSpec &spec,
                                             const DesignMatrix &design) {
  std::vector<double> truth;
  for (const auto &col : design.columns) {
    switch (col.kind) {
    case ColumnSpec::Kind::Intercept:
      truth.push_back(0.0);
      break;
    case ColumnSpec::Kind::Moderator:
      truth.push_back(col.first == 0 ? spec.beta1 : spec.beta2);
      break;
    case ColumnSpec::Kind::Interaction:
      truth.push_back(col.first != col.second ? spec.beta12 : 0.0);
      break;
    }
  }
  return truth;
}

/// Draws the studies of replication r deterministically from (seed, id, r).
inline SimulatedData simulate_dataset(const ScenarioSpec &spec,
                                      std::int64_t replication) {
  ReplicationRng rng(RandomStream::derive(
      spec.seed, spec.hash(), static_cast<std::uint64_t>(replication)));
  const auto sizes = group_size_vector(spec.k, spec.nbar);
  const auto &names = simulated_moderator_names();

  SimulatedData out;
  Matrix x;
  std::vector<StudyRecord> studies(static_cast<std::size_t>(spec.k));
  for (int attempt = 0;; ++attempt) {
    x = sample_moderators(rng, spec.k, spec.rho);
    for (int i = 0; i < spec.k; ++i) {
      auto &s = studies[static_cast<std::size_t>(i)];
      s.id = "s" + std::to_string(i + 1);
      s.moderators = {x(i, 0), x(i, 1)};
      s.v = 1.0;
    }
    MetaDataset probe(studies, names);
    out.design = build_design_matrix(probe, spec.fit);
    if (has_full_column_rank(out.design.X))
      break;
    ++out.regenerations;
    if (attempt + 1 >= kMaxDesignAttempts) {
      out.rank_deficient = true;
      break;
    }
  }

  for (int i = 0; i < spec.k; ++i) {
    const double x1 = x(i, 0);
    const double x2 = x(i, 1);
    const double u = sample_random_effect(rng, spec.re_dist, spec.tau2);
    const double theta =
        spec.beta1 * x1 + spec.beta2 * x2 + spec.beta12 * x1 * x2 + u;
    const auto draw =
        generate_study(rng, theta, sizes[static_cast<std::size_t>(i)]);
    auto &s = studies[static_cast<std::size_t>(i)];
    s.y = draw.y;
    s.v = draw.v;
  }
  out.data = MetaDataset(std::move(studies), names);
  return out;
}

/// Intervals of one replication for every estimator and coefficient.
struct ReplicationRecord {
  bool failed = false;
  bool reml_converged = true;
  int regenerations = 0;
  std::array<bool, 7> estimator_ok{};
  // [estimator][coefficient]
  std::array<std::vector<ConfidenceInterval>, 7> intervals;
};

inline ReplicationRecord run_replication(const ScenarioSpec &spec,
                                         std::int64_t replication,
                                         double multiplier) {
  ReplicationRecord rec;
  auto sim = simulate_dataset(spec, replication);
  rec.regenerations = sim.regenerations;
  if (sim.rank_deficient) {
    rec.failed = true;
    return rec;
  }
  const Vector y = sim.data.effects();
  const Vector v = sim.data.variances();
  try {
    const auto tau2 = reml_tau2(sim.design.X, y, v, spec.reml);
    rec.reml_converged = tau2.converged;
    const auto fit = fit_wls(sim.design.X, y, v, tau2);
    for (std::size_t e = 0; e < kAllVariants.size(); ++e) {
      try {
        const auto cov = covariance(fit, kAllVariants[e], spec.eta);
        rec.intervals[e] =
            confidence_intervals(fit, cov, spec.level, multiplier);
        rec.estimator_ok[e] = true;
      } catch (const NumericError &) {
        rec.estimator_ok[e] = false;
      }
    }
  } catch (const NumericError &) {
    rec.failed = true;
  }
  return rec;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

inline double mc_standard_error(double coverage, std::int64_t n) {
  if (n <= 0)
    return std::numeric_limits<double>::quiet_NaN();
  return std::sqrt(coverage * (1.0 - coverage) / static_cast<double>(n));
}

/// Median with the midpoint rule for even counts. Sorts its argument.
inline double median_of(std::vector<double> values) {
  if (values.empty())
    return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1)
    return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

struct CoefficientSummary {
  std::int64_t n = 0;
  double coverage = 0.0;
  double mean_length = 0.0;
  double median_length = 0.0;
  double mc_stderr = 0.0;
};

struct ScenarioDiagnostics {
  std::int64_t rank_regenerations = 0;
  std::int64_t failed_replications = 0;
  std::int64_t reml_nonconverged = 0;
  std::array<std::int64_t, 7> estimator_errors{}; // degenerate leverage
};

struct ScenarioMetrics {
  ScenarioSpec spec;
  std::vector<std::string> coefficient_names;
  std::vector<double> true_values;
  // [estimator][coefficient]
  std::array<std::vector<CoefficientSummary>, 7> summary;
  ScenarioDiagnostics diagnostics;

  const CoefficientSummary &at(CovVariant v, std::size_t coef) const {
    return summary[static_cast<std::size_t>(v)][coef];
  }
  /// Index of a fitted coefficient by name ("x1", "x1:x2", ...), or -1.
  int coefficient(const std::string &name) const {
    for (std::size_t j = 0; j < coefficient_names.size(); ++j)
      if (coefficient_names[j] == name)
        return static_cast<int>(j);
    return -1;
  }
};

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Each index is
/// processed exactly once; callers write results into per-index slots.
template <typename Fn>
void parallel_for(std::int64_t n, int workers, Fn &&fn) {
  workers = std::max(1, workers);
  if (workers == 1 || n <= 1) {
    for (std::int64_t i = 0; i < n; ++i)
      fn(i);
    return;
  }
  std::atomic<std::int64_t> next{0};
  std::vector<std::thread> pool;
  const int count = static_cast<int>(std::min<std::int64_t>(workers, n));
  pool.reserve(static_cast<std::size_t>(count));
  for (int t = 0; t < count; ++t) {
    pool.emplace_back([&] {
      for (std::int64_t i = next++; i < n; i = next++)
        fn(i);
    });
  }
  for (auto &th : pool)
    th.join();
}

inline ScenarioMetrics aggregate(const ScenarioSpec &spec,
                                 const DesignMatrix &layout,
                                 const std::vector<ReplicationRecord> &records) {
  ScenarioMetrics out;
  out.spec = spec;
  for (const auto &col : layout.columns)
    out.coefficient_names.push_back(col.name);
  out.true_values = true_coefficients(spec, layout);
  const std::size_t p = out.coefficient_names.size();

  for (const auto &rec : records) {
    out.diagnostics.rank_regenerations += rec.regenerations;
    if (rec.failed) {
      ++out.diagnostics.failed_replications;
      continue;
    }
    if (!rec.reml_converged)
      ++out.diagnostics.reml_nonconverged;
    for (std::size_t e = 0; e < kAllVariants.size(); ++e)
      if (!rec.estimator_ok[e])
        ++out.diagnostics.estimator_errors[e];
  }

  for (std::size_t e = 0; e < kAllVariants.size(); ++e) {
    out.summary[e].resize(p);
    for (std::size_t j = 0; j < p; ++j) {
      std::vector<double> lengths;
      lengths.reserve(records.size());
      std::int64_t covered = 0;
      double sum = 0.0;
      for (const auto &rec : records) {
        if (rec.failed || !rec.estimator_ok[e])
          continue;
        const auto &ci = rec.intervals[e][j];
        covered += ci.contains(out.true_values[j]) ? 1 : 0;
        sum += ci.length();
        lengths.push_back(ci.length());
      }
      auto &s = out.summary[e][j];
      s.n = static_cast<std::int64_t>(lengths.size());
      if (s.n > 0) {
        s.coverage = static_cast<double>(covered) / static_cast<double>(s.n);
        s.mean_length = sum / static_cast<double>(s.n);
        s.median_length = median_of(std::move(lengths));
        s.mc_stderr = mc_standard_error(s.coverage, s.n);
      } else {
        s.coverage = s.mean_length = s.median_length = s.mc_stderr =
            std::numeric_limits<double>::quiet_NaN();
      }
    }
  }
  return out;
}

/// Monte-Carlo coverage and length for one scenario. Results are identical
/// for every worker count: each replication draws from its own derived
/// stream and aggregation runs in replication order.
inline ScenarioMetrics run_scenario(const ScenarioSpec &spec, int workers = 1) {
  spec.validate();
  const long df =
      static_cast<long>(spec.k) - static_cast<long>(spec.fit.num_columns());
  const double multiplier = t_multiplier(df, spec.level);

  std::vector<ReplicationRecord> records(static_cast<std::size_t>(spec.reps));
  parallel_for(spec.reps, workers, [&](std::int64_t r) {
    records[static_cast<std::size_t>(r)] = run_replication(spec, r, multiplier);
  });

  // Column layout does not depend on the data.
  std::vector<StudyRecord> dummy(1);
  dummy[0].moderators = {0.0, 0.0};
  dummy[0].v = 1.0;
  const auto layout = build_design_matrix(
      MetaDataset(dummy, simulated_moderator_names()), spec.fit);
  return aggregate(spec, layout, records);
}

// ---------------------------------------------------------------------------
// Grid
// ---------------------------------------------------------------------------

/// Parameter lists of a simulation grid plus shared scalars.
struct GridConfig {
  std::vector<int> k{6};
  std::vector<int> nbar{25};
  std::vector<double> tau2{0.5};
  std::vector<double> beta1{0.2};
  std::vector<double> beta2{0.2};
  std::vector<double> beta12{0.0};
  std::vector<double> rho{0.2};
  std::vector<RandomEffectDist> re_dist{RandomEffectDist::Normal};
  std::int64_t reps = 1000;
  std::uint64_t seed = 1;
  double level = 0.95;
  bool fit_intercept = false;
  std::optional<ModelSpec> fit_spec; // overrides fit_intercept when present

  /// The parameter lists used in the original experiment: 77,760 cells.
  static GridConfig full_experiment() {
    GridConfig g;
    g.k = {6, 10, 20, 50};
    g.nbar = {15, 25, 50};
    g.tau2 = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    g.beta1 = {0.0, 0.2, 0.5};
    g.beta2 = {0.0, 0.2, 0.5};
    g.beta12 = {0.0, 0.2, 0.5, -0.5};
    g.rho = {0.0, 0.2, 0.5, -0.5};
    g.re_dist = {kAllDists.begin(), kAllDists.end()};
    g.reps = 10000;
    return g;
  }
};

/// Cartesian product in the order k, nbar, tau2, beta1, beta2, beta12, rho,
/// re_dist; the last parameter varies fastest.
inline std::vector<ScenarioSpec> scenario_grid(const GridConfig &cfg) {
  if (cfg.k.empty() || cfg.nbar.empty() || cfg.tau2.empty() ||
      cfg.beta1.empty() || cfg.beta2.empty() || cfg.beta12.empty() ||
      cfg.rho.empty() || cfg.re_dist.empty())
    throw ValidationError("every grid parameter list must be non-empty");
  ScenarioSpec base;
  base.reps = cfg.reps;
  base.seed = cfg.seed;
  base.level = cfg.level;
  base.fit = cfg.fit_spec ? *cfg.fit_spec : default_fit_spec(cfg.fit_intercept);

  std::vector<ScenarioSpec> out;
  out.reserve(cfg.k.size() * cfg.nbar.size() * cfg.tau2.size() *
              cfg.beta1.size() * cfg.beta2.size() * cfg.beta12.size() *
              cfg.rho.size() * cfg.re_dist.size());
  for (int k : cfg.k)
    for (int nbar : cfg.nbar)
      for (double tau2 : cfg.tau2)
        for (double b1 : cfg.beta1)
          for (double b2 : cfg.beta2)
            for (double b12 : cfg.beta12)
              for (double rho : cfg.rho)
                for (auto dist : cfg.re_dist) {
                  ScenarioSpec s = base;
                  s.k = k;
                  s.nbar = nbar;
                  s.tau2 = tau2;
                  s.beta1 = b1;
                  s.beta2 = b2;
                  s.beta12 = b12;
                  s.rho = rho;
                  s.re_dist = dist;
                  out.push_back(std::move(s));
                }
  return out;
}

} // namespace metareg
