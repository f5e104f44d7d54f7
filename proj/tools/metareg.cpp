// metareg: meta-regression confidence intervals and coverage simulation.
//
//   metareg fit --data studies.csv --moderators x1,x2 --interactions x1:x2
//               [--intercept] [--center] --cov hc0,hc3,kh --level 0.95
//               [--out results.csv]
//   metareg simulate --config grid.json [--workers N] [--seed S] [--reps N]
//               [--out results.csv]
//
// Exit status: 0 success, 1 validation error, 2 numeric failure.

#include <metareg/analysis.hpp>
#include <metareg/io.hpp>
#include <metareg/simulation.hpp>

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitNumeric = 2;

void warn(const std::string &code, const std::string &detail) {
  std::cerr << "WARN " << code << ' ' << detail << '\n';
}

metareg::ResultsFormat pick_format(const std::string &flag,
                                   const std::string &out_path) {
  if (!flag.empty()) {
    auto f = metareg::parse_format(flag);
    if (!f)
      throw metareg::ValidationError("unknown format '" + flag + "'");
    return *f;
  }
  const bool json = out_path.size() >= 5 &&
                    out_path.compare(out_path.size() - 5, 5, ".json") == 0;
  return json ? metareg::ResultsFormat::Json : metareg::ResultsFormat::Csv;
}

void emit(const metareg::ResultsTable &table, const std::string &out_path,
          metareg::ResultsFormat format) {
  if (out_path.empty() || out_path == "-")
    metareg::write_results(table, std::cout, format);
  else
    metareg::write_results(table, out_path, format);
}

int default_workers() {
  if (const char *env = std::getenv("METAREG_WORKERS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1)
        return n;
    } catch (const std::exception &) {
    }
    warn("bad_env", std::string("METAREG_WORKERS=") + env + " ignored");
  }
  return 1;
}

struct FitOptions {
  std::string data;
  std::vector<std::string> moderators;
  std::vector<std::string> interactions;
  bool intercept = false;
  bool center = false;
  std::vector<std::string> cov{"hc0", "hc1", "hc2", "hc3", "hc4", "hc5", "kh"};
  double level = 0.95;
  double eta = metareg::kDefaultEta;
  std::string out;
  std::string format;
};

struct SimulateOptions {
  std::string config;
  int workers = 1;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> reps;
  std::string out;
  std::string format;
};

void run_fit(const FitOptions &opt) {
  metareg::FitRequest request;
  request.data_path = opt.data;
  request.intercept = opt.intercept;
  request.center = opt.center;
  request.level = opt.level;
  request.eta = opt.eta;
  request.variants.clear();
  for (const auto &name : opt.cov) {
    auto v = metareg::parse_variant(name);
    if (!v)
      throw metareg::ValidationError("unknown covariance estimator '" + name +
                                     "'");
    request.variants.push_back(*v);
  }
  for (const auto &term : opt.interactions) {
    const auto colon = term.find(':');
    if (colon == std::string::npos)
      throw metareg::ValidationError("interaction '" + term +
                                     "' must have the form a:b");
    request.interactions.emplace_back(term.substr(0, colon),
                                      term.substr(colon + 1));
  }

  const auto data = metareg::load_dataset_csv(opt.data);
  request.moderators =
      opt.moderators.empty() ? data.moderator_names() : opt.moderators;
  const auto outcome = metareg::run_fit(data, request);
  for (const auto &w : outcome.warnings)
    warn(w.code, w.detail);
  emit(outcome.table, opt.out, pick_format(opt.format, opt.out));
}

void run_simulate(const SimulateOptions &opt) {
  auto grid = metareg::load_scenario_config(opt.config);
  if (opt.seed)
    grid.seed = *opt.seed;
  if (opt.reps) {
    if (*opt.reps < 1)
      throw metareg::ValidationError("--reps must be >= 1");
    grid.reps = *opt.reps;
  }
  const auto format = pick_format(opt.format, opt.out);
  const auto specs = metareg::scenario_grid(grid);

  std::vector<metareg::ScenarioMetrics> results;
  results.reserve(specs.size());
  for (const auto &spec : specs) {
    auto metrics = metareg::run_scenario(spec, opt.workers);
    const auto &d = metrics.diagnostics;
    const auto id = spec.id();
    if (d.rank_regenerations > 0)
      warn("rank_regeneration",
           id + " count=" + std::to_string(d.rank_regenerations));
    if (d.failed_replications > 0)
      warn("failed_replication",
           id + " count=" + std::to_string(d.failed_replications));
    if (d.reml_nonconverged > 0)
      warn("reml_nonconvergence",
           id + " count=" + std::to_string(d.reml_nonconverged));
    for (auto v : metareg::kAllVariants) {
      const auto n = d.estimator_errors[static_cast<std::size_t>(v)];
      if (n > 0)
        warn("degenerate_leverage", id + " estimator=" +
                                        std::string(metareg::to_string(v)) +
                                        " count=" + std::to_string(n));
    }
    results.push_back(std::move(metrics));
  }
  emit(metareg::simulation_table(results), opt.out, format);
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Mixed-effects meta-regression with robust confidence intervals"};
  app.require_subcommand(1);

  FitOptions fit_opt;
  auto *fit = app.add_subcommand("fit", "Fit a meta-regression to a CSV dataset");
  fit->add_option("--data", fit_opt.data, "Study table (CSV)")->required();
  fit->add_option("--moderators", fit_opt.moderators,
                  "Moderator columns (default: all)")
      ->delimiter(',');
  fit->add_option("--interactions", fit_opt.interactions,
                  "Interaction terms a:b")
      ->delimiter(',');
  fit->add_flag("--intercept", fit_opt.intercept, "Fit an intercept column");
  fit->add_flag("--center", fit_opt.center, "Centre moderators at their means");
  fit->add_option("--cov", fit_opt.cov, "Estimators: hc0..hc5, kh")
      ->delimiter(',');
  fit->add_option("--level", fit_opt.level, "Confidence level")
      ->check(CLI::Range(0.0, 1.0));
  fit->add_option("--eta", fit_opt.eta, "HC5 tuning constant");
  fit->add_option("--out", fit_opt.out, "Output path (default: stdout)");
  fit->add_option("--format", fit_opt.format, "csv or json");

  SimulateOptions sim_opt;
  sim_opt.workers = default_workers();
  auto *sim = app.add_subcommand("simulate", "Run a Monte-Carlo scenario grid");
  sim->add_option("--config", sim_opt.config, "Scenario grid (JSON)")
      ->required();
  sim->add_option("--workers", sim_opt.workers,
                  "Worker threads (default: METAREG_WORKERS or 1)")
      ->check(CLI::PositiveNumber);
  sim->add_option("--seed", sim_opt.seed, "Override the master seed");
  sim->add_option("--reps", sim_opt.reps, "Override replications per scenario");
  sim->add_option("--out", sim_opt.out, "Output path (default: stdout)");
  sim->add_option("--format", sim_opt.format, "csv or json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (fit->parsed())
      run_fit(fit_opt);
    else if (sim->parsed())
      run_simulate(sim_opt);
  } catch (const metareg::ValidationError &e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const metareg::NumericError &e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumeric;
  }
  return 0;
}
