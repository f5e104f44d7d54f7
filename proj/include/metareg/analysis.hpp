#pragma once

#include <metareg/error.hpp>
#include <metareg/inference.hpp>
#include <metareg/io.hpp>
#include <metareg/model.hpp>
#include <metareg/reml.hpp>
#include <metareg/robust_cov.hpp>
#include <metareg/wls.hpp>

#include <string>
#include <utility>
#include <vector>

namespace metareg {

/// What `metareg fit` should compute for one dataset.
struct FitRequest {
  std::string data_path;
  std::vector<std::string> moderators;
  std::vector<std::pair<std::string, std::string>> interactions;
  bool intercept = false;
  bool center = false;
  std::vector<CovVariant> variants{kAllVariants.begin(), kAllVariants.end()};
  double level = 0.95;
  double eta = kDefaultEta;
  RemlConfig reml{};
};

/// Non-fatal condition reported as `WARN <code> <detail>`.
struct Warning {
  std::string code;
  std::string detail;
};

struct FitOutcome {
  ResultsTable table;
  FitResult fit;
  std::vector<std::string> coefficient_names;
  std::vector<Warning> warnings;
};

inline ModelSpec resolve_model(const MetaDataset &data,
                               const FitRequest &request) {
  auto index = [&](const std::string &name) -> std::size_t {
    const int j = data.moderator_index(name);
    if (j < 0)
      throw ValidationError("unknown moderator '" + name + "'");
    return static_cast<std::size_t>(j);
  };
  ModelSpec spec;
  spec.intercept = request.intercept;
  for (const auto &name : request.moderators)
    spec.moderators.push_back(index(name));
  for (const auto &[a, b] : request.interactions)
    spec.interactions.emplace_back(index(a), index(b));
  return spec;
}

/// REML, WLS and the requested intervals for one dataset. Estimators that
/// hit a degenerate leverage are skipped with a warning.
inline FitOutcome run_fit(const MetaDataset &raw, const FitRequest &request) {
  if (request.variants.empty())
    throw ValidationError("at least one covariance estimator is required");
  const MetaDataset data = request.center ? center_moderators(raw) : raw;
  const auto design = build_design_matrix(data, resolve_model(data, request));
  const auto report = validate_dataset(data, design);
  if (!report.nonfinite.empty())
    throw ValidationError("non-finite value in study " +
                          data[report.nonfinite.front()].id);
  if (!report.nonpositive_variance.empty())
    throw ValidationError("non-positive variance in study " +
                          data[report.nonpositive_variance.front()].id);
  if (report.df_too_small())
    throw ValidationError("k=" + std::to_string(report.k) + " studies with p=" +
                          std::to_string(report.p) +
                          " columns leaves no residual degrees of freedom");

  FitOutcome out;
  out.table.kind = ResultsTable::Kind::Fit;
  for (const auto &col : design.columns)
    out.coefficient_names.push_back(col.name);

  const Vector y = data.effects();
  const Vector v = data.variances();
  const auto tau2 = reml_tau2(design.X, y, v, request.reml);
  if (!tau2.converged)
    out.warnings.push_back({"reml_nonconvergence",
                            "iterations=" + std::to_string(tau2.iterations)});
  out.fit = fit_wls(design.X, y, v, tau2);
  const double multiplier = t_multiplier(out.fit.df(), request.level);
  for (auto variant : request.variants) {
    try {
      const auto cov = covariance(out.fit, variant, request.eta);
      append_fit_rows(out.table, variant, out.coefficient_names,
                      confidence_intervals(out.fit, cov, request.level,
                                           multiplier));
    } catch (const NumericError &err) {
      out.warnings.push_back({"estimator_skipped",
                              std::string(to_string(variant)) + " " +
                                  err.what()});
    }
  }
  return out;
}

} // namespace metareg
