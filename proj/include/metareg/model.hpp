#pragma once

#include <metareg/error.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace metareg {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// One study: effect estimate, within-study sampling variance and its
/// moderator values.
struct StudyRecord {
  std::string id;
  double y = 0.0;
  double v = 0.0;
  std::vector<double> moderators;
};

/// A collection of studies sharing one moderator layout.
class MetaDataset {
public:
  MetaDataset() = default;

  MetaDataset(std::vector<StudyRecord> studies,
              std::vector<std::string> moderator_names)
      : studies_(std::move(studies)),
        moderator_names_(std::move(moderator_names)) {
    for (std::size_t i = 0; i < studies_.size(); ++i) {
      if (studies_[i].moderators.size() != moderator_names_.size()) {
        throw ValidationError("study " + std::to_string(i) + " carries " +
                              std::to_string(studies_[i].moderators.size()) +
                              " moderators, expected " +
                              std::to_string(moderator_names_.size()));
      }
    }
  }

  std::size_t size() const { return studies_.size(); }
  std::size_t num_moderators() const { return moderator_names_.size(); }
  const std::vector<StudyRecord> &studies() const { return studies_; }
  const StudyRecord &operator[](std::size_t i) const { return studies_[i]; }
  const std::vector<std::string> &moderator_names() const {
    return moderator_names_;
  }

  Vector effects() const {
    Vector y(static_cast<Eigen::Index>(size()));
    for (std::size_t i = 0; i < size(); ++i)
      y[static_cast<Eigen::Index>(i)] = studies_[i].y;
    return y;
  }

  Vector variances() const {
    Vector v(static_cast<Eigen::Index>(size()));
    for (std::size_t i = 0; i < size(); ++i)
      v[static_cast<Eigen::Index>(i)] = studies_[i].v;
    return v;
  }

  /// Index of a moderator by name, or -1.
  int moderator_index(const std::string &name) const {
    for (std::size_t j = 0; j < moderator_names_.size(); ++j)
      if (moderator_names_[j] == name)
        return static_cast<int>(j);
    return -1;
  }

private:
  std::vector<StudyRecord> studies_;
  std::vector<std::string> moderator_names_;
};

/// Which columns a fitted model uses. Moderators and interaction parents are
/// indices into MetaDataset::moderator_names().
struct ModelSpec {
  bool intercept = true;
  std::vector<std::size_t> moderators;
  std::vector<std::pair<std::size_t, std::size_t>> interactions;

  std::size_t num_columns() const {
    return (intercept ? 1u : 0u) + moderators.size() + interactions.size();
  }
};

struct ColumnSpec {
  enum class Kind { Intercept, Moderator, Interaction };
  Kind kind = Kind::Intercept;
  std::size_t first = 0;
  std::size_t second = 0;
  std::string name;
};

/// The k x p design matrix together with a description of its columns.
struct DesignMatrix {
  Matrix X;
  std::vector<ColumnSpec> columns;

  Eigen::Index rows() const { return X.rows(); }
  Eigen::Index cols() const { return X.cols(); }
};

/// Builds X with columns ordered intercept, moderators, interactions.
inline DesignMatrix build_design_matrix(const MetaDataset &data,
                                        const ModelSpec &spec) {
  const std::size_t m = data.num_moderators();
  const auto &names = data.moderator_names();
  if (spec.num_columns() == 0)
    throw ValidationError("model requests zero columns");
  auto check = [&](std::size_t j) {
    if (j >= m)
      throw ValidationError("unknown moderator index " + std::to_string(j));
  };
  for (auto j : spec.moderators)
    check(j);
  for (auto [a, b] : spec.interactions) {
    check(a);
    check(b);
  }

  DesignMatrix design;
  if (spec.intercept)
    design.columns.push_back({ColumnSpec::Kind::Intercept, 0, 0, "intercept"});
  for (auto j : spec.moderators)
    design.columns.push_back({ColumnSpec::Kind::Moderator, j, 0, names[j]});
  for (auto [a, b] : spec.interactions)
    design.columns.push_back(
        {ColumnSpec::Kind::Interaction, a, b, names[a] + ":" + names[b]});

  const auto k = static_cast<Eigen::Index>(data.size());
  design.X.resize(k, static_cast<Eigen::Index>(design.columns.size()));
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto &x = data[static_cast<std::size_t>(i)].moderators;
    for (std::size_t c = 0; c < design.columns.size(); ++c) {
      const auto &col = design.columns[c];
      double value = 1.0;
      switch (col.kind) {
      case ColumnSpec::Kind::Intercept:
        break;
      case ColumnSpec::Kind::Moderator:
        value = x[col.first];
        break;
      case ColumnSpec::Kind::Interaction:
        value = x[col.first] * x[col.second];
        break;
      }
      design.X(i, static_cast<Eigen::Index>(c)) = value;
    }
  }
  return design;
}

struct ValidationReport {
  std::size_t k = 0;
  std::size_t p = 0;
  long df = 0;
  std::vector<std::size_t> nonpositive_variance;
  std::vector<std::size_t> nonfinite;

  bool df_too_small() const { return df < 1; }
  bool valid() const {
    return !df_too_small() && nonpositive_variance.empty() && nonfinite.empty();
  }
};

/// Report-only check of a dataset against a design. Row indices are 0-based.
inline ValidationReport validate_dataset(const MetaDataset &data,
                                         const DesignMatrix &design) {
  ValidationReport report;
  report.k = data.size();
  report.p = static_cast<std::size_t>(design.cols());
  report.df = static_cast<long>(report.k) - static_cast<long>(report.p);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto &s = data[i];
    bool finite = std::isfinite(s.y) && std::isfinite(s.v);
    if (static_cast<Eigen::Index>(i) < design.rows())
      finite = finite && design.X.row(static_cast<Eigen::Index>(i)).allFinite();
    for (double x : s.moderators)
      finite = finite && std::isfinite(x);
    if (!finite)
      report.nonfinite.push_back(i);
    if (!(s.v > 0.0))
      report.nonpositive_variance.push_back(i);
  }
  return report;
}

/// Subtracts each moderator's sample mean. Interaction columns built
/// afterwards use the centred values.
inline MetaDataset center_moderators(const MetaDataset &data) {
  const std::size_t m = data.num_moderators();
  std::vector<double> means(m, 0.0);
  for (const auto &s : data.studies())
    for (std::size_t j = 0; j < m; ++j)
      means[j] += s.moderators[j];
  for (auto &mean : means)
    mean /= static_cast<double>(data.size());
  auto studies = data.studies();
  for (auto &s : studies)
    for (std::size_t j = 0; j < m; ++j)
      s.moderators[j] -= means[j];
  return MetaDataset(std::move(studies), data.moderator_names());
}

} // namespace metareg
