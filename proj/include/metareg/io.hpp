#pragma once

#include <metareg/effect_size.hpp>
#include <metareg/error.hpp>
#include <metareg/model.hpp>
#include <metareg/robust_cov.hpp>
#include <metareg/simulation.hpp>

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace metareg {

// ---------------------------------------------------------------------------
// CSV helpers
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
  if (!line.empty() && line.back() == '\r')
    line.remove_suffix(1);
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    std::string_view cell = line.substr(start, pos - start);
    while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t'))
      cell.remove_prefix(1);
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t'))
      cell.remove_suffix(1);
    out.emplace_back(cell);
    if (pos == std::string_view::npos)
      break;
    start = pos + 1;
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view text) {
  if (text.empty())
    return std::nullopt;
  if (text.front() == '+')
    text.remove_prefix(1);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size())
    return std::nullopt;
  return value;
}

/// 17 significant digits: round-trips every finite double.
inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Dataset ingestion
// ---------------------------------------------------------------------------

inline constexpr std::array<std::string_view, 6> kSummaryColumns = {
    "mean_e", "sd_e", "n_e", "mean_c", "sd_c", "n_c"};

/// Parses a study table. Either `y` and `v` columns or the six summary
/// columns mean_e,sd_e,n_e,mean_c,sd_c,n_c must be present; an optional
/// `id` column labels studies; every other column is a numeric moderator.
inline MetaDataset parse_dataset_csv(std::istream &in) {
  std::string line;
  if (!std::getline(in, line))
    throw ValidationError("dataset: empty file");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0)
    line.erase(0, 3);
  const auto header = detail::split_csv_line(line);

  auto find = [&](std::string_view name) -> int {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (header[c] == name)
        return static_cast<int>(c);
    return -1;
  };
  const int col_y = find("y");
  const int col_v = find("v");
  const int col_id = find("id");
  std::array<int, 6> summary{};
  bool have_summary = true;
  for (std::size_t s = 0; s < kSummaryColumns.size(); ++s) {
    summary[s] = find(kSummaryColumns[s]);
    have_summary = have_summary && summary[s] >= 0;
  }
  const bool have_effects = col_y >= 0 && col_v >= 0;
  if (!have_effects && !have_summary)
    throw ValidationError(
        "dataset: missing required columns: need y,v or "
        "mean_e,sd_e,n_e,mean_c,sd_c,n_c");

  std::vector<int> moderator_cols;
  std::vector<std::string> moderator_names;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const int ci = static_cast<int>(c);
    bool reserved = ci == col_y || ci == col_v || ci == col_id;
    for (int s : summary)
      reserved = reserved || s == ci;
    if (reserved)
      continue;
    if (header[c].empty())
      throw ValidationError("dataset: empty column name at position " +
                            std::to_string(c + 1));
    moderator_cols.push_back(ci);
    moderator_names.push_back(header[c]);
  }

  std::vector<StudyRecord> studies;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r")
      continue;
    ++row;
    const auto cells = detail::split_csv_line(line);
    const std::string where = "row " + std::to_string(row);
    if (cells.size() != header.size())
      throw ValidationError("dataset: " + where + " has " +
                            std::to_string(cells.size()) + " cells, expected " +
                            std::to_string(header.size()));
    auto number = [&](int c) {
      auto value = detail::parse_double(cells[static_cast<std::size_t>(c)]);
      if (!value || !std::isfinite(*value))
        throw ValidationError("dataset: non-numeric cell at " + where +
                              ", column " +
                              header[static_cast<std::size_t>(c)]);
      return *value;
    };

    StudyRecord s;
    s.id = col_id >= 0 ? cells[static_cast<std::size_t>(col_id)]
                       : std::to_string(row);
    if (have_effects) {
      s.y = number(col_y);
      s.v = number(col_v);
      if (!(s.v > 0.0))
        throw ValidationError("dataset: v <= 0 at " + where + ", column v");
    } else {
      auto count = [&](int c) {
        const double n = number(c);
        if (n != std::floor(n) || n < 2)
          throw ValidationError("dataset: group size must be an integer >= 2 at " +
                                where + ", column " +
                                header[static_cast<std::size_t>(c)]);
        return static_cast<int>(n);
      };
      GroupSummary e{number(summary[0]), number(summary[1]), count(summary[2])};
      GroupSummary c{number(summary[3]), number(summary[4]), count(summary[5])};
      try {
        const auto est = hedges_smd(e, c);
        s.y = est.y;
        s.v = est.v;
      } catch (const ValidationError &err) {
        throw ValidationError("dataset: " + std::string(err.what()) + " at " +
                              where);
      }
    }
    for (int c : moderator_cols)
      s.moderators.push_back(number(c));
    studies.push_back(std::move(s));
  }
  return MetaDataset(std::move(studies), std::move(moderator_names));
}

inline MetaDataset load_dataset_csv(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw ValidationError("cannot open dataset " + path);
  return parse_dataset_csv(in);
}

// ---------------------------------------------------------------------------
// Scenario configuration
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
std::vector<T> json_list(const nlohmann::json &doc, const char *key) {
  if (!doc.contains(key))
    throw ValidationError(std::string("config: missing key '") + key + "'");
  const auto &node = doc.at(key);
  if (!node.is_array() || node.empty())
    throw ValidationError(std::string("config: '") + key +
                          "' must be a non-empty list");
  std::vector<T> out;
  for (const auto &item : node) {
    if constexpr (std::is_same_v<T, int>) {
      if (!item.is_number_integer())
        throw ValidationError(std::string("config: '") + key +
                              "' must contain integers");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!item.is_string())
        throw ValidationError(std::string("config: '") + key +
                              "' must contain strings");
    } else {
      if (!item.is_number())
        throw ValidationError(std::string("config: '") + key +
                              "' must contain numbers");
    }
    out.push_back(item.get<T>());
  }
  return out;
}

inline ModelSpec parse_fit_spec(const nlohmann::json &node) {
  if (!node.is_object())
    throw ValidationError("config: 'fit_spec' must be an object");
  const auto &names = simulated_moderator_names();
  auto index = [&](const std::string &name) -> std::size_t {
    for (std::size_t j = 0; j < names.size(); ++j)
      if (names[j] == name)
        return j;
    throw ValidationError("config: fit_spec references unknown moderator '" +
                          name + "'");
  };
  ModelSpec spec;
  spec.intercept = false;
  spec.moderators.clear();
  for (auto it = node.begin(); it != node.end(); ++it) {
    if (it.key() == "intercept") {
      if (!it->is_boolean())
        throw ValidationError("config: fit_spec.intercept must be boolean");
      spec.intercept = it->get<bool>();
    } else if (it.key() == "moderators") {
      for (const auto &m : *it)
        spec.moderators.push_back(index(m.get<std::string>()));
    } else if (it.key() == "interactions") {
      for (const auto &term : *it) {
        const auto text = term.get<std::string>();
        const auto colon = text.find(':');
        if (colon == std::string::npos)
          throw ValidationError("config: interaction '" + text +
                                "' must have the form a:b");
        spec.interactions.emplace_back(index(text.substr(0, colon)),
                                       index(text.substr(colon + 1)));
      }
    } else {
      throw ValidationError("config: unknown fit_spec key '" + it.key() + "'");
    }
  }
  if (spec.num_columns() == 0)
    throw ValidationError("config: fit_spec has no columns");
  return spec;
}

} // namespace detail

/// Parses the JSON scenario schema. The eight parameter lists are required;
/// reps, seed, level, fit_intercept and fit_spec are optional.
inline GridConfig parse_scenario_config(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error &err) {
    throw ValidationError(std::string("config: malformed JSON: ") + err.what());
  }
  if (!doc.is_object())
    throw ValidationError("config: top level must be an object");

  static const std::vector<std::string> known = {
      "k",    "nbar", "tau2",  "beta1", "beta2",         "beta12",  "rho",
      "re_dist", "reps", "seed", "level", "fit_intercept", "fit_spec"};
  for (auto it = doc.begin(); it != doc.end(); ++it)
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw ValidationError("config: unknown key '" + it.key() + "'");

  GridConfig cfg;
  try {
    cfg.k = detail::json_list<int>(doc, "k");
    cfg.nbar = detail::json_list<int>(doc, "nbar");
    cfg.tau2 = detail::json_list<double>(doc, "tau2");
    cfg.beta1 = detail::json_list<double>(doc, "beta1");
    cfg.beta2 = detail::json_list<double>(doc, "beta2");
    cfg.beta12 = detail::json_list<double>(doc, "beta12");
    cfg.rho = detail::json_list<double>(doc, "rho");
    cfg.re_dist.clear();
    for (const auto &name : detail::json_list<std::string>(doc, "re_dist")) {
      auto d = parse_dist(name);
      if (!d)
        throw ValidationError("config: unknown re_dist '" + name + "'");
      cfg.re_dist.push_back(*d);
    }
    if (doc.contains("reps")) {
      if (!doc["reps"].is_number_integer() || doc["reps"].get<std::int64_t>() < 1)
        throw ValidationError("config: reps must be an integer >= 1");
      cfg.reps = doc["reps"].get<std::int64_t>();
    }
    if (doc.contains("seed")) {
      if (!doc["seed"].is_number_unsigned())
        throw ValidationError("config: seed must be a non-negative integer");
      cfg.seed = doc["seed"].get<std::uint64_t>();
    }
    if (doc.contains("level")) {
      if (!doc["level"].is_number())
        throw ValidationError("config: level must be a number");
      cfg.level = doc["level"].get<double>();
    }
    if (doc.contains("fit_intercept")) {
      if (!doc["fit_intercept"].is_boolean())
        throw ValidationError("config: fit_intercept must be boolean");
      cfg.fit_intercept = doc["fit_intercept"].get<bool>();
    }
    if (doc.contains("fit_spec"))
      cfg.fit_spec = detail::parse_fit_spec(doc["fit_spec"]);
  } catch (const nlohmann::json::exception &err) {
    throw ValidationError(std::string("config: ") + err.what());
  }

  for (int k : cfg.k)
    if (!(k == 6 || (k > 0 && k % 5 == 0)))
      throw ValidationError("config: k=" + std::to_string(k) +
                            " must be 6 or a multiple of 5");
  for (int n : cfg.nbar)
    if (n != 15 && n != 25 && n != 50)
      throw ValidationError("config: nbar=" + std::to_string(n) +
                            " must be 15, 25 or 50");
  for (double t : cfg.tau2)
    if (!(t >= 0.0) || !std::isfinite(t))
      throw ValidationError("config: tau2 must be finite and >= 0");
  for (double r : cfg.rho)
    if (!(std::abs(r) < 1.0))
      throw ValidationError("config: rho=" + detail::format_double(r) +
                            " must satisfy |rho| < 1");
  if (!(cfg.level > 0.0 && cfg.level < 1.0))
    throw ValidationError("config: level must lie in (0, 1)");
  const auto p = (cfg.fit_spec ? *cfg.fit_spec
                               : default_fit_spec(cfg.fit_intercept))
                     .num_columns();
  for (int k : cfg.k)
    if (static_cast<std::size_t>(k) <= p)
      throw ValidationError("config: k=" + std::to_string(k) +
                            " leaves no residual degrees of freedom");
  return cfg;
}

inline GridConfig load_scenario_config(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw ValidationError("cannot open config " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_scenario_config(buf.str());
}

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

struct FitRow {
  std::string estimator;
  std::string coefficient;
  double estimate = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double length = 0.0;

  bool operator==(const FitRow &) const = default;
};

struct SimRow {
  std::string scenario_id;
  std::string estimator;
  std::string coefficient;
  std::string metric;
  double value = 0.0;

  bool operator==(const SimRow &) const = default;
};

struct ResultsTable {
  enum class Kind { Fit, Simulation };
  Kind kind = Kind::Fit;
  std::vector<FitRow> fit_rows;
  std::vector<SimRow> sim_rows;

  std::size_t size() const {
    return kind == Kind::Fit ? fit_rows.size() : sim_rows.size();
  }
};

enum class ResultsFormat { Csv, Json };

inline std::optional<ResultsFormat> parse_format(std::string_view text) {
  if (text == "csv")
    return ResultsFormat::Csv;
  if (text == "json")
    return ResultsFormat::Json;
  return std::nullopt;
}

inline constexpr std::string_view kFitHeader =
    "estimator,coefficient,estimate,lower,upper,length";
inline constexpr std::string_view kSimHeader =
    "scenario_id,estimator,coefficient,metric,value";

/// Rows for one fitted dataset: one per (estimator, coefficient).
inline void append_fit_rows(ResultsTable &table, CovVariant variant,
                            const std::vector<std::string> &names,
                            const std::vector<ConfidenceInterval> &cis) {
  for (const auto &ci : cis) {
    table.fit_rows.push_back({std::string(to_string(variant)),
                              names.at(static_cast<std::size_t>(
                                  ci.coefficient_index)),
                              ci.estimate, ci.lower, ci.upper, ci.length()});
  }
}

/// Rows for simulated scenarios: coverage, mean_length, median_length per
/// (scenario, estimator, coefficient).
inline ResultsTable simulation_table(const std::vector<ScenarioMetrics> &all) {
  ResultsTable table;
  table.kind = ResultsTable::Kind::Simulation;
  for (const auto &m : all) {
    const auto id = m.spec.id();
    for (auto variant : kAllVariants) {
      const auto &per_coef = m.summary[static_cast<std::size_t>(variant)];
      for (std::size_t j = 0; j < m.coefficient_names.size(); ++j) {
        const auto &s = per_coef[j];
        const std::string est(to_string(variant));
        table.sim_rows.push_back(
            {id, est, m.coefficient_names[j], "coverage", s.coverage});
        table.sim_rows.push_back(
            {id, est, m.coefficient_names[j], "mean_length", s.mean_length});
        table.sim_rows.push_back({id, est, m.coefficient_names[j],
                                  "median_length", s.median_length});
      }
    }
  }
  return table;
}

namespace detail {

inline nlohmann::json json_number(double x) {
  return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr);
}

inline double from_json_number(const nlohmann::json &node) {
  return node.is_null() ? std::numeric_limits<double>::quiet_NaN()
                        : node.get<double>();
}

} // namespace detail

inline void write_results(const ResultsTable &table, std::ostream &out,
                          ResultsFormat format) {
  using detail::format_double;
  if (format == ResultsFormat::Csv) {
    if (table.kind == ResultsTable::Kind::Fit) {
      out << kFitHeader << '\n';
      for (const auto &r : table.fit_rows)
        out << r.estimator << ',' << r.coefficient << ','
            << format_double(r.estimate) << ',' << format_double(r.lower)
            << ',' << format_double(r.upper) << ',' << format_double(r.length)
            << '\n';
    } else {
      out << kSimHeader << '\n';
      for (const auto &r : table.sim_rows)
        out << r.scenario_id << ',' << r.estimator << ',' << r.coefficient
            << ',' << r.metric << ',' << format_double(r.value) << '\n';
    }
    return;
  }

  nlohmann::ordered_json doc;
  auto records = nlohmann::ordered_json::array();
  if (table.kind == ResultsTable::Kind::Fit) {
    doc["kind"] = "fit";
    for (const auto &r : table.fit_rows) {
      nlohmann::ordered_json rec;
      rec["estimator"] = r.estimator;
      rec["coefficient"] = r.coefficient;
      rec["estimate"] = detail::json_number(r.estimate);
      rec["lower"] = detail::json_number(r.lower);
      rec["upper"] = detail::json_number(r.upper);
      rec["length"] = detail::json_number(r.length);
      records.push_back(std::move(rec));
    }
  } else {
    doc["kind"] = "simulation";
    for (const auto &r : table.sim_rows) {
      nlohmann::ordered_json rec;
      rec["scenario_id"] = r.scenario_id;
      rec["estimator"] = r.estimator;
      rec["coefficient"] = r.coefficient;
      rec["metric"] = r.metric;
      rec["value"] = detail::json_number(r.value);
      records.push_back(std::move(rec));
    }
  }
  doc["records"] = std::move(records);
  out << doc.dump(2) << '\n';
}

inline void write_results(const ResultsTable &table, const std::string &path,
                          ResultsFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw ValidationError("cannot write results to " + path);
  write_results(table, out, format);
  if (!out)
    throw ValidationError("failed writing results to " + path);
}

inline ResultsTable read_results(std::istream &in, ResultsFormat format) {
  ResultsTable table;
  if (format == ResultsFormat::Json) {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(in);
      const auto kind = doc.at("kind").get<std::string>();
      if (kind == "fit") {
        table.kind = ResultsTable::Kind::Fit;
        for (const auto &r : doc.at("records"))
          table.fit_rows.push_back(
              {r.at("estimator").get<std::string>(),
               r.at("coefficient").get<std::string>(),
               detail::from_json_number(r.at("estimate")),
               detail::from_json_number(r.at("lower")),
               detail::from_json_number(r.at("upper")),
               detail::from_json_number(r.at("length"))});
      } else if (kind == "simulation") {
        table.kind = ResultsTable::Kind::Simulation;
        for (const auto &r : doc.at("records"))
          table.sim_rows.push_back({r.at("scenario_id").get<std::string>(),
                                    r.at("estimator").get<std::string>(),
                                    r.at("coefficient").get<std::string>(),
                                    r.at("metric").get<std::string>(),
                                    detail::from_json_number(r.at("value"))});
      } else {
        throw ValidationError("results: unknown kind '" + kind + "'");
      }
    } catch (const nlohmann::json::exception &err) {
      throw ValidationError(std::string("results: ") + err.what());
    }
    return table;
  }

  std::string line;
  if (!std::getline(in, line))
    throw ValidationError("results: empty file");
  if (line == kFitHeader)
    table.kind = ResultsTable::Kind::Fit;
  else if (line == kSimHeader)
    table.kind = ResultsTable::Kind::Simulation;
  else
    throw ValidationError("results: unrecognised header");
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty())
      continue;
    ++row;
    const auto cells = detail::split_csv_line(line);
    auto number = [&](std::size_t c) {
      auto v = detail::parse_double(cells[c]);
      if (!v)
        throw ValidationError("results: non-numeric cell at row " +
                              std::to_string(row));
      return *v;
    };
    if (table.kind == ResultsTable::Kind::Fit) {
      if (cells.size() != 6)
        throw ValidationError("results: row " + std::to_string(row) +
                              " must have 6 cells");
      table.fit_rows.push_back(
          {cells[0], cells[1], number(2), number(3), number(4), number(5)});
    } else {
      if (cells.size() != 5)
        throw ValidationError("results: row " + std::to_string(row) +
                              " must have 5 cells");
      table.sim_rows.push_back(
          {cells[0], cells[1], cells[2], cells[3], number(4)});
    }
  }
  return table;
}

inline ResultsTable read_results(const std::string &path,
                                 ResultsFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw ValidationError("cannot open results " + path);
  return read_results(in, format);
}

} // namespace metareg
