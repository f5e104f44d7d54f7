#pragma once

#include <metareg/error.hpp>
#include <metareg/model.hpp>
#include <metareg/robust_cov.hpp>
#include <metareg/wls.hpp>

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

namespace metareg {

namespace detail {

// Continued fraction for the regularized incomplete beta function
// (modified Lentz). Converges quickly for x < (a + 1) / (a + b + 2).
inline double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 20000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny)
    d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny)
      d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny)
      c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny)
      d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny)
      c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) <= kEps)
      return h;
  }
  throw NumericError("incomplete beta continued fraction did not converge");
}

} // namespace detail

/// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0))
    throw ValidationError("incomplete_beta: shape parameters must be positive");
  if (!(x >= 0.0 && x <= 1.0))
    throw ValidationError("incomplete_beta: x must lie in [0, 1]");
  if (x == 0.0 || x == 1.0)
    return x;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) -
                           std::lgamma(b) + a * std::log(x) +
                           b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0))
    return front * detail::beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

/// P(T > t) for t >= 0, T ~ t(df).
inline double t_upper_tail(double t, double df) {
  const double t2 = t * t;
  if (t2 < df) {
    // small |t|: I_{t²/(df+t²)}(1/2, df/2) is the two-sided central mass
    return 0.5 * (1.0 - incomplete_beta(0.5, 0.5 * df, t2 / (df + t2)));
  }
  return 0.5 * incomplete_beta(0.5 * df, 0.5, df / (df + t2));
}

inline double t_cdf(double t, double df) {
  return t >= 0.0 ? 1.0 - t_upper_tail(t, df) : t_upper_tail(-t, df);
}

inline double t_pdf(double t, double df) {
  const double log_norm = std::lgamma(0.5 * (df + 1.0)) -
                          std::lgamma(0.5 * df) -
                          0.5 * std::log(df * std::numbers::pi);
  return std::exp(log_norm - 0.5 * (df + 1.0) * std::log1p(t * t / df));
}

/// Quantile of Student's t with integer df, by safeguarded Newton iteration
/// on the incomplete beta tail.
inline double t_quantile(long df, double p) {
  if (df < 1)
    throw ValidationError("t_quantile: df must be >= 1");
  if (!(p > 0.0 && p < 1.0))
    throw ValidationError("t_quantile: p must lie in (0, 1)");
  if (p == 0.5)
    return 0.0;
  const double nu = static_cast<double>(df);
  const double target = p < 0.5 ? p : 1.0 - p; // upper-tail mass to hit

  double lo = 0.0;
  double hi = 1.0;
  while (t_upper_tail(hi, nu) > target) {
    lo = hi;
    hi *= 2.0;
    if (!std::isfinite(hi))
      throw NumericError("t_quantile: bracket overflow");
  }
  double q = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    const double f = t_upper_tail(q, nu) - target; // decreasing in q
    if (f == 0.0)
      break;
    if (f > 0.0)
      lo = q;
    else
      hi = q;
    double next = q + f / t_pdf(q, nu);
    if (!(next > lo && next < hi))
      next = 0.5 * (lo + hi);
    const double step = std::abs(next - q);
    q = next;
    if (step <= 1e-15 * std::max(1.0, q) || hi - lo <= 1e-15 * hi)
      break;
  }
  return p < 0.5 ? -q : q;
}

/// Two-sided multiplier t_{df, 1 - (1 - level)/2}.
inline double t_multiplier(long df, double level) {
  if (!(level > 0.0 && level < 1.0))
    throw ValidationError("confidence level must lie in (0, 1)");
  return t_quantile(df, 1.0 - 0.5 * (1.0 - level));
}

struct ConfidenceInterval {
  Eigen::Index coefficient_index = 0;
  double estimate = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double level = 0.95;
  CovVariant variant = CovVariant::HC0;
  long df = 0;

  double length() const { return upper - lower; }
  bool contains(double value) const { return lower <= value && value <= upper; }
};

/// beta_j -/+ multiplier * sqrt(Sigma_jj) for every coefficient.
inline std::vector<ConfidenceInterval>
confidence_intervals(const FitResult &fit, const CovarianceEstimate &cov,
                     double level, double multiplier) {
  std::vector<ConfidenceInterval> out;
  out.reserve(static_cast<std::size_t>(fit.p()));
  for (Eigen::Index j = 0; j < fit.p(); ++j) {
    const double var = cov.sigma(j, j);
    if (!(var >= 0.0))
      throw NumericError("negative or non-finite variance for coefficient " +
                         std::to_string(j));
    const double half = multiplier * std::sqrt(var);
    ConfidenceInterval ci;
    ci.coefficient_index = j;
    ci.estimate = fit.beta[j];
    ci.lower = fit.beta[j] - half;
    ci.upper = fit.beta[j] + half;
    ci.level = level;
    ci.variant = cov.variant;
    ci.df = fit.df();
    out.push_back(ci);
  }
  return out;
}

inline std::vector<ConfidenceInterval>
confidence_intervals(const FitResult &fit, const CovarianceEstimate &cov,
                     double level = 0.95) {
  if (fit.df() < 1)
    throw ValidationError("confidence intervals need k - p >= 1");
  return confidence_intervals(fit, cov, level, t_multiplier(fit.df(), level));
}

} // namespace metareg
