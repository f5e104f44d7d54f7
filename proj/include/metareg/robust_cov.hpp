#pragma once

#include <metareg/error.hpp>
#include <metareg/model.hpp>
#include <metareg/wls.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>

namespace metareg {

enum class CovVariant { HC0, HC1, HC2, HC3, HC4, HC5, KH };

inline constexpr std::array<CovVariant, 7> kAllVariants = {
    CovVariant::HC0, CovVariant::HC1, CovVariant::HC2, CovVariant::HC3,
    CovVariant::HC4, CovVariant::HC5, CovVariant::KH};

inline constexpr double kDefaultEta = 0.7;

inline std::string_view to_string(CovVariant v) {
  switch (v) {
  case CovVariant::HC0: return "HC0";
  case CovVariant::HC1: return "HC1";
  case CovVariant::HC2: return "HC2";
  case CovVariant::HC3: return "HC3";
  case CovVariant::HC4: return "HC4";
  case CovVariant::HC5: return "HC5";
  case CovVariant::KH: return "KH";
  }
  return "?";
}

/// Case-insensitive parse of "hc0".."hc5", "kh".
inline std::optional<CovVariant> parse_variant(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  for (auto v : kAllVariants) {
    std::string name(to_string(v));
    std::transform(name.begin(), name.end(), name.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    if (name == lower)
      return v;
  }
  return std::nullopt;
}

struct CovarianceEstimate {
  CovVariant variant = CovVariant::HC0;
  Matrix sigma;
  std::optional<double> eta; // HC5 only
};

struct LeverageExponents {
  Vector delta; // HC4: min{4, h_ii / h_bar}
  Vector alpha; // HC5: min{h_ii / h_bar, max{4, eta h_max / h_bar}}
};

inline LeverageExponents leverage_exponents(const Vector &leverages,
                                            double eta = kDefaultEta) {
  if (leverages.size() == 0)
    throw ValidationError("leverage_exponents: empty leverage vector");
  const double h_bar = leverages.mean();
  if (!(h_bar > 0.0))
    throw NumericError("leverage_exponents: mean leverage is zero");
  const double h_max = leverages.maxCoeff();
  const double alpha_cap = std::max(4.0, eta * h_max / h_bar);
  LeverageExponents out;
  out.delta.resize(leverages.size());
  out.alpha.resize(leverages.size());
  for (Eigen::Index i = 0; i < leverages.size(); ++i) {
    const double ratio = leverages[i] / h_bar;
    out.delta[i] = std::min(4.0, ratio);
    out.alpha[i] = std::min(ratio, alpha_cap);
  }
  return out;
}

namespace detail {

/// (XᵀŴX)⁻¹ Xᵀ diag(w_i² e_i² d_i²) X (XᵀŴX)⁻¹ with d_i² given.
inline Matrix sandwich(const FitResult &fit, const Vector &d_squared) {
  const Vector meat = fit.weights.array().square() *
                      fit.residuals.array().square() * d_squared.array();
  const Matrix bread_x = fit.X * fit.gram_inv; // k x p
  Matrix s = bread_x.transpose() * meat.asDiagonal() * bread_x;
  return 0.5 * (s + s.transpose());
}

} // namespace detail

/// Sandwich estimators HC0..HC5. HC1 is k/(k-p) times HC0.
inline CovarianceEstimate hc_covariance(const FitResult &fit,
                                        CovVariant variant,
                                        double eta = kDefaultEta) {
  if (variant == CovVariant::KH)
    throw ValidationError("hc_covariance: KH is not a sandwich variant");
  const Eigen::Index k = fit.k();
  CovarianceEstimate out;
  out.variant = variant;

  if (variant == CovVariant::HC0 || variant == CovVariant::HC1) {
    out.sigma = detail::sandwich(fit, Vector::Ones(k));
    if (variant == CovVariant::HC1) {
      if (fit.df() < 1)
        throw ValidationError("HC1 needs k - p >= 1");
      out.sigma *= static_cast<double>(k) / static_cast<double>(fit.df());
    }
    return out;
  }

  if (!fit.degenerate_leverage.empty())
    throw NumericError("degenerate leverage at study " +
                       std::to_string(fit.degenerate_leverage.front()) +
                       " for " + std::string(to_string(variant)));

  const Vector one_minus_h = (1.0 - fit.leverages.array()).matrix();
  Vector exponent(k); // d_i² = (1 - h_ii)^(-exponent_i)
  switch (variant) {
  case CovVariant::HC2:
    exponent.setOnes();
    break;
  case CovVariant::HC3:
    exponent.setConstant(2.0);
    break;
  case CovVariant::HC4:
    exponent = leverage_exponents(fit.leverages, eta).delta;
    break;
  case CovVariant::HC5:
    exponent = leverage_exponents(fit.leverages, eta).alpha;
    out.eta = eta;
    break;
  default:
    break;
  }
  const Vector d_squared =
      one_minus_h.array().pow(-exponent.array()).matrix();
  out.sigma = detail::sandwich(fit, d_squared);
  return out;
}

/// Knapp-Hartung: s² (XᵀŴX)⁻¹ with s² = êᵀŴê / (k - p).
inline CovarianceEstimate kh_covariance(const FitResult &fit) {
  if (fit.df() < 1)
    throw ValidationError("KH needs k - p >= 1");
  const double s2 =
      (fit.weights.array() * fit.residuals.array().square()).sum() /
      static_cast<double>(fit.df());
  CovarianceEstimate out;
  out.variant = CovVariant::KH;
  out.sigma = s2 * fit.gram_inv;
  out.sigma = 0.5 * (out.sigma + out.sigma.transpose()).eval();
  return out;
}

inline CovarianceEstimate covariance(const FitResult &fit, CovVariant variant,
                                     double eta = kDefaultEta) {
  return variant == CovVariant::KH ? kh_covariance(fit)
                                   : hc_covariance(fit, variant, eta);
}

} // namespace metareg
