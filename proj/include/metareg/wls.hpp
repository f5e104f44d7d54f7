#pragma once

#include <metareg/error.hpp>
#include <metareg/linalg.hpp>
#include <metareg/model.hpp>
#include <metareg/reml.hpp>

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

namespace metareg {

/// Leverages above this are "degenerate": 1 - h_ii is too close to zero for
/// the leverage-adjusted sandwich estimators.
inline constexpr double kDegenerateLeverage = 1.0 - 1e-12;

/// Weighted least squares fit with weights 1 / (tau2 + v_i).
struct FitResult {
  Vector beta;
  Matrix gram_inv; // (XᵀŴX)⁻¹
  Vector weights;
  Vector residuals;
  Vector leverages;
  Tau2Estimate tau2;
  Matrix X;
  Vector y;
  Vector v;
  std::vector<std::size_t> degenerate_leverage; // study indices

  Eigen::Index k() const { return X.rows(); }
  Eigen::Index p() const { return X.cols(); }
  long df() const { return static_cast<long>(X.rows() - X.cols()); }
  Vector fitted() const { return X * beta; }
};

inline FitResult fit_wls(const Matrix &X, const Vector &y, const Vector &v,
                         const Tau2Estimate &tau2) {
  const Eigen::Index k = X.rows();
  if (y.size() != k || v.size() != k)
    throw ValidationError("fit_wls: length mismatch");
  if (k <= X.cols())
    throw ValidationError("fit_wls: need more studies than coefficients");

  FitResult fit;
  fit.X = X;
  fit.y = y;
  fit.v = v;
  fit.tau2 = tau2;
  fit.weights = (v.array() + tau2.tau2).inverse().matrix();
  if (!fit.weights.allFinite() || (fit.weights.array() <= 0.0).any())
    throw ValidationError("fit_wls: tau2 + v_i must be positive");

  const Matrix WX = fit.weights.asDiagonal() * X;
  Matrix gram = X.transpose() * WX;
  gram = 0.5 * (gram + gram.transpose()).eval();
  fit.gram_inv = solve_spd(gram, Matrix::Identity(gram.rows(), gram.cols()));
  fit.beta = fit.gram_inv * (WX.transpose() * y);
  fit.residuals = y - X * fit.beta;

  // h_ii = x_i (XᵀŴX)⁻¹ x_iᵀ w_i
  fit.leverages.resize(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto xi = X.row(i);
    fit.leverages[i] = fit.weights[i] * xi.dot(fit.gram_inv * xi.transpose());
    if (fit.leverages[i] > kDegenerateLeverage)
      fit.degenerate_leverage.push_back(static_cast<std::size_t>(i));
  }
  return fit;
}

/// Full hat matrix H = X (XᵀŴX)⁻¹ XᵀŴ. Diagnostic only.
inline Matrix hat_matrix(const FitResult &fit) {
  return fit.X * fit.gram_inv * fit.X.transpose() *
         fit.weights.asDiagonal();
}

} // namespace metareg
