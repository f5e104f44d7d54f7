#pragma once

#include <metareg/error.hpp>
#include <metareg/linalg.hpp>
#include <metareg/model.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>

namespace metareg {

struct Tau2Estimate {
  double tau2 = 0.0;
  int iterations = 0;
  bool converged = true;
  double restricted_ll = 0.0;
};

/// Damped Fisher scoring settings. Defaults: 5000 iterations, step 0.5.
struct RemlConfig {
  int max_iter = 5000;
  double step = 0.5;
  double tol = 1e-8;

  void validate() const {
    if (max_iter < 1)
      throw ValidationError("REML max_iter must be >= 1");
    if (!(step > 0.0 && step <= 1.0))
      throw ValidationError("REML step must lie in (0, 1]");
    if (!(tol > 0.0))
      throw ValidationError("REML tolerance must be positive");
  }
};

namespace detail {

/// Weighted normal equations at a fixed tau2: everything the restricted
/// likelihood and its derivatives need.
struct WeightedSystem {
  Vector w;        // 1 / (tau2 + v)
  Matrix gram_inv; // (XᵀWX)⁻¹
  Vector beta;
  Vector resid;
  double log_det_gram = 0.0;

  WeightedSystem(const Matrix &X, const Vector &y, const Vector &v,
                 double tau2) {
    w = (v.array() + tau2).inverse().matrix();
    if (!w.allFinite() || (w.array() <= 0.0).any())
      throw NumericError("non-positive total variance tau2 + v");
    Matrix gram = X.transpose() * w.asDiagonal() * X;
    gram = 0.5 * (gram + gram.transpose()).eval();
    gram_inv = solve_spd(gram, Matrix::Identity(gram.rows(), gram.cols()));
    beta = gram_inv * (X.transpose() * w.cwiseProduct(y));
    resid = y - X * beta;
    Eigen::LDLT<Matrix> ldlt(gram);
    log_det_gram = ldlt.vectorD().array().log().sum();
  }
};

} // namespace detail

/// Restricted log-likelihood of tau2 with additive constants dropped:
/// -1/2 [ sum ln(tau2 + v_i) + ln det(XᵀWX) + rᵀWr ].
inline double restricted_loglik(double tau2, const Matrix &X, const Vector &y,
                                const Vector &v) {
  if (!(tau2 >= 0.0))
    throw ValidationError("tau2 must be non-negative");
  detail::WeightedSystem sys(X, y, v, tau2);
  const double value =
      -0.5 * ((v.array() + tau2).log().sum() + sys.log_det_gram +
              (sys.w.array() * sys.resid.array().square()).sum());
  if (!std::isfinite(value))
    throw NumericError("restricted log-likelihood is not finite");
  return value;
}

/// REML score and expected information in tau2.
struct RemlDerivatives {
  double score = 0.0;
  double information = 0.0;
};

inline RemlDerivatives reml_derivatives(double tau2, const Matrix &X,
                                        const Vector &y, const Vector &v) {
  detail::WeightedSystem sys(X, y, v, tau2);
  // P = W - W X (XᵀWX)⁻¹ Xᵀ W, and P y = W r.
  const Matrix WX = sys.w.asDiagonal() * X;
  Matrix P = -WX * sys.gram_inv * WX.transpose();
  P.diagonal() += sys.w;
  const Vector Py = sys.w.cwiseProduct(sys.resid);
  RemlDerivatives d;
  d.score = 0.5 * (Py.squaredNorm() - P.trace());
  d.information = 0.5 * P.squaredNorm();
  return d;
}

/// Between-study variance by damped Fisher scoring on the restricted
/// likelihood, projected onto tau2 >= 0. Non-convergence is reported through
/// Tau2Estimate::converged, not thrown.
inline Tau2Estimate reml_tau2(const Matrix &X, const Vector &y,
                              const Vector &v, const RemlConfig &cfg = {}) {
  cfg.validate();
  const Eigen::Index k = X.rows();
  if (y.size() != k || v.size() != k)
    throw ValidationError("reml_tau2: length mismatch");
  if (k - X.cols() < 1)
    throw ValidationError("reml_tau2: need k - p >= 1 degrees of freedom");

  const double mean_y = y.mean();
  const double var_y =
      (y.array() - mean_y).square().sum() / static_cast<double>(k - 1);
  double tau2 = std::max(0.0, var_y - v.mean());

  Tau2Estimate est;
  est.converged = false;
  int consecutive_projections = 0;
  for (int it = 1; it <= cfg.max_iter; ++it) {
    const auto d = reml_derivatives(tau2, X, y, v);
    if (!std::isfinite(d.score) || !std::isfinite(d.information) ||
        !(d.information > 0.0))
      throw NumericError("REML scoring step is not finite");
    double next = tau2 + cfg.step * d.score / d.information;
    if (next < 0.0) {
      next = 0.0;
      ++consecutive_projections;
    } else {
      consecutive_projections = 0;
    }
    const double change = std::abs(next - tau2);
    tau2 = next;
    est.iterations = it;
    if (change <= cfg.tol * (1.0 + tau2) || consecutive_projections >= 2) {
      est.converged = true;
      break;
    }
  }
  est.tau2 = tau2;
  est.restricted_ll = restricted_loglik(tau2, X, y, v);
  return est;
}

} // namespace metareg
