#pragma once

#include <metareg/error.hpp>
#include <metareg/model.hpp>

#include <Eigen/Dense>

#include <cmath>

namespace metareg {

/// Relative pivot floor below which a symmetric system counts as singular.
inline constexpr double kPivotTolerance = 1e-12;

/// Solves A X = B for symmetric positive-definite A using a pivoted LDLT
/// factorisation. Throws NumericError("singular design") when the smallest
/// pivot falls below kPivotTolerance times the largest diagonal entry.
inline Matrix solve_spd(const Matrix &A, const Matrix &B) {
  if (A.rows() != A.cols() || A.rows() != B.rows())
    throw ValidationError("solve_spd: dimension mismatch");
  if (A.rows() == 0)
    throw ValidationError("solve_spd: empty system");
  const double scale = A.cwiseAbs().maxCoeff();
  if (!std::isfinite(scale))
    throw NumericError("solve_spd: non-finite matrix");
  if ((A - A.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw ValidationError("solve_spd: matrix is not symmetric");

  Eigen::LDLT<Matrix> ldlt(A);
  const auto d = ldlt.vectorD();
  const double max_diag = A.diagonal().maxCoeff();
  if (ldlt.info() != Eigen::Success || !(max_diag > 0.0) ||
      !(d.minCoeff() > kPivotTolerance * max_diag))
    throw NumericError("singular design");
  return ldlt.solve(B);
}

/// True when X has full column rank by the solve_spd pivot criterion on XᵀX.
inline bool has_full_column_rank(const Matrix &X) {
  if (X.cols() == 0 || X.rows() < X.cols())
    return false;
  const Matrix gram = X.transpose() * X;
  Eigen::LDLT<Matrix> ldlt(gram);
  const double max_diag = gram.diagonal().maxCoeff();
  return ldlt.info() == Eigen::Success && max_diag > 0.0 &&
         ldlt.vectorD().minCoeff() > kPivotTolerance * max_diag;
}

} // namespace metareg
