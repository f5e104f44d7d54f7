#include "oracles.hpp"
#include "test_support.hpp"

#include <metareg/linalg.hpp>
#include <metareg/wls.hpp>

#include <gtest/gtest.h>

#include <numeric>
#include <random>

using namespace metareg;
using testing_support::to_eigen;

namespace {

Tau2Estimate fixed_tau2(double t) {
  Tau2Estimate e;
  e.tau2 = t;
  return e;
}

} // namespace

TEST(SolveSpd, IdentityReturnsRightHandSide) {
  Matrix B(3, 2);
  B << 1, 2, 3, 4, 5, 6;
  EXPECT_TRUE(solve_spd(Matrix::Identity(3, 3), B).isApprox(B, 0.0));
}

TEST(SolveSpd, Diagonal) {
  Matrix A(2, 2);
  A << 2, 0, 0, 4;
  Matrix b(2, 1);
  b << 2, 4;
  const Matrix x = solve_spd(A, b);
  EXPECT_DOUBLE_EQ(x(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(x(1, 0), 1.0);
}

TEST(SolveSpd, RandomResidual) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal;
  for (int rep = 0; rep < 50; ++rep) {
    Matrix M(5, 5), B(5, 3);
    for (Eigen::Index i = 0; i < 5; ++i) {
      for (Eigen::Index j = 0; j < 5; ++j)
        M(i, j) = normal(rng);
      for (Eigen::Index j = 0; j < 3; ++j)
        B(i, j) = normal(rng);
    }
    Matrix A = M * M.transpose() + 0.1 * Matrix::Identity(5, 5);
    A = 0.5 * (A + A.transpose()).eval();
    const Matrix X = solve_spd(A, B);
    EXPECT_LE((A * X - B).norm(), 1e-10 * B.norm());
  }
}

TEST(SolveSpd, RankDeficientIsSingularDesign) {
  Matrix X(4, 2);
  X << 1, 2, 1, 2, 1, 2, 1, 2; // second column = 2 * first
  const Matrix A = X.transpose() * X;
  try {
    solve_spd(A, Matrix::Identity(2, 2));
    FAIL() << "expected NumericError";
  } catch (const NumericError &e) {
    EXPECT_STREQ(e.what(), "singular design");
  }
  EXPECT_FALSE(has_full_column_rank(X));
}

TEST(SolveSpd, RejectsAsymmetric) {
  Matrix A(2, 2);
  A << 1, 0.5, 0, 1;
  EXPECT_THROW(solve_spd(A, Matrix::Identity(2, 2)), ValidationError);
}

TEST(FitWls, WeightedMeanForInterceptOnly) {
  const Matrix X = Matrix::Ones(3, 1);
  Vector y(3), v(3);
  y << 1, 2, 3;
  v << 1.0, 1.0, 0.5; // weights 1, 1, 2 with tau2 = 0
  const auto fit = fit_wls(X, y, v, fixed_tau2(0.0));
  const double oracle = (1 * 1 + 1 * 2 + 2 * 3) / 4.0;
  EXPECT_NEAR(fit.beta[0], oracle, 1e-15);
  EXPECT_NEAR(fit.beta[0], 2.25, 1e-15);
}

TEST(FitWls, UnitWeightsGiveMean) {
  const Matrix X = Matrix::Ones(5, 1);
  Vector y(5);
  y << 0.3, -1.2, 2.5, 0.7, 1.1;
  const auto fit = fit_wls(X, y, Vector::Constant(5, 0.6), fixed_tau2(0.4));
  EXPECT_NEAR(fit.beta[0], y.mean(), 1e-15);
  for (Eigen::Index i = 0; i < 5; ++i)
    EXPECT_NEAR(fit.leverages[i], 0.2, 1e-15);
}

TEST(FitWls, MatchesExplicitInverseOracle) {
  std::mt19937_64 rng(2024);
  for (int rep = 0; rep < 100; ++rep) {
    const auto inst = oracle::random_instance(rng, 6, 3);
    const double tau2 = 0.05 * (rep % 7);
    oracle::Vec w(6);
    for (std::size_t i = 0; i < 6; ++i)
      w[i] = 1.0 / (tau2 + inst.v[i]);
    const auto expected = oracle::wls_beta(inst.x, inst.y, w);
    const auto fit = fit_wls(to_eigen(inst.x), to_eigen(inst.y),
                             to_eigen(inst.v), fixed_tau2(tau2));
    for (std::size_t j = 0; j < 3; ++j)
      EXPECT_NEAR(fit.beta[static_cast<Eigen::Index>(j)], expected[j],
                  1e-10 * (1.0 + std::abs(expected[j])));
  }
}

TEST(HatMatrix, ProjectionProperties) {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t k = 6 + rep % 10;
    const std::size_t p = 1 + rep % 4;
    const auto inst = oracle::random_instance(rng, k, p);
    const auto fit = fit_wls(to_eigen(inst.x), to_eigen(inst.y),
                             to_eigen(inst.v), fixed_tau2(0.1));
    const Matrix H = hat_matrix(fit);
    EXPECT_LE((H * H - H).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_NEAR(H.trace(), static_cast<double>(p), 1e-8);
    EXPECT_NEAR(fit.leverages.sum(), static_cast<double>(p), 1e-8);
    for (Eigen::Index i = 0; i < fit.k(); ++i) {
      EXPECT_NEAR(H(i, i), fit.leverages[i], 1e-12);
      EXPECT_GE(fit.leverages[i], 0.0);
      EXPECT_LE(fit.leverages[i], 1.0 + 1e-10);
    }
    const Vector normal_eq =
        fit.X.transpose() * fit.weights.asDiagonal() * fit.residuals;
    EXPECT_LE(normal_eq.cwiseAbs().maxCoeff(), 1e-8 * fit.y.norm());
  }
}

TEST(FitWls, ExactFitWhenResponseInColumnSpan) {
  std::mt19937_64 rng(8);
  const auto inst = oracle::random_instance(rng, 9, 3);
  const Matrix X = to_eigen(inst.x);
  Vector beta(3);
  beta << 0.4, -1.3, 2.2;
  const Vector y = X * beta;
  const auto fit = fit_wls(X, y, to_eigen(inst.v), fixed_tau2(0.2));
  EXPECT_LE(fit.residuals.norm(), 1e-10 * y.norm());
  EXPECT_LE((hat_matrix(fit) * y - y).norm(), 1e-10 * y.norm());
}

TEST(FitWls, WeightScalingInvariance) {
  std::mt19937_64 rng(17);
  const auto inst = oracle::random_instance(rng, 10, 3);
  const Matrix X = to_eigen(inst.x);
  const Vector y = to_eigen(inst.y);
  const Vector v = to_eigen(inst.v);
  const auto a = fit_wls(X, y, v, fixed_tau2(0.0));
  const auto b = fit_wls(X, y, 3.5 * v, fixed_tau2(0.0)); // weights / 3.5
  EXPECT_LE((a.beta - b.beta).norm(), 1e-10 * a.beta.norm());
  EXPECT_LE((a.leverages - b.leverages).norm(), 1e-10);
  EXPECT_LE((a.residuals - b.residuals).norm(), 1e-10 * a.residuals.norm());
}

TEST(FitWls, PermutationEquivariance) {
  std::mt19937_64 rng(23);
  const auto inst = oracle::random_instance(rng, 8, 3);
  std::vector<std::size_t> perm(8);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  auto permuted = inst;
  for (std::size_t i = 0; i < 8; ++i) {
    permuted.x[i] = inst.x[perm[i]];
    permuted.y[i] = inst.y[perm[i]];
    permuted.v[i] = inst.v[perm[i]];
  }
  const auto a = fit_wls(to_eigen(inst.x), to_eigen(inst.y), to_eigen(inst.v),
                         fixed_tau2(0.1));
  const auto b = fit_wls(to_eigen(permuted.x), to_eigen(permuted.y),
                         to_eigen(permuted.v), fixed_tau2(0.1));
  for (std::size_t i = 0; i < 8; ++i) {
    const auto pi = static_cast<Eigen::Index>(perm[i]);
    const auto ii = static_cast<Eigen::Index>(i);
    EXPECT_NEAR(b.residuals[ii], a.residuals[pi], 1e-12);
    EXPECT_NEAR(b.leverages[ii], a.leverages[pi], 1e-12);
  }
}

TEST(FitWls, FlagsDegenerateLeverage) {
  // A dummy column that is non-zero for one study only gives h = 1 there.
  Matrix X(5, 2);
  X << 1, 0, 1, 0, 1, 0, 1, 0, 1, 1;
  Vector y(5);
  y << 0.1, 0.2, 0.3, 0.4, 0.9;
  const auto fit = fit_wls(X, y, Vector::Constant(5, 0.1), fixed_tau2(0.0));
  ASSERT_EQ(fit.degenerate_leverage.size(), 1u);
  EXPECT_EQ(fit.degenerate_leverage[0], 4u);
}

TEST(FitWls, SingularDesignPropagates) {
  Matrix X(5, 2);
  X << 1, 1, 1, 1, 1, 1, 1, 1, 1, 1;
  EXPECT_THROW(fit_wls(X, Vector::Ones(5), Vector::Ones(5), fixed_tau2(0.0)),
               NumericError);
}
