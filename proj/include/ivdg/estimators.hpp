#pragma once

// Closed-form linear estimators: ordinary least squares, two-stage
// least squares with instruments, and the cross-domain OLS average.
//
// All fits are computed through rank-revealing orthogonal factorizations
// (never an explicit matrix inverse). A design matrix whose smallest singular
// value falls below 1e-10 times its largest is rejected as singular; a first
// stage whose fitted values have smallest singular value below 1e-8 times
// their largest is rejected as a weak instrument.

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

#include "ivdg/dgp.hpp"

namespace ivdg::estimators {

enum class EstimatorKind { kOls, kTwoStage, kDgAverage };

struct FitResult {
  Eigen::VectorXd lambda_hat;
  EstimatorKind estimator = EstimatorKind::kOls;
  std::int64_t n_used = 0;
  // Smallest singular value of the (final-stage) design matrix; small values
  // flag ill-conditioned fits before they are consumed downstream.
  double condition_diagnostic = 0.0;
  // Two-stage fits only: the d_z x d_x first-stage coefficient matrix.
  std::optional<Eigen::MatrixXd> first_stage_gamma;
};

inline constexpr double kRankRelTol = 1e-10;
inline constexpr double kWeakInstrumentRelTol = 1e-8;

// No-intercept least squares of y on x. Requires x.rows() == y.size(),
// x.rows() >= x.cols() >= 1; throws singular_design_error for rank-deficient x.
FitResult ols_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

// Two-stage least squares: regress each column of x on the instruments z,
// then regress y on the fitted values. Requires conformable shapes with
// n >= max(d_x, d_z); throws singular_design_error when z is rank-deficient
// and weak_instrument_error when the first-stage fitted values are
// numerically degenerate.
FitResult two_stage_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                        const Eigen::MatrixXd& z);

// Entrywise average of per-domain OLS coefficients. Requires a non-empty list
// with matching covariate dimensions.
FitResult dg_average_fit(const std::vector<dgp::DomainDataset>& domains);

// Mean absolute error between a coefficient estimate and the truth.
double mae_lambda(const Eigen::VectorXd& lambda_hat, const Eigen::VectorXd& lambda_true);

// Mean squared prediction error.
double mse_prediction(const Eigen::VectorXd& y_hat, const Eigen::VectorXd& y);

}  // namespace ivdg::estimators
