#include "ivdg/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ivdg/errors.hpp"

namespace ivdg::estimators {

namespace {

struct Solved {
  Eigen::MatrixXd coef;
  double smin = 0.0;
  double smax = 0.0;
};

// Least squares via thin SVD with a relative rank check. Rejecting near-rank-
// deficient designs here keeps every caller on the same tolerance.
Solved solve_least_squares(const Eigen::MatrixXd& design, const Eigen::MatrixXd& rhs,
                           const char* what) {
  Eigen::BDCSVD<Eigen::MatrixXd> svd(design, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double smax = sv(0);
  const double smin = sv(sv.size() - 1);
  if (!(smax > 0.0) || smin < kRankRelTol * smax)
    throw singular_design_error(std::string(what) + ": design matrix is rank deficient");
  svd.setThreshold(kRankRelTol);  // align the solver's rank cut with the check above
  Solved out;
  out.coef = svd.solve(rhs);
  out.smin = smin;
  out.smax = smax;
  return out;
}

void check_xy(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const char* what) {
  if (x.rows() != y.size())
    throw std::invalid_argument(std::string(what) + ": x and y row counts differ");
  if (x.cols() < 1) throw std::invalid_argument(std::string(what) + ": x has no columns");
  if (x.rows() < x.cols())
    throw std::invalid_argument(std::string(what) + ": fewer rows than coefficients");
}

}  // namespace

FitResult ols_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  check_xy(x, y, "ols_fit");
  const Solved s = solve_least_squares(x, y, "ols_fit");
  FitResult r;
  r.lambda_hat = s.coef.col(0);
  r.estimator = EstimatorKind::kOls;
  r.n_used = x.rows();
  r.condition_diagnostic = s.smin;
  return r;
}

FitResult two_stage_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                        const Eigen::MatrixXd& z) {
  check_xy(x, y, "two_stage_fit");
  if (z.rows() != x.rows())
    throw std::invalid_argument("two_stage_fit: z and x row counts differ");
  if (z.cols() < 1) throw std::invalid_argument("two_stage_fit: z has no columns");
  if (z.rows() < z.cols())
    throw std::invalid_argument("two_stage_fit: fewer rows than instrument columns");

  // First stage: project the endogenous regressors onto the instrument span.
  const Solved first = solve_least_squares(z, x, "two_stage_fit (first stage)");
  const Eigen::MatrixXd x_hat = z * first.coef;

  // Degeneracy check on the fitted values, not on z: instruments can be well
  // conditioned yet explain (numerically) nothing about x.
  Eigen::BDCSVD<Eigen::MatrixXd> svd_hat(x_hat);
  const auto& sv = svd_hat.singularValues();
  const double smax_hat = sv(0);
  const double smin_hat = sv(sv.size() - 1);
  if (!(smax_hat > 0.0) || smin_hat < kWeakInstrumentRelTol * smax_hat)
    throw weak_instrument_error(
        "two_stage_fit: first-stage fitted values are numerically degenerate", smin_hat);

  const Solved second = solve_least_squares(x_hat, y, "two_stage_fit (second stage)");
  FitResult r;
  r.lambda_hat = second.coef.col(0);
  r.estimator = EstimatorKind::kTwoStage;
  r.n_used = x.rows();
  r.condition_diagnostic = second.smin;
  r.first_stage_gamma = first.coef;
  return r;
}

FitResult dg_average_fit(const std::vector<dgp::DomainDataset>& domains) {
  if (domains.empty()) throw std::invalid_argument("dg_average_fit: no domains");
  const auto d_x = domains.front().x.cols();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(d_x);
  FitResult r;
  r.estimator = EstimatorKind::kDgAverage;
  r.condition_diagnostic = std::numeric_limits<double>::infinity();
  for (const auto& ds : domains) {
    if (ds.x.cols() != d_x)
      throw std::invalid_argument("dg_average_fit: covariate dimensions differ across domains");
    FitResult fit = ols_fit(ds.x, ds.y);
    sum += fit.lambda_hat;
    r.n_used += fit.n_used;
    r.condition_diagnostic = std::min(r.condition_diagnostic, fit.condition_diagnostic);
  }
  r.lambda_hat = sum / static_cast<double>(domains.size());
  return r;
}

double mae_lambda(const Eigen::VectorXd& lambda_hat, const Eigen::VectorXd& lambda_true) {
  if (lambda_hat.size() != lambda_true.size())
    throw std::invalid_argument("mae_lambda: size mismatch");
  if (lambda_hat.size() == 0) throw std::invalid_argument("mae_lambda: empty vectors");
  return (lambda_hat - lambda_true).cwiseAbs().mean();
}

double mse_prediction(const Eigen::VectorXd& y_hat, const Eigen::VectorXd& y) {
  if (y_hat.size() != y.size()) throw std::invalid_argument("mse_prediction: size mismatch");
  if (y_hat.size() == 0) throw std::invalid_argument("mse_prediction: empty vectors");
  return (y_hat - y).array().square().mean();
}

}  // namespace ivdg::estimators
