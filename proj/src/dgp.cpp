#include "ivdg/dgp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "ivdg/errors.hpp"

namespace ivdg::dgp {

namespace {

void check_dims(int d_f, int d_x) {
  if (d_f < 1) throw std::invalid_argument("dgp: d_f must be >= 1");
  if (d_x < 1) throw std::invalid_argument("dgp: d_x must be >= 1");
}

double noise_stddev(NoiseScale scale) {
  // The error scale parameter is 0.1; under kVariance that is the variance.
  return scale == NoiseScale::kVariance ? std::sqrt(0.1) : 0.1;
}

}  // namespace

SharedInvariants sample_shared(int d_f, int d_x, ResponseKind response, rng::Stream& rng) {
  check_dims(d_f, d_x);
  SharedInvariants shared;
  shared.d_f = d_f;
  shared.d_x = d_x;
  shared.response = response;
  shared.lambda_ivt = Eigen::VectorXd(d_x);
  for (int j = 0; j < d_x; ++j) shared.lambda_ivt(j) = rng.uniform(-1.0, 1.0);
  shared.mu_f_ivt = rng.uniform(-1.0, 1.0);
  shared.ivt_seed = rng.next_u64();
  return shared;
}

DomainParams sample_domain_params(const SharedInvariants& shared, double r_div,
                                  const std::string& domain_id, rng::Stream& rng) {
  check_dims(shared.d_f, shared.d_x);
  if (!(r_div >= 0.0)) throw std::invalid_argument("dgp: r_div must be >= 0");
  DomainParams p;
  p.domain_id = domain_id;
  p.phi = Eigen::MatrixXd(shared.d_f, shared.d_x);
  p.alpha = Eigen::MatrixXd(shared.d_f, shared.d_x);
  p.beta = Eigen::VectorXd(shared.d_f);
  for (int i = 0; i < shared.d_f; ++i)
    for (int j = 0; j < shared.d_x; ++j) p.phi(i, j) = rng.uniform(-1.0, 1.0);
  for (int i = 0; i < shared.d_f; ++i)
    for (int j = 0; j < shared.d_x; ++j) p.alpha(i, j) = rng.uniform(-0.5, 0.5);
  for (int i = 0; i < shared.d_f; ++i) p.beta(i) = rng.uniform(-0.5, 0.5);
  p.mu_f = r_div == 0.0 ? 0.0 : rng.uniform(-r_div, r_div);
  p.mu_e = rng.uniform(-0.1, 0.1);
  return p;
}

Eigen::MatrixXd invariant_factor_rows(const SharedInvariants& shared, int n) {
  check_dims(shared.d_f, shared.d_x);
  if (n < 1) throw std::invalid_argument("dgp: n must be >= 1");
  rng::Stream s(shared.ivt_seed);
  Eigen::MatrixXd f(n, shared.d_f);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < shared.d_f; ++k) f(i, k) = shared.mu_f_ivt + s.normal();
  return f;
}

namespace {

// Core sampler shared by both response kinds. Draw order per row:
// confounders f_m (d_f), covariate noise e_x (d_x), response noise e_y (1).
DomainDataset sample_domain(const SharedInvariants& shared, const DomainParams& params, int n,
                            rng::Stream& rng, const SamplingOptions& opts) {
  const int d_f = shared.d_f;
  const int d_x = shared.d_x;
  if (params.phi.rows() != d_f || params.phi.cols() != d_x)
    throw std::invalid_argument("dgp: phi has wrong shape");
  if (params.alpha.rows() != d_f || params.alpha.cols() != d_x)
    throw std::invalid_argument("dgp: alpha has wrong shape");
  if (params.beta.size() != d_f) throw std::invalid_argument("dgp: beta has wrong shape");
  if (shared.lambda_ivt.size() != d_x)
    throw std::invalid_argument("dgp: lambda_ivt has wrong shape");

  const double sd_e = opts.zero_noise ? 0.0 : noise_stddev(opts.noise_scale);
  const double mu_e = opts.zero_noise ? 0.0 : params.mu_e;

  const Eigen::MatrixXd f_ivt = invariant_factor_rows(shared, n);
  Eigen::MatrixXd f_m(n, d_f);
  Eigen::MatrixXd e_x(n, d_x);
  Eigen::VectorXd e_y(n);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < d_f; ++k) f_m(i, k) = rng.normal(params.mu_f, 1.0);
    for (int j = 0; j < d_x; ++j) e_x(i, j) = rng.normal(mu_e, sd_e);
    e_y(i) = rng.normal(mu_e, sd_e);
  }

  DomainDataset ds;
  ds.domain_id = params.domain_id;
  ds.noise_scale = opts.noise_scale;
  ds.x = f_ivt * params.phi + f_m * params.alpha + e_x;
  if (shared.response == ResponseKind::kLinear)
    ds.y = ds.x * shared.lambda_ivt + f_m * params.beta + e_y;
  else
    ds.y = ds.x.array().abs().matrix() * shared.lambda_ivt + f_m * params.beta + e_y;
  if (opts.keep_latent) ds.latent_f_m = std::move(f_m);
  return ds;
}

}  // namespace

DomainDataset sample_linear_domain(const SharedInvariants& shared, const DomainParams& params,
                                   int n, rng::Stream& rng, const SamplingOptions& opts) {
  if (shared.response != ResponseKind::kLinear)
    throw std::invalid_argument("dgp: shared invariants were drawn for a different response kind");
  if (n < 1) throw std::invalid_argument("dgp: n must be >= 1");
  return sample_domain(shared, params, n, rng, opts);
}

Eigen::VectorXi median_split_labels(const Eigen::VectorXd& y) {
  const auto n = static_cast<int>(y.size());
  if (n < 2) throw std::invalid_argument("dgp: median split needs at least 2 rows");
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return y(a) < y(b); });
  const int n_low = (n + 1) / 2;  // lower half (including the median element) -> class 0
  if (y(order[static_cast<std::size_t>(n_low) - 1]) == y(order[static_cast<std::size_t>(n_low)]))
    throw labeling_error("dgp: degenerate median split (tied responses at the boundary)");
  Eigen::VectorXi labels(n);
  for (int r = 0; r < n; ++r) labels(order[static_cast<std::size_t>(r)]) = r < n_low ? 0 : 1;
  return labels;
}

DomainDataset sample_nonlinear_domain(const SharedInvariants& shared, const DomainParams& params,
                                      int n, rng::Stream& rng, LabelRule rule,
                                      const SamplingOptions& opts) {
  if (shared.response != ResponseKind::kAbsoluteValue)
    throw std::invalid_argument("dgp: shared invariants were drawn for a different response kind");
  if (n < 2) throw std::invalid_argument("dgp: n must be >= 2 for labeled sampling");
  if (rule != LabelRule::kMedianSplit) throw std::invalid_argument("dgp: unknown label rule");
  DomainDataset ds = sample_domain(shared, params, n, rng, opts);
  ds.labels = median_split_labels(ds.y);
  return ds;
}

}  // namespace ivdg::dgp
