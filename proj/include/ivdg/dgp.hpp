#pragma once

// Structural data-generating processes for multi-domain regression and
// classification studies.
//
// Each domain m draws covariates and responses from
//
//   x_i = phi_m' f_ivt_i + alpha_m' f_m_i + e_x_i
//   y_i = lambda_ivt' x_i        + beta_m' f_m_i + e_y_i   (linear response)
//   y_i = lambda_ivt' |x_i|      + beta_m' f_m_i + e_y_i   (absolute-value response)
//
// where f_ivt are invariant factors shared by every domain of an experiment,
// f_m are domain-specific confounders (they enter both x and y, which is what
// biases naive regression), and lambda_ivt is the invariant mechanism common
// to all domains.
//
// Sharing semantics: the standardized invariant-factor draws are replayed
// from a dedicated stream seeded once per experiment (SharedInvariants::
// ivt_seed), so row i of every domain sees the same realization of f_ivt.
// Confounders and noise are drawn per domain, per row, in index order; as a
// consequence a dataset of n rows is exactly the first n rows of a longer
// dataset drawn from the same streams.

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>

#include "ivdg/rng.hpp"

namespace ivdg::dgp {

enum class ResponseKind { kLinear, kAbsoluteValue };

// How the error-scale parameter 0.1 is interpreted when drawing e_x, e_y.
// kVariance (default): N(mu_e, 0.1), i.e. stddev = sqrt(0.1).
// kStdDev: N(mu_e, 0.1^2), i.e. stddev = 0.1.
enum class NoiseScale { kVariance, kStdDev };

enum class LabelRule { kMedianSplit };

// Quantities shared by every domain of one experiment.
struct SharedInvariants {
  int d_f = 0;                    // latent factor dimension
  int d_x = 0;                    // covariate dimension
  ResponseKind response = ResponseKind::kLinear;
  Eigen::VectorXd lambda_ivt;     // invariant mechanism, entries in (-1, 1)
  double mu_f_ivt = 0.0;          // mean of invariant factors, in (-1, 1)
  std::uint64_t ivt_seed = 0;     // stream replayed for the shared factor draws
};

// Per-domain structural parameters.
struct DomainParams {
  std::string domain_id;
  Eigen::MatrixXd phi;    // d_f x d_x, entries in (-1, 1)
  Eigen::MatrixXd alpha;  // d_f x d_x, entries in (-0.5, 0.5)
  Eigen::VectorXd beta;   // d_f,      entries in (-0.5, 0.5)
  double mu_f = 0.0;      // confounder mean, in (-r_div, r_div)
  double mu_e = 0.0;      // noise mean, in (-0.1, 0.1)
};

struct DomainDataset {
  std::string domain_id;
  Eigen::MatrixXd x;                       // n x d_x
  Eigen::VectorXd y;                       // n
  std::optional<Eigen::VectorXi> labels;   // n, values in {0, 1}
  std::optional<Eigen::MatrixXd> latent_f_m;  // n x d_f, kept only on request
  NoiseScale noise_scale = NoiseScale::kVariance;
};

struct SamplingOptions {
  NoiseScale noise_scale = NoiseScale::kVariance;
  bool zero_noise = false;      // force e_x = e_y = 0 (structural checks)
  bool keep_latent = false;     // retain the confounder draws in the dataset
};

// Draws the experiment-level invariants: lambda_ivt and mu_f_ivt entrywise
// uniform on (-1, 1), plus a fresh seed for the shared factor stream.
SharedInvariants sample_shared(int d_f, int d_x, ResponseKind response, rng::Stream& rng);

// Draws one domain's structural parameters. r_div controls the spread of the
// confounder mean: mu_f ~ Unif(-r_div, r_div); r_div must be >= 0.
DomainParams sample_domain_params(const SharedInvariants& shared, double r_div,
                                  const std::string& domain_id, rng::Stream& rng);

// Replays the shared invariant-factor stream: returns the n x d_f matrix with
// entries mu_f_ivt + z, z standard normal. Row i is identical across calls
// and across domains of the same experiment.
Eigen::MatrixXd invariant_factor_rows(const SharedInvariants& shared, int n);

// Samples a dataset with linear response. Requires shared.response == kLinear
// and n >= 1.
DomainDataset sample_linear_domain(const SharedInvariants& shared, const DomainParams& params,
                                   int n, rng::Stream& rng, const SamplingOptions& opts = {});

// Samples a dataset with absolute-value response and median-split labels.
// Requires shared.response == kAbsoluteValue and n >= 2. Throws
// labeling_error when the median split is degenerate (tied responses at the
// split point, so one class would be ill-defined).
DomainDataset sample_nonlinear_domain(const SharedInvariants& shared, const DomainParams& params,
                                      int n, rng::Stream& rng,
                                      LabelRule rule = LabelRule::kMedianSplit,
                                      const SamplingOptions& opts = {});

// Labels rows 0/1 by splitting at the median of y (lower half -> 0). Throws
// labeling_error when y values tie exactly at the split boundary.
Eigen::VectorXi median_split_labels(const Eigen::VectorXd& y);

}  // namespace ivdg::dgp
