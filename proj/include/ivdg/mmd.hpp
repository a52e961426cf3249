#pragma once

// Squared maximum mean discrepancy with a convex combination of Gaussian
// kernels k_u(x, y) = exp(-||x - y||^2 / (2 sigma_u^2)).
//
// The value path (mmd2) accumulates each within/between term by summing the
// kernel values of the corresponding squared-distance multiset in sorted
// order. Summation order therefore depends only on the multisets themselves,
// which makes the reported value exactly invariant under swapping the two
// samples and under row permutations, and exactly zero for identical samples.
// The gradient path (mmd2_with_grad_a) skips the sort for speed; its value
// agrees with mmd2 to floating-point roundoff but not bitwise.

#include <Eigen/Dense>
#include <vector>

namespace ivdg::mmd {

enum class MmdEstimator {
  kBiased,    // V-statistic; includes i == j terms, always >= 0
  kUnbiased,  // U-statistic; excludes i == j within-sample terms
};

struct MmdConfig {
  std::vector<double> bandwidths;  // sigma_u, strictly increasing, all > 0
  std::vector<double> weights;     // convex combination, same length
  MmdEstimator estimator = MmdEstimator::kBiased;

  // Throws std::invalid_argument unless bandwidths are positive and strictly
  // increasing, weights are nonnegative, the lengths match, and the weights
  // sum to 1 within 1e-12.
  void validate() const;
};

// Multipliers applied to a base bandwidth to span several kernel widths.
inline constexpr double kBandwidthLadder[] = {0.25, 0.5, 1.0, 2.0, 4.0};

// Equal-weight config with bandwidths base * {0.25, 0.5, 1, 2, 4}.
MmdConfig multi_kernel_config(double base_bandwidth,
                              MmdEstimator estimator = MmdEstimator::kBiased);

// Median pairwise Euclidean distance over the pooled rows of a and b; falls
// back to 1.0 when the median is zero (all points coincide). When the pool
// exceeds 2000 rows, a deterministic evenly-strided subsample of 2000 rows is
// used. Requires matching column counts and at least 2 pooled rows.
double median_heuristic(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

// Squared MMD between samples a (n_a x d) and b (n_b x d). Requires matching
// column counts, n_a, n_b >= 1 (>= 2 each for the unbiased estimator), and a
// valid config.
double mmd2(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const MmdConfig& config);

struct MmdValueGrad {
  double value = 0.0;
  Eigen::MatrixXd grad_a;  // d value / d a, shape n_a x d
};

// Biased-estimator squared MMD together with its gradient with respect to the
// rows of a (b is treated as constant).
MmdValueGrad mmd2_with_grad_a(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                              const MmdConfig& config);

}  // namespace ivdg::mmd
