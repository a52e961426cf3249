#include "ivdg/mmd.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace ivdg::mmd {

void MmdConfig::validate() const {
  if (bandwidths.empty()) throw std::invalid_argument("mmd: no bandwidths");
  if (weights.size() != bandwidths.size())
    throw std::invalid_argument("mmd: weights and bandwidths lengths differ");
  double wsum = 0.0;
  for (std::size_t u = 0; u < bandwidths.size(); ++u) {
    if (!(bandwidths[u] > 0.0)) throw std::invalid_argument("mmd: bandwidths must be positive");
    if (u > 0 && !(bandwidths[u] > bandwidths[u - 1]))
      throw std::invalid_argument("mmd: bandwidths must be strictly increasing");
    if (!(weights[u] >= 0.0)) throw std::invalid_argument("mmd: weights must be nonnegative");
    wsum += weights[u];
  }
  if (std::abs(wsum - 1.0) > 1e-12)
    throw std::invalid_argument("mmd: weights must sum to 1");
}

MmdConfig multi_kernel_config(double base_bandwidth, MmdEstimator estimator) {
  if (!(base_bandwidth > 0.0))
    throw std::invalid_argument("mmd: base bandwidth must be positive");
  MmdConfig cfg;
  cfg.estimator = estimator;
  const std::size_t n_kernels = std::size(kBandwidthLadder);
  for (double m : kBandwidthLadder) cfg.bandwidths.push_back(m * base_bandwidth);
  cfg.weights.assign(n_kernels, 1.0 / static_cast<double>(n_kernels));
  return cfg;
}

namespace {

void check_pair(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("mmd: column counts differ");
  if (a.rows() < 1 || b.rows() < 1) throw std::invalid_argument("mmd: empty sample");
}

// Squared distances of all ordered pairs (i, j), i != j, within one sample.
// Pairs (i, j) and (j, i) contribute the same value, so push it twice.
std::vector<double> within_sq_dists(const Eigen::MatrixXd& m) {
  const auto n = m.rows();
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(n) * static_cast<std::size_t>(n - 1));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double s = (m.row(i) - m.row(j)).squaredNorm();
      d.push_back(s);
      d.push_back(s);
    }
  return d;
}

std::vector<double> between_sq_dists(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(a.rows()) * static_cast<std::size_t>(b.rows()));
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j)
      d.push_back((a.row(i) - b.row(j)).squaredNorm());
  return d;
}

// Sum of exp(-d * inv) over the multiset plus extra_ones unit kernels,
// accumulated in ascending-distance order so the result is independent of the
// original pair enumeration. Exactly-zero distances contribute exp(0) == 1;
// counting them together with extra_ones (instead of folding 1.0 into the
// running sum) keeps the three kernel sums of identical samples cancelling
// bitwise, so mmd2(a, a) is exactly zero.
double kernel_sum_sorted(const std::vector<double>& sorted_sq_dists, double inv_two_sigma_sq,
                         double extra_ones) {
  std::size_t z = 0;
  while (z < sorted_sq_dists.size() && sorted_sq_dists[z] == 0.0) ++z;
  double s = 0.0;
  for (std::size_t i = z; i < sorted_sq_dists.size(); ++i)
    s += std::exp(-sorted_sq_dists[i] * inv_two_sigma_sq);
  return s + (static_cast<double>(z) + extra_ones);
}

}  // namespace

double median_heuristic(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() > 0 && b.rows() > 0 && a.cols() != b.cols())
    throw std::invalid_argument("mmd: column counts differ");
  const Eigen::Index n_a = a.rows();
  const Eigen::Index total = n_a + b.rows();
  if (total < 2) throw std::invalid_argument("mmd: median heuristic needs at least 2 rows");

  // Deterministic even stride over the pooled rows, capped at 2000.
  constexpr Eigen::Index kCap = 2000;
  const Eigen::Index m = std::min(total, kCap);
  auto pooled_row = [&](Eigen::Index k) {
    return k < n_a ? a.row(k) : b.row(k - n_a);
  };
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(m));
  for (Eigen::Index k = 0; k < m; ++k) idx[static_cast<std::size_t>(k)] = k * total / m;

  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(m) * static_cast<std::size_t>(m - 1) / 2);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = i + 1; j < m; ++j)
      dists.push_back(std::sqrt(
          (pooled_row(idx[static_cast<std::size_t>(i)]) - pooled_row(idx[static_cast<std::size_t>(j)]))
              .squaredNorm()));

  std::sort(dists.begin(), dists.end());
  const std::size_t c = dists.size();
  const double med = c % 2 == 1 ? dists[c / 2] : 0.5 * (dists[c / 2 - 1] + dists[c / 2]);
  return med > 0.0 ? med : 1.0;
}

double mmd2(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const MmdConfig& config) {
  config.validate();
  check_pair(a, b);
  const double n_a = static_cast<double>(a.rows());
  const double n_b = static_cast<double>(b.rows());
  if (config.estimator == MmdEstimator::kUnbiased && (a.rows() < 2 || b.rows() < 2))
    throw std::invalid_argument("mmd: unbiased estimator needs at least 2 rows per sample");

  std::vector<double> d_aa = within_sq_dists(a);
  std::vector<double> d_bb = within_sq_dists(b);
  std::vector<double> d_ab = between_sq_dists(a, b);
  std::sort(d_aa.begin(), d_aa.end());
  std::sort(d_bb.begin(), d_bb.end());
  std::sort(d_ab.begin(), d_ab.end());

  const bool biased = config.estimator == MmdEstimator::kBiased;
  // The biased estimator includes the i == j diagonal, where the kernel is
  // exactly 1; counting it alongside the zero distances avoids materializing
  // the diagonal and keeps identical samples exactly cancelable.
  const double diag_a = biased ? n_a : 0.0;
  const double diag_b = biased ? n_b : 0.0;
  const double denom_a = biased ? n_a * n_a : n_a * (n_a - 1.0);
  const double denom_b = biased ? n_b * n_b : n_b * (n_b - 1.0);

  double total = 0.0;
  for (std::size_t u = 0; u < config.bandwidths.size(); ++u) {
    const double inv = 1.0 / (2.0 * config.bandwidths[u] * config.bandwidths[u]);
    const double s_aa = kernel_sum_sorted(d_aa, inv, diag_a);
    const double s_bb = kernel_sum_sorted(d_bb, inv, diag_b);
    const double s_ab = kernel_sum_sorted(d_ab, inv, 0.0);
    total += config.weights[u] * (s_aa / denom_a + s_bb / denom_b - 2.0 * s_ab / (n_a * n_b));
  }
  return total;
}

MmdValueGrad mmd2_with_grad_a(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                              const MmdConfig& config) {
  config.validate();
  check_pair(a, b);
  if (config.estimator != MmdEstimator::kBiased)
    throw std::invalid_argument("mmd: gradients are defined for the biased estimator");
  const auto n_a = a.rows();
  const auto n_b = b.rows();
  const double fn_a = static_cast<double>(n_a);
  const double fn_b = static_cast<double>(n_b);

  MmdValueGrad out;
  out.grad_a = Eigen::MatrixXd::Zero(n_a, a.cols());

  for (std::size_t u = 0; u < config.bandwidths.size(); ++u) {
    const double sigma_sq = config.bandwidths[u] * config.bandwidths[u];
    const double inv = 1.0 / (2.0 * sigma_sq);
    const double w = config.weights[u];

    double s_aa = fn_a;  // diagonal terms
    for (Eigen::Index i = 0; i < n_a; ++i)
      for (Eigen::Index j = i + 1; j < n_a; ++j) {
        const Eigen::RowVectorXd diff = a.row(i) - a.row(j);
        const double k = std::exp(-diff.squaredNorm() * inv);
        s_aa += 2.0 * k;
        // d k / d a_i = -k * (a_i - a_j) / sigma^2; the (j, i) pair mirrors it.
        const Eigen::RowVectorXd g = (k / sigma_sq) * diff;
        out.grad_a.row(i) -= (2.0 * w / (fn_a * fn_a)) * g;
        out.grad_a.row(j) += (2.0 * w / (fn_a * fn_a)) * g;
      }

    double s_bb = fn_b;
    for (Eigen::Index i = 0; i < n_b; ++i)
      for (Eigen::Index j = i + 1; j < n_b; ++j)
        s_bb += 2.0 * std::exp(-(b.row(i) - b.row(j)).squaredNorm() * inv);

    double s_ab = 0.0;
    for (Eigen::Index i = 0; i < n_a; ++i)
      for (Eigen::Index j = 0; j < n_b; ++j) {
        const Eigen::RowVectorXd diff = a.row(i) - b.row(j);
        const double k = std::exp(-diff.squaredNorm() * inv);
        s_ab += k;
        out.grad_a.row(i) += (2.0 * w / (fn_a * fn_b)) * (k / sigma_sq) * diff;
      }

    out.value += w * (s_aa / (fn_a * fn_a) + s_bb / (fn_b * fn_b) - 2.0 * s_ab / (fn_a * fn_b));
  }
  return out;
}

}  // namespace ivdg::mmd
