#pragma once

// Monte-Carlo experiment harness: multi-seed simulation studies over the
// structural DGPs, estimator sweeps, CSV/JSON reporting, and the command-line
// entry point.
//
// Reproducibility contract: every random draw of a study is derived from
// (root_seed, trial index, purpose key), trials are merged in a fixed order
// regardless of worker scheduling, and all numbers are written with "%.9g".
// Two runs with the same configuration and seed produce byte-identical
// results.csv files.

#include <cstdint>
#include <string>
#include <vector>

#include "ivdg/dgp.hpp"
#include "ivdg/trainer.hpp"

namespace ivdg::harness {

inline constexpr std::uint64_t kDefaultRootSeed = 42;
inline constexpr const char* kVersion = "0.1.0";

enum class StudyKind { kLinear, kNonlinear };

struct ExperimentConfig {
  StudyKind kind = StudyKind::kLinear;

  int d_f = 1;  // latent factor dimension
  int d_x = 1;  // covariate dimension

  int n_sources = 8;       // source domains; one extra target domain is always drawn
  int n_per_domain = 20000;

  // Linear studies sweep the per-domain sample size (empty: {n_per_domain});
  // nonlinear studies sweep the domain-divergence radius (empty: {r_div}).
  std::vector<int> sample_sizes;
  std::vector<double> r_div_values;
  double r_div = 1.0;

  int n_seeds = 50;

  // Estimator names: "OLS", "IV", "DG<k>" (k <= n_sources) for linear
  // studies; "IVDG", "Pooled" for nonlinear studies. Empty selects the
  // defaults for the study kind.
  std::vector<std::string> estimators;

  std::uint64_t root_seed = kDefaultRootSeed;
  int n_workers = 0;  // 0: hardware concurrency

  // Demean x and y per domain before the closed-form fits (the structural
  // means are nuisance intercepts; the estimators themselves are raw
  // no-intercept fits). Prediction metrics always use the raw data.
  bool center_fits = true;

  dgp::NoiseScale noise_scale = dgp::NoiseScale::kVariance;

  trainer::IvdgConfig trainer;  // nonlinear studies only
  // Source domains consumed by the two-stage trainer (anchor first). The
  // pooled baseline always trains on all n_sources domains, so the default
  // pits a two-domain instrumented model against an all-domain baseline.
  int ivdg_sources = 2;
  // Cross-entropy epochs for the pooled baseline; 0 means epochs_pre +
  // epochs_iv of the trainer config (comparable update budget).
  int pooled_epochs = 0;

  std::vector<std::string> resolved_estimators() const;
  std::vector<int> resolved_sample_sizes() const;
  std::vector<double> resolved_r_divs() const;
  void validate() const;
};

struct ReportRow {
  std::string estimator;
  double setting = 0.0;  // sample size (linear) or divergence radius (nonlinear)
  int seed = 0;
  std::string metric;    // "mae", "target_mse", "target_accuracy"
  double value = 0.0;
};

struct SummaryRow {
  std::string estimator;
  double setting = 0.0;
  std::string metric;
  double mean = 0.0;
  double std_error = 0.0;  // sample stddev / sqrt(n); 0 when n == 1
  int n = 0;
};

struct ExperimentReport {
  ExperimentConfig config;
  std::vector<ReportRow> rows;
  std::vector<SummaryRow> summary;
  double wall_seconds = 0.0;
};

// Per-seed trials: sample shared invariants, the source domains and a target,
// fit every configured estimator at every sweep setting, and record
// coefficient MAE and target-domain prediction MSE.
ExperimentReport run_linear_study(const ExperimentConfig& config);

// Per-(seed, r_div) trials: sample labeled domains, train the two-stage
// procedure and the pooled cross-entropy baseline, and record target-domain
// accuracy.
ExperimentReport run_nonlinear_study(const ExperimentConfig& config);

// Group rows by (estimator, setting, metric), first-seen order.
std::vector<SummaryRow> summarize(const std::vector<ReportRow>& rows);

// Writes results.csv, summary.csv and manifest.json into out_dir (created if
// missing).
void write_report(const ExperimentReport& report, const std::string& out_dir);

// Parses a results.csv produced by write_report.
std::vector<ReportRow> read_results_csv(const std::string& path);

// Shortest decimal form with up to 9 significant digits ("%.9g").
std::string format_double(double v);

// Canonical JSON form of a config, and its FNV-1a digest (hex).
std::string config_to_json_string(const ExperimentConfig& config);
std::string config_digest(const ExperimentConfig& config);

// Parses a JSON config; missing fields keep the defaults for default_kind.
ExperimentConfig config_from_json_string(const std::string& text, StudyKind default_kind);
ExperimentConfig load_config_file(const std::string& path, StudyKind default_kind);

// CLI entry point (subcommands: sim-linear, sim-nonlinear, report, selftest).
// Returns 0 on success, 1 on usage/configuration errors, 2 on runtime
// failures.
int cli_main(int argc, const char* const* argv);

}  // namespace ivdg::harness
