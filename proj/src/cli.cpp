#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ivdg/estimators.hpp"
#include "ivdg/harness.hpp"
#include "ivdg/mmd.hpp"
#include "ivdg/nn.hpp"

namespace ivdg::harness {

namespace {

// Seed precedence: --seed flag, then the IVDG_SEED environment variable,
// then the config file, then the built-in default.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag_seed,
                           std::uint64_t config_seed) {
  if (flag_seed) return *flag_seed;
  if (const char* env = std::getenv("IVDG_SEED")) {
    try {
      std::size_t pos = 0;
      const std::string s(env);
      const unsigned long long v = std::stoull(s, &pos);
      if (pos != s.size()) throw std::invalid_argument("trailing characters");
      return static_cast<std::uint64_t>(v);
    } catch (const std::exception&) {
      throw std::invalid_argument("IVDG_SEED is set but is not a valid unsigned integer");
    }
  }
  return config_seed;
}

int run_study(StudyKind kind, const std::string& config_path,
              const std::optional<std::uint64_t>& flag_seed, const std::string& out_dir,
              std::optional<int> n_seeds, std::optional<int> n_workers) {
  ExperimentConfig cfg;
  if (!config_path.empty()) {
    cfg = load_config_file(config_path, kind);
    if (cfg.kind != kind) {
      std::cerr << "error: config study kind does not match the subcommand\n";
      return 1;
    }
  } else {
    cfg.kind = kind;
    if (kind == StudyKind::kNonlinear) {
      cfg.d_f = 1500;
      cfg.d_x = 600;
      cfg.n_per_domain = 10000;
      cfg.n_seeds = 10;
      cfg.trainer.extractor_dims = {600, 256, 128, 64};
    }
  }
  cfg.root_seed = resolve_seed(flag_seed, cfg.root_seed);
  if (n_seeds) cfg.n_seeds = *n_seeds;
  if (n_workers) cfg.n_workers = *n_workers;

  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }

  const ExperimentReport rep =
      kind == StudyKind::kLinear ? run_linear_study(cfg) : run_nonlinear_study(cfg);
  write_report(rep, out_dir);
  std::cout << "wrote " << rep.rows.size() << " rows to " << out_dir << " ("
            << format_double(rep.wall_seconds) << " s, seed " << cfg.root_seed << ")\n";
  return 0;
}

int print_report(const std::string& in_dir) {
  const auto path = std::filesystem::path(in_dir) / "results.csv";
  const auto rows = read_results_csv(path.string());
  const auto summary = summarize(rows);
  std::size_t w_est = 9, w_metric = 6;
  for (const auto& s : summary) {
    w_est = std::max(w_est, s.estimator.size());
    w_metric = std::max(w_metric, s.metric.size());
  }
  std::cout << std::left << std::setw(static_cast<int>(w_est) + 2) << "estimator"
            << std::setw(10) << "setting" << std::setw(static_cast<int>(w_metric) + 2) << "metric"
            << std::setw(14) << "mean" << std::setw(14) << "stderr" << "n\n";
  for (const auto& s : summary)
    std::cout << std::left << std::setw(static_cast<int>(w_est) + 2) << s.estimator
              << std::setw(10) << format_double(s.setting)
              << std::setw(static_cast<int>(w_metric) + 2) << s.metric << std::setw(14)
              << format_double(s.mean) << std::setw(14) << format_double(s.std_error) << s.n
              << '\n';
  return 0;
}

// Fast end-to-end sanity checks of the numerical core; used to verify a
// build without running a full study.
int selftest() {
  int failures = 0;
  auto check = [&](bool ok, const char* what) {
    std::cout << (ok ? "[ok]   " : "[FAIL] ") << what << '\n';
    if (!ok) ++failures;
  };

  {
    rng::Stream a(7), b(7);
    bool same = true;
    for (int i = 0; i < 1000; ++i)
      same = same && a.uniform01() == b.uniform01() && a.normal() == b.normal();
    check(same, "rng streams with equal seeds are bitwise identical");
  }
  {
    Eigen::MatrixXd x(2, 1), z(2, 1);
    Eigen::VectorXd y(2);
    x << 1, 2;
    z << 1, 2;
    y << 1.5, 3.0;
    const auto fit = estimators::two_stage_fit(x, y, z);
    check(std::abs(fit.lambda_hat(0) - 1.5) < 1e-10, "two-stage fit matches the closed form");
  }
  {
    Eigen::MatrixXd a(1, 1), b(1, 1);
    a << 0.0;
    b << 1.0;
    mmd::MmdConfig cfg;
    cfg.bandwidths = {1.0};
    cfg.weights = {1.0};
    const double v = mmd::mmd2(a, b, cfg);
    check(std::abs(v - 2.0 * (1.0 - std::exp(-0.5))) < 1e-12, "squared MMD matches the hand value");
    check(mmd::mmd2(a, a, cfg) == 0.0, "squared MMD of identical samples is exactly zero");
  }
  {
    rng::Stream s(3);
    const auto m = nn::init_mlp({3, 4, 2}, s, "selftest");
    const auto tmp = std::filesystem::temp_directory_path() / "ivdg-selftest-mlp.json";
    nn::save_mlp(m, tmp.string());
    const auto m2 = nn::load_mlp(tmp.string());
    std::filesystem::remove(tmp);
    bool same = m.layer_dims == m2.layer_dims;
    for (std::size_t l = 0; same && l < m.weights.size(); ++l)
      same = m.weights[l] == m2.weights[l] && m.biases[l] == m2.biases[l];
    check(same, "checkpoint round-trip restores parameters bit-exactly");
  }
  return failures == 0 ? 0 : 2;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Instrumental-variable domain generalization: simulation studies"};
  app.set_version_flag("--version", std::string("ivdg ") + kVersion);
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", report_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> n_seeds, n_workers;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    cmd->add_option("--seed", seed, "root seed (overrides IVDG_SEED and the config)");
    cmd->add_option("--out", out_dir, "output directory (default: out)");
    cmd->add_option("--seeds", n_seeds, "override the number of Monte-Carlo seeds");
    cmd->add_option("--workers", n_workers, "worker threads (default: hardware)");
  };

  auto* lin = app.add_subcommand("sim-linear", "linear-response estimator study");
  add_common(lin);
  auto* nonlin = app.add_subcommand("sim-nonlinear", "nonlinear classification study");
  add_common(nonlin);
  auto* rpt = app.add_subcommand("report", "print the summary table of a finished run");
  rpt->add_option("--in", report_dir, "directory holding results.csv")->required();
  auto* self = app.add_subcommand("selftest", "run fast numerical sanity checks");
  (void)self;

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (lin->parsed()) return run_study(StudyKind::kLinear, config_path, seed, out_dir, n_seeds, n_workers);
    if (nonlin->parsed())
      return run_study(StudyKind::kNonlinear, config_path, seed, out_dir, n_seeds, n_workers);
    if (rpt->parsed()) return print_report(report_dir);
    return selftest();
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace ivdg::harness
