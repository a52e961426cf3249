#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ivdg/harness.hpp"

using namespace ivdg;
namespace fs = std::filesystem;

namespace {

harness::ExperimentConfig tiny_linear() {
  harness::ExperimentConfig cfg;
  cfg.kind = harness::StudyKind::kLinear;
  cfg.d_f = 1;
  cfg.d_x = 1;
  cfg.n_sources = 3;
  cfg.n_per_domain = 400;
  cfg.sample_sizes = {200, 400};
  cfg.n_seeds = 3;
  cfg.root_seed = 99;
  cfg.n_workers = 1;
  return cfg;
}

harness::ExperimentConfig tiny_nonlinear() {
  harness::ExperimentConfig cfg;
  cfg.kind = harness::StudyKind::kNonlinear;
  cfg.d_f = 3;
  cfg.d_x = 3;
  cfg.n_sources = 2;
  cfg.n_per_domain = 120;
  cfg.n_seeds = 1;
  cfg.root_seed = 5;
  cfg.n_workers = 1;
  cfg.trainer.extractor_dims = {3, 6, 3};
  cfg.trainer.epochs_pre = 3;
  cfg.trainer.epochs_iv = 2;
  cfg.trainer.steps_per_epoch = 4;
  cfg.trainer.sgd = {0.05, 16, 0.0};
  cfg.trainer.debug_checks = true;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("summary statistics are exact on hand rows") {
  std::vector<harness::ReportRow> rows{
      {"A", 10.0, 0, "mae", 1.0},
      {"A", 10.0, 1, "mae", 2.0},
      {"A", 10.0, 2, "mae", 3.0},
      {"B", 10.0, 0, "mae", 5.0},
  };
  const auto summary = harness::summarize(rows);
  REQUIRE(summary.size() == 2);
  CHECK(summary[0].estimator == "A");
  CHECK(summary[0].n == 3);
  CHECK(summary[0].mean == doctest::Approx(2.0).epsilon(1e-15));
  // stddev of {1,2,3} is 1, so the standard error is 1/sqrt(3).
  CHECK(summary[0].std_error == doctest::Approx(0.5773502691896258).epsilon(1e-12));
  CHECK(summary[1].estimator == "B");
  CHECK(summary[1].n == 1);
  CHECK(summary[1].std_error == 0.0);
}

TEST_CASE("format_double uses up-to-9-significant-digit shortest form") {
  CHECK(harness::format_double(0.5) == "0.5");
  CHECK(harness::format_double(500.0) == "500");
  CHECK(harness::format_double(32000.0) == "32000");
  CHECK(harness::format_double(1e-9) == "1e-09");
  CHECK(harness::format_double(0.123456789123) == "0.123456789");
}

TEST_CASE("config defaults and validation") {
  harness::ExperimentConfig cfg;
  CHECK(cfg.resolved_estimators() ==
        std::vector<std::string>{"OLS", "IV", "DG2", "DG3", "DG4", "DG5", "DG6", "DG7", "DG8"});
  CHECK(cfg.resolved_sample_sizes() == std::vector<int>{20000});
  CHECK_NOTHROW(cfg.validate());

  cfg.estimators = {"DG9"};  // exceeds the 8 sources
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.estimators = {"bogus"};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.estimators = {"IV"};
  cfg.n_sources = 1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("linear study: row inventory and determinism") {
  const auto cfg = tiny_linear();
  const auto rep = harness::run_linear_study(cfg);
  // 3 seeds x 2 sizes x 4 estimators x 2 metrics.
  const auto names = cfg.resolved_estimators();
  REQUIRE(names.size() == 4);  // OLS, IV, DG2, DG3
  CHECK(rep.rows.size() == 3u * 2u * 4u * 2u);

  int mae_rows = 0;
  for (const auto& r : rep.rows) {
    CHECK((r.metric == "mae" || r.metric == "target_mse"));
    if (r.metric == "mae") ++mae_rows;
    CHECK(r.value >= 0.0);
    CHECK(std::isfinite(r.value));
  }
  CHECK(mae_rows * 2 == static_cast<int>(rep.rows.size()));

  const auto rep2 = harness::run_linear_study(cfg);
  REQUIRE(rep2.rows.size() == rep.rows.size());
  for (std::size_t i = 0; i < rep.rows.size(); ++i) {
    CHECK(rep.rows[i].estimator == rep2.rows[i].estimator);
    CHECK(rep.rows[i].value == rep2.rows[i].value);  // bitwise reproducible
  }

  // Summary means equal the arithmetic mean of the matching raw rows.
  for (const auto& s : rep.summary) {
    double sum = 0.0;
    int n = 0;
    for (const auto& r : rep.rows)
      if (r.estimator == s.estimator && r.setting == s.setting && r.metric == s.metric) {
        sum += r.value;
        ++n;
      }
    REQUIRE(n == s.n);
    CHECK(std::abs(s.mean - sum / n) < 1e-12);
  }
}

TEST_CASE("worker count does not change the merged rows") {
  auto cfg = tiny_linear();
  cfg.n_workers = 1;
  const auto serial = harness::run_linear_study(cfg);
  cfg.n_workers = 3;
  const auto parallel = harness::run_linear_study(cfg);
  REQUIRE(serial.rows.size() == parallel.rows.size());
  for (std::size_t i = 0; i < serial.rows.size(); ++i) {
    CHECK(serial.rows[i].estimator == parallel.rows[i].estimator);
    CHECK(serial.rows[i].seed == parallel.rows[i].seed);
    CHECK(serial.rows[i].value == parallel.rows[i].value);
  }
}

TEST_CASE("nonlinear study produces accuracies for both estimators") {
  const auto cfg = tiny_nonlinear();
  const auto rep = harness::run_nonlinear_study(cfg);
  REQUIRE(rep.rows.size() == 2);
  for (const auto& r : rep.rows) {
    CHECK(r.metric == "target_accuracy");
    CHECK(r.value >= 0.0);
    CHECK(r.value <= 1.0);
  }
  CHECK(rep.rows[0].estimator == "IVDG");
  CHECK(rep.rows[1].estimator == "Pooled");
}

TEST_CASE("report files round-trip") {
  TempDir tmp("ivdg-test-report");
  const auto rep = harness::run_linear_study(tiny_linear());
  harness::write_report(rep, tmp.path.string());
  CHECK(fs::exists(tmp.path / "results.csv"));
  CHECK(fs::exists(tmp.path / "summary.csv"));
  CHECK(fs::exists(tmp.path / "manifest.json"));

  const auto rows = harness::read_results_csv((tmp.path / "results.csv").string());
  REQUIRE(rows.size() == rep.rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].estimator == rep.rows[i].estimator);
    CHECK(rows[i].setting == rep.rows[i].setting);
    CHECK(rows[i].seed == rep.rows[i].seed);
    CHECK(rows[i].metric == rep.rows[i].metric);
    // Values survive the 9-significant-digit format.
    const double denom = std::max(1e-12, std::abs(rep.rows[i].value));
    CHECK(std::abs(rows[i].value - rep.rows[i].value) / denom < 1e-8);
  }

  const std::string header = slurp(tmp.path / "results.csv").substr(0, 34);
  CHECK(header == "estimator,setting,seed,metric,valu");
}

TEST_CASE("identical runs write byte-identical results") {
  TempDir a("ivdg-test-det-a"), b("ivdg-test-det-b");
  const auto cfg = tiny_linear();
  harness::write_report(harness::run_linear_study(cfg), a.path.string());
  harness::write_report(harness::run_linear_study(cfg), b.path.string());
  CHECK(slurp(a.path / "results.csv") == slurp(b.path / "results.csv"));
  CHECK(slurp(a.path / "summary.csv") == slurp(b.path / "summary.csv"));
}

TEST_CASE("config json parsing: overrides, defaults, digest stability") {
  const std::string text = R"({
    "study": "linear",
    "d_x": 2, "d_f": 3,
    "n_sources": 4,
    "sample_sizes": [100, 200],
    "estimators": ["OLS", "IV", "DG4"],
    "root_seed": 7,
    "noise_scale": "stddev"
  })";
  const auto cfg = harness::config_from_json_string(text, harness::StudyKind::kLinear);
  CHECK(cfg.d_x == 2);
  CHECK(cfg.d_f == 3);
  CHECK(cfg.n_sources == 4);
  CHECK(cfg.sample_sizes == std::vector<int>{100, 200});
  CHECK(cfg.root_seed == 7);
  CHECK(cfg.noise_scale == dgp::NoiseScale::kStdDev);
  CHECK(cfg.n_per_domain == 20000);  // untouched default
  CHECK_NOTHROW(cfg.validate());

  CHECK(harness::config_digest(cfg) == harness::config_digest(cfg));
  auto cfg2 = cfg;
  cfg2.root_seed = 8;
  CHECK(harness::config_digest(cfg) != harness::config_digest(cfg2));

  CHECK_THROWS_AS(harness::config_from_json_string("{invalid", harness::StudyKind::kLinear),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      harness::config_from_json_string(R"({"study":"qux"})", harness::StudyKind::kLinear),
      std::invalid_argument);
}

TEST_CASE("nonlinear config defaults follow the protocol scale") {
  const auto cfg = harness::config_from_json_string("{}", harness::StudyKind::kNonlinear);
  CHECK(cfg.kind == harness::StudyKind::kNonlinear);
  CHECK(cfg.d_f == 1500);
  CHECK(cfg.d_x == 600);
  CHECK(cfg.n_per_domain == 10000);
  CHECK(cfg.n_seeds == 10);
  CHECK(cfg.trainer.extractor_dims == std::vector<int>{600, 256, 128, 64});
  CHECK(cfg.resolved_estimators() == std::vector<std::string>{"IVDG", "Pooled"});
}

TEST_CASE("cli: selftest, usage errors, and report") {
  {
    const char* argv[] = {"ivdg", "selftest"};
    CHECK(harness::cli_main(2, argv) == 0);
  }
  {
    const char* argv[] = {"ivdg", "--bogus-flag"};
    CHECK(harness::cli_main(2, argv) == 1);
  }
  {
    const char* argv[] = {"ivdg"};
    CHECK(harness::cli_main(1, argv) == 1);  // a subcommand is required
  }
  {
    const char* argv[] = {"ivdg", "report", "--in", "/nonexistent-ivdg-dir"};
    CHECK(harness::cli_main(4, argv) == 2);
  }
}

TEST_CASE("cli: linear run writes a report and honors the seed flag") {
  TempDir out("ivdg-test-cli-run");
  const fs::path cfg_path = fs::temp_directory_path() / "ivdg-test-cli-cfg.json";
  std::ofstream(cfg_path) << R"({"n_sources":2,"n_per_domain":300,"sample_sizes":[300],
      "n_seeds":2,"estimators":["OLS","IV"],"d_f":1,"d_x":1})";
  const std::string out_s = out.path.string();
  const char* argv[] = {"ivdg",   "sim-linear", "--config", cfg_path.c_str(),
                        "--seed", "31415",      "--out",    out_s.c_str()};
  CHECK(harness::cli_main(8, argv) == 0);
  CHECK(fs::exists(out.path / "results.csv"));
  const auto rows = harness::read_results_csv((out.path / "results.csv").string());
  CHECK(rows.size() == 2u * 2u * 2u);
  fs::remove(cfg_path);
}

TEST_CASE("cli: IVDG_SEED is honored and the flag overrides it") {
  TempDir env_dir("ivdg-test-cli-env"), flag_dir("ivdg-test-cli-flag"),
      base_dir("ivdg-test-cli-base");
  const fs::path cfg_path = fs::temp_directory_path() / "ivdg-test-env-cfg.json";
  std::ofstream(cfg_path) << R"({"n_sources":2,"n_per_domain":200,"sample_sizes":[200],
      "n_seeds":1,"estimators":["OLS"],"d_f":1,"d_x":1})";

  // Baseline with --seed 77.
  const std::string flag_s = flag_dir.path.string();
  const char* argv_flag[] = {"ivdg",   "sim-linear", "--config", cfg_path.c_str(),
                             "--seed", "77",         "--out",    flag_s.c_str()};
  REQUIRE(harness::cli_main(8, argv_flag) == 0);

  // Environment seed alone reproduces it.
  setenv("IVDG_SEED", "77", 1);
  const std::string env_s = env_dir.path.string();
  const char* argv_env[] = {"ivdg", "sim-linear", "--config", cfg_path.c_str(),
                            "--out", env_s.c_str()};
  REQUIRE(harness::cli_main(6, argv_env) == 0);
  CHECK(slurp(env_dir.path / "results.csv") == slurp(flag_dir.path / "results.csv"));

  // An explicit flag beats the environment.
  setenv("IVDG_SEED", "1234", 1);
  const std::string base_s = base_dir.path.string();
  const char* argv_both[] = {"ivdg",   "sim-linear", "--config", cfg_path.c_str(),
                             "--seed", "77",         "--out",    base_s.c_str()};
  REQUIRE(harness::cli_main(8, argv_both) == 0);
  CHECK(slurp(base_dir.path / "results.csv") == slurp(flag_dir.path / "results.csv"));

  // A malformed environment seed is a configuration error.
  setenv("IVDG_SEED", "not-a-number", 1);
  const char* argv_bad[] = {"ivdg", "sim-linear", "--config", cfg_path.c_str(),
                            "--out", base_s.c_str()};
  CHECK(harness::cli_main(6, argv_bad) == 1);
  unsetenv("IVDG_SEED");
  fs::remove(cfg_path);
}
