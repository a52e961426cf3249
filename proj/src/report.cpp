#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "ivdg/harness.hpp"

namespace ivdg::harness {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

namespace {

const char* study_name(StudyKind k) { return k == StudyKind::kLinear ? "linear" : "nonlinear"; }

const char* noise_name(dgp::NoiseScale s) {
  return s == dgp::NoiseScale::kVariance ? "variance" : "stddev";
}

const char* mmd_estimator_name(mmd::MmdEstimator e) {
  return e == mmd::MmdEstimator::kBiased ? "biased" : "unbiased";
}

nlohmann::json trainer_to_json(const trainer::IvdgConfig& t) {
  nlohmann::json j;
  j["extractor_dims"] = t.extractor_dims;
  j["n_classes"] = t.n_classes;
  j["epochs_pre"] = t.epochs_pre;
  j["epochs_iv"] = t.epochs_iv;
  j["steps_per_epoch"] = t.steps_per_epoch;
  j["batch_size"] = t.sgd.batch_size;
  j["learning_rate"] = t.sgd.learning_rate;
  j["momentum"] = t.sgd.momentum;
  j["anchor_domain"] = t.anchor_domain;
  j["iv_weights"] = t.iv_weights;
  j["mmd_bandwidths"] = t.mmd.bandwidths;
  j["mmd_weights"] = t.mmd.weights;
  j["mmd_estimator"] = mmd_estimator_name(t.mmd.estimator);
  j["adaptive_bandwidths"] = t.adaptive_bandwidths;
  j["debug_checks"] = t.debug_checks;
  return j;
}

void trainer_from_json(const nlohmann::json& j, trainer::IvdgConfig* t) {
  if (j.contains("extractor_dims")) t->extractor_dims = j.at("extractor_dims").get<std::vector<int>>();
  if (j.contains("n_classes")) t->n_classes = j.at("n_classes").get<int>();
  if (j.contains("epochs_pre")) t->epochs_pre = j.at("epochs_pre").get<int>();
  if (j.contains("epochs_iv")) t->epochs_iv = j.at("epochs_iv").get<int>();
  if (j.contains("steps_per_epoch")) t->steps_per_epoch = j.at("steps_per_epoch").get<int>();
  if (j.contains("batch_size")) t->sgd.batch_size = j.at("batch_size").get<int>();
  if (j.contains("learning_rate")) t->sgd.learning_rate = j.at("learning_rate").get<double>();
  if (j.contains("momentum")) t->sgd.momentum = j.at("momentum").get<double>();
  if (j.contains("anchor_domain")) t->anchor_domain = j.at("anchor_domain").get<std::string>();
  if (j.contains("iv_weights")) t->iv_weights = j.at("iv_weights").get<std::vector<double>>();
  if (j.contains("mmd_bandwidths")) t->mmd.bandwidths = j.at("mmd_bandwidths").get<std::vector<double>>();
  if (j.contains("mmd_weights")) t->mmd.weights = j.at("mmd_weights").get<std::vector<double>>();
  if (j.contains("mmd_estimator")) {
    const auto name = j.at("mmd_estimator").get<std::string>();
    if (name == "biased")
      t->mmd.estimator = mmd::MmdEstimator::kBiased;
    else if (name == "unbiased")
      t->mmd.estimator = mmd::MmdEstimator::kUnbiased;
    else
      throw std::invalid_argument("config: mmd_estimator must be 'biased' or 'unbiased'");
  }
  if (j.contains("adaptive_bandwidths")) t->adaptive_bandwidths = j.at("adaptive_bandwidths").get<bool>();
  if (j.contains("debug_checks")) t->debug_checks = j.at("debug_checks").get<bool>();
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["study"] = study_name(c.kind);
  j["d_f"] = c.d_f;
  j["d_x"] = c.d_x;
  j["n_sources"] = c.n_sources;
  j["n_per_domain"] = c.n_per_domain;
  j["sample_sizes"] = c.resolved_sample_sizes();
  j["r_div_values"] = c.resolved_r_divs();
  j["r_div"] = c.r_div;
  j["n_seeds"] = c.n_seeds;
  j["estimators"] = c.resolved_estimators();
  j["root_seed"] = c.root_seed;
  j["n_workers"] = c.n_workers;
  j["center_fits"] = c.center_fits;
  j["noise_scale"] = noise_name(c.noise_scale);
  j["ivdg_sources"] = c.ivdg_sources;
  j["pooled_epochs"] = c.pooled_epochs;
  if (c.kind == StudyKind::kNonlinear) j["trainer"] = trainer_to_json(c.trainer);
  return j;
}

}  // namespace

std::string config_to_json_string(const ExperimentConfig& config) {
  return config_to_json(config).dump(2);
}

std::string config_digest(const ExperimentConfig& config) {
  const std::string s = config_to_json(config).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : s) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ExperimentConfig config_from_json_string(const std::string& text, StudyKind default_kind) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
  }
  ExperimentConfig c;
  c.kind = default_kind;
  if (j.contains("study")) {
    const auto s = j.at("study").get<std::string>();
    if (s == "linear")
      c.kind = StudyKind::kLinear;
    else if (s == "nonlinear")
      c.kind = StudyKind::kNonlinear;
    else
      throw std::invalid_argument("config: study must be 'linear' or 'nonlinear'");
  }
  // Full-scale protocol defaults differ by study kind; set them before overrides.
  if (c.kind == StudyKind::kNonlinear) {
    c.d_f = 1500;
    c.d_x = 600;
    c.n_per_domain = 10000;
    c.n_seeds = 10;
    c.trainer.extractor_dims = {600, 256, 128, 64};
  }
  if (j.contains("d_f")) c.d_f = j.at("d_f").get<int>();
  if (j.contains("d_x")) c.d_x = j.at("d_x").get<int>();
  if (j.contains("n_sources")) c.n_sources = j.at("n_sources").get<int>();
  if (j.contains("n_per_domain")) c.n_per_domain = j.at("n_per_domain").get<int>();
  if (j.contains("sample_sizes")) c.sample_sizes = j.at("sample_sizes").get<std::vector<int>>();
  if (j.contains("r_div_values")) c.r_div_values = j.at("r_div_values").get<std::vector<double>>();
  if (j.contains("r_div")) c.r_div = j.at("r_div").get<double>();
  if (j.contains("n_seeds")) c.n_seeds = j.at("n_seeds").get<int>();
  if (j.contains("estimators")) c.estimators = j.at("estimators").get<std::vector<std::string>>();
  if (j.contains("root_seed")) c.root_seed = j.at("root_seed").get<std::uint64_t>();
  if (j.contains("n_workers")) c.n_workers = j.at("n_workers").get<int>();
  if (j.contains("center_fits")) c.center_fits = j.at("center_fits").get<bool>();
  if (j.contains("noise_scale")) {
    const auto s = j.at("noise_scale").get<std::string>();
    if (s == "variance")
      c.noise_scale = dgp::NoiseScale::kVariance;
    else if (s == "stddev")
      c.noise_scale = dgp::NoiseScale::kStdDev;
    else
      throw std::invalid_argument("config: noise_scale must be 'variance' or 'stddev'");
  }
  if (j.contains("ivdg_sources")) c.ivdg_sources = j.at("ivdg_sources").get<int>();
  if (j.contains("pooled_epochs")) c.pooled_epochs = j.at("pooled_epochs").get<int>();
  if (j.contains("trainer")) trainer_from_json(j.at("trainer"), &c.trainer);
  return c;
}

ExperimentConfig load_config_file(const std::string& path, StudyKind default_kind) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return config_from_json_string(ss.str(), default_kind);
}

void write_report(const ExperimentReport& report, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);

  {
    std::ofstream f(dir / "results.csv");
    if (!f) throw std::runtime_error("report: cannot write results.csv in " + out_dir);
    f << "estimator,setting,seed,metric,value\n";
    for (const auto& r : report.rows)
      f << r.estimator << ',' << format_double(r.setting) << ',' << r.seed << ',' << r.metric
        << ',' << format_double(r.value) << '\n';
    if (!f.good()) throw std::runtime_error("report: failed writing results.csv");
  }
  {
    std::ofstream f(dir / "summary.csv");
    if (!f) throw std::runtime_error("report: cannot write summary.csv in " + out_dir);
    f << "estimator,setting,metric,mean,stderr,n_seeds\n";
    for (const auto& s : report.summary)
      f << s.estimator << ',' << format_double(s.setting) << ',' << s.metric << ','
        << format_double(s.mean) << ',' << format_double(s.std_error) << ',' << s.n << '\n';
    if (!f.good()) throw std::runtime_error("report: failed writing summary.csv");
  }
  {
    nlohmann::json j;
    j["format"] = "ivdg-report-v1";
    j["version"] = kVersion;
    j["study"] = study_name(report.config.kind);
    j["root_seed"] = report.config.root_seed;
    j["config_digest"] = config_digest(report.config);
    j["config"] = config_to_json(report.config);
    j["row_count"] = report.rows.size();
    j["wall_seconds"] = report.wall_seconds;
    std::ofstream f(dir / "manifest.json");
    if (!f) throw std::runtime_error("report: cannot write manifest.json in " + out_dir);
    f << j.dump(2) << '\n';
    if (!f.good()) throw std::runtime_error("report: failed writing manifest.json");
  }
}

std::vector<ReportRow> read_results_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("report: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("report: empty file " + path);
  if (line != "estimator,setting,seed,metric,value")
    throw std::runtime_error("report: unrecognized header in " + path);
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::array<std::string, 5> field;
    std::size_t at = 0;
    for (int k = 0; k < 4; ++k) {
      const auto comma = line.find(',', at);
      if (comma == std::string::npos) throw std::runtime_error("report: malformed row in " + path);
      field[static_cast<std::size_t>(k)] = line.substr(at, comma - at);
      at = comma + 1;
    }
    field[4] = line.substr(at);
    ReportRow r;
    r.estimator = field[0];
    r.setting = std::stod(field[1]);
    r.seed = std::stoi(field[2]);
    r.metric = field[3];
    r.value = std::stod(field[4]);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace ivdg::harness
