#include "ivdg/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <functional>
#include <map>
#include <stdexcept>
#include <thread>
#include <tuple>

#include "ivdg/errors.hpp"
#include "ivdg/estimators.hpp"

namespace ivdg::harness {

namespace {

bool parse_dg_name(const std::string& name, int* k_out) {
  if (name.size() < 3 || name.rfind("DG", 0) != 0) return false;
  int k = 0;
  for (std::size_t i = 2; i < name.size(); ++i) {
    if (name[i] < '0' || name[i] > '9') return false;
    k = k * 10 + (name[i] - '0');
  }
  *k_out = k;
  return true;
}

}  // namespace

std::vector<std::string> ExperimentConfig::resolved_estimators() const {
  if (!estimators.empty()) return estimators;
  if (kind == StudyKind::kLinear) {
    std::vector<std::string> out{"OLS", "IV"};
    for (int k = 2; k <= n_sources; ++k) out.push_back("DG" + std::to_string(k));
    return out;
  }
  return {"IVDG", "Pooled"};
}

std::vector<int> ExperimentConfig::resolved_sample_sizes() const {
  return sample_sizes.empty() ? std::vector<int>{n_per_domain} : sample_sizes;
}

std::vector<double> ExperimentConfig::resolved_r_divs() const {
  return r_div_values.empty() ? std::vector<double>{r_div} : r_div_values;
}

void ExperimentConfig::validate() const {
  if (d_f < 1 || d_x < 1) throw std::invalid_argument("config: d_f and d_x must be >= 1");
  if (n_sources < 1) throw std::invalid_argument("config: n_sources must be >= 1");
  if (n_per_domain < 1) throw std::invalid_argument("config: n_per_domain must be >= 1");
  if (n_seeds < 1) throw std::invalid_argument("config: n_seeds must be >= 1");
  if (n_workers < 0) throw std::invalid_argument("config: n_workers must be >= 0");
  if (!(r_div >= 0.0)) throw std::invalid_argument("config: r_div must be >= 0");
  for (int n : sample_sizes)
    if (n < 1) throw std::invalid_argument("config: sample sizes must be >= 1");
  for (double r : r_div_values)
    if (!(r >= 0.0)) throw std::invalid_argument("config: r_div values must be >= 0");

  for (const auto& name : resolved_estimators()) {
    if (kind == StudyKind::kLinear) {
      int k = 0;
      if (name == "OLS") continue;
      if (name == "IV") {
        if (n_sources < 2)
          throw std::invalid_argument("config: the IV estimator needs >= 2 sources");
        continue;
      }
      if (parse_dg_name(name, &k)) {
        if (k < 1 || k > n_sources)
          throw std::invalid_argument("config: " + name + " exceeds the source count");
        continue;
      }
      throw std::invalid_argument("config: unknown linear estimator '" + name + "'");
    }
    if (name != "IVDG" && name != "Pooled")
      throw std::invalid_argument("config: unknown nonlinear estimator '" + name + "'");
  }

  if (kind == StudyKind::kNonlinear) {
    if (n_sources < 2)
      throw std::invalid_argument("config: nonlinear studies need >= 2 sources");
    if (ivdg_sources < 2 || ivdg_sources > n_sources)
      throw std::invalid_argument("config: ivdg_sources must be in [2, n_sources]");
    trainer.validate(ivdg_sources);
    if (trainer.extractor_dims.front() != d_x)
      throw std::invalid_argument("config: extractor input dim must equal d_x");
    if (pooled_epochs < 0) throw std::invalid_argument("config: pooled_epochs must be >= 0");
    if (n_per_domain < 2)
      throw std::invalid_argument("config: labeled sampling needs n_per_domain >= 2");
  }
}

namespace {

struct Centered {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
};

Centered center(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, bool enabled) {
  if (!enabled) return {x, y};
  Centered c;
  c.x = x.rowwise() - x.colwise().mean();
  c.y = y.array() - y.mean();
  return c;
}

// Workers pull trial indices from a shared counter; results land in
// pre-sized slots, so the merged row order is independent of scheduling.
void run_trials(int n_trials, int n_workers,
                const std::function<std::vector<ReportRow>(int)>& trial,
                std::vector<std::vector<ReportRow>>* out) {
  out->assign(static_cast<std::size_t>(n_trials), {});
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_trials));
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  const int workers = std::max(1, std::min(n_workers > 0 ? n_workers : hw, n_trials));

  if (workers == 1) {
    for (int t = 0; t < n_trials; ++t) (*out)[static_cast<std::size_t>(t)] = trial(t);
    return;
  }

  std::atomic<int> next{0};
  auto work = [&]() {
    for (;;) {
      const int t = next.fetch_add(1);
      if (t >= n_trials) return;
      try {
        (*out)[static_cast<std::size_t>(t)] = trial(t);
      } catch (...) {
        errors[static_cast<std::size_t>(t)] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& th : pool) th.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct LinearTrialData {
  dgp::SharedInvariants shared;
  std::vector<dgp::DomainDataset> domains;  // sources first, target last
};

LinearTrialData sample_linear_trial(const ExperimentConfig& cfg, int seed, int n_max) {
  LinearTrialData td;
  rng::Stream trial(rng::derive(cfg.root_seed, rng::key("trial"), static_cast<std::uint64_t>(seed)));
  rng::Stream shared_rng = trial.child("shared");
  td.shared = dgp::sample_shared(cfg.d_f, cfg.d_x, dgp::ResponseKind::kLinear, shared_rng);
  dgp::SamplingOptions opts;
  opts.noise_scale = cfg.noise_scale;
  const int n_domains = cfg.n_sources + 1;
  for (int d = 0; d < n_domains; ++d) {
    const std::string id = d < cfg.n_sources ? "source" + std::to_string(d) : "target";
    rng::Stream p_rng = trial.child("params").child(static_cast<std::uint64_t>(d));
    const auto params = dgp::sample_domain_params(td.shared, cfg.r_div, id, p_rng);
    rng::Stream r_rng = trial.child("rows").child(static_cast<std::uint64_t>(d));
    td.domains.push_back(dgp::sample_linear_domain(td.shared, params, n_max, r_rng, opts));
  }
  return td;
}

std::vector<ReportRow> linear_trial(const ExperimentConfig& cfg, int seed) {
  const auto sizes = cfg.resolved_sample_sizes();
  const auto names = cfg.resolved_estimators();
  const int n_max = *std::max_element(sizes.begin(), sizes.end());
  const LinearTrialData td = sample_linear_trial(cfg, seed, n_max);
  const auto& target = td.domains.back();

  std::vector<ReportRow> rows;
  for (int n : sizes) {
    // Nested-prefix slices: the first n rows of each domain form exactly the
    // dataset that sampling n rows from the same streams would produce.
    std::vector<Centered> fit_data;
    fit_data.reserve(td.domains.size());
    for (const auto& dom : td.domains)
      fit_data.push_back(center(dom.x.topRows(n), dom.y.head(n), cfg.center_fits));

    for (const auto& name : names) {
      estimators::FitResult fit;
      if (name == "OLS") {
        fit = estimators::ols_fit(fit_data[0].x, fit_data[0].y);
      } else if (name == "IV") {
        // Instrument: the covariates of a second domain, row-aligned through
        // the shared invariant factors.
        fit = estimators::two_stage_fit(fit_data[0].x, fit_data[0].y, fit_data[1].x);
      } else {
        int k = 0;
        parse_dg_name(name, &k);
        std::vector<dgp::DomainDataset> slice;
        slice.reserve(static_cast<std::size_t>(k));
        for (int d = 0; d < k; ++d) {
          dgp::DomainDataset ds;
          ds.domain_id = td.domains[static_cast<std::size_t>(d)].domain_id;
          ds.x = fit_data[static_cast<std::size_t>(d)].x;
          ds.y = fit_data[static_cast<std::size_t>(d)].y;
          slice.push_back(std::move(ds));
        }
        fit = estimators::dg_average_fit(slice);
      }
      const double mae = estimators::mae_lambda(fit.lambda_hat, td.shared.lambda_ivt);
      // Prediction error on the raw (uncentered) target slice.
      const Eigen::VectorXd y_hat = target.x.topRows(n) * fit.lambda_hat;
      const double mse = estimators::mse_prediction(y_hat, target.y.head(n));
      rows.push_back({name, static_cast<double>(n), seed, "mae", mae});
      rows.push_back({name, static_cast<double>(n), seed, "target_mse", mse});
    }
  }
  return rows;
}

struct NonlinearTrialData {
  dgp::SharedInvariants shared;
  std::vector<dgp::DomainDataset> sources;
  dgp::DomainDataset target;
};

NonlinearTrialData sample_nonlinear_trial(const ExperimentConfig& cfg, int seed, int r_idx,
                                          double r_div_value) {
  NonlinearTrialData td;
  rng::Stream trial(rng::derive(cfg.root_seed, rng::key("trial"), static_cast<std::uint64_t>(seed),
                                static_cast<std::uint64_t>(r_idx)));
  rng::Stream shared_rng = trial.child("shared");
  td.shared = dgp::sample_shared(cfg.d_f, cfg.d_x, dgp::ResponseKind::kAbsoluteValue, shared_rng);
  dgp::SamplingOptions opts;
  opts.noise_scale = cfg.noise_scale;
  const int n_domains = cfg.n_sources + 1;
  for (int d = 0; d < n_domains; ++d) {
    const bool is_target = d == cfg.n_sources;
    const std::string id = is_target ? "target" : "source" + std::to_string(d);
    rng::Stream p_rng = trial.child("params").child(static_cast<std::uint64_t>(d));
    const auto params = dgp::sample_domain_params(td.shared, r_div_value, id, p_rng);
    dgp::DomainDataset ds;
    try {
      rng::Stream r_rng = trial.child("rows").child(static_cast<std::uint64_t>(d));
      ds = dgp::sample_nonlinear_domain(td.shared, params, cfg.n_per_domain, r_rng,
                                        dgp::LabelRule::kMedianSplit, opts);
    } catch (const labeling_error&) {
      // A tied median split is a measure-zero accident of the draw; one
      // fresh redraw from a disjoint stream resolves it or we give up.
      rng::Stream retry = trial.child("rows-retry").child(static_cast<std::uint64_t>(d));
      ds = dgp::sample_nonlinear_domain(td.shared, params, cfg.n_per_domain, retry,
                                        dgp::LabelRule::kMedianSplit, opts);
    }
    if (is_target)
      td.target = std::move(ds);
    else
      td.sources.push_back(std::move(ds));
  }
  return td;
}

std::vector<ReportRow> nonlinear_trial(const ExperimentConfig& cfg, int seed, int r_idx,
                                       double r_div_value) {
  const NonlinearTrialData td = sample_nonlinear_trial(cfg, seed, r_idx, r_div_value);
  const auto names = cfg.resolved_estimators();
  rng::Stream trial(rng::derive(cfg.root_seed, rng::key("trial"), static_cast<std::uint64_t>(seed),
                                static_cast<std::uint64_t>(r_idx)));

  std::vector<ReportRow> rows;
  for (const auto& name : names) {
    double acc = 0.0;
    if (name == "IVDG") {
      // The two-stage trainer deliberately sees only the first ivdg_sources
      // domains; the pooled baseline below trains on every source.
      const std::vector<dgp::DomainDataset> slice(
          td.sources.begin(), td.sources.begin() + cfg.ivdg_sources);
      rng::Stream t_rng = trial.child("ivdg");
      const trainer::TrainedIvdg trained = trainer::train_ivdg(slice, cfg.trainer, t_rng);
      acc = trainer::evaluate(trained.g, trained.c, td.target);
    } else {  // Pooled
      trainer::IvdgConfig pooled_cfg = cfg.trainer;
      pooled_cfg.iv_weights.clear();
      pooled_cfg.epochs_pre =
          cfg.pooled_epochs > 0 ? cfg.pooled_epochs : cfg.trainer.epochs_pre + cfg.trainer.epochs_iv;
      rng::Stream t_rng = trial.child("pooled");
      const trainer::PretrainResult pre = trainer::pretrain(td.sources, pooled_cfg, t_rng);
      acc = trainer::evaluate(pre.g, pre.c, td.target);
    }
    rows.push_back({name, r_div_value, seed, "target_accuracy", acc});
  }
  return rows;
}

}  // namespace

std::vector<SummaryRow> summarize(const std::vector<ReportRow>& rows) {
  std::vector<SummaryRow> out;
  std::map<std::tuple<std::string, double, std::string>, std::size_t> slot;
  std::vector<std::vector<double>> values;
  for (const auto& r : rows) {
    const auto key = std::make_tuple(r.estimator, r.setting, r.metric);
    auto it = slot.find(key);
    if (it == slot.end()) {
      slot.emplace(key, out.size());
      out.push_back({r.estimator, r.setting, r.metric, 0.0, 0.0, 0});
      values.emplace_back();
      it = slot.find(key);
    }
    values[it->second].push_back(r.value);
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto& v = values[i];
    const double n = static_cast<double>(v.size());
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= n;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    out[i].mean = mean;
    out[i].std_error = v.size() > 1 ? std::sqrt(ss / (n - 1.0)) / std::sqrt(n) : 0.0;
    out[i].n = static_cast<int>(v.size());
  }
  return out;
}

ExperimentReport run_linear_study(const ExperimentConfig& config) {
  if (config.kind != StudyKind::kLinear)
    throw std::invalid_argument("harness: config is not a linear study");
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<std::vector<ReportRow>> per_trial;
  run_trials(config.n_seeds, config.n_workers,
             [&](int t) { return linear_trial(config, t); }, &per_trial);

  ExperimentReport rep;
  rep.config = config;
  for (auto& rs : per_trial)
    rep.rows.insert(rep.rows.end(), std::make_move_iterator(rs.begin()),
                    std::make_move_iterator(rs.end()));
  rep.summary = summarize(rep.rows);
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

ExperimentReport run_nonlinear_study(const ExperimentConfig& config) {
  if (config.kind != StudyKind::kNonlinear)
    throw std::invalid_argument("harness: config is not a nonlinear study");
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();

  const auto r_divs = config.resolved_r_divs();
  struct Cell {
    int seed;
    int r_idx;
  };
  std::vector<Cell> cells;
  for (int s = 0; s < config.n_seeds; ++s)
    for (std::size_t r = 0; r < r_divs.size(); ++r) cells.push_back({s, static_cast<int>(r)});

  std::vector<std::vector<ReportRow>> per_trial;
  run_trials(static_cast<int>(cells.size()), config.n_workers,
             [&](int t) {
               const Cell& c = cells[static_cast<std::size_t>(t)];
               return nonlinear_trial(config, c.seed, c.r_idx,
                                      r_divs[static_cast<std::size_t>(c.r_idx)]);
             },
             &per_trial);

  ExperimentReport rep;
  rep.config = config;
  for (auto& rs : per_trial)
    rep.rows.insert(rep.rows.end(), std::make_move_iterator(rs.begin()),
                    std::make_move_iterator(rs.end()));
  rep.summary = summarize(rep.rows);
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace ivdg::harness
