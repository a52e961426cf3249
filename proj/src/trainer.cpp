#include "ivdg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <set>
#include <stdexcept>

namespace ivdg::trainer {

namespace {

bool same_params(const nn::MlpModel& a, const nn::MlpModel& b) {
  if (a.layer_dims != b.layer_dims) return false;
  for (std::size_t l = 0; l < a.weights.size(); ++l) {
    if (a.weights[l] != b.weights[l]) return false;
    if (a.biases[l] != b.biases[l]) return false;
  }
  return true;
}

// Row indices of each class, per domain.
std::vector<std::vector<int>> class_pools(const dgp::DomainDataset& ds, int n_classes) {
  if (!ds.labels) throw std::invalid_argument("trainer: dataset '" + ds.domain_id + "' is unlabeled");
  std::vector<std::vector<int>> pools(static_cast<std::size_t>(n_classes));
  const auto& lab = *ds.labels;
  for (Eigen::Index i = 0; i < lab.size(); ++i) {
    const int c = lab(i);
    if (c < 0 || c >= n_classes)
      throw std::invalid_argument("trainer: label out of range in domain '" + ds.domain_id + "'");
    pools[static_cast<std::size_t>(c)].push_back(static_cast<int>(i));
  }
  return pools;
}

std::vector<int> shared_classes(const std::vector<std::vector<int>>& a,
                                const std::vector<std::vector<int>>& b,
                                const std::string& id_a, const std::string& id_b) {
  std::vector<int> shared;
  for (std::size_t c = 0; c < a.size(); ++c) {
    const bool in_a = !a[c].empty();
    const bool in_b = !b[c].empty();
    if (in_a && in_b) {
      shared.push_back(static_cast<int>(c));
    } else if (in_a != in_b) {
      std::cerr << "[trainer] warning: class " << c << " is present in only one of '" << id_a
                << "', '" << id_b << "'; skipping it for this pairing\n";
    }
  }
  if (shared.empty())
    throw std::invalid_argument("trainer: domains '" + id_a + "' and '" + id_b +
                                "' share no class");
  return shared;
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& m, const std::vector<int>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(rows[r]);
  return out;
}

std::vector<int> draw_with_replacement(const std::vector<int>& pool, int count,
                                       rng::Stream& rng) {
  std::vector<int> rows(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i)
    rows[static_cast<std::size_t>(i)] = pool[static_cast<std::size_t>(rng.below(pool.size()))];
  return rows;
}

int resolve_steps(const IvdgConfig& cfg, const std::vector<dgp::DomainDataset>& sources) {
  if (cfg.steps_per_epoch > 0) return cfg.steps_per_epoch;
  Eigen::Index max_rows = 0;
  for (const auto& s : sources) max_rows = std::max(max_rows, s.x.rows());
  return static_cast<int>((max_rows + cfg.sgd.batch_size - 1) / cfg.sgd.batch_size);
}

struct Snapshot {
  std::vector<const nn::MlpModel*> models;
  std::vector<nn::MlpModel> copies;
  explicit Snapshot(std::vector<const nn::MlpModel*> ms) : models(std::move(ms)) {
    for (const auto* m : models) copies.push_back(*m);
  }
  void check(const char* what) const {
    for (std::size_t i = 0; i < models.size(); ++i)
      if (!same_params(*models[i], copies[i]))
        throw std::logic_error(std::string("trainer: frozen parameters changed during ") + what);
  }
};

}  // namespace

void IvdgConfig::validate(int n_sources) const {
  if (n_sources < 2) throw std::invalid_argument("trainer: need at least 2 source domains");
  if (extractor_dims.size() < 2)
    throw std::invalid_argument("trainer: extractor needs input and output dims");
  for (int d : extractor_dims)
    if (d < 1) throw std::invalid_argument("trainer: extractor dims must be positive");
  if (n_classes < 2) throw std::invalid_argument("trainer: need at least 2 classes");
  if (epochs_pre < 0 || epochs_iv < 0)
    throw std::invalid_argument("trainer: epoch counts must be nonnegative");
  if (steps_per_epoch < 0) throw std::invalid_argument("trainer: steps_per_epoch must be >= 0");
  if (sgd.batch_size < 1) throw std::invalid_argument("trainer: batch size must be positive");
  if (!(sgd.learning_rate > 0.0))
    throw std::invalid_argument("trainer: learning rate must be positive");
  if (!iv_weights.empty()) {
    if (iv_weights.size() != static_cast<std::size_t>(n_sources - 1))
      throw std::invalid_argument("trainer: iv_weights must have one entry per non-anchor source");
    double sum = 0.0;
    for (double w : iv_weights) {
      if (!(w >= 0.0)) throw std::invalid_argument("trainer: iv_weights must be nonnegative");
      sum += w;
    }
    if (!(sum > 0.0)) throw std::invalid_argument("trainer: iv_weights must not all be zero");
  }
  mmd.validate();
}

PretrainResult pretrain(const std::vector<dgp::DomainDataset>& sources, const IvdgConfig& config,
                        rng::Stream& rng) {
  config.validate(std::max<int>(2, static_cast<int>(sources.size())));
  if (sources.empty()) throw std::invalid_argument("trainer: no sources");

  // Mix all source rows into one pool.
  Eigen::Index total = 0;
  for (const auto& s : sources) {
    if (!s.labels) throw std::invalid_argument("trainer: dataset '" + s.domain_id + "' is unlabeled");
    if (s.x.cols() != config.extractor_dims.front())
      throw std::invalid_argument("trainer: covariate dim does not match extractor input");
    total += s.x.rows();
  }
  Eigen::MatrixXd x_mix(total, config.extractor_dims.front());
  Eigen::VectorXi y_mix(total);
  Eigen::Index at = 0;
  for (const auto& s : sources) {
    x_mix.middleRows(at, s.x.rows()) = s.x;
    y_mix.segment(at, s.x.rows()) = *s.labels;
    at += s.x.rows();
  }

  rng::Stream init_g = rng.child("init-g");
  rng::Stream init_c = rng.child("init-c");
  rng::Stream batches = rng.child("pretrain-batches");

  PretrainResult out;
  out.g = nn::init_mlp(config.extractor_dims, init_g, "pretrain/g");
  out.c = nn::init_mlp({config.extractor_dims.back(), config.n_classes}, init_c, "pretrain/c");

  nn::SgdOptimizer opt_g(config.sgd);
  nn::SgdOptimizer opt_c(config.sgd);
  const int steps = resolve_steps(config, sources);
  const int b = config.sgd.batch_size;

  for (int epoch = 0; epoch < config.epochs_pre; ++epoch) {
    double loss_sum = 0.0;
    for (int step = 0; step < steps; ++step) {
      Eigen::MatrixXd xb(b, x_mix.cols());
      Eigen::VectorXi yb(b);
      for (int i = 0; i < b; ++i) {
        const auto r = static_cast<Eigen::Index>(batches.below(static_cast<std::uint64_t>(total)));
        xb.row(i) = x_mix.row(r);
        yb(i) = y_mix(r);
      }
      nn::ForwardCache cache_g, cache_c;
      const Eigen::MatrixXd feats = nn::forward(out.g, xb, &cache_g);
      const Eigen::MatrixXd logits = nn::forward(out.c, feats, &cache_c);
      const nn::CeResult ce = nn::cross_entropy(logits, yb);
      loss_sum += ce.loss;
      const nn::Gradients grads_c = nn::backward(out.c, cache_c, ce.d_logits);
      const nn::Gradients grads_g = nn::backward(out.g, cache_g, grads_c.d_input);
      out.c = opt_c.step(out.c, grads_c);
      out.g = opt_g.step(out.g, grads_g);
    }
    out.history.push_back({epoch, "pretrain", "", loss_sum / std::max(1, steps)});
  }
  return out;
}

namespace {

struct PairedDomain {
  const dgp::DomainDataset* data = nullptr;
  std::vector<std::vector<int>> pools;
  std::vector<int> shared;  // classes shared with the anchor
  double weight = 1.0;      // stage-2 weight alpha_q
};

// One epoch of stage-1 updates for a single non-anchor domain: minimize the
// squared MMD between g_q features on domain q and frozen-g features on the
// anchor, over class-paired minibatches.
double stage1_epoch(nn::MlpModel& g_q, nn::SgdOptimizer& opt, const nn::MlpModel& g_frozen,
                    const dgp::DomainDataset& anchor,
                    const std::vector<std::vector<int>>& anchor_pools, const PairedDomain& dom,
                    const IvdgConfig& cfg, int steps, rng::Stream& rng) {
  const int b = cfg.sgd.batch_size;
  mmd::MmdConfig epoch_cfg = cfg.mmd;
  // Per-batch parameter isolation: the anchor-side extractor must not move.
  const nn::MlpModel g_snapshot = cfg.debug_checks ? g_frozen : nn::MlpModel{};
  double loss_sum = 0.0;
  for (int step = 0; step < steps; ++step) {
    const int cls = dom.shared[static_cast<std::size_t>(rng.below(dom.shared.size()))];
    const auto rows_q =
        draw_with_replacement(dom.pools[static_cast<std::size_t>(cls)], b, rng);
    const auto rows_a =
        draw_with_replacement(anchor_pools[static_cast<std::size_t>(cls)], b, rng);
    if (cfg.debug_checks) {
      for (int r : rows_q)
        if ((*dom.data->labels)(r) != cls) throw std::logic_error("trainer: pairing broke (q side)");
      for (int r : rows_a)
        if ((*anchor.labels)(r) != cls) throw std::logic_error("trainer: pairing broke (anchor side)");
    }
    const Eigen::MatrixXd xq = take_rows(dom.data->x, rows_q);
    const Eigen::MatrixXd xa = take_rows(anchor.x, rows_a);

    nn::ForwardCache cache_q;
    const Eigen::MatrixXd feats_q = nn::forward(g_q, xq, &cache_q);
    const Eigen::MatrixXd feats_a = nn::forward(g_frozen, xa);

    if (step == 0 && cfg.adaptive_bandwidths) {
      // Freeze this epoch's kernel widths from the first feature batch.
      const double med = mmd::median_heuristic(feats_q, feats_a);
      for (std::size_t u = 0; u < epoch_cfg.bandwidths.size(); ++u)
        epoch_cfg.bandwidths[u] = cfg.mmd.bandwidths[u] * med;
    }

    const mmd::MmdValueGrad vg = mmd::mmd2_with_grad_a(feats_q, feats_a, epoch_cfg);
    loss_sum += vg.value;
    const nn::Gradients grads = nn::backward(g_q, cache_q, vg.grad_a);
    g_q = opt.step(g_q, grads);
    if (cfg.debug_checks && !same_params(g_frozen, g_snapshot))
      throw std::logic_error("trainer: frozen g moved during a stage-1 batch");
  }
  return loss_sum / std::max(1, steps);
}

// One epoch of stage-2 updates: weighted cross-entropy through the frozen
// per-domain extractors, updating only the classifier.
double stage2_epoch(nn::MlpModel& c, nn::SgdOptimizer& opt,
                    const std::map<std::string, nn::MlpModel>& g_q,
                    const std::vector<PairedDomain>& doms, const IvdgConfig& cfg, int steps,
                    rng::Stream& rng) {
  const int b = cfg.sgd.batch_size;
  const double q_norm = static_cast<double>(doms.size());
  // Per-batch parameter isolation: no stage-1 extractor may move in stage 2.
  std::map<std::string, nn::MlpModel> gq_snapshot;
  if (cfg.debug_checks) gq_snapshot = g_q;
  double loss_sum = 0.0;
  for (int step = 0; step < steps; ++step) {
    double step_loss = 0.0;
    nn::Gradients acc;
    bool have_acc = false;
    for (const auto& dom : doms) {
      const int cls = dom.shared[static_cast<std::size_t>(rng.below(dom.shared.size()))];
      const auto rows = draw_with_replacement(dom.pools[static_cast<std::size_t>(cls)], b, rng);
      if (cfg.debug_checks) {
        for (int r : rows)
          if ((*dom.data->labels)(r) != cls)
            throw std::logic_error("trainer: pairing broke (stage 2)");
      }
      const Eigen::MatrixXd xq = take_rows(dom.data->x, rows);
      const Eigen::MatrixXd feats = nn::forward(g_q.at(dom.data->domain_id), xq);
      nn::ForwardCache cache_c;
      const Eigen::MatrixXd logits = nn::forward(c, feats, &cache_c);
      // Same-class pairing makes the anchor labels of this batch the drawn
      // class itself.
      const Eigen::VectorXi yb = Eigen::VectorXi::Constant(b, cls);
      const nn::CeResult ce = nn::cross_entropy(logits, yb);
      const double scale = dom.weight / q_norm;
      step_loss += scale * ce.loss;
      nn::Gradients grads = nn::backward(c, cache_c, (scale * ce.d_logits).eval());
      if (!have_acc) {
        acc = std::move(grads);
        have_acc = true;
      } else {
        for (std::size_t l = 0; l < acc.d_weights.size(); ++l) {
          acc.d_weights[l] += grads.d_weights[l];
          acc.d_biases[l] += grads.d_biases[l];
        }
      }
    }
    loss_sum += step_loss;
    c = opt.step(c, acc);
    if (cfg.debug_checks) {
      for (const auto& [id, m] : g_q)
        if (!same_params(m, gq_snapshot.at(id)))
          throw std::logic_error("trainer: a stage-1 extractor moved during a stage-2 batch");
    }
  }
  return loss_sum / std::max(1, steps);
}

}  // namespace

TrainedIvdg train_ivdg(const std::vector<dgp::DomainDataset>& sources, const IvdgConfig& config,
                       rng::Stream& rng) {
  config.validate(static_cast<int>(sources.size()));

  std::size_t anchor_idx = 0;
  if (!config.anchor_domain.empty()) {
    bool found = false;
    for (std::size_t i = 0; i < sources.size(); ++i)
      if (sources[i].domain_id == config.anchor_domain) {
        anchor_idx = i;
        found = true;
        break;
      }
    if (!found)
      throw std::invalid_argument("trainer: anchor domain '" + config.anchor_domain +
                                  "' is not among the sources");
  }
  const dgp::DomainDataset& anchor = sources[anchor_idx];
  const auto anchor_pools = class_pools(anchor, config.n_classes);

  std::vector<PairedDomain> doms;
  std::size_t w_at = 0;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    if (i == anchor_idx) continue;
    PairedDomain d;
    d.data = &sources[i];
    d.pools = class_pools(sources[i], config.n_classes);
    d.shared = shared_classes(anchor_pools, d.pools, anchor.domain_id, sources[i].domain_id);
    d.weight = config.iv_weights.empty() ? 1.0 : config.iv_weights[w_at];
    ++w_at;
    doms.push_back(std::move(d));
  }

  rng::Stream pre_rng = rng.child("pretrain");
  PretrainResult pre = pretrain(sources, config, pre_rng);

  TrainedIvdg out;
  out.g = std::move(pre.g);
  out.c = std::move(pre.c);
  out.history = std::move(pre.history);

  std::map<std::string, nn::SgdOptimizer> opt_q;
  for (const auto& dom : doms) {
    out.g_q.emplace(dom.data->domain_id, out.g);  // initialize g_q from g
    opt_q.emplace(dom.data->domain_id, nn::SgdOptimizer(config.sgd));
    if (config.debug_checks && !same_params(out.g_q.at(dom.data->domain_id), out.g))
      throw std::logic_error("trainer: g_q initialization is not bitwise equal to g");
  }
  nn::SgdOptimizer opt_c(config.sgd);

  const int steps = resolve_steps(config, sources);
  rng::Stream s1_rng = rng.child("stage1");
  rng::Stream s2_rng = rng.child("stage2");

  for (int epoch = 0; epoch < config.epochs_iv; ++epoch) {
    for (auto& dom : doms) {
      rng::Stream dom_rng = s1_rng.child(rng::key(dom.data->domain_id)).child(
          static_cast<std::uint64_t>(epoch));
      nn::MlpModel& g_q = out.g_q.at(dom.data->domain_id);
      double mean_loss;
      if (config.debug_checks) {
        Snapshot frozen({&out.g, &out.c});
        mean_loss = stage1_epoch(g_q, opt_q.at(dom.data->domain_id), out.g, anchor, anchor_pools,
                                 dom, config, steps, dom_rng);
        frozen.check("stage 1");
      } else {
        mean_loss = stage1_epoch(g_q, opt_q.at(dom.data->domain_id), out.g, anchor, anchor_pools,
                                 dom, config, steps, dom_rng);
      }
      out.history.push_back({epoch, "stage1", dom.data->domain_id, mean_loss});
    }

    rng::Stream epoch_rng = s2_rng.child(static_cast<std::uint64_t>(epoch));
    double mean_loss;
    if (config.debug_checks) {
      std::vector<const nn::MlpModel*> frozen_models{&out.g};
      for (const auto& [id, m] : out.g_q) frozen_models.push_back(&m);
      Snapshot frozen(frozen_models);
      mean_loss = stage2_epoch(out.c, opt_c, out.g_q, doms, config, steps, epoch_rng);
      frozen.check("stage 2");
    } else {
      mean_loss = stage2_epoch(out.c, opt_c, out.g_q, doms, config, steps, epoch_rng);
    }
    out.history.push_back({epoch, "stage2", "", mean_loss});
  }
  return out;
}

double evaluate(const nn::MlpModel& extractor, const nn::MlpModel& classifier,
                const dgp::DomainDataset& ds) {
  if (!ds.labels) throw std::invalid_argument("trainer: evaluate needs a labeled dataset");
  const Eigen::MatrixXd feats = nn::forward(extractor, ds.x);
  const Eigen::MatrixXd logits = nn::forward(classifier, feats);
  const auto& labels = *ds.labels;
  Eigen::Index correct = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    int arg = 0;
    for (Eigen::Index c = 1; c < logits.cols(); ++c)
      if (logits(i, c) > logits(i, arg)) arg = static_cast<int>(c);
    if (arg == labels(i)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

}  // namespace ivdg::trainer
