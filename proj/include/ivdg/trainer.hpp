#pragma once

// Two-stage invariant-representation training across labeled source domains.
//
// One source domain is designated the anchor. Training proceeds:
//
//   1. Pretrain a shared extractor g and linear classifier c by softmax
//      cross-entropy on the mixture of all source domains.
//   2. Per non-anchor domain q, initialize g_q from g (bitwise), then
//      alternate per epoch:
//        stage 1 - update g_q to minimize the multi-kernel squared MMD
//                  between g_q's features on class-matched minibatches of
//                  domain q and the frozen g's features on the anchor;
//        stage 2 - update c by weighted cross-entropy on the stage-1
//                  features of the non-anchor domains (extractors frozen).
//
// Minibatches are class-paired: a class is drawn uniformly from the classes
// both domains share, then rows are drawn with replacement from each side's
// pool of that class. At inference the anchor path c(g(x)) is used.
//
// An "epoch" is steps_per_epoch minibatch updates (default: enough batches
// to nominally cover the largest source once). Setting steps_per_epoch = 1
// recovers the one-batch-per-epoch reading of the procedure.

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "ivdg/dgp.hpp"
#include "ivdg/mmd.hpp"
#include "ivdg/nn.hpp"
#include "ivdg/rng.hpp"

namespace ivdg::trainer {

struct IvdgConfig {
  std::vector<int> extractor_dims = {20, 16, 8};  // [d_x, hidden..., d_feature]
  int n_classes = 2;

  int epochs_pre = 30;
  int epochs_iv = 30;
  // Minibatch updates per epoch; 0 means ceil(max source rows / batch size).
  int steps_per_epoch = 0;

  nn::SgdConfig sgd{0.01, 64, 0.0};

  // Anchor selection by domain_id; empty selects the first source.
  std::string anchor_domain;

  // One weight per non-anchor source, in source order. Empty means all 1.
  // Weights must be nonnegative with a positive sum; they are applied as
  // alpha_q / (Q - 1) on domain q's stage-2 loss term.
  std::vector<double> iv_weights;

  // MMD kernel mixture. With adaptive_bandwidths (default), the configured
  // bandwidths act as multipliers on a per-epoch base bandwidth set by the
  // median heuristic on the first feature batch of the epoch and frozen for
  // the epoch's remaining steps; otherwise they are used verbatim.
  mmd::MmdConfig mmd = mmd::multi_kernel_config(1.0);
  bool adaptive_bandwidths = true;

  // Per-batch structural assertions (pairing, frozen-parameter and
  // initialization contracts). Violations throw std::logic_error.
  bool debug_checks = false;

  void validate(int n_sources) const;
};

struct EpochRecord {
  int epoch = 0;            // 0-based within its phase
  std::string phase;        // "pretrain", "stage1", "stage2"
  std::string domain_id;    // stage1 only; empty otherwise
  double mean_loss = 0.0;   // mean over the epoch's steps
};

struct PretrainResult {
  nn::MlpModel g;
  nn::MlpModel c;
  std::vector<EpochRecord> history;
};

struct TrainedIvdg {
  nn::MlpModel g;                               // anchor/inference extractor
  nn::MlpModel c;                               // linear classifier
  std::map<std::string, nn::MlpModel> g_q;      // per non-anchor extractors
  std::vector<EpochRecord> history;
};

// Cross-entropy pretraining of (g, c) on the mixture of all sources.
PretrainResult pretrain(const std::vector<dgp::DomainDataset>& sources, const IvdgConfig& config,
                        rng::Stream& rng);

// Full two-stage procedure. Requires >= 2 labeled sources with covariate
// dimension extractor_dims.front(); classes absent from either side of a
// pairing are skipped with a warning; no shared class is an error.
TrainedIvdg train_ivdg(const std::vector<dgp::DomainDataset>& sources, const IvdgConfig& config,
                       rng::Stream& rng);

// Classification accuracy of c(extractor(x)) against the dataset labels.
// Ties in the logits resolve to the lowest class index.
double evaluate(const nn::MlpModel& extractor, const nn::MlpModel& classifier,
                const dgp::DomainDataset& ds);

}  // namespace ivdg::trainer
