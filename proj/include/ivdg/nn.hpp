#pragma once

// Minimal dense feed-forward machinery: an MLP with ReLU hidden layers and a
// linear output, softmax cross-entropy, explicit backprop, and plain SGD with
// optional momentum. Everything is a value type; an update returns a new
// model rather than mutating in place.
//
// Forward passes can record a cache of intermediate activations for backprop.
// Each model carries a revision stamp that changes on every parameter update;
// backward() refuses a cache recorded under a different revision, which turns
// the classic stale-activation bug into an immediate error.

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "ivdg/rng.hpp"

namespace ivdg::nn {

struct MlpModel {
  std::vector<int> layer_dims;             // [d_in, hidden..., d_out]
  std::vector<Eigen::MatrixXd> weights;    // weights[l]: dims[l] x dims[l+1]
  std::vector<Eigen::VectorXd> biases;     // biases[l]: dims[l+1]
  std::string lineage;                     // provenance note (seed path)
  std::uint64_t revision = 0;              // bumped on every parameter change

  int input_dim() const { return layer_dims.front(); }
  int output_dim() const { return layer_dims.back(); }
};

// He-uniform weight init (+- sqrt(6 / fan_in)), zero biases. Requires at
// least two layer dims, all positive.
MlpModel init_mlp(const std::vector<int>& layer_dims, rng::Stream& rng,
                  std::string lineage = "");

struct ForwardCache {
  std::vector<Eigen::MatrixXd> layer_inputs;  // input to each affine layer
  std::vector<Eigen::MatrixXd> pre_acts;      // affine outputs before ReLU
  std::uint64_t model_revision = 0;
};

// Batch forward pass; rows are examples. Pass a cache pointer to record
// activations for a subsequent backward().
Eigen::MatrixXd forward(const MlpModel& model, const Eigen::MatrixXd& batch,
                        ForwardCache* cache = nullptr);

struct Gradients {
  std::vector<Eigen::MatrixXd> d_weights;
  std::vector<Eigen::VectorXd> d_biases;
  Eigen::MatrixXd d_input;  // gradient w.r.t. the batch itself
};

// Backprop given d loss / d output. The cache must come from a forward pass
// of this exact model revision; otherwise throws std::logic_error.
Gradients backward(const MlpModel& model, const ForwardCache& cache,
                   const Eigen::MatrixXd& d_output);

struct CeResult {
  double loss = 0.0;          // mean over the batch
  Eigen::MatrixXd d_logits;   // gradient of the mean loss
};

// Softmax cross-entropy evaluated via log-sum-exp; labels must lie in
// [0, n_classes).
CeResult cross_entropy(const Eigen::MatrixXd& logits, const Eigen::VectorXi& labels);

struct SgdConfig {
  double learning_rate = 0.01;
  int batch_size = 64;
  double momentum = 0.0;
};

// One descent step: w <- w - lr * g (no history; momentum is handled by the
// stateful optimizer below). Returns the updated model with a new revision.
MlpModel sgd_step(const MlpModel& model, const Gradients& grads, const SgdConfig& config);

// Momentum-carrying optimizer: v <- momentum * v + g, w <- w - lr * v.
// With momentum = 0 each step equals sgd_step.
class SgdOptimizer {
 public:
  explicit SgdOptimizer(SgdConfig config) : config_(config) {}
  MlpModel step(const MlpModel& model, const Gradients& grads);
  const SgdConfig& config() const { return config_; }

 private:
  SgdConfig config_;
  std::vector<Eigen::MatrixXd> vel_w_;
  std::vector<Eigen::VectorXd> vel_b_;
};

// Serialization: JSON with full-precision doubles; load(save(m)) reproduces
// parameters bit-exactly (the revision stamp is reassigned on load).
void save_mlp(const MlpModel& model, const std::string& path);
MlpModel load_mlp(const std::string& path);

}  // namespace ivdg::nn
