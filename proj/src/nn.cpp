#include "ivdg/nn.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace ivdg::nn {

namespace {

std::uint64_t next_revision() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

void check_architecture(const std::vector<int>& dims) {
  if (dims.size() < 2) throw std::invalid_argument("nn: need at least input and output dims");
  for (int d : dims)
    if (d < 1) throw std::invalid_argument("nn: layer dims must be positive");
}

}  // namespace

MlpModel init_mlp(const std::vector<int>& layer_dims, rng::Stream& rng, std::string lineage) {
  check_architecture(layer_dims);
  MlpModel m;
  m.layer_dims = layer_dims;
  m.lineage = std::move(lineage);
  m.revision = next_revision();
  const std::size_t n_layers = layer_dims.size() - 1;
  m.weights.reserve(n_layers);
  m.biases.reserve(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    const int fan_in = layer_dims[l];
    const int fan_out = layer_dims[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    Eigen::MatrixXd w(fan_in, fan_out);
    for (int i = 0; i < fan_in; ++i)
      for (int j = 0; j < fan_out; ++j) w(i, j) = rng.uniform(-bound, bound);
    m.weights.push_back(std::move(w));
    m.biases.push_back(Eigen::VectorXd::Zero(fan_out));
  }
  return m;
}

Eigen::MatrixXd forward(const MlpModel& model, const Eigen::MatrixXd& batch,
                        ForwardCache* cache) {
  check_architecture(model.layer_dims);
  if (batch.cols() != model.input_dim())
    throw std::invalid_argument("nn: batch width does not match the model input dim");
  if (batch.rows() < 1) throw std::invalid_argument("nn: empty batch");

  const std::size_t n_layers = model.weights.size();
  if (cache) {
    cache->layer_inputs.clear();
    cache->pre_acts.clear();
    cache->model_revision = model.revision;
  }
  Eigen::MatrixXd h = batch;
  for (std::size_t l = 0; l < n_layers; ++l) {
    if (cache) cache->layer_inputs.push_back(h);
    Eigen::MatrixXd z = (h * model.weights[l]).rowwise() + model.biases[l].transpose();
    if (cache) cache->pre_acts.push_back(z);
    // ReLU on hidden layers; the final layer stays linear.
    h = l + 1 < n_layers ? z.cwiseMax(0.0).eval() : std::move(z);
  }
  return h;
}

Gradients backward(const MlpModel& model, const ForwardCache& cache,
                   const Eigen::MatrixXd& d_output) {
  const std::size_t n_layers = model.weights.size();
  if (cache.model_revision != model.revision)
    throw std::logic_error("nn: forward cache is stale for this model revision");
  if (cache.layer_inputs.size() != n_layers || cache.pre_acts.size() != n_layers)
    throw std::invalid_argument("nn: malformed forward cache");
  if (d_output.rows() != cache.layer_inputs.front().rows() ||
      d_output.cols() != model.output_dim())
    throw std::invalid_argument("nn: d_output shape mismatch");

  Gradients g;
  g.d_weights.resize(n_layers);
  g.d_biases.resize(n_layers);
  Eigen::MatrixXd delta = d_output;
  for (std::size_t l = n_layers; l-- > 0;) {
    if (l + 1 < n_layers) {
      // Hidden layer: gate the flowing gradient by the ReLU mask.
      delta = (cache.pre_acts[l].array() > 0.0).cast<double>().matrix().cwiseProduct(delta);
    }
    g.d_weights[l] = cache.layer_inputs[l].transpose() * delta;
    g.d_biases[l] = delta.colwise().sum();
    if (l > 0)
      delta = (delta * model.weights[l].transpose()).eval();
    else
      g.d_input = delta * model.weights[0].transpose();
  }
  return g;
}

CeResult cross_entropy(const Eigen::MatrixXd& logits, const Eigen::VectorXi& labels) {
  const auto b = logits.rows();
  const auto n_classes = logits.cols();
  if (labels.size() != b) throw std::invalid_argument("nn: labels length != batch size");
  if (b < 1) throw std::invalid_argument("nn: empty batch");
  for (Eigen::Index i = 0; i < b; ++i)
    if (labels(i) < 0 || labels(i) >= n_classes)
      throw std::invalid_argument("nn: label out of range");

  CeResult out;
  out.d_logits = Eigen::MatrixXd(b, n_classes);
  double total = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const double mx = logits.row(i).maxCoeff();
    const Eigen::ArrayXd shifted = logits.row(i).array() - mx;
    const Eigen::ArrayXd ex = shifted.exp();
    const double z = ex.sum();
    const double lse = mx + std::log(z);
    total += lse - logits(i, labels(i));
    out.d_logits.row(i) = (ex / z).matrix().transpose();
    out.d_logits(i, labels(i)) -= 1.0;
  }
  const double inv_b = 1.0 / static_cast<double>(b);
  out.loss = total * inv_b;
  out.d_logits *= inv_b;
  return out;
}

namespace {

void check_grads(const MlpModel& model, const Gradients& grads) {
  if (grads.d_weights.size() != model.weights.size() ||
      grads.d_biases.size() != model.biases.size())
    throw std::invalid_argument("nn: gradient layer count mismatch");
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    if (grads.d_weights[l].rows() != model.weights[l].rows() ||
        grads.d_weights[l].cols() != model.weights[l].cols() ||
        grads.d_biases[l].size() != model.biases[l].size())
      throw std::invalid_argument("nn: gradient shape mismatch");
  }
}

}  // namespace

MlpModel sgd_step(const MlpModel& model, const Gradients& grads, const SgdConfig& config) {
  check_grads(model, grads);
  if (!(config.learning_rate > 0.0))
    throw std::invalid_argument("nn: learning rate must be positive");
  MlpModel out = model;
  for (std::size_t l = 0; l < out.weights.size(); ++l) {
    out.weights[l] -= config.learning_rate * grads.d_weights[l];
    out.biases[l] -= config.learning_rate * grads.d_biases[l];
  }
  out.revision = next_revision();
  return out;
}

MlpModel SgdOptimizer::step(const MlpModel& model, const Gradients& grads) {
  check_grads(model, grads);
  if (!(config_.learning_rate > 0.0))
    throw std::invalid_argument("nn: learning rate must be positive");
  if (vel_w_.empty()) {
    for (const auto& w : model.weights) vel_w_.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
    for (const auto& b : model.biases) vel_b_.push_back(Eigen::VectorXd::Zero(b.size()));
  }
  if (vel_w_.size() != model.weights.size())
    throw std::invalid_argument("nn: optimizer state does not match the model");
  MlpModel out = model;
  for (std::size_t l = 0; l < out.weights.size(); ++l) {
    vel_w_[l] = config_.momentum * vel_w_[l] + grads.d_weights[l];
    vel_b_[l] = config_.momentum * vel_b_[l] + grads.d_biases[l];
    out.weights[l] -= config_.learning_rate * vel_w_[l];
    out.biases[l] -= config_.learning_rate * vel_b_[l];
  }
  out.revision = next_revision();
  return out;
}

void save_mlp(const MlpModel& model, const std::string& path) {
  nlohmann::json j;
  j["format"] = "ivdg-mlp-v1";
  j["layer_dims"] = model.layer_dims;
  j["lineage"] = model.lineage;
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    nlohmann::json layer;
    std::vector<double> w_flat;  // row-major
    w_flat.reserve(static_cast<std::size_t>(model.weights[l].size()));
    for (Eigen::Index i = 0; i < model.weights[l].rows(); ++i)
      for (Eigen::Index jj = 0; jj < model.weights[l].cols(); ++jj)
        w_flat.push_back(model.weights[l](i, jj));
    layer["w"] = w_flat;
    layer["b"] = std::vector<double>(model.biases[l].data(),
                                     model.biases[l].data() + model.biases[l].size());
    layers.push_back(std::move(layer));
  }
  j["layers"] = std::move(layers);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("nn: cannot open checkpoint for writing: " + path);
  out << j.dump();
  if (!out.good()) throw std::runtime_error("nn: failed writing checkpoint: " + path);
}

MlpModel load_mlp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("nn: cannot open checkpoint: " + path);
  nlohmann::json j;
  in >> j;
  if (j.value("format", "") != "ivdg-mlp-v1")
    throw std::runtime_error("nn: unrecognized checkpoint format in " + path);
  MlpModel m;
  m.layer_dims = j.at("layer_dims").get<std::vector<int>>();
  check_architecture(m.layer_dims);
  m.lineage = j.value("lineage", "");
  const auto& layers = j.at("layers");
  if (layers.size() != m.layer_dims.size() - 1)
    throw std::runtime_error("nn: checkpoint layer count mismatch in " + path);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const int fan_in = m.layer_dims[l];
    const int fan_out = m.layer_dims[l + 1];
    const auto w_flat = layers[l].at("w").get<std::vector<double>>();
    const auto b = layers[l].at("b").get<std::vector<double>>();
    if (w_flat.size() != static_cast<std::size_t>(fan_in) * static_cast<std::size_t>(fan_out) ||
        b.size() != static_cast<std::size_t>(fan_out))
      throw std::runtime_error("nn: checkpoint layer shape mismatch in " + path);
    Eigen::MatrixXd w(fan_in, fan_out);
    for (int i = 0; i < fan_in; ++i)
      for (int jj = 0; jj < fan_out; ++jj)
        w(i, jj) = w_flat[static_cast<std::size_t>(i) * static_cast<std::size_t>(fan_out) +
                          static_cast<std::size_t>(jj)];
    m.weights.push_back(std::move(w));
    m.biases.push_back(Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size())));
  }
  m.revision = next_revision();
  return m;
}

}  // namespace ivdg::nn
