#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ivdg/nn.hpp"

using namespace ivdg;

namespace {

Eigen::MatrixXd random_batch(int rows, int cols, std::uint64_t seed) {
  rng::Stream s(seed);
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = s.normal();
  return m;
}

Eigen::VectorXi random_labels(int rows, int n_classes, std::uint64_t seed) {
  rng::Stream s(seed);
  Eigen::VectorXi y(rows);
  for (int i = 0; i < rows; ++i)
    y(i) = static_cast<int>(s.below(static_cast<std::uint64_t>(n_classes)));
  return y;
}

double ce_loss_of(const nn::MlpModel& m, const Eigen::MatrixXd& x, const Eigen::VectorXi& y) {
  return nn::cross_entropy(nn::forward(m, x), y).loss;
}

}  // namespace

TEST_CASE("init: shapes, bounds, zero biases, determinism") {
  rng::Stream s1(5), s2(5);
  const auto m1 = nn::init_mlp({6, 4, 3}, s1, "test");
  const auto m2 = nn::init_mlp({6, 4, 3}, s2, "test");
  REQUIRE(m1.weights.size() == 2);
  CHECK(m1.weights[0].rows() == 6);
  CHECK(m1.weights[0].cols() == 4);
  CHECK(m1.weights[1].rows() == 4);
  CHECK(m1.weights[1].cols() == 3);
  CHECK(m1.weights[0].cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 6.0));
  CHECK(m1.weights[1].cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 4.0));
  CHECK(m1.biases[0].cwiseAbs().maxCoeff() == 0.0);
  CHECK(m1.weights[0] == m2.weights[0]);
  CHECK(m1.weights[1] == m2.weights[1]);
  CHECK(m1.revision != m2.revision);  // identity stamps are unique
  rng::Stream bad(1);
  CHECK_THROWS_AS(nn::init_mlp({4}, bad, ""), std::invalid_argument);
  CHECK_THROWS_AS(nn::init_mlp({4, 0, 2}, bad, ""), std::invalid_argument);
}

TEST_CASE("forward: single affine layer is exactly linear") {
  rng::Stream s(9);
  auto m = nn::init_mlp({2, 2}, s, "");
  m.weights[0] << 1.0, 0.0, 0.0, 1.0;
  m.biases[0] << 0.5, -0.5;
  Eigen::MatrixXd x(1, 2);
  x << -3.0, 4.0;  // negatives must pass through untouched (no ReLU on output)
  const Eigen::MatrixXd out = nn::forward(m, x);
  CHECK(out(0, 0) == -2.5);
  CHECK(out(0, 1) == 3.5);
}

TEST_CASE("forward: hidden ReLU clamps negative pre-activations") {
  rng::Stream s(10);
  auto m = nn::init_mlp({1, 2, 1}, s, "");
  m.weights[0] << 1.0, -1.0;  // hidden pre-acts: (x, -x)
  m.biases[0].setZero();
  m.weights[1] << 1.0, 1.0;   // output: relu(x) + relu(-x) = |x|
  m.biases[1].setZero();
  Eigen::MatrixXd x(3, 1);
  x << -2.0, 0.0, 5.0;
  const Eigen::MatrixXd out = nn::forward(m, x);
  CHECK(out(0, 0) == 2.0);
  CHECK(out(1, 0) == 0.0);
  CHECK(out(2, 0) == 5.0);
}

TEST_CASE("forward validates the batch") {
  rng::Stream s(11);
  const auto m = nn::init_mlp({3, 2}, s, "");
  Eigen::MatrixXd wrong(2, 4);
  wrong.setZero();
  CHECK_THROWS_AS(nn::forward(m, wrong), std::invalid_argument);
  Eigen::MatrixXd empty(0, 3);
  CHECK_THROWS_AS(nn::forward(m, empty), std::invalid_argument);
}

TEST_CASE("cross entropy: symmetric logits give log(n_classes)") {
  Eigen::MatrixXd logits = Eigen::MatrixXd::Zero(4, 2);
  const auto ce = nn::cross_entropy(logits, random_labels(4, 2, 12));
  CHECK(ce.loss == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  // Gradient rows: softmax - onehot, scaled by 1/batch.
  for (int i = 0; i < 4; ++i) {
    CHECK(std::abs(ce.d_logits.row(i).sum()) < 1e-15);
    CHECK(ce.d_logits.cwiseAbs()(i, 0) == doctest::Approx(0.125).epsilon(1e-12));
  }
}

TEST_CASE("cross entropy is stable under extreme logits") {
  Eigen::MatrixXd logits(2, 2);
  logits << 1000.0, 0.0, 0.0, 1000.0;
  Eigen::VectorXi y(2);
  y << 0, 1;  // the confident class is correct
  const auto ce = nn::cross_entropy(logits, y);
  CHECK(std::isfinite(ce.loss));
  CHECK(ce.loss < 1e-300);
  Eigen::VectorXi wrong(2);
  wrong << 1, 0;
  const auto bad = nn::cross_entropy(logits, wrong);
  CHECK(bad.loss == doctest::Approx(1000.0).epsilon(1e-12));
}

TEST_CASE("cross entropy validates labels") {
  Eigen::MatrixXd logits = Eigen::MatrixXd::Zero(2, 3);
  Eigen::VectorXi y(2);
  y << 0, 3;
  CHECK_THROWS_AS(nn::cross_entropy(logits, y), std::invalid_argument);
  y << -1, 0;
  CHECK_THROWS_AS(nn::cross_entropy(logits, y), std::invalid_argument);
  Eigen::VectorXi short_y(1);
  short_y << 0;
  CHECK_THROWS_AS(nn::cross_entropy(logits, short_y), std::invalid_argument);
}

TEST_CASE("backward gradients match finite differences through cross entropy") {
  const double h = 1e-5;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    rng::Stream s(700 + seed);
    nn::MlpModel m = nn::init_mlp({5, 4, 3}, s, "fd");
    const Eigen::MatrixXd x = random_batch(7, 5, 800 + seed);
    const Eigen::VectorXi y = random_labels(7, 3, 900 + seed);

    nn::ForwardCache cache;
    const Eigen::MatrixXd logits = nn::forward(m, x, &cache);
    const auto ce = nn::cross_entropy(logits, y);
    const auto grads = nn::backward(m, cache, ce.d_logits);

    for (std::size_t l = 0; l < m.weights.size(); ++l) {
      for (Eigen::Index i = 0; i < m.weights[l].rows(); ++i)
        for (Eigen::Index j = 0; j < m.weights[l].cols(); ++j) {
          nn::MlpModel mp = m, mm = m;
          mp.weights[l](i, j) += h;
          mm.weights[l](i, j) -= h;
          const double fd = (ce_loss_of(mp, x, y) - ce_loss_of(mm, x, y)) / (2.0 * h);
          const double g = grads.d_weights[l](i, j);
          worst = std::max(worst, std::abs(fd - g) / std::max({1e-6, std::abs(fd), std::abs(g)}));
        }
      for (Eigen::Index i = 0; i < m.biases[l].size(); ++i) {
        nn::MlpModel mp = m, mm = m;
        mp.biases[l](i) += h;
        mm.biases[l](i) -= h;
        const double fd = (ce_loss_of(mp, x, y) - ce_loss_of(mm, x, y)) / (2.0 * h);
        const double g = grads.d_biases[l](i);
        worst = std::max(worst, std::abs(fd - g) / std::max({1e-6, std::abs(fd), std::abs(g)}));
      }
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("backward input gradient matches finite differences") {
  rng::Stream s(13);
  nn::MlpModel m = nn::init_mlp({4, 3, 2}, s, "");
  const Eigen::MatrixXd x0 = random_batch(5, 4, 14);
  const Eigen::VectorXi y = random_labels(5, 2, 15);
  nn::ForwardCache cache;
  const auto ce = nn::cross_entropy(nn::forward(m, x0, &cache), y);
  const auto grads = nn::backward(m, cache, ce.d_logits);
  REQUIRE(grads.d_input.rows() == 5);
  REQUIRE(grads.d_input.cols() == 4);
  const double h = 1e-5;
  double worst = 0.0;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 4; ++j) {
      Eigen::MatrixXd xp = x0, xm = x0;
      xp(i, j) += h;
      xm(i, j) -= h;
      const double fd = (ce_loss_of(m, xp, y) - ce_loss_of(m, xm, y)) / (2.0 * h);
      worst = std::max(worst,
                       std::abs(fd - grads.d_input(i, j)) /
                           std::max({1e-6, std::abs(fd), std::abs(grads.d_input(i, j))}));
    }
  CHECK(worst < 1e-4);
}

TEST_CASE("stale forward caches are rejected") {
  rng::Stream s(16);
  nn::MlpModel m = nn::init_mlp({3, 2}, s, "");
  const Eigen::MatrixXd x = random_batch(4, 3, 17);
  const Eigen::VectorXi y = random_labels(4, 2, 18);
  nn::ForwardCache cache;
  const auto ce = nn::cross_entropy(nn::forward(m, x, &cache), y);
  const auto grads = nn::backward(m, cache, ce.d_logits);
  const nn::MlpModel updated = nn::sgd_step(m, grads, {0.1, 4, 0.0});
  CHECK_THROWS_AS(nn::backward(updated, cache, ce.d_logits), std::logic_error);
  CHECK_NOTHROW(nn::backward(m, cache, ce.d_logits));  // original still valid
}

TEST_CASE("sgd step applies w <- w - lr * g exactly and bumps the revision") {
  rng::Stream s(19);
  nn::MlpModel m = nn::init_mlp({2, 2}, s, "");
  nn::Gradients g;
  g.d_weights = {Eigen::MatrixXd::Constant(2, 2, 1.0)};
  g.d_biases = {Eigen::VectorXd::Constant(2, 2.0)};
  const auto before_w = m.weights[0];
  const auto updated = nn::sgd_step(m, g, {0.25, 1, 0.0});
  CHECK((updated.weights[0] - (before_w.array() - 0.25).matrix()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((updated.biases[0] - Eigen::VectorXd::Constant(2, -0.5)).cwiseAbs().maxCoeff() == 0.0);
  CHECK(updated.revision != m.revision);
  CHECK(m.weights[0] == before_w);  // input model untouched

  nn::Gradients bad;
  bad.d_weights = {Eigen::MatrixXd::Zero(3, 2)};
  bad.d_biases = {Eigen::VectorXd::Zero(2)};
  CHECK_THROWS_AS(nn::sgd_step(m, bad, {0.1, 1, 0.0}), std::invalid_argument);
}

TEST_CASE("gradient descent drives a quadratic to its minimum") {
  // Model: out = w x + b on the single example x = 1 with squared loss
  // (out - 3)^2. The sum s = w + b - 3 contracts by 0.6 per step, so after
  // 60 steps |s| <= |s0| * 0.6^60 < 1e-12.
  rng::Stream s(20);
  nn::MlpModel m = nn::init_mlp({1, 1}, s, "");
  Eigen::MatrixXd x(1, 1);
  x << 1.0;
  for (int step = 0; step < 60; ++step) {
    nn::ForwardCache cache;
    const Eigen::MatrixXd out = nn::forward(m, x, &cache);
    Eigen::MatrixXd d_out(1, 1);
    d_out << 2.0 * (out(0, 0) - 3.0);
    const auto grads = nn::backward(m, cache, d_out);
    m = nn::sgd_step(m, grads, {0.1, 1, 0.0});
  }
  CHECK(std::abs(nn::forward(m, x)(0, 0) - 3.0) < 1e-10);
}

TEST_CASE("momentum optimizer matches the hand recursion") {
  rng::Stream s(21);
  nn::MlpModel m = nn::init_mlp({1, 1}, s, "");
  m.weights[0](0, 0) = 1.0;
  m.biases[0](0) = 0.0;
  nn::SgdConfig cfg{0.1, 1, 0.5};
  nn::SgdOptimizer opt(cfg);
  nn::Gradients g;
  g.d_weights = {Eigen::MatrixXd::Constant(1, 1, 1.0)};
  g.d_biases = {Eigen::VectorXd::Zero(1)};
  // v1 = 1, w1 = 1 - 0.1 = 0.9; v2 = 0.5 + 1 = 1.5, w2 = 0.9 - 0.15 = 0.75.
  auto m1 = opt.step(m, g);
  CHECK(m1.weights[0](0, 0) == doctest::Approx(0.9).epsilon(1e-15));
  auto m2 = opt.step(m1, g);
  CHECK(m2.weights[0](0, 0) == doctest::Approx(0.75).epsilon(1e-15));
  // Zero momentum reduces to the plain step.
  nn::SgdOptimizer plain({0.1, 1, 0.0});
  auto p1 = plain.step(m, g);
  CHECK(p1.weights[0](0, 0) == doctest::Approx(0.9).epsilon(1e-15));
  auto p2 = plain.step(p1, g);
  CHECK(p2.weights[0](0, 0) == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  rng::Stream s(22);
  const auto m = nn::init_mlp({7, 5, 2}, s, "ckpt-test");
  const auto path = std::filesystem::temp_directory_path() / "ivdg-test-mlp.json";
  nn::save_mlp(m, path.string());
  const auto loaded = nn::load_mlp(path.string());
  CHECK(loaded.layer_dims == m.layer_dims);
  CHECK(loaded.lineage == m.lineage);
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    CHECK(loaded.weights[l] == m.weights[l]);
    CHECK(loaded.biases[l] == m.biases[l]);
  }
  std::filesystem::remove(path);
  CHECK_THROWS_AS(nn::load_mlp(path.string()), std::runtime_error);

  const auto bad_path = std::filesystem::temp_directory_path() / "ivdg-test-bad.json";
  std::ofstream(bad_path.string()) << "{\"format\":\"other\"}";
  CHECK_THROWS_AS(nn::load_mlp(bad_path.string()), std::runtime_error);
  std::filesystem::remove(bad_path);
}
