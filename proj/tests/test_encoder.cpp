#include "doctest.h"

#include <cmath>

#include "helpers.hpp"
#include "pauc/encoder.hpp"

using namespace pauc;

TEST_CASE("init_mlp shapes and init range") {
  RngStream rng(1, 1);
  MlpParams p = init_mlp({7, 16, 4}, rng);
  REQUIRE(p.num_layers() == 2);
  CHECK(p.input_dim() == 7);
  CHECK(p.embed_dim() == 4);
  CHECK(p.weights[0].rows() == 7);
  CHECK(p.weights[0].cols() == 16);
  CHECK(p.biases[0].size() == 16);
  CHECK(p.weights[1].rows() == 16);
  CHECK(p.weights[1].cols() == 4);
  CHECK(p.biases[1].size() == 4);
  CHECK(p.dims() == std::vector<int>{7, 16, 4});

  double bound0 = 1.0 / std::sqrt(7.0);
  CHECK(p.weights[0].cwiseAbs().maxCoeff() <= bound0);
  CHECK(p.biases[0].cwiseAbs().maxCoeff() <= bound0);
  double bound1 = 1.0 / std::sqrt(16.0);
  CHECK(p.weights[1].cwiseAbs().maxCoeff() <= bound1);
  // A 7x16 uniform draw should not be degenerate.
  CHECK(p.weights[0].cwiseAbs().maxCoeff() > 0.1 * bound0);

  CHECK_THROWS_AS(init_mlp({5}, rng), ConfigError);
  CHECK_THROWS_AS(init_mlp({5, 0, 3}, rng), ConfigError);
}

TEST_CASE("forward produces unit rows and matches a hand-rolled network") {
  RngStream rng(2, 1);
  MlpParams p = init_mlp({3, 5, 2}, rng);
  Matrix x = testutil::random_matrix(6, 3, rng);

  Matrix emb = forward(p, x);
  REQUIRE(emb.rows() == 6);
  REQUIRE(emb.cols() == 2);
  for (int i = 0; i < 6; ++i) CHECK(emb.row(i).norm() == doctest::Approx(1.0).epsilon(1e-12));

  // Same arithmetic, written out directly.
  Matrix h = ((x * p.weights[0]).rowwise() + p.biases[0].transpose()).array().tanh();
  Matrix raw = (h * p.weights[1]).rowwise() + p.biases[1].transpose();
  for (int i = 0; i < 6; ++i) {
    Eigen::RowVectorXd expect = raw.row(i) / raw.row(i).norm();
    CHECK((emb.row(i) - expect).norm() < 1e-13);
  }

  Matrix rawout = forward(p, x, nullptr, /*normalize_output=*/false);
  CHECK((rawout - raw).norm() < 1e-13);

  ForwardCache cache;
  Matrix emb2 = forward(p, x, &cache);
  CHECK(emb2 == emb);
  REQUIRE(cache.layer_inputs.size() == 2);
  CHECK(cache.layer_inputs[0] == x);
  CHECK((cache.layer_inputs[1] - h).norm() < 1e-13);
  CHECK((cache.raw_out - raw).norm() < 1e-13);
  CHECK(cache.normalized);

  Matrix wrong = testutil::random_matrix(4, 5, rng);
  CHECK_THROWS_AS(forward(p, wrong), DimMismatchError);
}

TEST_CASE("backward matches finite differences through the normalization") {
  RngStream rng(3, 1);
  MlpParams p = init_mlp({4, 8, 6, 3}, rng);
  Matrix x = testutil::random_matrix(5, 4, rng);
  // Fixed cotangent makes the scalar loss sum(emb .* G).
  Matrix g = testutil::random_matrix(5, 3, rng);

  ForwardCache cache;
  forward(p, x, &cache);
  MlpGrads grads = backward(p, cache, g);
  REQUIRE(grads.weights.size() == 3);
  REQUIRE(grads.biases.size() == 3);

  for (int layer = 0; layer < 3; ++layer) {
    auto loss_of_w = [&](const Matrix& w) {
      MlpParams q = p;
      q.weights[static_cast<size_t>(layer)] = w;
      return (forward(q, x).array() * g.array()).sum();
    };
    Matrix fd = finite_diff_grad(loss_of_w, p.weights[static_cast<size_t>(layer)], 1e-6);
    CHECK(grad_rel_error(grads.weights[static_cast<size_t>(layer)], fd) < 1e-5);

    auto loss_of_b = [&](const Matrix& b) {
      MlpParams q = p;
      q.biases[static_cast<size_t>(layer)] = b.col(0);
      return (forward(q, x).array() * g.array()).sum();
    };
    Matrix b0 = p.biases[static_cast<size_t>(layer)];
    Matrix fd_b = finite_diff_grad(loss_of_b, b0, 1e-6);
    CHECK(grad_rel_error(grads.biases[static_cast<size_t>(layer)], fd_b) < 1e-5);
  }
}

TEST_CASE("backward without normalization is plain linear-layer calculus") {
  RngStream rng(4, 1);
  MlpParams p = init_mlp({3, 4, 2}, rng);
  Matrix x = testutil::random_matrix(4, 3, rng);
  Matrix g = testutil::random_matrix(4, 2, rng);

  ForwardCache cache;
  forward(p, x, &cache, /*normalize_output=*/false);
  MlpGrads grads = backward(p, cache, g);

  auto loss_of_w = [&](const Matrix& w) {
    MlpParams q = p;
    q.weights[1] = w;
    return (forward(q, x, nullptr, false).array() * g.array()).sum();
  };
  Matrix fd = finite_diff_grad(loss_of_w, p.weights[1], 1e-6);
  CHECK(grad_rel_error(grads.weights[1], fd) < 1e-6);
  // Last-layer weight grad has the closed form h^T g.
  Matrix h = cache.layer_inputs[1];
  CHECK((grads.weights[1] - h.transpose() * g).norm() < 1e-12);
  CHECK((grads.biases[1] - g.colwise().sum().transpose()).norm() < 1e-12);
}

TEST_CASE("sgd_step applies momentum and weight decay") {
  RngStream rng(5, 1);
  MlpParams p = init_mlp({2, 3}, rng);
  MlpParams orig = p;
  OptimizerState opt = init_optimizer(p, 0.1, 0.9, 0.01);
  REQUIRE(opt.weight_buf.size() == 1);
  CHECK(opt.weight_buf[0].isZero(0.0));

  MlpGrads g;
  g.weights.push_back(Matrix::Ones(2, 3));
  g.biases.push_back(Vector::Zero(3));

  sgd_step(p, g, opt);
  // First step: buf = g + wd*p, param -= lr*buf. Decay hits biases too.
  Matrix buf1 = Matrix::Ones(2, 3) + 0.01 * orig.weights[0];
  CHECK((p.weights[0] - (orig.weights[0] - 0.1 * buf1)).norm() < 1e-15);
  Vector bbuf1 = 0.01 * orig.biases[0];
  CHECK((p.biases[0] - (orig.biases[0] - 0.1 * bbuf1)).norm() < 1e-15);

  MlpParams after1 = p;
  sgd_step(p, g, opt);
  Matrix buf2 = 0.9 * buf1 + Matrix::Ones(2, 3) + 0.01 * after1.weights[0];
  CHECK((p.weights[0] - (after1.weights[0] - 0.1 * buf2)).norm() < 1e-15);
}

TEST_CASE("ema_update blends parameters and validates shapes") {
  RngStream rng(6, 1);
  MlpParams online = init_mlp({3, 4}, rng);
  MomentumEncoder target;
  target.params = init_mlp({3, 4}, rng);
  target.ema_coeff = 0.75;
  MlpParams before = target.params;

  ema_update(online, target);
  Matrix expect = 0.75 * before.weights[0] + 0.25 * online.weights[0];
  CHECK((target.params.weights[0] - expect).norm() < 1e-15);
  Vector expect_b = 0.75 * before.biases[0] + 0.25 * online.biases[0];
  CHECK((target.params.biases[0] - expect_b).norm() < 1e-15);

  MomentumEncoder bad;
  bad.params = init_mlp({3, 5}, rng);
  CHECK_THROWS_AS(ema_update(online, bad), ShapeMismatchError);
}

TEST_CASE("checkpoint round trip with f32 storage") {
  RngStream rng(7, 1);
  Checkpoint ck;
  ck.online = init_mlp({3, 6, 2}, rng);
  ck.momentum = init_mlp({3, 6, 2}, rng);
  ck.opt_buffers.weights = {testutil::random_matrix(3, 6, rng),
                            testutil::random_matrix(6, 2, rng)};
  ck.opt_buffers.biases = {testutil::random_matrix(6, 1, rng).col(0),
                           testutil::random_matrix(2, 1, rng).col(0)};

  std::string dir = testutil::temp_dir("encoder");
  std::string path = dir + "/model.pauck";
  save_checkpoint(ck, path);
  Checkpoint back = load_checkpoint(path);

  REQUIRE(back.online.num_layers() == 2);
  REQUIRE(back.momentum.num_layers() == 2);
  for (int l = 0; l < 2; ++l) {
    auto ul = static_cast<size_t>(l);
    CHECK((back.online.weights[ul].cast<float>() -
           ck.online.weights[ul].cast<float>()).norm() == 0.0f);
    CHECK((back.momentum.weights[ul].cast<float>() -
           ck.momentum.weights[ul].cast<float>()).norm() == 0.0f);
    CHECK((back.opt_buffers.weights[ul].cast<float>() -
           ck.opt_buffers.weights[ul].cast<float>()).norm() == 0.0f);
    CHECK((back.online.biases[ul].cast<float>() -
           ck.online.biases[ul].cast<float>()).norm() == 0.0f);
  }

  CHECK_THROWS_AS(load_checkpoint(dir + "/absent.pauck"), IoError);
}
