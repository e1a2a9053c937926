#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "test_helpers.hpp"
#include "tprop/network.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace tprop;
namespace fs = std::filesystem;

namespace {

Network tiny_network(std::uint64_t seed, ActivationKind hidden, int depth = 3,
                     Index width = 4, Index in = 5, Index out = 3) {
  RngStream rng(seed, 17);
  Network net;
  Index prev = in;
  for (int l = 1; l <= depth; ++l) {
    Index cur = (l == depth) ? out : width;
    EncoderLayer enc;
    enc.W = 0.7 * rng.gaussian_matrix(cur, prev);
    enc.activation = (l == depth) ? ActivationKind::Linear : hidden;
    net.encoders.push_back(enc);
    DecoderLayer dec;
    dec.B = 0.3 * rng.gaussian_matrix(prev, cur);
    dec.activation = (l == 1) ? ActivationKind::Linear : hidden;
    net.decoders.push_back(dec);
    prev = cur;
  }
  return net;
}

}  // namespace

TEST_CASE("layer_forward basics") {
  EncoderLayer zero{Matrix::Zero(3, 2), ActivationKind::Tanh};
  Matrix in = Matrix::Random(4, 2);
  CHECK(layer_forward(zero, in).isZero(0.0));

  EncoderLayer ident{Matrix::Identity(2, 2), ActivationKind::Linear};
  CHECK(testing::bit_equal(layer_forward(ident, in), in));

  EncoderLayer one{Matrix::Ones(1, 1), ActivationKind::Tanh};
  Matrix x(1, 1);
  x << 1.0;
  // reference tanh(1) value, independent of this library
  CHECK(layer_forward(one, x)(0, 0) == doctest::Approx(0.7615941559557649).epsilon(1e-14));
}

TEST_CASE("layer_forward rejects mismatched widths") {
  EncoderLayer layer{Matrix::Zero(3, 2), ActivationKind::Tanh};
  CHECK_THROWS_AS(layer_forward(layer, Matrix::Zero(4, 5)), DimensionError);
}

TEST_CASE("fixed_batch_norm known columns") {
  Matrix batch(2, 3);
  batch << 3.0, -2.0, 1.0,
           3.0,  2.0, 1.2;
  Matrix out = fixed_batch_norm(batch);
  CHECK(out(0, 0) == 0.0);  // constant column
  CHECK(out(1, 0) == 0.0);
  CHECK(out(0, 1) == doctest::Approx(-1.0).epsilon(1e-8));  // {-a, +a} column
  CHECK(out(1, 1) == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("fixed_batch_norm is nearly idempotent on standardized input") {
  Matrix batch(4, 1);
  batch << -1.0, 1.0, -1.0, 1.0;  // mean 0, variance 1
  Matrix out = fixed_batch_norm(batch);
  CHECK((out - batch).cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("fixed_batch_norm column means vanish on random batches") {
  for (int k = 0; k < 20; ++k) {
    RngStream rng(static_cast<std::uint64_t>(k), 4);
    Matrix out = fixed_batch_norm(rng.gaussian_matrix(7, 5));
    for (Index j = 0; j < out.cols(); ++j)
      CHECK(std::abs(out.col(j).mean()) < 1e-12);
  }
}

TEST_CASE("fixed_batch_norm rejects single-row batches") {
  CHECK_THROWS_AS(fixed_batch_norm(Matrix::Zero(1, 3)), DegenerateBatchError);
}

TEST_CASE("softmax_cross_entropy analytic cases") {
  Matrix uniform = Matrix::Zero(2, 10);
  auto [loss_u, grad_u] = softmax_cross_entropy(uniform, {0, 7});
  CHECK(loss_u == doctest::Approx(std::log(10.0)).epsilon(1e-12));
  for (Index i = 0; i < grad_u.rows(); ++i)
    CHECK(std::abs(grad_u.row(i).sum()) < 1e-15);

  Matrix saturated(1, 2);
  saturated << 50.0, 0.0;
  auto [loss_s, grad_s] = softmax_cross_entropy(saturated, {0});
  CHECK(loss_s < 1e-20);
  CHECK(grad_s.cwiseAbs().maxCoeff() < 1e-20);

  Matrix two(1, 2);
  two << 1.0, 0.0;
  auto [loss_t, grad_t] = softmax_cross_entropy(two, {0});
  CHECK(loss_t == doctest::Approx(0.3132616875182228).epsilon(1e-12));  // -ln(e/(e+1))
}

TEST_CASE("softmax_cross_entropy rejects bad labels") {
  CHECK_THROWS_AS(softmax_cross_entropy(Matrix::Zero(1, 3), {3}), InvalidLabelError);
  CHECK_THROWS_AS(softmax_cross_entropy(Matrix::Zero(1, 3), {-1}), InvalidLabelError);
}

TEST_CASE("softmax_cross_entropy gradient matches finite differences") {
  RngStream rng(9, 5);
  Matrix logits = rng.gaussian_matrix(4, 6);
  std::vector<int> labels{1, 0, 5, 3};
  auto [loss, grad] = softmax_cross_entropy(logits, labels);
  Matrix fd = testing::fd_gradient(
      [&](const Matrix& z) { return softmax_cross_entropy(z, labels).first; }, logits);
  CHECK(testing::rel_err(grad, fd) < 1e-6);
}

TEST_CASE("layer_jacobian closed-form cases") {
  RngStream rng(3, 6);
  Matrix w = rng.gaussian_matrix(3, 4);
  Vector h = rng.gaussian_matrix(4, 1);
  CHECK(testing::bit_equal(layer_jacobian(w, ActivationKind::Linear, h), w));

  Matrix w1(1, 1);
  w1 << 1.0;
  Vector h0 = Vector::Zero(1);
  CHECK(layer_jacobian(w1, ActivationKind::Tanh, h0)(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("layer_jacobian matches finite differences (tanh and linear)") {
  for (int k = 0; k < 50; ++k) {
    RngStream rng(static_cast<std::uint64_t>(k), 7);
    Matrix w = rng.gaussian_matrix(4, 3);
    Vector h = rng.gaussian_matrix(3, 1);
    for (ActivationKind kind : {ActivationKind::Linear, ActivationKind::Tanh}) {
      Matrix jac = layer_jacobian(w, kind, h);
      Matrix fd = testing::fd_jacobian(
          [&](const Vector& x) -> Vector {
            Matrix out = eval_layer(w, kind, x.transpose()).out;
            return out.row(0).transpose();
          },
          h);
      CHECK(testing::rel_err(jac, fd) < 1e-5);
    }
  }
}

TEST_CASE("layer_jacobian with frozen batch-norm statistics") {
  for (int k = 0; k < 20; ++k) {
    RngStream rng(static_cast<std::uint64_t>(k), 8);
    Matrix w = rng.gaussian_matrix(4, 3);
    Matrix batch = rng.gaussian_matrix(6, 3);
    LayerEval ev = eval_layer(w, ActivationKind::TanhBN, batch);
    Vector h = batch.row(2).transpose();
    Vector scale = ev.bn_scale;
    Matrix jac = layer_jacobian(w, ActivationKind::TanhBN, h, &scale);
    // oracle: BN statistics held constant while the sample moves
    Matrix fd = testing::fd_jacobian(
        [&](const Vector& x) -> Vector {
          Vector act = (w * x).array().tanh();
          return act.cwiseProduct(scale);
        },
        h);
    CHECK(testing::rel_err(jac, fd) < 1e-5);
  }
}

TEST_CASE("layer_jacobian without batch context is an error for BN layers") {
  Matrix w = Matrix::Identity(2, 2);
  CHECK_THROWS_AS(layer_jacobian(w, ActivationKind::TanhBN, Vector::Zero(2)),
                  MissingContextError);
}

TEST_CASE("forward pass is bit-deterministic") {
  Network net = tiny_network(21, ActivationKind::TanhBN);
  RngStream rng(22, 9);
  Matrix batch = rng.gaussian_matrix(8, 5);
  BatchActivations a = forward_pass(net, batch);
  BatchActivations b = forward_pass(net, batch);
  for (std::size_t l = 0; l < a.evals.size(); ++l)
    CHECK(testing::bit_equal(a.evals[l].out, b.evals[l].out));
}

TEST_CASE("TanhBN forward rejects single-sample batches") {
  Network net = tiny_network(21, ActivationKind::TanhBN);
  CHECK_THROWS_AS(forward_pass(net, Matrix::Zero(1, 5)), DegenerateBatchError);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  Network net = tiny_network(33, ActivationKind::TanhBN);
  net.decoders[1].trainable = true;
  fs::path dir = fs::temp_directory_path() / "tprop_ckpt_test";
  fs::create_directories(dir);
  const std::string p1 = (dir / "a.bin").string();
  const std::string p2 = (dir / "b.bin").string();

  save_checkpoint(p1, net);
  Network loaded = load_checkpoint(p1);
  REQUIRE(loaded.depth() == net.depth());
  for (int l = 0; l < net.depth(); ++l) {
    CHECK(testing::bit_equal(loaded.encoders[l].W, net.encoders[l].W));
    CHECK(testing::bit_equal(loaded.decoders[l].B, net.decoders[l].B));
    CHECK(loaded.encoders[l].activation == net.encoders[l].activation);
    CHECK(loaded.decoders[l].activation == net.decoders[l].activation);
  }

  // save -> load -> save must produce identical bytes
  save_checkpoint(p2, loaded);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  CHECK(!b1.empty());
}

TEST_CASE("checkpoint with bad magic is rejected") {
  fs::path dir = fs::temp_directory_path() / "tprop_ckpt_test";
  fs::create_directories(dir);
  const std::string p = (dir / "bad.bin").string();
  std::ofstream out(p, std::ios::binary);
  out << "NOTPROP garbage";
  out.close();
  CHECK_THROWS(load_checkpoint(p));
}
