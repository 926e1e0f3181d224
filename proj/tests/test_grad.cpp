// Copyright 2026 The rvqa Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>

#include "doctest.h"
#include "rvqa/grad.hpp"
#include "synthetic.hpp"

using namespace rvqa;

namespace {

// Redraws the input until no ReLU pre-activation sits within `margin` of the
// kink, where central differences are meaningless.
Matrix relu_safe_input(Sequential& model, std::size_t rows, std::size_t cols, std::uint64_t seed,
                       double margin = 1e-3) {
  for (std::uint64_t s = seed;; ++s) {
    Matrix x = testing::random_matrix(rows, cols, s);
    ForwardContext ctx;
    model.forward(x, ctx);
    bool safe = true;
    for (std::size_t i = 0; i < model.size(); ++i) {
      if (auto* r = dynamic_cast<Relu*>(&model.layer(i)); r && r->min_abs_input() < margin) safe = false;
    }
    if (safe) return x;
  }
}

// Direct "same" convolution, independent of the library's im2col path.
Matrix reference_conv(const Matrix& x, const Matrix& w, const Matrix& b, std::size_t kernel,
                      std::size_t stride) {
  const std::size_t t_in = x.rows(), in = x.cols(), out = w.rows();
  const std::size_t t_out = (t_in + stride - 1) / stride;
  const long pad = static_cast<long>((kernel - 1) / 2);
  Matrix y(t_out, out);
  for (std::size_t t = 0; t < t_out; ++t) {
    for (std::size_t o = 0; o < out; ++o) {
      double acc = b(0, o);
      for (std::size_t c = 0; c < in; ++c) {
        for (std::size_t j = 0; j < kernel; ++j) {
          const long src = static_cast<long>(t * stride + j) - pad;
          if (src >= 0 && src < static_cast<long>(t_in)) acc += w(o, c * kernel + j) * x(src, c);
        }
      }
      y(t, o) = acc;
    }
  }
  return y;
}

}  // namespace

TEST_CASE("identity linear layer") {
  Rng rng(1);
  Linear lin(3, 3, rng);
  lin.weight().value = Matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Matrix x(2, 3, {1, -2, 3, 0.5, 0, -1});
  ForwardContext ctx;
  CHECK(lin.forward(x, ctx) == x);
  const Matrix g(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(lin.backward(g) == g);
}

TEST_CASE("relu forward and backward") {
  Relu relu;
  ForwardContext ctx;
  CHECK(relu.forward(Matrix(1, 3, {-1, 0, 2}), ctx) == Matrix(1, 3, {0, 0, 2}));
  CHECK(relu.backward(Matrix(1, 3, {5, 5, 5})) == Matrix(1, 3, {0, 0, 5}));
}

TEST_CASE("linear forward by hand") {
  Rng rng(1);
  Linear lin(2, 1, rng);
  lin.weight().value = Matrix(2, 1, {1, 1});
  lin.bias().value = Matrix(1, 1, {0});
  ForwardContext ctx;
  CHECK(lin.forward(Matrix(1, 2, {3, 4}), ctx)(0, 0) == 7.0);
}

TEST_CASE("bias gradient under half squared error is output minus target") {
  Rng rng(2);
  Sequential model;
  model.emplace<Linear>(3, 2, rng);
  const Matrix x = testing::random_matrix(4, 3, 5);
  const Matrix t = testing::random_matrix(4, 2, 6);
  ForwardContext ctx;
  const Matrix y = model.forward(x, ctx);
  backward(model, x, LossKind::kHalfSse, t, ctx);
  const Matrix& gb = model.parameters()[1]->grad;
  for (std::size_t j = 0; j < 2; ++j) {
    double expected = 0;
    for (std::size_t b = 0; b < 4; ++b) expected += y(b, j) - t(b, j);
    CHECK(gb(0, j) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("zero loss gives zero gradients") {
  Rng rng(3);
  Sequential model;
  model.emplace<Linear>(4, 3, rng);
  model.emplace<Relu>();
  model.emplace<Linear>(3, 2, rng);
  const Matrix x = testing::random_matrix(5, 4, 7);
  ForwardContext ctx;
  const Matrix y = model.forward(x, ctx);
  const auto r = backward(model, x, LossKind::kMse, y, ctx);
  CHECK(r.loss == 0.0);
  for (Parameter* p : model.parameters()) {
    for (double g : p->grad.data()) CHECK(g == 0.0);
  }
}

TEST_CASE("loss values") {
  const Matrix y(2, 2, {1, 2, 3, 4}), t(2, 2, {0, 2, 3, 2});
  CHECK(compute_loss(LossKind::kMse, y, t).value == doctest::Approx(2.5));
  CHECK(compute_loss(LossKind::kHalfSse, y, t).value == doctest::Approx(2.5));
  const Matrix logits(1, 3, {0, 0, 0});
  CHECK(compute_loss(LossKind::kCrossEntropy, logits, Matrix(1, 1, {2})).value ==
        doctest::Approx(std::log(3.0)));
  CHECK_THROWS_AS(compute_loss(LossKind::kMse, Matrix(1, 1, {NAN}), Matrix(1, 1)), NumericError);
}

TEST_CASE("conv1d matches direct convolution") {
  for (std::size_t stride : {1u, 2u, 3u}) {
    for (std::size_t kernel : {1u, 3u, 4u, 5u}) {
      Rng rng(10 + kernel + stride);
      Conv1d conv(3, 4, kernel, stride, rng);
      auto params = conv.parameters();
      params[1]->value = testing::random_matrix(1, 4, 99);
      const Matrix x = testing::random_matrix(11, 3, kernel * 7 + stride);
      ForwardContext ctx;
      const Matrix y = conv.forward(x, ctx);
      const Matrix ref = reference_conv(x, params[0]->value, params[1]->value, kernel, stride);
      REQUIRE(y.rows() == ref.rows());
      for (std::size_t i = 0; i < y.size(); ++i) {
        CHECK(y.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("gradient check for every layer kind") {
  Rng rng(4);
  SUBCASE("linear + relu stack, mse") {
    Sequential m;
    m.emplace<Linear>(5, 8, rng);
    m.emplace<Relu>();
    m.emplace<Linear>(8, 3, rng);
    const Matrix x = relu_safe_input(m, 6, 5, 100);
    const auto r = grad_check(m, x, LossKind::kMse, testing::random_matrix(6, 3, 8));
    CHECK(r.max_relative_error < 1e-4);
    CHECK(r.checked == 5 * 8 + 8 + 8 * 3 + 3 + 6 * 5);
  }
  SUBCASE("conv stack with stride") {
    Sequential m;
    m.emplace<Conv1d>(3, 4, 3, 1, rng);
    m.emplace<Relu>();
    m.emplace<Conv1d>(4, 2, 4, 2, rng);
    const Matrix x = relu_safe_input(m, 9, 3, 200);
    const auto r = grad_check(m, x, LossKind::kHalfSse, testing::random_matrix(5, 2, 9));
    CHECK(r.max_relative_error < 1e-4);
  }
  SUBCASE("softmax with cross-entropy") {
    Sequential m;
    m.emplace<Linear>(4, 5, rng);
    m.emplace<Softmax>();
    m.emplace<Linear>(5, 3, rng);
    const auto r = grad_check(m, testing::random_matrix(7, 4, 10), LossKind::kCrossEntropy,
                              Matrix(7, 1, {0, 1, 2, 0, 1, 2, 2}));
    CHECK(r.max_relative_error < 1e-4);
  }
  SUBCASE("gumbel softmax with frozen noise") {
    Sequential m;
    m.emplace<Linear>(4, 6, rng);
    auto& g = m.emplace<GumbelSoftmax>(0.7);
    m.emplace<Linear>(6, 2, rng);
    Rng noise_rng(11);
    g.fix_noise(sample_gumbel(5, 6, noise_rng));
    const auto r = grad_check(m, testing::random_matrix(5, 4, 12), LossKind::kMse,
                              testing::random_matrix(5, 2, 13));
    CHECK(r.max_relative_error < 1e-4);
  }
}

TEST_CASE("quadratic loss gradient is tight") {
  Rng rng(5);
  Sequential m;
  m.emplace<Linear>(3, 2, rng);
  const auto r = grad_check(m, testing::random_matrix(4, 3, 14), LossKind::kHalfSse,
                            testing::random_matrix(4, 2, 15));
  CHECK(r.max_relative_error < 1e-8);
}

TEST_CASE("frozen parameters are skipped and get no updates") {
  Rng rng(6);
  Sequential m;
  auto& lin = m.emplace<Linear>(3, 2, rng);
  lin.weight().requires_grad = false;
  const auto r = grad_check(m, testing::random_matrix(4, 3, 1), LossKind::kMse,
                            testing::random_matrix(4, 2, 2), 1e-5, false);
  CHECK(r.checked == 2);
  const Matrix before = lin.weight().value;
  TrainConfig cfg;
  cfg.epochs = 3;
  optimize(m, testing::random_matrix(20, 3, 3), testing::random_matrix(20, 2, 4), LossKind::kMse, cfg);
  CHECK(lin.weight().value == before);
}

TEST_CASE("gumbel softmax rows") {
  Rng rng(7);
  const Matrix logits = testing::random_matrix(10, 6, 16);
  const Matrix y = gumbel_softmax(logits, 0.5, rng);
  for (std::size_t r = 0; r < y.rows(); ++r) {
    double s = 0;
    for (double v : y.row(r)) s += v;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  const Matrix zero_noise(1, 4, 0.0);
  const Matrix uniform = softmax_rows(Matrix(1, 4, 0.0), 1.0, &zero_noise);
  for (double v : uniform.data()) CHECK(v == doctest::Approx(0.25));
  const Matrix sharp = gumbel_softmax(logits, 1e-3, rng);
  for (std::size_t r = 0; r < sharp.rows(); ++r) {
    double top = 0;
    for (double v : sharp.row(r)) top = std::max(top, v);
    CHECK(top > 0.999);
  }
}

TEST_CASE("training recovers y = 3x") {
  Rng rng(8);
  Sequential m;
  m.emplace<Linear>(1, 1, rng);
  Matrix x(64, 1), y(64, 1);
  for (std::size_t i = 0; i < 64; ++i) {
    x(i, 0) = -1.0 + 2.0 * i / 63.0;
    y(i, 0) = 3.0 * x(i, 0);
  }
  TrainConfig cfg;
  cfg.optimizer.lr = 0.05;
  cfg.batch = 16;
  cfg.epochs = 400;
  optimize(m, x, y, LossKind::kMse, cfg);
  CHECK(std::abs(m.parameters()[0]->value(0, 0) - 3.0) < 1e-4);
  CHECK(std::abs(m.parameters()[1]->value(0, 0)) < 1e-4);
}

TEST_CASE("zero learning rate and zero gradients leave parameters unchanged") {
  Rng rng(9);
  Sequential m;
  m.emplace<Linear>(3, 2, rng);
  const auto before = m.snapshot();
  TrainConfig cfg;
  cfg.optimizer.lr = 0.0;
  cfg.epochs = 2;
  optimize(m, testing::random_matrix(10, 3, 1), testing::random_matrix(10, 2, 2), LossKind::kMse, cfg);
  CHECK(m.snapshot() == before);
  for (auto kind : {OptimizerConfig::Kind::kAdam, OptimizerConfig::Kind::kSgd}) {
    Optimizer opt({kind, 0.1});
    m.zero_grad();
    opt.step(m.parameters());
    CHECK(m.snapshot() == before);
  }
}

TEST_CASE("training is deterministic per seed") {
  auto run = [](std::uint64_t seed) {
    Rng rng(1);
    Sequential m;
    m.emplace<Linear>(3, 4, rng);
    m.emplace<Relu>();
    m.emplace<Linear>(4, 2, rng);
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.batch = 7;
    cfg.epochs = 5;
    optimize(m, testing::random_matrix(30, 3, 1), testing::random_matrix(30, 2, 2), LossKind::kMse, cfg);
    return m.snapshot();
  };
  CHECK(run(5) == run(5));
  CHECK(run(5) != run(6));
}

TEST_CASE("keep_best restores the best full-data loss") {
  Rng rng(10);
  Sequential m;
  m.emplace<Linear>(2, 1, rng);
  const Matrix x = testing::random_matrix(20, 2, 3), y = testing::random_matrix(20, 1, 4);
  TrainConfig cfg;
  cfg.optimizer.lr = 5.0;  // unstable on purpose
  cfg.optimizer.kind = OptimizerConfig::Kind::kSgd;
  cfg.epochs = 4;
  cfg.keep_best = true;
  try {
    const auto log = optimize(m, x, y, LossKind::kMse, cfg);
    double best = log.full_loss[0];
    for (double l : log.full_loss) best = std::min(best, l);
    CHECK(log.final_loss == best);
    ForwardContext ctx;
    CHECK(compute_loss(LossKind::kMse, m.forward(x, ctx), y).value == doctest::Approx(best));
  } catch (const NumericError&) {
    // divergence is reported as an error, never as a silent NaN model
  }
}

TEST_CASE("shape mismatch names the layer") {
  Rng rng(11);
  Sequential m;
  m.emplace<Linear>(3, 4, rng);
  m.emplace<Linear>(5, 2, rng);
  ForwardContext ctx;
  CHECK_THROWS_WITH_AS(m.forward(Matrix(2, 3), ctx), doctest::Contains("layer 1"), UsageError);
}

TEST_CASE("checkpoint round trip is bit-stable") {
  Rng rng(12);
  Sequential m;
  m.emplace<Conv1d>(3, 4, 3, 2, rng);
  m.emplace<Relu>();
  m.emplace<Linear>(4, 2, rng);
  const auto bytes = encode_checkpoint(m, {{"note", "x"}});
  Checkpoint c = decode_checkpoint(bytes);
  CHECK(c.meta["note"] == "x");
  CHECK(encode_checkpoint(c.model, {{"note", "x"}}) == bytes);
  const Matrix x = testing::random_matrix(6, 3, 1);
  ForwardContext ctx;
  Matrix a = m.forward(x, ctx);
  const Matrix b = c.model.forward(x, ctx);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-6));
  auto broken = bytes;
  broken.resize(broken.size() - 3);
  CHECK_THROWS_AS(decode_checkpoint(broken), DataError);
}
