// tests/test_nn.cpp

// Copyright 2026  The avlip authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "avlip/nn/layers.hpp"
#include "avlip/nn/optim.hpp"
#include "avlip/nn/serialize.hpp"
#include "avlip/xvector.hpp"
#include "oracles.hpp"

using namespace avlip;
using nn::Param;

namespace {

Tensor<double> random_tensor(std::vector<int64_t> shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.normal();
  return t;
}

// Scalar readout loss sum(y * r) so backward(r) delivers dloss/dx; checks
// parameter gradients and input gradients against central differences.
void check_layer(nn::Layer<double>& layer, Tensor<double> x, uint64_t seed,
                 double tol = 2e-5) {
  Rng rng(seed);
  Tensor<double> probe = layer.forward(x, true);
  Tensor<double> readout = random_tensor(probe.shape(), rng);

  std::vector<Param<double>*> params;
  layer.collect_params(params);
  for (auto* p : params) p->zero_grad();

  auto loss_fn = [&]() {
    const Tensor<double> y = layer.forward(x, true);
    double acc = 0.0;
    for (int64_t i = 0; i < y.numel(); ++i) acc += y[i] * readout[i];
    return acc;
  };

  loss_fn();  // refresh caches, then backprop analytically
  const Tensor<double> gx = layer.backward(readout);

  if (!params.empty()) {
    int checked = 0;
    const double worst = oracles::max_grad_rel_error(params, loss_fn, rng, 60, 1e-6,
                                                     &checked);
    INFO("param rel err " << worst << " over " << checked << " coords");
    CHECK(worst < tol);
  }

  // input gradient at sampled coordinates
  double worst_in = 0.0;
  const int64_t n_probe = std::min<int64_t>(x.numel(), 40);
  for (int64_t k = 0; k < n_probe; ++k) {
    const int64_t i = static_cast<int64_t>(rng.uniform_u64(static_cast<uint64_t>(x.numel())));
    const double saved = x[i];
    const double eps = 1e-6;
    x[i] = saved + eps;
    const double up = loss_fn();
    x[i] = saved - eps;
    const double down = loss_fn();
    x[i] = saved;
    const double numeric = (up - down) / (2 * eps);
    if (std::abs(numeric) < 1e-10 && std::abs(gx[i]) < 1e-10) continue;
    worst_in = std::max(worst_in, std::abs(numeric - gx[i]) /
                                      std::max({std::abs(numeric), std::abs(gx[i]), 1e-6}));
  }
  INFO("input rel err " << worst_in);
  CHECK(worst_in < tol);
}

}  // namespace

TEST_CASE("linear layer gradients") {
  Rng rng(1);
  nn::Linear<double> layer(6, 4, rng);
  check_layer(layer, random_tensor({5, 6}, rng), 11);
}

TEST_CASE("relu gradients") {
  Rng rng(2);
  nn::Relu<double> layer;
  check_layer(layer, random_tensor({3, 7}, rng), 12);
}

TEST_CASE("batchnorm gradients across layouts") {
  Rng rng(3);
  {
    nn::BatchNorm<double> bn(5);
    check_layer(bn, random_tensor({6, 5}, rng), 13);
  }
  {
    nn::BatchNorm<double> bn(4);
    check_layer(bn, random_tensor({3, 4, 7}, rng), 14);
  }
  {
    nn::BatchNorm<double> bn(3);
    check_layer(bn, random_tensor({2, 3, 4, 5}, rng), 15);
  }
}

TEST_CASE("batchnorm eval mode uses running statistics") {
  Rng rng(4);
  nn::BatchNorm<double> bn(2);
  Tensor<double> x = random_tensor({8, 2}, rng, 3.0);
  for (int i = 0; i < 50; ++i) bn.forward(x, true);  // converge running stats
  const Tensor<double> train_out = bn.forward(x, true);
  const Tensor<double> eval_out = bn.forward(x, false);
  for (int64_t i = 0; i < x.numel(); ++i)
    CHECK(std::abs(train_out[i] - eval_out[i]) < 0.15);
  // eval is deterministic and ignores batch composition
  Tensor<double> x2 = x;
  x2(int64_t(0), int64_t(0)) += 100.0;
  const Tensor<double> eval_a = bn.forward(x, false);
  Tensor<double> sub({1, 2});
  sub(int64_t(0), int64_t(0)) = x(int64_t(1), int64_t(0));
  sub(int64_t(0), int64_t(1)) = x(int64_t(1), int64_t(1));
  const Tensor<double> eval_sub = bn.forward(sub, false);
  CHECK(eval_sub(int64_t(0), int64_t(0)) == eval_a(int64_t(1), int64_t(0)));
}

TEST_CASE("conv1d gradients: valid, same, dilated") {
  Rng rng(5);
  {
    nn::Conv1d<double> conv(3, 4, 3, 1, /*same=*/false, rng);
    check_layer(conv, random_tensor({2, 3, 9}, rng), 16);
  }
  {
    nn::Conv1d<double> conv(2, 3, 5, 1, /*same=*/true, rng);
    check_layer(conv, random_tensor({2, 2, 8}, rng), 17);
  }
  {
    nn::Conv1d<double> conv(2, 2, 3, 3, /*same=*/false, rng);  // dilation 3
    check_layer(conv, random_tensor({1, 2, 12}, rng), 18);
  }
  {
    nn::Conv1d<double> conv(1, 1, 3, 2, /*same=*/true, rng);  // dilated, padded
    check_layer(conv, random_tensor({2, 1, 7}, rng), 19);
  }
}

TEST_CASE("conv1d valid output length and TooShort") {
  Rng rng(6);
  nn::Conv1d<double> conv(2, 2, 3, 2, false, rng);  // span 5
  Tensor<double> x = random_tensor({1, 2, 5}, rng);
  CHECK(conv.forward(x, false).dim(2) == 1);
  Tensor<double> xs = random_tensor({1, 2, 4}, rng);
  CHECK_THROWS_AS(conv.forward(xs, false), TooShort);
}

TEST_CASE("conv2d gradients with stride and padding") {
  Rng rng(7);
  {
    nn::Conv2d<double> conv(2, 3, 3, 1, 1, rng);
    check_layer(conv, random_tensor({2, 2, 6, 6}, rng), 20);
  }
  {
    nn::Conv2d<double> conv(3, 2, 3, 2, 1, rng);
    check_layer(conv, random_tensor({2, 3, 7, 7}, rng), 21);
  }
  {
    nn::Conv2d<double> conv(1, 4, 1, 2, 0, rng, /*bias=*/true);
    check_layer(conv, random_tensor({3, 1, 5, 5}, rng), 22);
  }
}

TEST_CASE("conv3d gradients") {
  Rng rng(8);
  nn::Conv3dSpec spec;
  spec.kt = 3; spec.kh = 3; spec.kw = 3;
  spec.st = 1; spec.sh = 2; spec.sw = 2;
  spec.pt = 1; spec.ph = 1; spec.pw = 1;
  nn::Conv3d<double> conv(1, 2, spec, rng);
  check_layer(conv, random_tensor({2, 1, 4, 6, 6}, rng), 23);
}

TEST_CASE("spatial max pool gradients and shape") {
  Rng rng(9);
  nn::SpatialMaxPool3d<double> pool(3, 2, 1);
  Tensor<double> x = random_tensor({1, 2, 3, 8, 8}, rng);
  const Tensor<double> y = pool.forward(x, false);
  CHECK(y.shape() == std::vector<int64_t>{1, 2, 3, 4, 4});
  check_layer(pool, x, 24);
}

TEST_CASE("pooling layer gradients") {
  Rng rng(10);
  {
    nn::GlobalAvgPool2d<double> gap;
    check_layer(gap, random_tensor({3, 4, 5, 5}, rng), 25);
  }
  {
    nn::TemporalMean<double> tm;
    check_layer(tm, random_tensor({2, 6, 9}, rng), 26);
  }
  {
    nn::StatsPool<double> sp;
    check_layer(sp, random_tensor({2, 3, 11}, rng), 27);
  }
}

TEST_CASE("stats pooling values") {
  // constant frames: mean = value, std = 0 exactly
  Tensor<double> frames({1, 4, 3});  // B x T x C layout for the free function
  for (int64_t t = 0; t < 4; ++t)
    for (int64_t c = 0; c < 3; ++c) frames(int64_t(0), t, c) = 2.5 + c;
  const Tensor<double> pooled = nn::stats_pool(frames);
  REQUIRE(pooled.shape() == std::vector<int64_t>{1, 6});
  for (int64_t c = 0; c < 3; ++c) {
    CHECK(pooled(int64_t(0), c) == 2.5 + c);
    CHECK(pooled(int64_t(0), 3 + c) == 0.0);
  }

  // single frame: mean = frame, std = 0
  Tensor<double> one({2, 1, 2});
  one(int64_t(0), int64_t(0), int64_t(0)) = 7.0;
  one(int64_t(0), int64_t(0), int64_t(1)) = -3.0;
  one(int64_t(1), int64_t(0), int64_t(0)) = 1.0;
  one(int64_t(1), int64_t(0), int64_t(1)) = 2.0;
  const Tensor<double> p1 = nn::stats_pool(one);
  CHECK(p1(int64_t(0), int64_t(0)) == 7.0);
  CHECK(p1(int64_t(0), int64_t(2)) == 0.0);
  CHECK(p1(int64_t(1), int64_t(1)) == 2.0);

  // random 8 x 50 x 4 against a direct two-pass computation
  Rng rng(11);
  Tensor<double> big = random_tensor({8, 50, 4}, rng);
  const Tensor<double> pooled_big = nn::stats_pool(big);
  for (int64_t b = 0; b < 8; ++b) {
    for (int64_t c = 0; c < 4; ++c) {
      double mean = 0.0;
      for (int64_t t = 0; t < 50; ++t) mean += big(b, t, c);
      mean /= 50.0;
      double var = 0.0;
      for (int64_t t = 0; t < 50; ++t) var += (big(b, t, c) - mean) * (big(b, t, c) - mean);
      var /= 50.0;
      CHECK(std::abs(pooled_big(b, c) - mean) < 1e-6);
      CHECK(std::abs(pooled_big(b, 4 + c) - std::sqrt(var)) < 1e-6);
    }
  }

  // time-permutation invariance
  Tensor<double> perm = big;
  Rng shuffler(12);
  for (int64_t b = 0; b < 8; ++b) {
    std::vector<int64_t> order(50);
    for (int64_t t = 0; t < 50; ++t) order[static_cast<size_t>(t)] = t;
    shuffler.shuffle(order);
    for (int64_t t = 0; t < 50; ++t)
      for (int64_t c = 0; c < 4; ++c)
        perm(b, t, c) = big(b, order[static_cast<size_t>(t)], c);
  }
  const Tensor<double> pooled_perm = nn::stats_pool(perm);
  for (int64_t i = 0; i < pooled_big.numel(); ++i)
    CHECK(std::abs(pooled_perm[i] - pooled_big[i]) < 1e-6);
}

TEST_CASE("residual block gradients") {
  Rng rng(13);
  {
    nn::ResidualBlock2d<double> block(3, 3, 1, rng);  // identity shortcut
    check_layer(block, random_tensor({2, 3, 6, 6}, rng), 28, 5e-5);
  }
  {
    nn::ResidualBlock2d<double> block(2, 4, 2, rng);  // downsampling shortcut
    check_layer(block, random_tensor({2, 2, 6, 6}, rng), 29, 5e-5);
  }
}

TEST_CASE("multiscale tcn block gradients and width") {
  Rng rng(14);
  nn::MultiscaleTcnBlock<double> block(4, 3, {3, 5, 7}, 2, rng);
  Tensor<double> x = random_tensor({2, 4, 10}, rng);
  const Tensor<double> y = block.forward(x, false);
  CHECK(y.shape() == std::vector<int64_t>{2, 9, 10});  // 3 branches x width 3, T kept
  check_layer(block, x, 30, 5e-5);
}

TEST_CASE("attentive stats pooling gradients") {
  Rng rng(15);
  nn::AttentiveStatsPool<double> asp(4, 3, rng);
  check_layer(asp, random_tensor({2, 4, 7}, rng), 31, 5e-5);
}

TEST_CASE("softmax cross entropy against direct computation") {
  Rng rng(16);
  Tensor<double> logits = random_tensor({3, 4}, rng);
  const std::vector<int> labels = {1, 3, 0};
  auto [loss, grad] = nn::softmax_cross_entropy(logits, labels);

  double expected = 0.0;
  for (int64_t n = 0; n < 3; ++n) {
    double denom = 0.0;
    for (int64_t k = 0; k < 4; ++k) denom += std::exp(logits(n, k));
    expected += -std::log(std::exp(logits(n, labels[static_cast<size_t>(n)])) / denom);
  }
  expected /= 3.0;
  CHECK(std::abs(loss - expected) < 1e-12);

  // finite differences on the logits
  for (int64_t i = 0; i < logits.numel(); ++i) {
    const double eps = 1e-6;
    const double saved = logits[i];
    logits[i] = saved + eps;
    const double up = nn::softmax_cross_entropy(logits, labels).first;
    logits[i] = saved - eps;
    const double down = nn::softmax_cross_entropy(logits, labels).first;
    logits[i] = saved;
    CHECK(std::abs((up - down) / (2 * eps) - grad[i]) < 1e-6);
  }

  CHECK_THROWS_AS(nn::softmax_cross_entropy(logits, {0, 1, 9}), BadLabel);
}

TEST_CASE("am-softmax margin-free reduction equals plain cross entropy") {
  Rng rng(17);
  nn::AmSoftmaxConfig cfg;
  cfg.margin = 0.0;
  cfg.scale = 1.0;
  nn::AmSoftmaxHead<double> head(5, 3, cfg, rng);
  Tensor<double> emb = random_tensor({4, 5}, rng);
  const std::vector<int> labels = {0, 2, 1, 2};
  const double am = head.loss(emb, labels).first;
  const Tensor<double> cos = head.cosine_logits(emb);
  const double ce = nn::softmax_cross_entropy(cos, labels).first;
  CHECK(std::abs(am - ce) < 1e-12);
}

TEST_CASE("am-softmax loss is non-decreasing in the margin and positive") {
  Rng rng(18);
  Tensor<double> emb = random_tensor({6, 4}, rng);
  Tensor<double> weights = random_tensor({3, 4}, rng);
  const std::vector<int> labels = {0, 1, 2, 0, 1, 2};
  double prev = -1.0;
  for (double m : {0.0, 0.1, 0.2, 0.4, 0.8}) {
    const double loss = nn::am_softmax_loss(emb, weights, labels, {m, 30.0});
    CHECK(loss > 0.0);
    CHECK(loss >= prev - 1e-12);
    prev = loss;
  }
}

TEST_CASE("am-softmax closed-form scalar case") {
  // two orthogonal class weights, embedding equal to the target weight:
  // cos(target) = 1, cos(other) = 0 -> loss = log(1 + exp(-s (1 - m)))
  Tensor<double> weights({2, 2});
  weights(int64_t(0), int64_t(0)) = 1.0;
  weights(int64_t(1), int64_t(1)) = 1.0;
  Tensor<double> emb({1, 2});
  emb(int64_t(0), int64_t(0)) = 1.0;
  const double m = 0.2, s = 30.0;
  const double loss = nn::am_softmax_loss(emb, weights, {0}, {m, s});
  const double expected = std::log(1.0 + std::exp(-s * (1.0 - m)));
  CHECK(std::abs(loss - expected) < 1e-12);
}

TEST_CASE("am-softmax gradients") {
  Rng rng(19);
  nn::AmSoftmaxConfig cfg;  // defaults m=0.2 s=30
  nn::AmSoftmaxHead<double> head(4, 3, cfg, rng);
  Tensor<double> emb = random_tensor({5, 4}, rng);
  const std::vector<int> labels = {0, 1, 2, 1, 0};

  head.weight().zero_grad();
  auto [loss, gemb] = head.loss(emb, labels);
  CHECK(loss > 0.0);

  auto loss_fn = [&]() { return head.loss(emb, labels, /*compute_grads=*/false).first; };

  // weight gradient: loss() accumulates, so compare against a fresh capture
  Tensor<double> wgrad = head.weight().grad;
  double worst = 0.0;
  for (int64_t i = 0; i < head.weight().value.numel(); ++i) {
    const double eps = 1e-6;
    const double saved = head.weight().value[i];
    head.weight().value[i] = saved + eps;
    const double up = loss_fn();
    head.weight().value[i] = saved - eps;
    const double down = loss_fn();
    head.weight().value[i] = saved;
    const double numeric = (up - down) / (2 * eps);
    worst = std::max(worst, std::abs(numeric - wgrad[i]) /
                                std::max({std::abs(numeric), std::abs(wgrad[i]), 1e-6}));
  }
  CHECK(worst < 2e-5);

  double worst_e = 0.0;
  for (int64_t i = 0; i < emb.numel(); ++i) {
    const double eps = 1e-6;
    const double saved = emb[i];
    emb[i] = saved + eps;
    const double up = loss_fn();
    emb[i] = saved - eps;
    const double down = loss_fn();
    emb[i] = saved;
    const double numeric = (up - down) / (2 * eps);
    worst_e = std::max(worst_e, std::abs(numeric - gemb[i]) /
                                    std::max({std::abs(numeric), std::abs(gemb[i]), 1e-6}));
  }
  CHECK(worst_e < 2e-5);

  CHECK_THROWS_AS(head.loss(emb, {0, 1, 2, 1, 5}), BadLabel);
}

TEST_CASE("cosine schedule endpoints") {
  CHECK(nn::cosine_lr(0.05, 0, 300) == 0.05);
  CHECK(nn::cosine_lr(0.05, 300, 300) == Catch::Approx(0.0).margin(1e-12));
  CHECK(nn::cosine_lr(0.05, 150, 300) == Catch::Approx(0.025));
  // monotone decreasing over the budget
  double prev = 1.0;
  for (int e = 0; e <= 300; e += 10) {
    const double lr = nn::cosine_lr(0.05, e, 300);
    CHECK(lr <= prev + 1e-15);
    prev = lr;
  }
}

TEST_CASE("optimizers reduce a quadratic") {
  // loss = 0.5 ||w - target||^2, grad = w - target
  auto run = [](nn::Optimizer<double>& opt, double lr, int steps) {
    Param<double> w;
    w.init_shape({4});
    w.value.fill(5.0);
    std::vector<Param<double>*> params = {&w};
    for (int s = 0; s < steps; ++s) {
      for (int64_t i = 0; i < 4; ++i) w.grad[i] = w.value[i] - 1.0;
      opt.step(params, lr);
      for (auto* p : params) p->zero_grad();
    }
    double err = 0.0;
    for (int64_t i = 0; i < 4; ++i) err += std::abs(w.value[i] - 1.0);
    return err;
  };
  nn::Sgd<double> sgd(0.9, 0.0);
  CHECK(run(sgd, 0.05, 200) < 1e-3);
  nn::Adam<double> adam(0.0);
  CHECK(run(adam, 0.05, 400) < 1e-2);
}

TEST_CASE("checkpoint round trip preserves parameters and buffers") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "avlip_test_ckpt";
  fs::create_directories(dir);
  const std::string path = (dir / "model.ckpt").string();

  Rng rng(20);
  EtdnnConfig cfg;
  cfg.hidden_width = 8;
  cfg.prepool_width = 12;
  cfg.embedding_dim = 6;
  cfg.n_classes = 3;
  EtdnnModel<float> model(cfg, 99);
  Tensor<float> x({2, 30, 26});
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(rng.normal());
  const Tensor<float> ref = model.embed(x);

  model.save(path, {{"epoch", 4}});
  EtdnnModel<float> loaded = EtdnnModel<float>::load(path);
  const Tensor<float> got = loaded.embed(x);
  REQUIRE(got.shape() == ref.shape());
  for (int64_t i = 0; i < got.numel(); ++i) REQUIRE(got[i] == ref[i]);

  const nlohmann::json meta = nn::load_checkpoint_meta(path);
  CHECK(meta.at("epoch").get<int>() == 4);
  CHECK(meta.at("stream").get<std::string>() == "audio");
  CHECK_FALSE(fs::exists(path + ".tmp"));  // atomic: temp renamed away

  CHECK_THROWS_AS(EtdnnModel<float>::load((dir / "missing.ckpt").string()),
                  MissingCheckpoint);
}
