// tests/test_models.cpp

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

#include "avlip/lipnet.hpp"
#include "avlip/xvector.hpp"
#include "oracles.hpp"

using namespace avlip;

namespace {

// small-width video net for fast tests; embedding width configurable
McnnConfig tiny_video_cfg(int emb = 16, int n_classes = 0) {
  McnnConfig c;
  c.stem_channels = 4;
  c.trunk_blocks = {1, 1};
  c.trunk_widths = {4, 8};
  c.tcn_kernels = {3, 5, 7};
  c.tcn_blocks = 2;
  c.tcn_branch_width = 4;
  c.embedding_dim = emb;
  c.n_classes = n_classes;
  return c;
}

EtdnnConfig tiny_audio_cfg(int emb = 16, int n_classes = 0) {
  EtdnnConfig c;
  c.hidden_width = 8;
  c.prepool_width = 16;
  c.embedding_dim = emb;
  c.attention_hidden = 4;
  c.n_classes = n_classes;
  return c;
}

Tensor<float> random_video_batch(int64_t b, int64_t t, uint64_t seed) {
  Rng rng(seed);
  Tensor<float> x({b, 1, t, kCropSize, kCropSize});
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(rng.uniform());
  return x;
}

Tensor<float> random_audio_batch(int64_t b, int64_t t, uint64_t seed) {
  Rng rng(seed);
  Tensor<float> x({b, t, 26});
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(rng.normal());
  return x;
}

}  // namespace

TEST_CASE("default video config matches the published architecture") {
  McnnConfig cfg;
  CHECK(cfg.stem_kernel == std::vector<int64_t>{5, 7, 7});
  CHECK(cfg.stem_channels == 64);
  CHECK(cfg.stem_stride == std::vector<int64_t>{1, 2, 2});
  CHECK(cfg.trunk_blocks == std::vector<int>{2, 2, 2, 2});
  CHECK(cfg.trunk_widths == std::vector<int>{64, 128, 256, 512});
  CHECK(cfg.tcn_kernels == std::vector<int64_t>{3, 5, 7});
  CHECK(cfg.tcn_blocks == 4);
  CHECK(cfg.embedding_dim == 512);

  // built model reflects the 18-layer plan: 4 stages x 2 blocks
  cfg.n_classes = 10;
  McnnModel<float> model(cfg, 1);
  CHECK(model.trunk_stage_blocks() == std::vector<int>{2, 2, 2, 2});
  CHECK(model.trunk_total_blocks() == 8);
}

TEST_CASE("default audio config matches the published plan") {
  EtdnnConfig cfg;
  CHECK(cfg.contexts == std::vector<int>{5, 1, 3, 1, 3, 1, 3, 1, 1});
  CHECK(cfg.dilations == std::vector<int>{1, 1, 2, 1, 3, 1, 4, 1, 1});
  CHECK(cfg.hidden_width == 512);
  CHECK(cfg.prepool_width == 1500);
  CHECK(cfg.embedding_dim == 512);
  CHECK_FALSE(cfg.attentive_pooling);

  // receptive field: 1 + sum (context-1)*dilation over conv layers
  int expected = 1;
  for (size_t i = 0; i < cfg.contexts.size(); ++i)
    expected += (cfg.contexts[i] - 1) * cfg.dilations[i];
  CHECK(expected == 23);
  CHECK(cfg.receptive_field() == 23);
}

TEST_CASE("video embedding shape over variable lengths, 512-d tap") {
  McnnConfig cfg = tiny_video_cfg(/*emb=*/512);
  McnnModel<float> model(cfg, 2);
  for (int64_t t : {5, 8, 12}) {
    Tensor<float> x = random_video_batch(2, t, 100 + static_cast<uint64_t>(t));
    const Tensor<float> e = embed_video(model, x);
    REQUIRE(e.shape() == std::vector<int64_t>{2, 512});
    for (int64_t i = 0; i < e.numel(); ++i) REQUIRE(std::isfinite(e[i]));
  }
  Tensor<float> too_short = random_video_batch(1, 4, 5);
  CHECK_THROWS_AS(model.embed(too_short, false), TooShort);
  Tensor<float> bad({2, 3, 8, 88, 88});
  CHECK_THROWS_AS(model.embed(bad, false), BadShape);
}

TEST_CASE("video eval mode is deterministic; identical inputs agree") {
  McnnModel<float> model(tiny_video_cfg(), 3);
  Tensor<float> x = random_video_batch(1, 8, 7);
  Tensor<float> batch({2, 1, 8, kCropSize, kCropSize});
  for (int64_t i = 0; i < x.numel(); ++i) {
    batch[i] = x[i];
    batch[x.numel() + i] = x[i];
  }
  const Tensor<float> a = embed_video(model, batch);
  const Tensor<float> b = embed_video(model, batch);
  for (int64_t i = 0; i < a.numel(); ++i) REQUIRE(a[i] == b[i]);  // bit-exact repeat
  for (int64_t c = 0; c < a.dim(1); ++c)
    REQUIRE(std::abs(a(int64_t(0), c) - a(int64_t(1), c)) < 1e-6);
}

TEST_CASE("audio embedding shapes at full default widths") {
  EtdnnConfig cfg;  // full 512/1500 plan
  cfg.n_classes = 0;
  EtdnnModel<float> model(cfg, 4);
  const Tensor<float> e = embed_audio(model, random_audio_batch(4, 98, 8));
  REQUIRE(e.shape() == std::vector<int64_t>{4, 512});

  // boundary: exactly the receptive field
  const Tensor<float> e23 = embed_audio(model, random_audio_batch(1, 23, 9));
  REQUIRE(e23.shape() == std::vector<int64_t>{1, 512});

  CHECK_THROWS_AS(model.embed(random_audio_batch(1, 22, 10), false), TooShort);
}

TEST_CASE("audio identical rows give identical embeddings") {
  EtdnnModel<float> model(tiny_audio_cfg(), 5);
  Tensor<float> one = random_audio_batch(1, 40, 11);
  Tensor<float> batch({2, 40, 26});
  for (int64_t i = 0; i < one.numel(); ++i) {
    batch[i] = one[i];
    batch[one.numel() + i] = one[i];
  }
  const Tensor<float> e = embed_audio(model, batch);
  for (int64_t c = 0; c < e.dim(1); ++c)
    REQUIRE(std::abs(e(int64_t(0), c) - e(int64_t(1), c)) < 1e-6);
}

TEST_CASE("attentive pooling variant works and keeps shape") {
  EtdnnConfig cfg = tiny_audio_cfg();
  cfg.attentive_pooling = true;
  EtdnnModel<float> model(cfg, 6);
  const Tensor<float> e = embed_audio(model, random_audio_batch(3, 40, 12));
  REQUIRE(e.shape() == std::vector<int64_t>{3, 16});
}

TEST_CASE("pooled statistics width is twice the pre-pool width") {
  Rng rng(13);
  nn::StatsPool<float> pool;
  Tensor<float> h({2, 1500, 7});
  for (int64_t i = 0; i < h.numel(); ++i) h[i] = static_cast<float>(rng.normal());
  CHECK(pool.forward(h, false).shape() == std::vector<int64_t>{2, 3000});
}

TEST_CASE("temporal average absorbs duplicated time axes") {
  Rng rng(14);
  nn::TemporalMean<float> mean_layer;
  Tensor<float> seq({2, 6, 9});
  for (int64_t i = 0; i < seq.numel(); ++i) seq[i] = static_cast<float>(rng.normal());
  Tensor<float> doubled({2, 6, 18});
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t c = 0; c < 6; ++c)
      for (int64_t t = 0; t < 9; ++t) {
        doubled(b, c, t) = seq(b, c, t);
        doubled(b, c, t + 9) = seq(b, c, t);
      }
  const Tensor<float> a = mean_layer.forward(seq, false);
  const Tensor<float> b = mean_layer.forward(doubled, false);
  for (int64_t i = 0; i < a.numel(); ++i) REQUIRE(std::abs(a[i] - b[i]) < 1e-5);
}

TEST_CASE("utterance video embedding pools segments") {
  McnnConfig cfg = tiny_video_cfg();
  McnnModel<float> model(cfg, 7);
  Rng rng(15);

  LipSequence seq;
  seq.frames.resize({29, kRoiSize, kRoiSize});
  for (int64_t i = 0; i < seq.frames.numel(); ++i)
    seq.frames[i] = static_cast<float>(rng.uniform());

  // one segment: equals the segment embedding, L2-normalized
  const auto utt = embed_utterance_video(model, seq);
  Rng unused(0);
  const LipSequence crop = augment_video(seq, AugmentMode::kEval, unused);
  Tensor<float> batch({1, 1, 29, kCropSize, kCropSize});
  std::copy_n(crop.frames.data(), crop.frames.numel(), batch.data());
  const Tensor<float> seg = embed_video(model, batch);
  double norm = 0.0;
  for (int64_t c = 0; c < seg.dim(1); ++c) norm += seg(int64_t(0), c) * seg(int64_t(0), c);
  norm = std::sqrt(norm);
  for (int64_t c = 0; c < seg.dim(1); ++c)
    REQUIRE(std::abs(utt[static_cast<size_t>(c)] - seg(int64_t(0), c) / norm) < 1e-5);

  // duplicated frames -> two identical segments -> same embedding
  LipSequence dup;
  dup.frames.resize({58, kRoiSize, kRoiSize});
  std::copy_n(seq.frames.data(), seq.frames.numel(), dup.frames.data());
  std::copy_n(seq.frames.data(), seq.frames.numel(),
              dup.frames.data() + seq.frames.numel());
  const auto dup_emb = embed_utterance_video(model, dup);
  for (size_t c = 0; c < utt.size(); ++c)
    REQUIRE(std::abs(dup_emb[c] - utt[c]) < 1e-5);

  // 75 frames: mean of the two segment embeddings, then normalized
  LipSequence long_seq;
  long_seq.frames.resize({75, kRoiSize, kRoiSize});
  for (int64_t i = 0; i < long_seq.frames.numel(); ++i)
    long_seq.frames[i] = static_cast<float>(rng.uniform());
  const auto long_emb = embed_utterance_video(model, long_seq);

  auto segs = segment_sequence(long_seq, 29);
  REQUIRE(segs.size() == 2);
  std::vector<double> mean(static_cast<size_t>(cfg.embedding_dim), 0.0);
  for (const auto& s : segs) {
    const LipSequence c = augment_video(s, AugmentMode::kEval, unused);
    Tensor<float> one({1, 1, 29, kCropSize, kCropSize});
    std::copy_n(c.frames.data(), c.frames.numel(), one.data());
    const Tensor<float> e = embed_video(model, one);
    for (int64_t j = 0; j < e.dim(1); ++j) mean[static_cast<size_t>(j)] += e(int64_t(0), j) / 2.0;
  }
  double norm2 = 0.0;
  for (double v : mean) norm2 += v * v;
  norm2 = std::sqrt(norm2);
  for (size_t c = 0; c < long_emb.size(); ++c)
    REQUIRE(std::abs(long_emb[c] - mean[c] / norm2) < 1e-5);

  // fewer than one segment
  LipSequence shorty;
  shorty.frames.resize({28, kRoiSize, kRoiSize});
  CHECK_THROWS_AS(embed_utterance_video(model, shorty), TooShort);
}

TEST_CASE("tiny video network passes finite-difference gradient checks") {
  McnnConfig cfg;
  cfg.stem_channels = 2;
  cfg.trunk_blocks = {1, 1};
  cfg.trunk_widths = {2, 4};
  cfg.tcn_kernels = {3, 5};
  cfg.tcn_blocks = 1;
  cfg.tcn_branch_width = 2;
  cfg.embedding_dim = 6;
  cfg.n_classes = 3;
  McnnModel<double> model(cfg, 8);

  Rng rng(16);
  Tensor<double> x({2, 1, 6, 16, 16});
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform();
  const std::vector<int> labels = {0, 2};

  auto params = model.params();
  nn::zero_grads(params);
  model.loss_on_batch(x, labels, /*train=*/true, /*backprop=*/true);
  auto loss_fn = [&]() {
    return model.loss_on_batch(x, labels, /*train=*/true, /*backprop=*/false).first;
  };

  int checked = 0;
  const double worst = oracles::max_grad_rel_error(params, loss_fn, rng, 120, 1e-5,
                                                   &checked);
  INFO("video net: worst rel err " << worst << " over " << checked << " coords");
  CHECK(checked >= 100);
  CHECK(worst < 1e-3);
}

TEST_CASE("tiny audio network passes finite-difference gradient checks") {
  EtdnnConfig cfg;
  cfg.hidden_width = 8;
  cfg.prepool_width = 16;
  cfg.embedding_dim = 8;
  cfg.n_classes = 3;
  EtdnnModel<double> model(cfg, 9);

  Rng rng(17);
  Tensor<double> x({2, 30, 26});
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
  const std::vector<int> labels = {1, 2};

  auto params = model.params();
  nn::zero_grads(params);
  model.loss_on_batch(x, labels, {0.2, 30.0}, /*train=*/true, /*backprop=*/true);
  auto loss_fn = [&]() {
    return model.loss_on_batch(x, labels, {0.2, 30.0}, /*train=*/true,
                               /*backprop=*/false)
        .first;
  };

  int checked = 0;
  const double worst = oracles::max_grad_rel_error(params, loss_fn, rng, 120, 1e-5,
                                                   &checked);
  INFO("audio net: worst rel err " << worst << " over " << checked << " coords");
  CHECK(checked >= 100);
  CHECK(worst < 1e-3);
}

TEST_CASE("overfit a single batch: loss decreases") {
  // video
  {
    McnnConfig cfg = tiny_video_cfg(8, 2);
    McnnModel<float> model(cfg, 10);
    Tensor<float> x = random_video_batch(4, 8, 18);
    const std::vector<int> labels = {0, 1, 0, 1};
    auto params = model.params();
    nn::Adam<float> opt(0.0);
    double prev = 1e9;
    for (int step = 0; step < 6; ++step) {
      nn::zero_grads(params);
      const double loss = model.loss_on_batch(x, labels, true).first;
      opt.step(params, 0.005);
      if (step > 1) CHECK(loss < prev + 0.1);
      prev = loss;
    }
  }
  // audio
  {
    EtdnnConfig cfg = tiny_audio_cfg(8, 2);
    cfg.n_classes = 2;
    EtdnnModel<float> model(cfg, 11);
    Tensor<float> x = random_audio_batch(4, 40, 19);
    const std::vector<int> labels = {0, 1, 0, 1};
    auto params = model.params();
    nn::Sgd<float> opt(0.9, 0.0);
    double first = 0.0, last = 0.0;
    for (int step = 0; step < 8; ++step) {
      nn::zero_grads(params);
      const double loss = model.loss_on_batch(x, labels, {0.2, 30.0}, true).first;
      opt.step(params, 0.01);
      if (step == 0) first = loss;
      last = loss;
    }
    CHECK(last < first);
  }
}

TEST_CASE("audio fine-tune preserves the embedding dimension") {
  EtdnnConfig cfg = tiny_audio_cfg(12, 3);
  EtdnnModel<float> model(cfg, 12);
  const Tensor<float> before = embed_audio(model, random_audio_batch(1, 30, 20));
  model.reset_head(5, 21);  // new speaker inventory
  const Tensor<float> after = embed_audio(model, random_audio_batch(1, 30, 20));
  REQUIRE(before.shape() == after.shape());
  for (int64_t i = 0; i < before.numel(); ++i) REQUIRE(before[i] == after[i]);
}

TEST_CASE("video checkpoint round trip preserves outputs") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "avlip_test_vckpt";
  fs::create_directories(dir);
  McnnModel<float> model(tiny_video_cfg(8, 3), 13);
  Tensor<float> x = random_video_batch(1, 8, 22);
  const Tensor<float> ref = embed_video(model, x);
  model.save((dir / "v.ckpt").string(), {{"epoch", 1}});
  McnnModel<float> loaded = McnnModel<float>::load((dir / "v.ckpt").string());
  const Tensor<float> got = embed_video(loaded, x);
  for (int64_t i = 0; i < ref.numel(); ++i) REQUIRE(got[i] == ref[i]);
}

TEST_CASE("trainer rejects degenerate data") {
  VideoTrainSet vset;
  vset.n_classes = 1;
  McnnModel<float> vmodel(tiny_video_cfg(8, 1), 14);
  CHECK_THROWS_AS(train_video(vmodel, vset, {}, 0), DataError);

  VideoTrainSet empty_class;
  empty_class.n_classes = 3;
  VideoTrainItem item;
  item.frames.resize({29, kRoiSize, kRoiSize});
  item.label = 0;
  empty_class.items.push_back(item);
  item.label = 1;
  empty_class.items.push_back(item);
  McnnModel<float> vmodel3(tiny_video_cfg(8, 3), 15);
  CHECK_THROWS_AS(train_video(vmodel3, empty_class, {}, 0), DataError);

  AudioTrainSet aset;
  aset.n_classes = 1;
  EtdnnModel<float> amodel(tiny_audio_cfg(8, 1), 16);
  CHECK_THROWS_AS(train_audio(amodel, nullptr, aset, {}, 0), DataError);
}
