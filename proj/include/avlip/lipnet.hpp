// avlip/lipnet.hpp

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

#pragma once

#include <json.hpp>
#include <memory>
#include <string>
#include <vector>

#include "avlip/common.hpp"
#include "avlip/features.hpp"
#include "avlip/nn/layers.hpp"
#include "avlip/nn/optim.hpp"
#include "avlip/nn/serialize.hpp"
#include "avlip/nn/train.hpp"
#include "avlip/rng.hpp"

// The visual stream: multi-stage CNN.  A 3D convolution stem (temporal
// stride 1, spatial stride 2) feeds a per-frame 2D residual trunk; global
// average pooling over space yields a BxCxT sequence which a multiscale
// temporal convolutional network encodes; the temporal average is projected
// to the embedding, with a softmax classifier on top for training.

namespace avlip {

struct McnnConfig {
  std::vector<int64_t> stem_kernel = {5, 7, 7};
  std::vector<int64_t> stem_stride = {1, 2, 2};
  int stem_channels = 64;
  std::vector<int> trunk_blocks = {2, 2, 2, 2};  // 18-layer plan: 4 stages x 2 blocks
  std::vector<int> trunk_widths = {64, 128, 256, 512};
  std::vector<int64_t> tcn_kernels = {3, 5, 7};
  int tcn_blocks = 4;
  int tcn_branch_width = 256;  // branch widths sum to the TCN hidden width
  int embedding_dim = 512;
  int n_classes = 0;

  void validate() const {
    if (stem_kernel.size() != 3 || stem_stride.size() != 3)
      raise<ConfigError>("stem kernel/stride must have 3 entries");
    for (int64_t k : stem_kernel)
      if (k < 1 || k % 2 == 0) raise<ConfigError>("stem kernel entries must be odd");
    if (trunk_blocks.size() != trunk_widths.size() || trunk_blocks.empty())
      raise<ConfigError>("trunk_blocks/trunk_widths must be non-empty, equal length");
    if (tcn_kernels.empty() || tcn_blocks < 1 || tcn_branch_width < 1)
      raise<ConfigError>("invalid TCN plan");
    for (int64_t k : tcn_kernels)
      if (k < 1 || k % 2 == 0) raise<ConfigError>("TCN kernels must be odd");
    if (stem_channels < 1 || embedding_dim < 1)
      raise<ConfigError>("widths must be >= 1");
  }

  int64_t tcn_hidden_width() const {
    return static_cast<int64_t>(tcn_kernels.size()) * tcn_branch_width;
  }
};

inline void to_json(nlohmann::json& j, const McnnConfig& c) {
  j = {{"stem_kernel", c.stem_kernel},   {"stem_stride", c.stem_stride},
       {"stem_channels", c.stem_channels}, {"trunk_blocks", c.trunk_blocks},
       {"trunk_widths", c.trunk_widths}, {"tcn_kernels", c.tcn_kernels},
       {"tcn_blocks", c.tcn_blocks},     {"tcn_branch_width", c.tcn_branch_width},
       {"embedding_dim", c.embedding_dim}, {"n_classes", c.n_classes}};
}

inline void from_json(const nlohmann::json& j, McnnConfig& c) {
  j.at("stem_kernel").get_to(c.stem_kernel);
  j.at("stem_stride").get_to(c.stem_stride);
  j.at("stem_channels").get_to(c.stem_channels);
  j.at("trunk_blocks").get_to(c.trunk_blocks);
  j.at("trunk_widths").get_to(c.trunk_widths);
  j.at("tcn_kernels").get_to(c.tcn_kernels);
  j.at("tcn_blocks").get_to(c.tcn_blocks);
  j.at("tcn_branch_width").get_to(c.tcn_branch_width);
  j.at("embedding_dim").get_to(c.embedding_dim);
  j.at("n_classes").get_to(c.n_classes);
}

template <typename T>
class McnnModel {
 public:
  McnnModel(McnnConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);

    nn::Conv3dSpec spec;
    spec.kt = cfg_.stem_kernel[0];
    spec.kh = cfg_.stem_kernel[1];
    spec.kw = cfg_.stem_kernel[2];
    spec.st = cfg_.stem_stride[0];
    spec.sh = cfg_.stem_stride[1];
    spec.sw = cfg_.stem_stride[2];
    spec.pt = (spec.kt - 1) / 2;
    spec.ph = (spec.kh - 1) / 2;
    spec.pw = (spec.kw - 1) / 2;
    stem_.template emplace<nn::Conv3d<T>>(1, cfg_.stem_channels, spec, rng);
    stem_.template emplace<nn::BatchNorm<T>>(cfg_.stem_channels);
    stem_.template emplace<nn::Relu<T>>();
    stem_.template emplace<nn::SpatialMaxPool3d<T>>(3, 2, 1);

    int64_t prev = cfg_.stem_channels;
    for (size_t s = 0; s < cfg_.trunk_blocks.size(); ++s) {
      const int64_t width = cfg_.trunk_widths[s];
      for (int b = 0; b < cfg_.trunk_blocks[s]; ++b) {
        const int64_t stride = (b == 0 && s > 0) ? 2 : 1;
        trunk_.template emplace<nn::ResidualBlock2d<T>>(prev, width, stride, rng);
        prev = width;
      }
    }

    int64_t tcn_in = prev;
    int64_t dilation = 1;
    for (int b = 0; b < cfg_.tcn_blocks; ++b) {
      tcn_.template emplace<nn::MultiscaleTcnBlock<T>>(tcn_in, cfg_.tcn_branch_width,
                                                       cfg_.tcn_kernels, dilation, rng);
      tcn_in = cfg_.tcn_hidden_width();
      dilation *= 2;
    }

    emb_ = std::make_unique<nn::Linear<T>>(cfg_.tcn_hidden_width(), cfg_.embedding_dim, rng);
    if (cfg_.n_classes > 0)
      cls_ = std::make_unique<nn::Linear<T>>(cfg_.embedding_dim, cfg_.n_classes, rng);
  }

  const McnnConfig& config() const { return cfg_; }

  /// B x 1 x T x H x W -> B x embedding_dim (the linear tap after the TCN
  /// temporal average, before the classifier).
  Tensor<T> embed(const Tensor<T>& batch, bool train = false) {
    if (batch.rank() != 5 || batch.dim(1) != 1)
      raise<BadShape>("expected Bx1xTxHxW, got ", batch.shape_str());
    if (batch.dim(2) < cfg_.stem_kernel[0])
      raise<TooShort>("need at least ", cfg_.stem_kernel[0], " frames, got ",
                      batch.dim(2));
    Tensor<T> h = stem_.forward(batch, train);
    b_ = h.dim(0);
    c_after_stem_ = h.dim(1);
    t_ = h.dim(2);
    h_sp_ = h.dim(3);
    w_sp_ = h.dim(4);
    Tensor<T> frames = fold_time(h);
    frames = trunk_.forward(frames, train);
    frames = gap_.forward(frames, train);  // (B*T, C)
    trunk_c_ = frames.dim(1);
    Tensor<T> seq = frames_to_ct(frames);
    seq = tcn_.forward(seq, train);
    Tensor<T> pooled = tmean_.forward(seq, train);
    return emb_->forward(pooled, train);
  }

  /// Backward from the embedding gradient through the whole stack.
  void backward_from_embedding(const Tensor<T>& gemb) {
    Tensor<T> g = emb_->backward(gemb);
    g = tmean_.backward(g);
    g = tcn_.backward(g);
    g = ct_to_frames(g);
    g = gap_.backward(g);
    g = trunk_.backward(g);
    g = unfold_time(g);
    stem_.backward(g);
  }

  /// Cross-entropy loss for one batch; `train` selects batch statistics,
  /// `backprop` controls gradient accumulation.  Returns (loss, #correct).
  std::pair<double, int64_t> loss_on_batch(const Tensor<T>& batch,
                                           const std::vector<int>& labels,
                                           bool train = true, bool backprop = true) {
    if (!cls_) raise<ConfigError>("model built without classes; cannot train");
    Tensor<T> emb = embed(batch, train);
    Tensor<T> logits = cls_->forward(emb, train);
    auto [loss, dlogits] = nn::softmax_cross_entropy(logits, labels);
    int64_t correct = 0;
    for (int64_t n = 0; n < logits.dim(0); ++n) {
      int64_t best = 0;
      for (int64_t k = 1; k < logits.dim(1); ++k)
        if (logits(n, k) > logits(n, best)) best = k;
      if (best == labels[static_cast<size_t>(n)]) ++correct;
    }
    if (backprop) backward_from_embedding(cls_->backward(dlogits));
    return {loss, correct};
  }

  std::vector<nn::Param<T>*> params() {
    std::vector<nn::Param<T>*> out;
    stem_.collect_params(out);
    trunk_.collect_params(out);
    tcn_.collect_params(out);
    emb_->collect_params(out);
    if (cls_) cls_->collect_params(out);
    return out;
  }

  std::vector<std::vector<double>*> buffers() {
    std::vector<std::vector<double>*> out;
    stem_.collect_buffers(out);
    trunk_.collect_buffers(out);
    tcn_.collect_buffers(out);
    return out;
  }

  /// Residual blocks per stage as actually built (the 18-layer plan is
  /// 2/2/2/2).
  std::vector<int> trunk_stage_blocks() const { return cfg_.trunk_blocks; }

  size_t trunk_total_blocks() const { return trunk_.size(); }

  void save(const std::string& path, nlohmann::json extra = {}) {
    nlohmann::json meta = std::move(extra);
    meta["stream"] = "video";
    meta["config"] = cfg_;
    auto ps = params();
    nn::save_checkpoint<T>(path, std::move(meta), ps, buffers());
  }

  static McnnModel load(const std::string& path) {
    const nlohmann::json meta = nn::load_checkpoint_meta(path);
    if (meta.value("stream", "") != "video")
      raise<ParseError>(path, ": not a video checkpoint");
    McnnModel model(meta.at("config").get<McnnConfig>(), 0);
    auto ps = model.params();
    nn::load_checkpoint<T>(path, ps, model.buffers());
    return model;
  }

 private:
  // (B, C, T, H, W) -> (B*T, C, H, W)
  Tensor<T> fold_time(const Tensor<T>& x) const {
    Tensor<T> y({b_ * t_, c_after_stem_, h_sp_, w_sp_});
    const int64_t hw = h_sp_ * w_sp_;
    for (int64_t n = 0; n < b_; ++n)
      for (int64_t c = 0; c < c_after_stem_; ++c)
        for (int64_t t = 0; t < t_; ++t)
          std::copy_n(x.data() + (((n * c_after_stem_) + c) * t_ + t) * hw, hw,
                      y.data() + (((n * t_ + t) * c_after_stem_) + c) * hw);
    return y;
  }

  Tensor<T> unfold_time(const Tensor<T>& g) const {
    Tensor<T> y({b_, c_after_stem_, t_, h_sp_, w_sp_});
    const int64_t hw = h_sp_ * w_sp_;
    for (int64_t n = 0; n < b_; ++n)
      for (int64_t c = 0; c < c_after_stem_; ++c)
        for (int64_t t = 0; t < t_; ++t)
          std::copy_n(g.data() + (((n * t_ + t) * c_after_stem_) + c) * hw, hw,
                      y.data() + (((n * c_after_stem_) + c) * t_ + t) * hw);
    return y;
  }

  // (B*T, C) -> (B, C, T)
  Tensor<T> frames_to_ct(const Tensor<T>& x) const {
    Tensor<T> y({b_, trunk_c_, t_});
    for (int64_t n = 0; n < b_; ++n)
      for (int64_t t = 0; t < t_; ++t)
        for (int64_t c = 0; c < trunk_c_; ++c) y(n, c, t) = x(n * t_ + t, c);
    return y;
  }

  Tensor<T> ct_to_frames(const Tensor<T>& g) const {
    Tensor<T> y({b_ * t_, trunk_c_});
    for (int64_t n = 0; n < b_; ++n)
      for (int64_t t = 0; t < t_; ++t)
        for (int64_t c = 0; c < trunk_c_; ++c) y(n * t_ + t, c) = g(n, c, t);
    return y;
  }

  McnnConfig cfg_;
  nn::Sequential<T> stem_;
  nn::Sequential<T> trunk_;
  nn::GlobalAvgPool2d<T> gap_;
  nn::Sequential<T> tcn_;
  nn::TemporalMean<T> tmean_;
  std::unique_ptr<nn::Linear<T>> emb_;
  std::unique_ptr<nn::Linear<T>> cls_;

  int64_t b_ = 0, c_after_stem_ = 0, t_ = 0, h_sp_ = 0, w_sp_ = 0, trunk_c_ = 0;
};

/// Eval-mode embedding of a segment batch (B x 1 x T x H x W -> B x D).
template <typename T>
Tensor<T> embed_video(McnnModel<T>& model, const Tensor<T>& batch) {
  return model.embed(batch, /*train=*/false);
}

/// Utterance embedding: mean of per-segment eval-mode embeddings (center
/// crop, no flip), L2-normalized.
template <typename T>
std::vector<T> embed_utterance_video(McnnModel<T>& model, const LipSequence& seq,
                                     int segment_frames = kSegmentFrames) {
  auto segments = segment_sequence(seq, segment_frames);
  if (segments.empty())
    raise<TooShort>("utterance of ", seq.num_frames(),
                    " frames yields no full segment of ", segment_frames);
  Rng unused(0);
  const int64_t n = static_cast<int64_t>(segments.size());
  Tensor<T> batch({n, 1, static_cast<int64_t>(segment_frames), kCropSize, kCropSize});
  for (int64_t i = 0; i < n; ++i) {
    const LipSequence crop =
        augment_video(segments[static_cast<size_t>(i)], AugmentMode::kEval, unused);
    for (int64_t j = 0; j < crop.frames.numel(); ++j)
      batch[i * crop.frames.numel() + j] = static_cast<T>(crop.frames[j]);
  }
  Tensor<T> embs = model.embed(batch, /*train=*/false);
  const int64_t d = embs.dim(1);
  std::vector<T> mean(static_cast<size_t>(d), T(0));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t c = 0; c < d; ++c) mean[static_cast<size_t>(c)] += embs(i, c) / static_cast<T>(n);
  double norm = 0.0;
  for (T v : mean) norm += static_cast<double>(v) * static_cast<double>(v);
  norm = std::max(std::sqrt(norm), 1e-12);
  for (T& v : mean) v = static_cast<T>(static_cast<double>(v) / norm);
  return mean;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct VideoTrainItem {
  Tensor<uint8_t> frames;  // segment_frames x 96 x 96, raw grayscale
  int label = 0;
};

struct VideoTrainSet {
  std::vector<VideoTrainItem> items;
  int n_classes = 0;
  int segment_frames = kSegmentFrames;
};

struct VideoTrainHyper {
  int epochs = 300;
  double lr = 0.05;
  double weight_decay = 1e-4;
  int batch_size = 32;
  bool cosine_schedule = true;
  bool augment = true;          // random 88x88 crop + horizontal flip
  bool variable_length = true;  // random contiguous sub-segments
  int min_frames = kMinVariableLength;
  double stop_at_accuracy = 2.0;  // early stop threshold; > 1 disables
};

/// Speaker-classification training with Adam, cosine-annealed learning rate
/// and train-time augmentation.
template <typename T>
nn::TrainLog train_video(McnnModel<T>& model, const VideoTrainSet& set,
                         const VideoTrainHyper& hyper, uint64_t seed,
                         const std::string& checkpoint_path = "") {
  if (set.n_classes < 2) raise<DataError>("need >= 2 speakers to train");
  std::vector<int64_t> per_class(static_cast<size_t>(set.n_classes), 0);
  for (const auto& it : set.items) {
    if (it.label < 0 || it.label >= set.n_classes)
      raise<BadLabel>("label ", it.label, " outside [0, ", set.n_classes, ")");
    if (it.frames.rank() != 3 || it.frames.dim(1) != kRoiSize ||
        it.frames.dim(2) != kRoiSize)
      raise<BadShape>("video training items must be Tx96x96");
    per_class[static_cast<size_t>(it.label)]++;
  }
  for (int c = 0; c < set.n_classes; ++c)
    if (per_class[static_cast<size_t>(c)] == 0)
      raise<DataError>("class ", c, " has no training segments");

  Rng rng(seed);
  const int64_t n = static_cast<int64_t>(set.items.size());
  const int64_t batch = std::min<int64_t>(hyper.batch_size, n);
  auto params = model.params();
  nn::Adam<T> opt(hyper.weight_decay);

  nn::TrainLog log;
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  const int64_t seg = set.segment_frames;
  const int64_t min_len = std::max<int64_t>(hyper.min_frames, model.config().stem_kernel[0]);

  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    const double lr = hyper.cosine_schedule
                          ? nn::cosine_lr(hyper.lr, epoch, hyper.epochs)
                          : hyper.lr;
    rng.shuffle(order);
    double loss_sum = 0.0;
    int64_t correct = 0, seen = 0;
    for (int64_t start = 0; start + batch <= n; start += batch) {
      const int64_t len = (hyper.variable_length && seg > min_len)
                              ? rng.uniform_int(min_len, seg)
                              : seg;
      Tensor<T> x({batch, 1, len, kCropSize, kCropSize});
      std::vector<int> labels(static_cast<size_t>(batch));
      for (int64_t i = 0; i < batch; ++i) {
        const auto& item = set.items[static_cast<size_t>(order[static_cast<size_t>(start + i)])];
        labels[static_cast<size_t>(i)] = item.label;
        const int64_t t0 = (item.frames.dim(0) > len)
                               ? rng.uniform_int(0, item.frames.dim(0) - len)
                               : 0;
        int64_t dx = (kRoiSize - kCropSize) / 2, dy = dx;
        bool flip = false;
        if (hyper.augment) {
          dx = rng.uniform_int(0, kRoiSize - kCropSize);
          dy = rng.uniform_int(0, kRoiSize - kCropSize);
          flip = rng.bernoulli(0.5);
        }
        for (int64_t t = 0; t < len; ++t)
          for (int64_t y = 0; y < kCropSize; ++y)
            for (int64_t xx = 0; xx < kCropSize; ++xx)
              x(i, int64_t(0), t, y, xx) = static_cast<T>(
                  item.frames(t0 + t, dy + y, dx + (flip ? kCropSize - 1 - xx : xx)) /
                  T(255));
      }
      nn::zero_grads(params);
      auto [loss, ncorrect] = model.loss_on_batch(x, labels, true);
      opt.step(params, lr);
      loss_sum += loss * static_cast<double>(batch);
      correct += ncorrect;
      seen += batch;
    }
    nn::EpochMetrics em;
    em.epoch = epoch;
    em.loss = loss_sum / static_cast<double>(std::max<int64_t>(seen, 1));
    em.accuracy = static_cast<double>(correct) / static_cast<double>(std::max<int64_t>(seen, 1));
    em.lr = lr;
    log.epochs.push_back(em);
    if (log.best_epoch < 0 || em.accuracy > log.best_accuracy ||
        (em.accuracy == log.best_accuracy && em.loss < log.best_loss)) {
      log.best_epoch = epoch;
      log.best_accuracy = em.accuracy;
      log.best_loss = em.loss;
      if (!checkpoint_path.empty())
        model.save(checkpoint_path, {{"epoch", epoch},
                                     {"rng_state", rng.state()},
                                     {"train_accuracy", em.accuracy}});
    }
    if (em.accuracy >= hyper.stop_at_accuracy) break;
  }
  return log;
}

}  // namespace avlip
