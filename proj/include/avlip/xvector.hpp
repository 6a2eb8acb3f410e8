// avlip/xvector.hpp

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
#include "avlip/nn/layers.hpp"
#include "avlip/nn/optim.hpp"
#include "avlip/nn/serialize.hpp"
#include "avlip/nn/train.hpp"
#include "avlip/rng.hpp"

// The audio stream: extended-TDNN speaker embedding network.  Dilated 1-d
// convolutions interleaved with frame-wise dense layers build up temporal
// context, statistics pooling collapses time, and the first of two dense
// segment layers is the 512-d embedding bottleneck.

namespace avlip {

struct EtdnnConfig {
  // context width per frame layer; width 1 entries are dense (kernel-1) layers
  std::vector<int> contexts = {5, 1, 3, 1, 3, 1, 3, 1, 1};
  std::vector<int> dilations = {1, 1, 2, 1, 3, 1, 4, 1, 1};
  int input_dim = 26;
  int hidden_width = 512;
  int prepool_width = 1500;
  int embedding_dim = 512;
  int n_classes = 0;
  bool attentive_pooling = false;  // plain statistics pooling by default
  int attention_hidden = 64;

  void validate() const {
    if (contexts.size() != dilations.size() || contexts.empty())
      raise<ConfigError>("contexts/dilations must be non-empty and equal-length");
    for (size_t i = 0; i < contexts.size(); ++i)
      if (contexts[i] < 1 || dilations[i] < 1)
        raise<ConfigError>("contexts and dilations must be >= 1");
    if (input_dim < 1 || hidden_width < 1 || prepool_width < 1 || embedding_dim < 1)
      raise<ConfigError>("widths must be >= 1");
  }

  // 1 + sum of (context-1)*dilation over the frame layers
  int receptive_field() const {
    int rf = 1;
    for (size_t i = 0; i < contexts.size(); ++i) rf += (contexts[i] - 1) * dilations[i];
    return rf;
  }
};

inline void to_json(nlohmann::json& j, const EtdnnConfig& c) {
  j = {{"contexts", c.contexts},       {"dilations", c.dilations},
       {"input_dim", c.input_dim},     {"hidden_width", c.hidden_width},
       {"prepool_width", c.prepool_width}, {"embedding_dim", c.embedding_dim},
       {"n_classes", c.n_classes},     {"attentive_pooling", c.attentive_pooling},
       {"attention_hidden", c.attention_hidden}};
}

inline void from_json(const nlohmann::json& j, EtdnnConfig& c) {
  j.at("contexts").get_to(c.contexts);
  j.at("dilations").get_to(c.dilations);
  j.at("input_dim").get_to(c.input_dim);
  j.at("hidden_width").get_to(c.hidden_width);
  j.at("prepool_width").get_to(c.prepool_width);
  j.at("embedding_dim").get_to(c.embedding_dim);
  j.at("n_classes").get_to(c.n_classes);
  j.at("attentive_pooling").get_to(c.attentive_pooling);
  j.at("attention_hidden").get_to(c.attention_hidden);
}

namespace nn {

// Attentive statistics pooling (B,C,T) -> (B,2C): softmax attention over
// frames, attention-weighted mean and standard deviation.
template <typename T>
class AttentiveStatsPool : public Layer<T> {
 public:
  AttentiveStatsPool(int64_t channels, int64_t attn_hidden, Rng& rng)
      : c_(channels), a_(attn_hidden) {
    w_.name = "attn_w";
    w_.init_shape({a_, c_});
    init::xavier_uniform(w_.value, c_, a_, rng);
    b_.name = "attn_b";
    b_.init_shape({a_});
    v_.name = "attn_v";
    v_.init_shape({a_});
    init::xavier_uniform(v_.value, a_, 1, rng);
  }

  Tensor<T> forward(const Tensor<T>& x, bool) override {
    if (x.rank() != 3 || x.dim(1) != c_)
      raise<BadShape>("AttentiveStatsPool expects BxCxT with C=", c_);
    x_ = x;
    const int64_t bsz = x.dim(0), t = x.dim(2);
    tanh_u_.resize({bsz, t, a_});
    alpha_.resize({bsz, t});
    Tensor<T> y({bsz, 2 * c_});
    mu_.resize({bsz, c_});
    sigma_.resize({bsz, c_});

    for (int64_t n = 0; n < bsz; ++n) {
      // scores e_t = v . tanh(W h_t + b)
      std::vector<double> e(static_cast<size_t>(t));
      for (int64_t i = 0; i < t; ++i) {
        double score = 0.0;
        for (int64_t k = 0; k < a_; ++k) {
          double u = static_cast<double>(b_.value[k]);
          for (int64_t c = 0; c < c_; ++c)
            u += static_cast<double>(w_.value(k, c)) * static_cast<double>(x(n, c, i));
          const double th = std::tanh(u);
          tanh_u_(n, i, k) = static_cast<T>(th);
          score += static_cast<double>(v_.value[k]) * th;
        }
        e[static_cast<size_t>(i)] = score;
      }
      double mx = e[0];
      for (double s : e) mx = std::max(mx, s);
      double denom = 0.0;
      for (double s : e) denom += std::exp(s - mx);
      for (int64_t i = 0; i < t; ++i)
        alpha_(n, i) = static_cast<T>(std::exp(e[static_cast<size_t>(i)] - mx) / denom);

      for (int64_t c = 0; c < c_; ++c) {
        double mu = 0.0, m2 = 0.0;
        for (int64_t i = 0; i < t; ++i) {
          const double h = static_cast<double>(x(n, c, i));
          const double al = static_cast<double>(alpha_(n, i));
          mu += al * h;
          m2 += al * h * h;
        }
        const double var = std::max(m2 - mu * mu, 0.0);
        mu_(n, c) = static_cast<T>(mu);
        sigma_(n, c) = static_cast<T>(std::sqrt(var));
        y(n, c) = static_cast<T>(mu);
        y(n, c_ + c) = static_cast<T>(std::sqrt(var));
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    const int64_t bsz = x_.dim(0), t = x_.dim(2);
    Tensor<T> gx(x_.shape());
    for (int64_t n = 0; n < bsz; ++n) {
      std::vector<double> dmu(static_cast<size_t>(c_)), dm2(static_cast<size_t>(c_));
      for (int64_t c = 0; c < c_; ++c) {
        const double gs = static_cast<double>(gy(n, c_ + c));
        const double sd = std::max(static_cast<double>(sigma_(n, c)), kStdFloor);
        const double dvar = gs / (2.0 * sd);
        dm2[static_cast<size_t>(c)] = dvar;
        dmu[static_cast<size_t>(c)] =
            static_cast<double>(gy(n, c)) - 2.0 * static_cast<double>(mu_(n, c)) * dvar;
      }
      // direct data term and attention-weight term
      std::vector<double> dalpha(static_cast<size_t>(t), 0.0);
      for (int64_t i = 0; i < t; ++i) {
        const double al = static_cast<double>(alpha_(n, i));
        double da = 0.0;
        for (int64_t c = 0; c < c_; ++c) {
          const double h = static_cast<double>(x_(n, c, i));
          da += dmu[static_cast<size_t>(c)] * h + dm2[static_cast<size_t>(c)] * h * h;
          gx(n, c, i) = static_cast<T>(al * (dmu[static_cast<size_t>(c)] +
                                             2.0 * h * dm2[static_cast<size_t>(c)]));
        }
        dalpha[static_cast<size_t>(i)] = da;
      }
      // softmax backward
      double dot = 0.0;
      for (int64_t i = 0; i < t; ++i)
        dot += static_cast<double>(alpha_(n, i)) * dalpha[static_cast<size_t>(i)];
      for (int64_t i = 0; i < t; ++i) {
        const double de = static_cast<double>(alpha_(n, i)) *
                          (dalpha[static_cast<size_t>(i)] - dot);
        // through e_t = v . tanh(u_t)
        for (int64_t k = 0; k < a_; ++k) {
          const double th = static_cast<double>(tanh_u_(n, i, k));
          v_.grad[k] += static_cast<T>(de * th);
          const double du = de * static_cast<double>(v_.value[k]) * (1.0 - th * th);
          b_.grad[k] += static_cast<T>(du);
          for (int64_t c = 0; c < c_; ++c) {
            w_.grad(k, c) += static_cast<T>(du * static_cast<double>(x_(n, c, i)));
            gx(n, c, i) += static_cast<T>(du * static_cast<double>(w_.value(k, c)));
          }
        }
      }
    }
    return gx;
  }

  void collect_params(std::vector<Param<T>*>& out) override {
    out.push_back(&w_);
    out.push_back(&b_);
    out.push_back(&v_);
  }
  const char* kind() const override { return "attentive_stats_pool"; }

 private:
  int64_t c_, a_;
  Param<T> w_, b_, v_;
  Tensor<T> x_, tanh_u_, alpha_, mu_, sigma_;
};

}  // namespace nn

template <typename T>
class EtdnnModel {
 public:
  EtdnnModel(EtdnnConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);
    int64_t prev = cfg_.input_dim;
    for (size_t i = 0; i < cfg_.contexts.size(); ++i) {
      const bool last = (i + 1 == cfg_.contexts.size());
      const int64_t width = last ? cfg_.prepool_width : cfg_.hidden_width;
      frame_stack_.template emplace<nn::Conv1d<T>>(prev, width, cfg_.contexts[i],
                                                   cfg_.dilations[i], /*same_pad=*/false,
                                                   rng);
      frame_stack_.template emplace<nn::Relu<T>>();
      frame_stack_.template emplace<nn::BatchNorm<T>>(width);
      prev = width;
    }
    if (cfg_.attentive_pooling)
      asp_ = std::make_unique<nn::AttentiveStatsPool<T>>(cfg_.prepool_width,
                                                         cfg_.attention_hidden, rng);
    else
      stats_ = std::make_unique<nn::StatsPool<T>>();

    seg1_ = std::make_unique<nn::Linear<T>>(2 * cfg_.prepool_width, cfg_.embedding_dim, rng);
    post1_.template emplace<nn::Relu<T>>();
    post1_.template emplace<nn::BatchNorm<T>>(cfg_.embedding_dim);
    post1_.template emplace<nn::Linear<T>>(cfg_.embedding_dim, cfg_.embedding_dim, rng);
    post1_.template emplace<nn::Relu<T>>();
    post1_.template emplace<nn::BatchNorm<T>>(cfg_.embedding_dim);
    if (cfg_.n_classes > 0) {
      nn::AmSoftmaxConfig am;
      head_ = std::make_unique<nn::AmSoftmaxHead<T>>(cfg_.embedding_dim, cfg_.n_classes,
                                                     am, rng);
    }
  }

  const EtdnnConfig& config() const { return cfg_; }
  int receptive_field() const { return cfg_.receptive_field(); }

  /// B x T x F frame-major features -> B x embedding_dim bottleneck
  /// activations (pre-nonlinearity output of the first segment layer).
  Tensor<T> embed(const Tensor<T>& feats, bool train = false) {
    return seg1_->forward(pooled(feats, train), train);
  }

  /// Full training-path forward: embedding -> relu/bn -> second segment
  /// layer -> relu/bn; returns the classifier input.
  Tensor<T> forward_features(const Tensor<T>& feats, bool train) {
    return post1_.forward(embed(feats, train), train);
  }

  /// Loss for one batch; `train` selects batch statistics, `backprop`
  /// controls gradient accumulation.  Returns (loss, #correct).
  std::pair<double, int64_t> loss_on_batch(const Tensor<T>& feats,
                                           const std::vector<int>& labels,
                                           const nn::AmSoftmaxConfig& am,
                                           bool train = true, bool backprop = true) {
    if (!head_) raise<ConfigError>("model built without classes; cannot train");
    head_->config_mutable() = am;
    Tensor<T> cls_in = forward_features(feats, train);
    auto [loss, gcls] = head_->loss(cls_in, labels, backprop);

    Tensor<T> logits = head_->cosine_logits(cls_in);
    int64_t correct = 0;
    for (int64_t n = 0; n < logits.dim(0); ++n) {
      int64_t best = 0;
      for (int64_t k = 1; k < logits.dim(1); ++k)
        if (logits(n, k) > logits(n, best)) best = k;
      if (best == labels[static_cast<size_t>(n)]) ++correct;
    }

    if (backprop) {
      Tensor<T> g = post1_.backward(gcls);
      g = seg1_->backward(g);
      if (asp_) g = asp_->backward(g);
      else g = stats_->backward(g);
      frame_stack_.backward(g);
    }
    return {loss, correct};
  }

  /// Replaces the classifier head for a new speaker inventory (the
  /// pretrain -> fine-tune workflow re-initializes the output layer).
  void reset_head(int n_classes, uint64_t seed) {
    cfg_.n_classes = n_classes;
    Rng rng(seed);
    nn::AmSoftmaxConfig am = head_ ? head_->config() : nn::AmSoftmaxConfig{};
    head_ = std::make_unique<nn::AmSoftmaxHead<T>>(cfg_.embedding_dim, n_classes, am, rng);
  }

  std::vector<nn::Param<T>*> params() {
    std::vector<nn::Param<T>*> out;
    frame_stack_.collect_params(out);
    if (asp_) asp_->collect_params(out);
    seg1_->collect_params(out);
    post1_.collect_params(out);
    if (head_) out.push_back(&head_->weight());
    return out;
  }

  std::vector<std::vector<double>*> buffers() {
    std::vector<std::vector<double>*> out;
    frame_stack_.collect_buffers(out);
    post1_.collect_buffers(out);
    return out;
  }

  void save(const std::string& path, nlohmann::json extra = {}) {
    nlohmann::json meta = std::move(extra);
    meta["stream"] = "audio";
    meta["config"] = cfg_;
    auto ps = params();
    nn::save_checkpoint<T>(path, std::move(meta), ps, buffers());
  }

  static EtdnnModel load(const std::string& path) {
    const nlohmann::json meta = nn::load_checkpoint_meta(path);
    if (meta.value("stream", "") != "audio")
      raise<ParseError>(path, ": not an audio checkpoint");
    EtdnnModel model(meta.at("config").get<EtdnnConfig>(), 0);
    auto ps = model.params();
    nn::load_checkpoint<T>(path, ps, model.buffers());
    return model;
  }

 private:
  // frame stack + pooling shared by embed() and the training path
  Tensor<T> pooled(const Tensor<T>& feats, bool train) {
    if (feats.rank() != 3 || feats.dim(2) != cfg_.input_dim)
      raise<BadShape>("expected BxTx", cfg_.input_dim, ", got ", feats.shape_str());
    const int64_t b = feats.dim(0), t = feats.dim(1), c = feats.dim(2);
    if (t < receptive_field())
      raise<TooShort>("need at least ", receptive_field(), " frames, got ", t);
    // to channel-major (B, F, T)
    Tensor<T> x({b, c, t});
    for (int64_t n = 0; n < b; ++n)
      for (int64_t i = 0; i < t; ++i)
        for (int64_t f = 0; f < c; ++f) x(n, f, i) = feats(n, i, f);
    Tensor<T> h = frame_stack_.forward(x, train);
    return asp_ ? asp_->forward(h, train) : stats_->forward(h, train);
  }

  EtdnnConfig cfg_;
  nn::Sequential<T> frame_stack_;
  std::unique_ptr<nn::StatsPool<T>> stats_;
  std::unique_ptr<nn::AttentiveStatsPool<T>> asp_;
  std::unique_ptr<nn::Linear<T>> seg1_;
  nn::Sequential<T> post1_;
  std::unique_ptr<nn::AmSoftmaxHead<T>> head_;
};

/// Eval-mode embedding of a feature batch (B x T x F -> B x D).
template <typename T>
Tensor<T> embed_audio(EtdnnModel<T>& model, const Tensor<T>& feats) {
  return model.embed(feats, /*train=*/false);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct AudioTrainItem {
  Tensor<float> feats;  // T x F
  int label = 0;
};

struct AudioTrainSet {
  std::vector<AudioTrainItem> items;
  int n_classes = 0;
};

struct AudioTrainHyper {
  int epochs = 10;           // fine-tune budget
  int pretrain_epochs = 30;  // pretraining budget, when a pretrain set is given
  double lr = 0.01;
  double weight_decay = 1e-5;
  double momentum = 0.9;
  int batch_size = 256;  // clamped to the dataset size at desk scale
  nn::AmSoftmaxConfig am_softmax;
  bool variable_length = true;  // random contiguous frame crops during training
  int min_crop_frames = 24;
};

namespace detail {

template <typename T>
nn::TrainLog run_audio_stage(EtdnnModel<T>& model, const AudioTrainSet& set,
                             const AudioTrainHyper& hyper, int epochs, Rng& rng,
                             const std::string& checkpoint_path) {
  if (set.n_classes < 2) raise<DataError>("need >= 2 speakers to train");
  std::vector<int64_t> per_class(static_cast<size_t>(set.n_classes), 0);
  for (const auto& it : set.items) {
    if (it.label < 0 || it.label >= set.n_classes)
      raise<BadLabel>("label ", it.label, " outside [0, ", set.n_classes, ")");
    per_class[static_cast<size_t>(it.label)]++;
  }
  for (int c = 0; c < set.n_classes; ++c)
    if (per_class[static_cast<size_t>(c)] == 0)
      raise<DataError>("class ", c, " has no training items");
  const int rf = model.receptive_field();
  for (const auto& it : set.items)
    if (it.feats.dim(0) < rf)
      raise<TooShort>("training utterance with ", it.feats.dim(0),
                      " frames is below the receptive field ", rf);

  const int64_t n = static_cast<int64_t>(set.items.size());
  const int64_t batch = std::min<int64_t>(hyper.batch_size, n);
  auto params = model.params();
  nn::Sgd<T> opt(hyper.momentum, hyper.weight_decay);

  nn::TrainLog log;
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    int64_t correct = 0, seen = 0;
    for (int64_t start = 0; start + batch <= n; start += batch) {
      // shared crop length so the batch stays rectangular
      int64_t min_t = set.items[static_cast<size_t>(order[static_cast<size_t>(start)])].feats.dim(0);
      for (int64_t i = 1; i < batch; ++i)
        min_t = std::min(min_t,
                         set.items[static_cast<size_t>(order[static_cast<size_t>(start + i)])].feats.dim(0));
      int64_t crop = min_t;
      const int64_t lo = std::max<int64_t>(hyper.min_crop_frames, rf);
      if (hyper.variable_length && min_t > lo) crop = rng.uniform_int(lo, min_t);

      Tensor<T> feats({batch, crop, static_cast<int64_t>(model.config().input_dim)});
      std::vector<int> labels(static_cast<size_t>(batch));
      for (int64_t i = 0; i < batch; ++i) {
        const auto& item = set.items[static_cast<size_t>(order[static_cast<size_t>(start + i)])];
        const int64_t t_max = item.feats.dim(0);
        const int64_t off = (t_max > crop) ? rng.uniform_int(0, t_max - crop) : 0;
        for (int64_t t = 0; t < crop; ++t)
          for (int64_t f = 0; f < item.feats.dim(1); ++f)
            feats(i, t, f) = static_cast<T>(item.feats(off + t, f));
        labels[static_cast<size_t>(i)] = item.label;
      }

      nn::zero_grads(params);
      auto [loss, ncorrect] = model.loss_on_batch(feats, labels, hyper.am_softmax, true);
      opt.step(params, hyper.lr);
      loss_sum += loss * static_cast<double>(batch);
      correct += ncorrect;
      seen += batch;
    }
    nn::EpochMetrics em;
    em.epoch = epoch;
    em.loss = loss_sum / static_cast<double>(std::max<int64_t>(seen, 1));
    em.accuracy = static_cast<double>(correct) / static_cast<double>(std::max<int64_t>(seen, 1));
    em.lr = hyper.lr;
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
  }
  return log;
}

}  // namespace detail

/// Two-stage workflow: optional pretraining, classifier re-initialization for
/// the fine-tune speaker set, then fine-tuning.  SGD + AM-Softmax throughout.
template <typename T>
nn::TrainLog train_audio(EtdnnModel<T>& model, const AudioTrainSet* pretrain,
                         const AudioTrainSet& finetune, const AudioTrainHyper& hyper,
                         uint64_t seed, const std::string& checkpoint_path = "") {
  Rng rng(seed);
  if (pretrain != nullptr) {
    if (model.config().n_classes != pretrain->n_classes)
      model.reset_head(pretrain->n_classes, rng.next_u64());
    detail::run_audio_stage(model, *pretrain, hyper, hyper.pretrain_epochs, rng, "");
    model.reset_head(finetune.n_classes, rng.next_u64());
  } else if (model.config().n_classes != finetune.n_classes) {
    model.reset_head(finetune.n_classes, rng.next_u64());
  }
  return detail::run_audio_stage(model, finetune, hyper, hyper.epochs, rng,
                                 checkpoint_path);
}

}  // namespace avlip
