// avlip/nn/layers.hpp

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

#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "avlip/common.hpp"
#include "avlip/rng.hpp"
#include "avlip/tensor.hpp"

// Explicit forward/backward layers over flat row-major tensors.  The scalar
// type is a template parameter throughout: training runs in float, the
// finite-difference gradient tests in double.

namespace avlip::nn {

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  void init_shape(std::vector<int64_t> shape) {
    value.resize(shape);
    grad.resize(std::move(shape));
  }
  void zero_grad() { grad.set_zero(); }
};

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor<T> forward(const Tensor<T>& x, bool train) = 0;
  virtual Tensor<T> backward(const Tensor<T>& gy) = 0;
  virtual void collect_params(std::vector<Param<T>*>& out) {}
  // non-trainable state (batch-norm running statistics), for checkpoints
  virtual void collect_buffers(std::vector<std::vector<double>*>& out) {}
  virtual const char* kind() const = 0;
};

namespace init {

// He-normal fan-in initialization for weights feeding ReLUs.
template <typename T>
void he_normal(Tensor<T>& w, int64_t fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(rng.normal(0.0, stddev));
}

template <typename T>
void xavier_uniform(Tensor<T>& w, int64_t fan_in, int64_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(rng.uniform(-bound, bound));
}

}  // namespace init

// ---------------------------------------------------------------------------
// Linear: (N, in) -> (N, out)
// ---------------------------------------------------------------------------

template <typename T>
class Linear : public Layer<T> {
 public:
  Linear(int64_t in_dim, int64_t out_dim, Rng& rng, bool bias = true)
      : in_(in_dim), out_(out_dim), has_bias_(bias) {
    w_.name = "weight";
    w_.init_shape({out_dim, in_dim});
    init::he_normal(w_.value, in_dim, rng);
    if (has_bias_) {
      b_.name = "bias";
      b_.init_shape({out_dim});
    }
  }

  Tensor<T> forward(const Tensor<T>& x, bool) override {
    if (x.rank() != 2 || x.dim(1) != in_)
      raise<BadShape>("Linear expects Nx", in_, ", got ", x.shape_str());
    x_ = x;
    const int64_t n = x.dim(0);
    Tensor<T> y({n, out_});
    map_matrix(y.data(), n, out_).noalias() =
        map_matrix(x.data(), n, in_) * map_matrix(w_.value.data(), out_, in_).transpose();
    if (has_bias_)
      map_matrix(y.data(), n, out_).rowwise() +=
          map_vector(b_.value.data(), out_).transpose();
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    const int64_t n = x_.dim(0);
    map_matrix(w_.grad.data(), out_, in_).noalias() +=
        map_matrix(gy.data(), n, out_).transpose() * map_matrix(x_.data(), n, in_);
    if (has_bias_)
      map_vector(b_.grad.data(), out_).noalias() +=
          map_matrix(gy.data(), n, out_).colwise().sum().transpose();
    Tensor<T> gx({n, in_});
    map_matrix(gx.data(), n, in_).noalias() =
        map_matrix(gy.data(), n, out_) * map_matrix(w_.value.data(), out_, in_);
    return gx;
  }

  void collect_params(std::vector<Param<T>*>& out) override {
    out.push_back(&w_);
    if (has_bias_) out.push_back(&b_);
  }
  const char* kind() const override { return "linear"; }

  int64_t in_dim() const { return in_; }
  int64_t out_dim() const { return out_; }

 private:
  int64_t in_, out_;
  bool has_bias_;
  Param<T> w_, b_;
  Tensor<T> x_;
};

// ---------------------------------------------------------------------------
// ReLU (any shape)
// ---------------------------------------------------------------------------

template <typename T>
class Relu : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool) override {
    mask_.assign(static_cast<size_t>(x.numel()), 0);
    Tensor<T> y = x;
    for (int64_t i = 0; i < y.numel(); ++i) {
      if (y[i] > T(0)) mask_[static_cast<size_t>(i)] = 1;
      else y[i] = T(0);
    }
    shape_ = x.shape();
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    Tensor<T> gx = gy;
    for (int64_t i = 0; i < gx.numel(); ++i)
      if (!mask_[static_cast<size_t>(i)]) gx[i] = T(0);
    return gx;
  }

  const char* kind() const override { return "relu"; }

 private:
  std::vector<uint8_t> mask_;
  std::vector<int64_t> shape_;
};

// ---------------------------------------------------------------------------
// BatchNorm over axis 1 of (d0, C, rest...): statistics across d0 and rest.
// Covers the (N,C), (B,C,T), (N,C,H,W) and (B,C,T,H,W) layouts used here.
// ---------------------------------------------------------------------------

template <typename T>
class BatchNorm : public Layer<T> {
 public:
  explicit BatchNorm(int64_t channels, double momentum = 0.1, double eps = 1e-5)
      : c_(channels), momentum_(momentum), eps_(eps) {
    gamma_.name = "gamma";
    gamma_.init_shape({channels});
    gamma_.value.fill(T(1));
    beta_.name = "beta";
    beta_.init_shape({channels});
    running_mean_.assign(static_cast<size_t>(channels), 0.0);
    running_var_.assign(static_cast<size_t>(channels), 1.0);
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) override {
    if (x.rank() < 2 || x.dim(1) != c_)
      raise<BadShape>("BatchNorm(", c_, ") got ", x.shape_str());
    outer_ = x.dim(0);
    inner_ = x.numel() / (outer_ * c_);
    const int64_t m = outer_ * inner_;
    train_ = train;

    std::vector<double> mean(static_cast<size_t>(c_)), var(static_cast<size_t>(c_));
    if (train) {
      for (int64_t c = 0; c < c_; ++c) {
        double acc = 0.0;
        for (int64_t o = 0; o < outer_; ++o) {
          const T* p = x.data() + (o * c_ + c) * inner_;
          for (int64_t i = 0; i < inner_; ++i) acc += static_cast<double>(p[i]);
        }
        mean[static_cast<size_t>(c)] = acc / static_cast<double>(m);
      }
      for (int64_t c = 0; c < c_; ++c) {
        double acc = 0.0;
        const double mu = mean[static_cast<size_t>(c)];
        for (int64_t o = 0; o < outer_; ++o) {
          const T* p = x.data() + (o * c_ + c) * inner_;
          for (int64_t i = 0; i < inner_; ++i) {
            const double d = static_cast<double>(p[i]) - mu;
            acc += d * d;
          }
        }
        var[static_cast<size_t>(c)] = acc / static_cast<double>(m);
      }
      for (int64_t c = 0; c < c_; ++c) {
        running_mean_[static_cast<size_t>(c)] =
            (1.0 - momentum_) * running_mean_[static_cast<size_t>(c)] + momentum_ * mean[static_cast<size_t>(c)];
        running_var_[static_cast<size_t>(c)] =
            (1.0 - momentum_) * running_var_[static_cast<size_t>(c)] + momentum_ * var[static_cast<size_t>(c)];
      }
    } else {
      mean = running_mean_;
      var = running_var_;
    }

    inv_std_.resize(static_cast<size_t>(c_));
    for (int64_t c = 0; c < c_; ++c)
      inv_std_[static_cast<size_t>(c)] = 1.0 / std::sqrt(var[static_cast<size_t>(c)] + eps_);

    xhat_.resize(x.shape());
    Tensor<T> y(x.shape());
    for (int64_t c = 0; c < c_; ++c) {
      const double mu = mean[static_cast<size_t>(c)];
      const double is = inv_std_[static_cast<size_t>(c)];
      const double g = static_cast<double>(gamma_.value[c]);
      const double b = static_cast<double>(beta_.value[c]);
      for (int64_t o = 0; o < outer_; ++o) {
        const int64_t base = (o * c_ + c) * inner_;
        for (int64_t i = 0; i < inner_; ++i) {
          const double xh = (static_cast<double>(x[base + i]) - mu) * is;
          xhat_[base + i] = static_cast<T>(xh);
          y[base + i] = static_cast<T>(g * xh + b);
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    const int64_t m = outer_ * inner_;
    Tensor<T> gx(gy.shape());
    for (int64_t c = 0; c < c_; ++c) {
      double sum_gy = 0.0, sum_gy_xhat = 0.0;
      for (int64_t o = 0; o < outer_; ++o) {
        const int64_t base = (o * c_ + c) * inner_;
        for (int64_t i = 0; i < inner_; ++i) {
          const double g = static_cast<double>(gy[base + i]);
          sum_gy += g;
          sum_gy_xhat += g * static_cast<double>(xhat_[base + i]);
        }
      }
      gamma_.grad[c] += static_cast<T>(sum_gy_xhat);
      beta_.grad[c] += static_cast<T>(sum_gy);

      const double g_is = static_cast<double>(gamma_.value[c]) * inv_std_[static_cast<size_t>(c)];
      if (train_) {
        const double mean_gy = sum_gy / static_cast<double>(m);
        const double mean_gy_xhat = sum_gy_xhat / static_cast<double>(m);
        for (int64_t o = 0; o < outer_; ++o) {
          const int64_t base = (o * c_ + c) * inner_;
          for (int64_t i = 0; i < inner_; ++i) {
            const double xh = static_cast<double>(xhat_[base + i]);
            gx[base + i] = static_cast<T>(
                g_is * (static_cast<double>(gy[base + i]) - mean_gy - xh * mean_gy_xhat));
          }
        }
      } else {
        for (int64_t o = 0; o < outer_; ++o) {
          const int64_t base = (o * c_ + c) * inner_;
          for (int64_t i = 0; i < inner_; ++i)
            gx[base + i] = static_cast<T>(g_is * static_cast<double>(gy[base + i]));
        }
      }
    }
    return gx;
  }

  void collect_params(std::vector<Param<T>*>& out) override {
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }
  void collect_buffers(std::vector<std::vector<double>*>& out) override {
    out.push_back(&running_mean_);
    out.push_back(&running_var_);
  }
  const char* kind() const override { return "batchnorm"; }

  std::vector<double>& running_mean() { return running_mean_; }
  std::vector<double>& running_var() { return running_var_; }

 private:
  int64_t c_;
  double momentum_, eps_;
  Param<T> gamma_, beta_;
  std::vector<double> running_mean_, running_var_;

  // forward cache
  Tensor<T> xhat_;
  std::vector<double> inv_std_;
  int64_t outer_ = 0, inner_ = 0;
  bool train_ = false;
};

// ---------------------------------------------------------------------------
// Conv1d over (B, C, T), optional dilation; zero "same" padding or valid.
// ---------------------------------------------------------------------------

template <typename T>
class Conv1d : public Layer<T> {
 public:
  Conv1d(int64_t in_ch, int64_t out_ch, int64_t kernel, int64_t dilation, bool same_pad,
         Rng& rng, bool bias = true)
      : cin_(in_ch), cout_(out_ch), k_(kernel), dil_(dilation), same_(same_pad),
        has_bias_(bias) {
    w_.name = "weight";
    w_.init_shape({out_ch, in_ch, kernel});
    init::he_normal(w_.value, in_ch * kernel, rng);
    if (has_bias_) {
      b_.name = "bias";
      b_.init_shape({out_ch});
    }
  }

  int64_t span() const { return dil_ * (k_ - 1) + 1; }  // receptive span in frames

  Tensor<T> forward(const Tensor<T>& x, bool) override {
    if (x.rank() != 3 || x.dim(1) != cin_)
      raise<BadShape>("Conv1d expects BxCxT with C=", cin_, ", got ", x.shape_str());
    x_ = x;
    const int64_t b = x.dim(0), t = x.dim(2);
    const int64_t pad = same_ ? (span() - 1) / 2 : 0;
    const int64_t to = same_ ? t : t - span() + 1;
    if (to < 1)
      raise<TooShort>("Conv1d input of ", t, " frames is below the receptive span ",
                      span());
    t_out_ = to;
    pad_ = pad;

    const int64_t kk = cin_ * k_;
    col_.resize({b, kk, to});
    for (int64_t n = 0; n < b; ++n) {
      T* col = col_.data() + n * kk * to;
      const T* xn = x.data() + n * cin_ * t;
      for (int64_t c = 0; c < cin_; ++c) {
        for (int64_t ki = 0; ki < k_; ++ki) {
          T* dst = col + (c * k_ + ki) * to;
          const int64_t off = ki * dil_ - pad;
          for (int64_t o = 0; o < to; ++o) {
            const int64_t it = o + off;
            dst[o] = (it >= 0 && it < t) ? xn[c * t + it] : T(0);
          }
        }
      }
    }

    Tensor<T> y({b, cout_, to});
    for (int64_t n = 0; n < b; ++n) {
      map_matrix(y.data() + n * cout_ * to, cout_, to).noalias() =
          map_matrix(w_.value.data(), cout_, kk) *
          map_matrix(col_.data() + n * kk * to, kk, to);
      if (has_bias_)
        map_matrix(y.data() + n * cout_ * to, cout_, to).colwise() +=
            map_vector(b_.value.data(), cout_);
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    const int64_t b = x_.dim(0), t = x_.dim(2);
    const int64_t to = t_out_;
    const int64_t kk = cin_ * k_;
    Tensor<T> gx(x_.shape());
    Tensor<T> gcol({kk, to});
    for (int64_t n = 0; n < b; ++n) {
      auto gy_n = map_matrix(gy.data() + n * cout_ * to, cout_, to);
      map_matrix(w_.grad.data(), cout_, kk).noalias() +=
          gy_n * map_matrix(col_.data() + n * kk * to, kk, to).transpose();
      if (has_bias_)
        map_vector(b_.grad.data(), cout_).noalias() += gy_n.rowwise().sum();
      map_matrix(gcol.data(), kk, to).noalias() =
          map_matrix(w_.value.data(), cout_, kk).transpose() * gy_n;
      T* gxn = gx.data() + n * cin_ * t;
      for (int64_t c = 0; c < cin_; ++c) {
        for (int64_t ki = 0; ki < k_; ++ki) {
          const T* src = gcol.data() + (c * k_ + ki) * to;
          const int64_t off = ki * dil_ - pad_;
          for (int64_t o = 0; o < to; ++o) {
            const int64_t it = o + off;
            if (it >= 0 && it < t) gxn[c * t + it] += src[o];
          }
        }
      }
    }
    return gx;
  }

  void collect_params(std::vector<Param<T>*>& out) override {
    out.push_back(&w_);
    if (has_bias_) out.push_back(&b_);
  }
  const char* kind() const override { return "conv1d"; }

 private:
  int64_t cin_, cout_, k_, dil_;
  bool same_, has_bias_;
  Param<T> w_, b_;
  Tensor<T> x_, col_;
  int64_t t_out_ = 0, pad_ = 0;
};

// ---------------------------------------------------------------------------
// Conv2d over (N, C, H, W)
// ---------------------------------------------------------------------------

template <typename T>
class Conv2d : public Layer<T> {
 public:
  Conv2d(int64_t in_ch, int64_t out_ch, int64_t kernel, int64_t stride, int64_t pad,
         Rng& rng, bool bias = false)
      : cin_(in_ch), cout_(out_ch), k_(kernel), s_(stride), p_(pad), has_bias_(bias) {
    w_.name = "weight";
    w_.init_shape({out_ch, in_ch, kernel, kernel});
    init::he_normal(w_.value, in_ch * kernel * kernel, rng);
    if (has_bias_) {
      b_.name = "bias";
      b_.init_shape({out_ch});
    }
  }

  Tensor<T> forward(const Tensor<T>& x, bool) override {
    if (x.rank() != 4 || x.dim(1) != cin_)
      raise<BadShape>("Conv2d expects NxCxHxW with C=", cin_, ", got ", x.shape_str());
    x_ = x;
    const int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    ho_ = (h + 2 * p_ - k_) / s_ + 1;
    wo_ = (w + 2 * p_ - k_) / s_ + 1;
    if (ho_ < 1 || wo_ < 1) raise<BadShape>("Conv2d output would be empty");
    const int64_t kk = cin_ * k_ * k_;
    const int64_t l = ho_ * wo_;

    col_.resize({n, kk, l});
    for (int64_t i = 0; i < n; ++i) im2col(x.data() + i * cin_ * h * w, h, w, col_.data() + i * kk * l);

    Tensor<T> y({n, cout_, ho_, wo_});
    for (int64_t i = 0; i < n; ++i) {
      map_matrix(y.data() + i * cout_ * l, cout_, l).noalias() =
          map_matrix(w_.value.data(), cout_, kk) * map_matrix(col_.data() + i * kk * l, kk, l);
      if (has_bias_)
        map_matrix(y.data() + i * cout_ * l, cout_, l).colwise() +=
            map_vector(b_.value.data(), cout_);
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    const int64_t n = x_.dim(0), h = x_.dim(2), w = x_.dim(3);
    const int64_t kk = cin_ * k_ * k_;
    const int64_t l = ho_ * wo_;
    Tensor<T> gx(x_.shape());
    Tensor<T> gcol({kk, l});
    for (int64_t i = 0; i < n; ++i) {
      auto gy_i = map_matrix(gy.data() + i * cout_ * l, cout_, l);
      map_matrix(w_.grad.data(), cout_, kk).noalias() +=
          gy_i * map_matrix(col_.data() + i * kk * l, kk, l).transpose();
      if (has_bias_)
        map_vector(b_.grad.data(), cout_).noalias() += gy_i.rowwise().sum();
      map_matrix(gcol.data(), kk, l).noalias() =
          map_matrix(w_.value.data(), cout_, kk).transpose() * gy_i;
      col2im(gcol.data(), h, w, gx.data() + i * cin_ * h * w);
    }
    return gx;
  }

  void collect_params(std::vector<Param<T>*>& out) override {
    out.push_back(&w_);
    if (has_bias_) out.push_back(&b_);
  }
  const char* kind() const override { return "conv2d"; }

 private:
  void im2col(const T* x, int64_t h, int64_t w, T* col) const {
    const int64_t l = ho_ * wo_;
    for (int64_t c = 0; c < cin_; ++c) {
      for (int64_t ky = 0; ky < k_; ++ky) {
        for (int64_t kx = 0; kx < k_; ++kx) {
          T* dst = col + ((c * k_ + ky) * k_ + kx) * l;
          for (int64_t oy = 0; oy < ho_; ++oy) {
            const int64_t iy = oy * s_ - p_ + ky;
            if (iy < 0 || iy >= h) {
              std::fill_n(dst + oy * wo_, wo_, T(0));
              continue;
            }
            const T* src = x + (c * h + iy) * w;
            for (int64_t ox = 0; ox < wo_; ++ox) {
              const int64_t ix = ox * s_ - p_ + kx;
              dst[oy * wo_ + ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
            }
          }
        }
      }
    }
  }

  void col2im(const T* col, int64_t h, int64_t w, T* gx) const {
    const int64_t l = ho_ * wo_;
    for (int64_t c = 0; c < cin_; ++c) {
      for (int64_t ky = 0; ky < k_; ++ky) {
        for (int64_t kx = 0; kx < k_; ++kx) {
          const T* src = col + ((c * k_ + ky) * k_ + kx) * l;
          for (int64_t oy = 0; oy < ho_; ++oy) {
            const int64_t iy = oy * s_ - p_ + ky;
            if (iy < 0 || iy >= h) continue;
            T* dst = gx + (c * h + iy) * w;
            for (int64_t ox = 0; ox < wo_; ++ox) {
              const int64_t ix = ox * s_ - p_ + kx;
              if (ix >= 0 && ix < w) dst[ix] += src[oy * wo_ + ox];
            }
          }
        }
      }
    }
  }

  int64_t cin_, cout_, k_, s_, p_;
  bool has_bias_;
  Param<T> w_, b_;
  Tensor<T> x_, col_;
  int64_t ho_ = 0, wo_ = 0;
};

// ---------------------------------------------------------------------------
// Conv3d over (B, C, T, H, W)
// ---------------------------------------------------------------------------

struct Conv3dSpec {
  int64_t kt = 5, kh = 7, kw = 7;
  int64_t st = 1, sh = 2, sw = 2;
  int64_t pt = 2, ph = 3, pw = 3;
};

template <typename T>
class Conv3d : public Layer<T> {
 public:
  Conv3d(int64_t in_ch, int64_t out_ch, const Conv3dSpec& spec, Rng& rng, bool bias = false)
      : cin_(in_ch), cout_(out_ch), sp_(spec), has_bias_(bias) {
    w_.name = "weight";
    w_.init_shape({out_ch, in_ch, spec.kt, spec.kh, spec.kw});
    init::he_normal(w_.value, in_ch * spec.kt * spec.kh * spec.kw, rng);
    if (has_bias_) {
      b_.name = "bias";
      b_.init_shape({out_ch});
    }
  }

  Tensor<T> forward(const Tensor<T>& x, bool) override {
    if (x.rank() != 5 || x.dim(1) != cin_)
      raise<BadShape>("Conv3d expects BxCxTxHxW with C=", cin_, ", got ", x.shape_str());
    x_ = x;
    const int64_t b = x.dim(0), t = x.dim(2), h = x.dim(3), w = x.dim(4);
    to_ = (t + 2 * sp_.pt - sp_.kt) / sp_.st + 1;
    ho_ = (h + 2 * sp_.ph - sp_.kh) / sp_.sh + 1;
    wo_ = (w + 2 * sp_.pw - sp_.kw) / sp_.sw + 1;
    if (to_ < 1 || ho_ < 1 || wo_ < 1) raise<BadShape>("Conv3d output would be empty");
    const int64_t kk = cin_ * sp_.kt * sp_.kh * sp_.kw;
    const int64_t l = to_ * ho_ * wo_;

    // per-sample columns: the buffer is reused, weight GEMM applied directly
    Tensor<T> y({b, cout_, to_, ho_, wo_});
    col_.resize({b, kk, l});
    for (int64_t i = 0; i < b; ++i) {
      vol2col(x.data() + i * cin_ * t * h * w, t, h, w, col_.data() + i * kk * l);
      map_matrix(y.data() + i * cout_ * l, cout_, l).noalias() =
          map_matrix(w_.value.data(), cout_, kk) * map_matrix(col_.data() + i * kk * l, kk, l);
      if (has_bias_)
        map_matrix(y.data() + i * cout_ * l, cout_, l).colwise() +=
            map_vector(b_.value.data(), cout_);
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    const int64_t b = x_.dim(0), t = x_.dim(2), h = x_.dim(3), w = x_.dim(4);
    const int64_t kk = cin_ * sp_.kt * sp_.kh * sp_.kw;
    const int64_t l = to_ * ho_ * wo_;
    Tensor<T> gx(x_.shape());
    Tensor<T> gcol({kk, l});
    for (int64_t i = 0; i < b; ++i) {
      auto gy_i = map_matrix(gy.data() + i * cout_ * l, cout_, l);
      map_matrix(w_.grad.data(), cout_, kk).noalias() +=
          gy_i * map_matrix(col_.data() + i * kk * l, kk, l).transpose();
      if (has_bias_)
        map_vector(b_.grad.data(), cout_).noalias() += gy_i.rowwise().sum();
      map_matrix(gcol.data(), kk, l).noalias() =
          map_matrix(w_.value.data(), cout_, kk).transpose() * gy_i;
      col2vol(gcol.data(), t, h, w, gx.data() + i * cin_ * t * h * w);
    }
    return gx;
  }

  void collect_params(std::vector<Param<T>*>& out) override {
    out.push_back(&w_);
    if (has_bias_) out.push_back(&b_);
  }
  const char* kind() const override { return "conv3d"; }

 private:
  void vol2col(const T* x, int64_t t, int64_t h, int64_t w, T* col) const {
    const int64_t l = to_ * ho_ * wo_;
    int64_t row = 0;
    for (int64_t c = 0; c < cin_; ++c) {
      for (int64_t kt = 0; kt < sp_.kt; ++kt) {
        for (int64_t ky = 0; ky < sp_.kh; ++ky) {
          for (int64_t kx = 0; kx < sp_.kw; ++kx, ++row) {
            T* dst = col + row * l;
            for (int64_t ot = 0; ot < to_; ++ot) {
              const int64_t it = ot * sp_.st - sp_.pt + kt;
              for (int64_t oy = 0; oy < ho_; ++oy) {
                const int64_t iy = oy * sp_.sh - sp_.ph + ky;
                T* d = dst + (ot * ho_ + oy) * wo_;
                if (it < 0 || it >= t || iy < 0 || iy >= h) {
                  std::fill_n(d, wo_, T(0));
                  continue;
                }
                const T* src = x + ((c * t + it) * h + iy) * w;
                for (int64_t ox = 0; ox < wo_; ++ox) {
                  const int64_t ix = ox * sp_.sw - sp_.pw + kx;
                  d[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
                }
              }
            }
          }
        }
      }
    }
  }

  void col2vol(const T* col, int64_t t, int64_t h, int64_t w, T* gx) const {
    const int64_t l = to_ * ho_ * wo_;
    int64_t row = 0;
    for (int64_t c = 0; c < cin_; ++c) {
      for (int64_t kt = 0; kt < sp_.kt; ++kt) {
        for (int64_t ky = 0; ky < sp_.kh; ++ky) {
          for (int64_t kx = 0; kx < sp_.kw; ++kx, ++row) {
            const T* src = col + row * l;
            for (int64_t ot = 0; ot < to_; ++ot) {
              const int64_t it = ot * sp_.st - sp_.pt + kt;
              if (it < 0 || it >= t) continue;
              for (int64_t oy = 0; oy < ho_; ++oy) {
                const int64_t iy = oy * sp_.sh - sp_.ph + ky;
                if (iy < 0 || iy >= h) continue;
                const T* s = src + (ot * ho_ + oy) * wo_;
                T* dst = gx + ((c * t + it) * h + iy) * w;
                for (int64_t ox = 0; ox < wo_; ++ox) {
                  const int64_t ix = ox * sp_.sw - sp_.pw + kx;
                  if (ix >= 0 && ix < w) dst[ix] += s[ox];
                }
              }
            }
          }
        }
      }
    }
  }

  int64_t cin_, cout_;
  Conv3dSpec sp_;
  bool has_bias_;
  Param<T> w_, b_;
  Tensor<T> x_, col_;
  int64_t to_ = 0, ho_ = 0, wo_ = 0;
};

// ---------------------------------------------------------------------------
// Spatial max pooling over (B, C, T, H, W): kernel/stride/pad act on H, W only.
// ---------------------------------------------------------------------------

template <typename T>
class SpatialMaxPool3d : public Layer<T> {
 public:
  SpatialMaxPool3d(int64_t kernel, int64_t stride, int64_t pad)
      : k_(kernel), s_(stride), p_(pad) {}

  Tensor<T> forward(const Tensor<T>& x, bool) override {
    if (x.rank() != 5) raise<BadShape>("SpatialMaxPool3d expects BxCxTxHxW");
    in_shape_ = x.shape();
    const int64_t planes = x.dim(0) * x.dim(1) * x.dim(2);
    const int64_t h = x.dim(3), w = x.dim(4);
    ho_ = (h + 2 * p_ - k_) / s_ + 1;
    wo_ = (w + 2 * p_ - k_) / s_ + 1;
    Tensor<T> y({x.dim(0), x.dim(1), x.dim(2), ho_, wo_});
    argmax_.assign(static_cast<size_t>(planes * ho_ * wo_), 0);
    for (int64_t pl = 0; pl < planes; ++pl) {
      const T* src = x.data() + pl * h * w;
      T* dst = y.data() + pl * ho_ * wo_;
      for (int64_t oy = 0; oy < ho_; ++oy) {
        for (int64_t ox = 0; ox < wo_; ++ox) {
          T best = std::numeric_limits<T>::lowest();
          int64_t best_idx = -1;
          for (int64_t ky = 0; ky < k_; ++ky) {
            const int64_t iy = oy * s_ - p_ + ky;
            if (iy < 0 || iy >= h) continue;
            for (int64_t kx = 0; kx < k_; ++kx) {
              const int64_t ix = ox * s_ - p_ + kx;
              if (ix < 0 || ix >= w) continue;
              const T v = src[iy * w + ix];
              if (v > best) {
                best = v;
                best_idx = iy * w + ix;
              }
            }
          }
          dst[oy * wo_ + ox] = best;
          argmax_[static_cast<size_t>(pl * ho_ * wo_ + oy * wo_ + ox)] = best_idx;
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    Tensor<T> gx(in_shape_);
    const int64_t planes = in_shape_[0] * in_shape_[1] * in_shape_[2];
    const int64_t hw = in_shape_[3] * in_shape_[4];
    for (int64_t pl = 0; pl < planes; ++pl) {
      const T* g = gy.data() + pl * ho_ * wo_;
      T* dst = gx.data() + pl * hw;
      for (int64_t i = 0; i < ho_ * wo_; ++i) {
        const int64_t idx = argmax_[static_cast<size_t>(pl * ho_ * wo_ + i)];
        if (idx >= 0) dst[idx] += g[i];
      }
    }
    return gx;
  }

  const char* kind() const override { return "maxpool3d"; }

 private:
  int64_t k_, s_, p_;
  std::vector<int64_t> in_shape_;
  std::vector<int64_t> argmax_;
  int64_t ho_ = 0, wo_ = 0;
};

// ---------------------------------------------------------------------------
// Global average pooling (N, C, H, W) -> (N, C)
// ---------------------------------------------------------------------------

template <typename T>
class GlobalAvgPool2d : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool) override {
    if (x.rank() != 4) raise<BadShape>("GlobalAvgPool2d expects NxCxHxW");
    in_shape_ = x.shape();
    const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor<T> y({n, c});
    for (int64_t i = 0; i < n * c; ++i) {
      double acc = 0.0;
      const T* p = x.data() + i * hw;
      for (int64_t j = 0; j < hw; ++j) acc += static_cast<double>(p[j]);
      y[i] = static_cast<T>(acc / static_cast<double>(hw));
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    Tensor<T> gx(in_shape_);
    const int64_t hw = in_shape_[2] * in_shape_[3];
    const T scale = T(1) / static_cast<T>(hw);
    for (int64_t i = 0; i < gy.numel(); ++i) {
      T* p = gx.data() + i * hw;
      const T g = gy[i] * scale;
      for (int64_t j = 0; j < hw; ++j) p[j] = g;
    }
    return gx;
  }

  const char* kind() const override { return "gap2d"; }

 private:
  std::vector<int64_t> in_shape_;
};

// ---------------------------------------------------------------------------
// Temporal mean (B, C, T) -> (B, C)
// ---------------------------------------------------------------------------

template <typename T>
class TemporalMean : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool) override {
    if (x.rank() != 3) raise<BadShape>("TemporalMean expects BxCxT");
    in_shape_ = x.shape();
    const int64_t b = x.dim(0), c = x.dim(1), t = x.dim(2);
    Tensor<T> y({b, c});
    for (int64_t i = 0; i < b * c; ++i) {
      double acc = 0.0;
      const T* p = x.data() + i * t;
      for (int64_t j = 0; j < t; ++j) acc += static_cast<double>(p[j]);
      y[i] = static_cast<T>(acc / static_cast<double>(t));
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    Tensor<T> gx(in_shape_);
    const int64_t t = in_shape_[2];
    const T scale = T(1) / static_cast<T>(t);
    for (int64_t i = 0; i < gy.numel(); ++i) {
      T* p = gx.data() + i * t;
      const T g = gy[i] * scale;
      for (int64_t j = 0; j < t; ++j) p[j] = g;
    }
    return gx;
  }

  const char* kind() const override { return "temporal_mean"; }

 private:
  std::vector<int64_t> in_shape_;
};

// ---------------------------------------------------------------------------
// Statistics pooling (B, C, T) -> (B, 2C): per-channel mean and population
// standard deviation over time.  Constant input yields std exactly 0; the
// 1e-10 floor applies only where std divides in the backward pass.
// ---------------------------------------------------------------------------

constexpr double kStdFloor = 1e-10;

template <typename T>
class StatsPool : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool) override {
    if (x.rank() != 3) raise<BadShape>("StatsPool expects BxCxT, got ", x.shape_str());
    x_ = x;
    const int64_t b = x.dim(0), c = x.dim(1), t = x.dim(2);
    Tensor<T> y({b, 2 * c});
    for (int64_t n = 0; n < b; ++n) {
      for (int64_t ch = 0; ch < c; ++ch) {
        const T* p = x.data() + (n * c + ch) * t;
        double mean = 0.0;
        for (int64_t i = 0; i < t; ++i) mean += static_cast<double>(p[i]);
        mean /= static_cast<double>(t);
        double var = 0.0;
        for (int64_t i = 0; i < t; ++i) {
          const double d = static_cast<double>(p[i]) - mean;
          var += d * d;
        }
        var /= static_cast<double>(t);
        y(n, ch) = static_cast<T>(mean);
        y(n, c + ch) = static_cast<T>(std::sqrt(std::max(var, 0.0)));
      }
    }
    y_ = y;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    const int64_t b = x_.dim(0), c = x_.dim(1), t = x_.dim(2);
    Tensor<T> gx(x_.shape());
    for (int64_t n = 0; n < b; ++n) {
      for (int64_t ch = 0; ch < c; ++ch) {
        const T* p = x_.data() + (n * c + ch) * t;
        T* g = gx.data() + (n * c + ch) * t;
        const double mean = static_cast<double>(y_(n, ch));
        const double sd = std::max(static_cast<double>(y_(n, c + ch)), kStdFloor);
        const double gm = static_cast<double>(gy(n, ch)) / static_cast<double>(t);
        const double gs = static_cast<double>(gy(n, c + ch)) / (static_cast<double>(t) * sd);
        for (int64_t i = 0; i < t; ++i)
          g[i] = static_cast<T>(gm + gs * (static_cast<double>(p[i]) - mean));
      }
    }
    return gx;
  }

  const char* kind() const override { return "stats_pool"; }

 private:
  Tensor<T> x_, y_;
};

/// Free-function statistics pooling over frame-major input (B x T x C).
template <typename T>
Tensor<T> stats_pool(const Tensor<T>& frames) {
  if (frames.rank() != 3) raise<BadShape>("stats_pool expects BxTxC, got ", frames.shape_str());
  const int64_t b = frames.dim(0), t = frames.dim(1), c = frames.dim(2);
  Tensor<T> y({b, 2 * c});
  for (int64_t n = 0; n < b; ++n) {
    for (int64_t ch = 0; ch < c; ++ch) {
      double mean = 0.0;
      for (int64_t i = 0; i < t; ++i) mean += static_cast<double>(frames(n, i, ch));
      mean /= static_cast<double>(t);
      double var = 0.0;
      for (int64_t i = 0; i < t; ++i) {
        const double d = static_cast<double>(frames(n, i, ch)) - mean;
        var += d * d;
      }
      var /= static_cast<double>(t);
      y(n, ch) = static_cast<T>(mean);
      y(n, c + ch) = static_cast<T>(std::sqrt(std::max(var, 0.0)));
    }
  }
  return y;
}

// ---------------------------------------------------------------------------
// Containers and composite blocks
// ---------------------------------------------------------------------------

template <typename T>
class Sequential : public Layer<T> {
 public:
  Sequential() = default;

  template <typename L, typename... Args>
  L* emplace(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L* raw = layer.get();
    layers_.push_back(std::move(layer));
    return raw;
  }

  void append(std::unique_ptr<Layer<T>> l) { layers_.push_back(std::move(l)); }

  Tensor<T> forward(const Tensor<T>& x, bool train) override {
    Tensor<T> h = x;
    for (auto& l : layers_) h = l->forward(h, train);
    return h;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    Tensor<T> g = gy;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  void collect_params(std::vector<Param<T>*>& out) override {
    for (auto& l : layers_) l->collect_params(out);
  }
  void collect_buffers(std::vector<std::vector<double>*>& out) override {
    for (auto& l : layers_) l->collect_buffers(out);
  }
  const char* kind() const override { return "sequential"; }

  size_t size() const { return layers_.size(); }
  Layer<T>* at(size_t i) { return layers_[i].get(); }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

// Basic 2-conv residual block (conv-bn-relu-conv-bn + shortcut, final relu).
template <typename T>
class ResidualBlock2d : public Layer<T> {
 public:
  ResidualBlock2d(int64_t in_ch, int64_t out_ch, int64_t stride, Rng& rng)
      : conv1_(in_ch, out_ch, 3, stride, 1, rng), bn1_(out_ch),
        conv2_(out_ch, out_ch, 3, 1, 1, rng), bn2_(out_ch),
        downsample_(in_ch != out_ch || stride != 1) {
    if (downsample_) {
      sc_conv_ = std::make_unique<Conv2d<T>>(in_ch, out_ch, 1, stride, 0, rng);
      sc_bn_ = std::make_unique<BatchNorm<T>>(out_ch);
    }
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) override {
    Tensor<T> h = bn1_.forward(conv1_.forward(x, train), train);
    h = relu1_.forward(h, train);
    h = bn2_.forward(conv2_.forward(h, train), train);
    Tensor<T> sc = downsample_
                       ? sc_bn_->forward(sc_conv_->forward(x, train), train)
                       : x;
    if (!h.same_shape(sc)) raise<BadShape>("residual shapes disagree");
    relu_mask_.assign(static_cast<size_t>(h.numel()), 0);
    for (int64_t i = 0; i < h.numel(); ++i) {
      const T v = h[i] + sc[i];
      if (v > T(0)) {
        h[i] = v;
        relu_mask_[static_cast<size_t>(i)] = 1;
      } else {
        h[i] = T(0);
      }
    }
    return h;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    Tensor<T> g = gy;
    for (int64_t i = 0; i < g.numel(); ++i)
      if (!relu_mask_[static_cast<size_t>(i)]) g[i] = T(0);
    Tensor<T> g_main = conv1_.backward(bn1_.backward(relu1_.backward(
        conv2_.backward(bn2_.backward(g)))));
    if (downsample_) {
      Tensor<T> g_sc = sc_conv_->backward(sc_bn_->backward(g));
      for (int64_t i = 0; i < g_main.numel(); ++i) g_main[i] += g_sc[i];
    } else {
      for (int64_t i = 0; i < g_main.numel(); ++i) g_main[i] += g[i];
    }
    return g_main;
  }

  void collect_params(std::vector<Param<T>*>& out) override {
    conv1_.collect_params(out);
    bn1_.collect_params(out);
    conv2_.collect_params(out);
    bn2_.collect_params(out);
    if (downsample_) {
      sc_conv_->collect_params(out);
      sc_bn_->collect_params(out);
    }
  }
  void collect_buffers(std::vector<std::vector<double>*>& out) override {
    bn1_.collect_buffers(out);
    bn2_.collect_buffers(out);
    if (downsample_) sc_bn_->collect_buffers(out);
  }
  const char* kind() const override { return "residual2d"; }

 private:
  Conv2d<T> conv1_;
  BatchNorm<T> bn1_;
  Relu<T> relu1_;
  Conv2d<T> conv2_;
  BatchNorm<T> bn2_;
  bool downsample_;
  std::unique_ptr<Conv2d<T>> sc_conv_;
  std::unique_ptr<BatchNorm<T>> sc_bn_;
  std::vector<uint8_t> relu_mask_;
};

// One multiscale TCN block: parallel conv1d branches with distinct kernel
// sizes and a shared dilation, each conv-bn-relu, outputs concatenated along
// channels.  Non-causal: symmetric zero padding keeps T.
template <typename T>
class MultiscaleTcnBlock : public Layer<T> {
 public:
  MultiscaleTcnBlock(int64_t in_ch, int64_t branch_width,
                     const std::vector<int64_t>& kernels, int64_t dilation, Rng& rng)
      : branch_width_(branch_width) {
    for (int64_t k : kernels) {
      auto seq = std::make_unique<Sequential<T>>();
      seq->template emplace<Conv1d<T>>(in_ch, branch_width, k, dilation, true, rng,
                                       /*bias=*/false);
      seq->template emplace<BatchNorm<T>>(branch_width);
      seq->template emplace<Relu<T>>();
      branches_.push_back(std::move(seq));
    }
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) override {
    const int64_t b = x.dim(0), t = x.dim(2);
    const int64_t nb = static_cast<int64_t>(branches_.size());
    Tensor<T> y({b, nb * branch_width_, t});
    for (int64_t bi = 0; bi < nb; ++bi) {
      Tensor<T> h = branches_[static_cast<size_t>(bi)]->forward(x, train);
      for (int64_t n = 0; n < b; ++n)
        std::copy_n(h.data() + n * branch_width_ * t, branch_width_ * t,
                    y.data() + (n * nb * branch_width_ + bi * branch_width_) * t);
    }
    in_shape_ = x.shape();
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    const int64_t b = in_shape_[0], t = in_shape_[2];
    const int64_t nb = static_cast<int64_t>(branches_.size());
    Tensor<T> gx(in_shape_);
    Tensor<T> gslice({b, branch_width_, t});
    for (int64_t bi = 0; bi < nb; ++bi) {
      for (int64_t n = 0; n < b; ++n)
        std::copy_n(gy.data() + (n * nb * branch_width_ + bi * branch_width_) * t,
                    branch_width_ * t, gslice.data() + n * branch_width_ * t);
      Tensor<T> g = branches_[static_cast<size_t>(bi)]->backward(gslice);
      for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += g[i];
    }
    return gx;
  }

  void collect_params(std::vector<Param<T>*>& out) override {
    for (auto& br : branches_) br->collect_params(out);
  }
  void collect_buffers(std::vector<std::vector<double>*>& out) override {
    for (auto& br : branches_) br->collect_buffers(out);
  }
  const char* kind() const override { return "mstcn_block"; }

 private:
  int64_t branch_width_;
  std::vector<std::unique_ptr<Sequential<T>>> branches_;
  std::vector<int64_t> in_shape_;
};

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Mean cross-entropy over the batch; returns (loss, dloss/dlogits).
template <typename T>
std::pair<double, Tensor<T>> softmax_cross_entropy(const Tensor<T>& logits,
                                                   const std::vector<int>& labels) {
  const int64_t b = logits.dim(0), k = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != b)
    raise<BadShape>("labels/batch mismatch");
  Tensor<T> grad({b, k});
  double loss = 0.0;
  for (int64_t n = 0; n < b; ++n) {
    const int y = labels[static_cast<size_t>(n)];
    if (y < 0 || y >= k) raise<BadLabel>("label ", y, " outside [0, ", k, ")");
    const T* row = logits.data() + n * k;
    double mx = static_cast<double>(row[0]);
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double denom = 0.0;
    for (int64_t j = 0; j < k; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
    const double log_denom = std::log(denom) + mx;
    loss += log_denom - static_cast<double>(row[y]);
    for (int64_t j = 0; j < k; ++j) {
      const double p = std::exp(static_cast<double>(row[j]) - log_denom);
      grad(n, j) = static_cast<T>((p - (j == y ? 1.0 : 0.0)) / static_cast<double>(b));
    }
  }
  return {loss / static_cast<double>(b), std::move(grad)};
}

struct AmSoftmaxConfig {
  double margin = 0.2;
  double scale = 30.0;

  void validate() const {
    if (margin < 0) raise<ConfigError>("AM-Softmax margin must be >= 0");
    if (scale <= 0) raise<ConfigError>("AM-Softmax scale must be > 0");
  }
};

/// Additive-margin softmax head: cosine logits between L2-normalized
/// embeddings and class weights, target cosine reduced by the margin, all
/// scaled, then cross-entropy.
template <typename T>
class AmSoftmaxHead {
 public:
  AmSoftmaxHead(int64_t emb_dim, int64_t n_classes, AmSoftmaxConfig cfg, Rng& rng)
      : d_(emb_dim), k_(n_classes), cfg_(cfg) {
    cfg_.validate();
    w_.name = "am_weight";
    w_.init_shape({n_classes, emb_dim});
    init::xavier_uniform(w_.value, emb_dim, n_classes, rng);
  }

  /// Scaled cosine logits without margin (scoring / accuracy path).
  Tensor<T> cosine_logits(const Tensor<T>& emb) const {
    const int64_t b = emb.dim(0);
    Tensor<T> e_hat = normalize_rows(emb);
    Tensor<T> w_hat = normalize_rows(w_.value);
    Tensor<T> logits({b, k_});
    map_matrix(logits.data(), b, k_).noalias() =
        map_matrix(e_hat.data(), b, d_) * map_matrix(w_hat.data(), k_, d_).transpose();
    return logits;
  }

  /// Loss and gradient w.r.t. the (unnormalized) embeddings; accumulates the
  /// class-weight gradient internally unless compute_grads is false.
  std::pair<double, Tensor<T>> loss(const Tensor<T>& emb, const std::vector<int>& labels,
                                    bool compute_grads = true) {
    const int64_t b = emb.dim(0);
    if (emb.rank() != 2 || emb.dim(1) != d_)
      raise<BadShape>("AmSoftmaxHead expects Bx", d_, ", got ", emb.shape_str());
    for (int lab : labels)
      if (lab < 0 || lab >= k_) raise<BadLabel>("label ", lab, " outside [0, ", k_, ")");

    Tensor<T> e_hat = normalize_rows(emb);
    Tensor<T> w_hat = normalize_rows(w_.value);
    Tensor<T> cos({b, k_});
    map_matrix(cos.data(), b, k_).noalias() =
        map_matrix(e_hat.data(), b, d_) * map_matrix(w_hat.data(), k_, d_).transpose();

    Tensor<T> logits = cos;
    for (int64_t n = 0; n < b; ++n)
      logits(n, labels[static_cast<size_t>(n)]) -= static_cast<T>(cfg_.margin);
    for (int64_t i = 0; i < logits.numel(); ++i)
      logits[i] = static_cast<T>(static_cast<double>(logits[i]) * cfg_.scale);

    auto [loss_val, dlogits] = softmax_cross_entropy(logits, labels);
    if (!compute_grads) return {loss_val, Tensor<T>()};
    for (int64_t i = 0; i < dlogits.numel(); ++i)
      dlogits[i] = static_cast<T>(static_cast<double>(dlogits[i]) * cfg_.scale);
    // dlogits is now dL/dcos

    // gradient through both normalizations
    Tensor<T> ge_hat({b, d_});
    map_matrix(ge_hat.data(), b, d_).noalias() =
        map_matrix(dlogits.data(), b, k_) * map_matrix(w_hat.data(), k_, d_);
    Tensor<T> gw_hat({k_, d_});
    map_matrix(gw_hat.data(), k_, d_).noalias() =
        map_matrix(dlogits.data(), b, k_).transpose() * map_matrix(e_hat.data(), b, d_);

    Tensor<T> gemb = backprop_normalize(emb, e_hat, ge_hat);
    Tensor<T> gw = backprop_normalize(w_.value, w_hat, gw_hat);
    for (int64_t i = 0; i < gw.numel(); ++i) w_.grad[i] += gw[i];
    return {loss_val, std::move(gemb)};
  }

  Param<T>& weight() { return w_; }
  int64_t num_classes() const { return k_; }
  const AmSoftmaxConfig& config() const { return cfg_; }
  AmSoftmaxConfig& config_mutable() { return cfg_; }

 private:
  static Tensor<T> normalize_rows(const Tensor<T>& m) {
    Tensor<T> out = m;
    const int64_t rows = m.dim(0), cols = m.dim(1);
    for (int64_t r = 0; r < rows; ++r) {
      T* p = out.data() + r * cols;
      double norm = 0.0;
      for (int64_t c = 0; c < cols; ++c) norm += static_cast<double>(p[c]) * static_cast<double>(p[c]);
      norm = std::max(std::sqrt(norm), 1e-12);
      for (int64_t c = 0; c < cols; ++c) p[c] = static_cast<T>(static_cast<double>(p[c]) / norm);
    }
    return out;
  }

  // dL/dx for y = x/||x|| given x, y and dL/dy (row-wise).
  static Tensor<T> backprop_normalize(const Tensor<T>& x, const Tensor<T>& y,
                                      const Tensor<T>& gy) {
    const int64_t rows = x.dim(0), cols = x.dim(1);
    Tensor<T> gx({rows, cols});
    for (int64_t r = 0; r < rows; ++r) {
      const T* xp = x.data() + r * cols;
      const T* yp = y.data() + r * cols;
      const T* gp = gy.data() + r * cols;
      double norm = 0.0, dot = 0.0;
      for (int64_t c = 0; c < cols; ++c) {
        norm += static_cast<double>(xp[c]) * static_cast<double>(xp[c]);
        dot += static_cast<double>(yp[c]) * static_cast<double>(gp[c]);
      }
      norm = std::max(std::sqrt(norm), 1e-12);
      T* out = gx.data() + r * cols;
      for (int64_t c = 0; c < cols; ++c)
        out[c] = static_cast<T>((static_cast<double>(gp[c]) -
                                 static_cast<double>(yp[c]) * dot) / norm);
    }
    return gx;
  }

  int64_t d_, k_;
  AmSoftmaxConfig cfg_;
  Param<T> w_;
};

/// Standalone AM-Softmax loss value for given class weights.
template <typename T>
double am_softmax_loss(const Tensor<T>& embeddings, const Tensor<T>& class_weights,
                       const std::vector<int>& labels, const AmSoftmaxConfig& cfg) {
  cfg.validate();
  Rng rng(0);
  AmSoftmaxHead<T> head(embeddings.dim(1), class_weights.dim(0), cfg, rng);
  head.weight().value = class_weights;
  return head.loss(embeddings, labels).first;
}

}  // namespace avlip::nn
