// avlip/features.hpp

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

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <filesystem>
#include <optional>
#include <variant>
#include <vector>

#include "avlip/common.hpp"
#include "avlip/io/npy.hpp"
#include "avlip/io/pgm.hpp"
#include "avlip/io/wav.hpp"
#include "avlip/rng.hpp"
#include "avlip/tensor.hpp"

namespace avlip {

// ---------------------------------------------------------------------------
// Audio features
// ---------------------------------------------------------------------------

struct MfccConfig {
  int n_fft = 512;
  int n_bins = 26;    // mel filters
  int n_coeffs = 26;  // retained cepstral coefficients
  double frame_length_ms = 25.0;
  double frame_shift_ms = 10.0;
  double pre_emphasis = 0.97;
  bool cmvn = true;
  int target_sample_rate = 16000;  // inputs at other rates are resampled

  void validate() const {
    if (n_fft <= 0 || (n_fft & (n_fft - 1)) != 0)
      raise<ConfigError>("n_fft must be a power of two, got ", n_fft);
    if (n_bins <= 0 || n_bins > n_fft / 2)
      raise<ConfigError>("n_bins must be in [1, n_fft/2], got ", n_bins);
    if (n_coeffs <= 0 || n_coeffs > n_bins)
      raise<ConfigError>("n_coeffs must be in [1, n_bins], got ", n_coeffs);
    if (frame_length_ms <= 0 || frame_shift_ms <= 0)
      raise<ConfigError>("frame length/shift must be positive");
  }
};

/// Frame-major feature matrix: values(t, c).
struct FeatureMatrix {
  Tensor<double> values;  // T x C
  double frame_shift_ms = 10.0;
  double frame_length_ms = 25.0;

  int64_t num_frames() const { return values.rank() == 2 ? values.dim(0) : 0; }
  int64_t num_coeffs() const { return values.rank() == 2 ? values.dim(1) : 0; }
};

namespace detail {

// In-place iterative radix-2 FFT.  n must be a power of two.
inline void fft_radix2(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    const std::complex<double> wn(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wn;
      }
    }
  }
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular mel filterbank over the magnitude-spectrum bins [0, n_fft/2].
inline std::vector<std::vector<double>> mel_filterbank(int n_filters, int n_fft,
                                                       int sample_rate) {
  const int n_spec = n_fft / 2 + 1;
  const double mel_lo = hz_to_mel(0.0);
  const double mel_hi = hz_to_mel(sample_rate / 2.0);
  std::vector<double> centers(static_cast<size_t>(n_filters) + 2);
  for (int i = 0; i < n_filters + 2; ++i)
    centers[static_cast<size_t>(i)] =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_filters + 1));
  std::vector<std::vector<double>> bank(static_cast<size_t>(n_filters),
                                        std::vector<double>(static_cast<size_t>(n_spec), 0.0));
  const double hz_per_bin = static_cast<double>(sample_rate) / n_fft;
  for (int f = 0; f < n_filters; ++f) {
    const double lo = centers[static_cast<size_t>(f)];
    const double mid = centers[static_cast<size_t>(f) + 1];
    const double hi = centers[static_cast<size_t>(f) + 2];
    for (int b = 0; b < n_spec; ++b) {
      const double hz = b * hz_per_bin;
      double w = 0.0;
      if (hz >= lo && hz <= mid && mid > lo)
        w = (hz - lo) / (mid - lo);
      else if (hz > mid && hz <= hi && hi > mid)
        w = (hi - hz) / (hi - mid);
      bank[static_cast<size_t>(f)][static_cast<size_t>(b)] = w;
    }
  }
  return bank;
}

}  // namespace detail

constexpr double kLogFloor = 1e-10;

/// Pre-emphasis -> framing -> Hamming -> magnitude spectrum -> mel bank ->
/// floored log -> orthonormal DCT-II -> optional per-utterance CMVN.
inline FeatureMatrix extract_mfcc(const Waveform& input, const MfccConfig& cfg = {}) {
  cfg.validate();
  const Waveform w = resample(input, cfg.target_sample_rate);
  const int rate = w.sample_rate;
  const int flen = static_cast<int>(std::lround(cfg.frame_length_ms * rate / 1000.0));
  const int fshift = static_cast<int>(std::lround(cfg.frame_shift_ms * rate / 1000.0));
  const int64_t n = static_cast<int64_t>(w.samples.size());
  if (n < flen)
    raise<TooShort>("waveform has ", n, " samples, below one frame (", flen, ")");
  if (flen > cfg.n_fft)
    raise<ConfigError>("frame length ", flen, " exceeds n_fft ", cfg.n_fft);
  for (double s : w.samples)
    if (!std::isfinite(s)) raise<DataError>("non-finite sample in waveform");

  const int64_t n_frames = 1 + (n - flen) / fshift;

  std::vector<double> emphasized(w.samples.size());
  emphasized[0] = w.samples[0] - cfg.pre_emphasis * w.samples[0];
  for (size_t i = 1; i < w.samples.size(); ++i)
    emphasized[i] = w.samples[i] - cfg.pre_emphasis * w.samples[i - 1];

  std::vector<double> window(static_cast<size_t>(flen));
  for (int i = 0; i < flen; ++i)
    window[static_cast<size_t>(i)] =
        0.54 - 0.46 * std::cos(2.0 * M_PI * i / (flen - 1));

  const auto bank = detail::mel_filterbank(cfg.n_bins, cfg.n_fft, rate);
  const int n_spec = cfg.n_fft / 2 + 1;

  // orthonormal DCT-II basis, n_coeffs x n_bins
  RowMat<double> dct(cfg.n_coeffs, cfg.n_bins);
  for (int k = 0; k < cfg.n_coeffs; ++k) {
    const double scale = (k == 0) ? std::sqrt(1.0 / cfg.n_bins) : std::sqrt(2.0 / cfg.n_bins);
    for (int m = 0; m < cfg.n_bins; ++m)
      dct(k, m) = scale * std::cos(M_PI * k * (2 * m + 1) / (2.0 * cfg.n_bins));
  }

  FeatureMatrix out;
  out.frame_shift_ms = cfg.frame_shift_ms;
  out.frame_length_ms = cfg.frame_length_ms;
  out.values.resize({n_frames, cfg.n_coeffs});

  std::vector<std::complex<double>> spec(static_cast<size_t>(cfg.n_fft));
  std::vector<double> mag(static_cast<size_t>(n_spec));
  ColVec<double> log_mel(cfg.n_bins);
  for (int64_t t = 0; t < n_frames; ++t) {
    const double* frame = emphasized.data() + t * fshift;
    for (int i = 0; i < cfg.n_fft; ++i)
      spec[static_cast<size_t>(i)] =
          (i < flen) ? frame[i] * window[static_cast<size_t>(i)] : 0.0;
    detail::fft_radix2(spec);
    for (int b = 0; b < n_spec; ++b) mag[static_cast<size_t>(b)] = std::abs(spec[static_cast<size_t>(b)]);
    for (int f = 0; f < cfg.n_bins; ++f) {
      double e = 0.0;
      const auto& filt = bank[static_cast<size_t>(f)];
      for (int b = 0; b < n_spec; ++b) e += filt[static_cast<size_t>(b)] * mag[static_cast<size_t>(b)];
      log_mel(f) = std::log(std::max(e, kLogFloor));
    }
    ColVec<double> cep = dct * log_mel;
    for (int c = 0; c < cfg.n_coeffs; ++c) out.values(t, c) = cep(c);
  }

  if (cfg.cmvn) {
    for (int c = 0; c < cfg.n_coeffs; ++c) {
      double mean = 0.0;
      for (int64_t t = 0; t < n_frames; ++t) mean += out.values(t, c);
      mean /= static_cast<double>(n_frames);
      double var = 0.0;
      for (int64_t t = 0; t < n_frames; ++t) {
        const double d = out.values(t, c) - mean;
        var += d * d;
      }
      var /= static_cast<double>(n_frames);
      const double inv_std = 1.0 / std::max(std::sqrt(var), 1e-10);
      for (int64_t t = 0; t < n_frames; ++t)
        out.values(t, c) = (out.values(t, c) - mean) * inv_std;
    }
  }
  return out;
}

/// Appends delta and delta-delta columns (regression window radius 2,
/// edge frames replicated).  Used by the GMM-UBM recipe.
inline FeatureMatrix append_deltas(const FeatureMatrix& in, int order = 2) {
  const int64_t t_max = in.num_frames();
  const int64_t c_max = in.num_coeffs();
  const int radius = 2;
  double denom = 0.0;
  for (int i = 1; i <= radius; ++i) denom += 2.0 * i * i;

  FeatureMatrix out;
  out.frame_shift_ms = in.frame_shift_ms;
  out.frame_length_ms = in.frame_length_ms;
  out.values.resize({t_max, c_max * (order + 1)});

  Tensor<double> prev = in.values;
  for (int64_t t = 0; t < t_max; ++t)
    for (int64_t c = 0; c < c_max; ++c) out.values(t, c) = in.values(t, c);

  for (int d = 1; d <= order; ++d) {
    Tensor<double> delta({t_max, c_max});
    for (int64_t t = 0; t < t_max; ++t) {
      for (int64_t c = 0; c < c_max; ++c) {
        double acc = 0.0;
        for (int i = 1; i <= radius; ++i) {
          const int64_t tp = std::min(t + i, t_max - 1);
          const int64_t tm = std::max(t - i, int64_t(0));
          acc += i * (prev(tp, c) - prev(tm, c));
        }
        delta(t, c) = acc / denom;
      }
    }
    for (int64_t t = 0; t < t_max; ++t)
      for (int64_t c = 0; c < c_max; ++c) out.values(t, d * c_max + c) = delta(t, c);
    prev = delta;
  }
  return out;
}

/// Keeps frames whose first coefficient (log-energy proxy) is within
/// `drop_below_max` of the utterance maximum.  A crude energy VAD.
inline FeatureMatrix drop_quiet_frames(const FeatureMatrix& in, double drop_below_max) {
  const int64_t t_max = in.num_frames();
  const int64_t c_max = in.num_coeffs();
  double best = -1e300;
  for (int64_t t = 0; t < t_max; ++t) best = std::max(best, in.values(t, 0));
  std::vector<int64_t> keep;
  for (int64_t t = 0; t < t_max; ++t)
    if (in.values(t, 0) >= best - drop_below_max) keep.push_back(t);
  FeatureMatrix out;
  out.frame_shift_ms = in.frame_shift_ms;
  out.frame_length_ms = in.frame_length_ms;
  out.values.resize({static_cast<int64_t>(keep.size()), c_max});
  for (size_t i = 0; i < keep.size(); ++i)
    for (int64_t c = 0; c < c_max; ++c)
      out.values(static_cast<int64_t>(i), c) = in.values(keep[i], c);
  return out;
}

// ---------------------------------------------------------------------------
// Video features
// ---------------------------------------------------------------------------

constexpr int kRoiSize = 96;   // preprocessed mouth crop
constexpr int kCropSize = 88;  // training/eval crop fed to the network
constexpr int kSegmentFrames = 29;
constexpr int kMinVariableLength = 16;

/// Grayscale frame stack, pixel values in [0, 1].
struct LipSequence {
  Tensor<float> frames;  // T x H x W
  double fps = 25.0;

  int64_t num_frames() const { return frames.rank() == 3 ? frames.dim(0) : 0; }
  int64_t height() const { return frames.rank() == 3 ? frames.dim(1) : 0; }
  int64_t width() const { return frames.rank() == 3 ? frames.dim(2) : 0; }
};

/// Crop center in source-frame coordinates (pre-cropped / detector output).
struct MouthBox {
  double cx = 0.0;
  double cy = 0.0;
};

/// Point correspondences defining an affine alignment of the source frame to
/// a reference shape, plus the mouth center in reference coordinates.
struct LandmarkAlign {
  std::vector<std::array<double, 2>> source;     // points in the source frame
  std::vector<std::array<double, 2>> reference;  // matching reference points
  double mouth_cx = 0.0;
  double mouth_cy = 0.0;
};

using FrameAnnotation = std::variant<std::monostate, MouthBox, LandmarkAlign>;

inline FrameAnnotation full_frame_box(int64_t height, int64_t width) {
  return MouthBox{static_cast<double>(width) / 2.0, static_cast<double>(height) / 2.0};
}

namespace detail {

// Frame is H x W (gray) or H x W x 3 (RGB); returns luma in [0, 1].
inline RowMat<double> to_gray(const Tensor<uint8_t>& frame) {
  if (frame.rank() == 2) {
    RowMat<double> g(frame.dim(0), frame.dim(1));
    for (int64_t y = 0; y < frame.dim(0); ++y)
      for (int64_t x = 0; x < frame.dim(1); ++x) g(y, x) = frame(y, x) / 255.0;
    return g;
  }
  if (frame.rank() == 3 && frame.dim(2) == 3) {
    RowMat<double> g(frame.dim(0), frame.dim(1));
    for (int64_t y = 0; y < frame.dim(0); ++y)
      for (int64_t x = 0; x < frame.dim(1); ++x)
        g(y, x) = (0.299 * frame(y, x, int64_t(0)) + 0.587 * frame(y, x, int64_t(1)) +
                   0.114 * frame(y, x, int64_t(2))) /
                  255.0;
    return g;
  }
  raise<BadShape>("frame must be HxW or HxWx3, got ", frame.shape_str());
}

inline double sample_clamped(const RowMat<double>& img, int64_t y, int64_t x) {
  y = std::clamp<int64_t>(y, 0, img.rows() - 1);
  x = std::clamp<int64_t>(x, 0, img.cols() - 1);
  return img(y, x);
}

inline double sample_bilinear(const RowMat<double>& img, double y, double x) {
  const int64_t y0 = static_cast<int64_t>(std::floor(y));
  const int64_t x0 = static_cast<int64_t>(std::floor(x));
  const double fy = y - static_cast<double>(y0);
  const double fx = x - static_cast<double>(x0);
  const double v00 = sample_clamped(img, y0, x0);
  const double v01 = sample_clamped(img, y0, x0 + 1);
  const double v10 = sample_clamped(img, y0 + 1, x0);
  const double v11 = sample_clamped(img, y0 + 1, x0 + 1);
  return (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
}

// Least-squares affine [a b tx; c d ty] mapping src -> dst.
inline std::array<double, 6> solve_affine(const std::vector<std::array<double, 2>>& src,
                                          const std::vector<std::array<double, 2>>& dst) {
  if (src.size() != dst.size() || src.size() < 3)
    raise<MissingLandmarks>("affine alignment needs >= 3 point pairs, got ", src.size());
  Eigen::MatrixXd A(2 * src.size(), 6);
  Eigen::VectorXd b(2 * src.size());
  A.setZero();
  for (size_t i = 0; i < src.size(); ++i) {
    const double x = src[i][0], y = src[i][1];
    A(2 * i, 0) = x; A(2 * i, 1) = y; A(2 * i, 2) = 1.0;
    A(2 * i + 1, 3) = x; A(2 * i + 1, 4) = y; A(2 * i + 1, 5) = 1.0;
    b(2 * i) = dst[i][0];
    b(2 * i + 1) = dst[i][1];
  }
  Eigen::VectorXd p = A.colPivHouseholderQr().solve(b);
  return {p(0), p(1), p(2), p(3), p(4), p(5)};
}

}  // namespace detail

/// Aligns (when landmarks are given), crops a fixed 96x96 ROI around the
/// mouth center, and converts to grayscale in [0, 1].
inline LipSequence preprocess_roi(const std::vector<Tensor<uint8_t>>& frames,
                                  const std::vector<FrameAnnotation>& annotations,
                                  double fps = 25.0) {
  if (frames.empty()) raise<BadShape>("no frames");
  if (annotations.size() != frames.size())
    raise<MissingLandmarks>("got ", annotations.size(), " annotations for ",
                            frames.size(), " frames");
  LipSequence seq;
  seq.fps = fps;
  seq.frames.resize({static_cast<int64_t>(frames.size()), kRoiSize, kRoiSize});

  bool warned_bounds = false;
  for (size_t t = 0; t < frames.size(); ++t) {
    const auto& ann = annotations[t];
    if (std::holds_alternative<std::monostate>(ann))
      raise<MissingLandmarks>("frame ", t, " has no annotation");
    const RowMat<double> gray = detail::to_gray(frames[t]);

    if (const auto* box = std::get_if<MouthBox>(&ann)) {
      const int64_t x0 = static_cast<int64_t>(std::lround(box->cx)) - kRoiSize / 2;
      const int64_t y0 = static_cast<int64_t>(std::lround(box->cy)) - kRoiSize / 2;
      if (!warned_bounds && (x0 < 0 || y0 < 0 || x0 + kRoiSize > gray.cols() ||
                             y0 + kRoiSize > gray.rows())) {
        warn("crop out of bounds at frame ", t, "; padding with edge pixels");
        warned_bounds = true;
      }
      for (int64_t y = 0; y < kRoiSize; ++y)
        for (int64_t x = 0; x < kRoiSize; ++x)
          seq.frames(static_cast<int64_t>(t), y, x) =
              static_cast<float>(detail::sample_clamped(gray, y0 + y, x0 + x));
    } else {
      const auto& lm = std::get<LandmarkAlign>(ann);
      // warp: output pixel (reference coords) -> source coords via the
      // inverse of the src->reference affine
      const auto fwd = detail::solve_affine(lm.source, lm.reference);
      const double det = fwd[0] * fwd[4] - fwd[1] * fwd[3];
      if (std::abs(det) < 1e-12)
        raise<MissingLandmarks>("degenerate landmark configuration at frame ", t);
      const double ia = fwd[4] / det, ib = -fwd[1] / det;
      const double ic = -fwd[3] / det, id = fwd[0] / det;
      for (int64_t y = 0; y < kRoiSize; ++y) {
        for (int64_t x = 0; x < kRoiSize; ++x) {
          const double rx = lm.mouth_cx - kRoiSize / 2.0 + static_cast<double>(x);
          const double ry = lm.mouth_cy - kRoiSize / 2.0 + static_cast<double>(y);
          const double dx = rx - fwd[2], dy = ry - fwd[5];
          const double sx = ia * dx + ib * dy;
          const double sy = ic * dx + id * dy;
          seq.frames(static_cast<int64_t>(t), y, x) =
              static_cast<float>(detail::sample_bilinear(gray, sy, sx));
        }
      }
    }
  }
  return seq;
}

/// Splits into consecutive non-overlapping fixed-length segments; the
/// remainder (and any sequence shorter than seg_len) is dropped.
inline std::vector<LipSequence> segment_sequence(const LipSequence& seq,
                                                 int seg_len = kSegmentFrames) {
  if (seg_len < 1) raise<ConfigError>("seg_len must be >= 1");
  const int64_t t_max = seq.num_frames();
  const int64_t n_seg = t_max / seg_len;
  const int64_t dropped = t_max - n_seg * seg_len;
  if (dropped > 0)
    warn("segmenting ", t_max, " frames into ", n_seg, " segments of ", seg_len,
         "; dropping ", dropped, " remainder frames");
  std::vector<LipSequence> out;
  out.reserve(static_cast<size_t>(n_seg));
  const int64_t h = seq.height(), w_ = seq.width();
  for (int64_t s = 0; s < n_seg; ++s) {
    LipSequence part;
    part.fps = seq.fps;
    part.frames.resize({seg_len, h, w_});
    std::copy_n(seq.frames.data() + s * seg_len * h * w_, seg_len * h * w_,
                part.frames.data());
    out.push_back(std::move(part));
  }
  return out;
}

enum class AugmentMode { kTrain, kEval };

/// 96x96 -> 88x88.  Train: one uniform-random crop offset and a 0.5-probability
/// horizontal flip shared by all frames of the segment.  Eval: center crop.
inline LipSequence augment_video(const LipSequence& seq, AugmentMode mode, Rng& rng) {
  if (seq.height() != kRoiSize || seq.width() != kRoiSize)
    raise<BadShape>("augment_video expects Tx96x96, got ", seq.frames.shape_str());
  int64_t dx = (kRoiSize - kCropSize) / 2, dy = dx;
  bool flip = false;
  if (mode == AugmentMode::kTrain) {
    dx = rng.uniform_int(0, kRoiSize - kCropSize);
    dy = rng.uniform_int(0, kRoiSize - kCropSize);
    flip = rng.bernoulli(0.5);
  }
  LipSequence out;
  out.fps = seq.fps;
  out.frames.resize({seq.num_frames(), kCropSize, kCropSize});
  for (int64_t t = 0; t < seq.num_frames(); ++t)
    for (int64_t y = 0; y < kCropSize; ++y)
      for (int64_t x = 0; x < kCropSize; ++x)
        out.frames(t, y, x) =
            seq.frames(t, dy + y, dx + (flip ? kCropSize - 1 - x : x));
  return out;
}

/// Random contiguous sub-sequence with length uniform in [min_len, T].
inline LipSequence variable_length_view(const LipSequence& seq, Rng& rng,
                                        int min_len = kMinVariableLength) {
  const int64_t t_max = seq.num_frames();
  if (t_max < min_len)
    raise<TooShort>("sequence of ", t_max, " frames is below the minimum of ", min_len);
  const int64_t len = rng.uniform_int(min_len, t_max);
  const int64_t start = rng.uniform_int(0, t_max - len);
  LipSequence out;
  out.fps = seq.fps;
  const int64_t h = seq.height(), w_ = seq.width();
  out.frames.resize({len, h, w_});
  std::copy_n(seq.frames.data() + start * h * w_, len * h * w_, out.frames.data());
  return out;
}

// ---------------------------------------------------------------------------
// Media loading
// ---------------------------------------------------------------------------

/// Loads raw grayscale video frames (T x H x W, uint8) from either a .npy
/// array file or a directory of binary PGM frames (sorted by filename).
inline Tensor<uint8_t> load_video_frames(const std::string& path) {
  namespace fs = std::filesystem;
  if (fs::is_directory(path)) {
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(path)) {
      if (e.path().extension() == ".pgm") files.push_back(e.path().string());
    }
    if (files.empty()) raise<IoError>("no .pgm frames in directory: ", path);
    std::sort(files.begin(), files.end());
    Tensor<uint8_t> first = pgm::load(files[0]);
    Tensor<uint8_t> out({static_cast<int64_t>(files.size()), first.dim(0), first.dim(1)});
    for (size_t i = 0; i < files.size(); ++i) {
      Tensor<uint8_t> f = (i == 0) ? std::move(first) : pgm::load(files[i]);
      if (f.dim(0) != out.dim(1) || f.dim(1) != out.dim(2))
        raise<BadShape>("inconsistent frame size in ", path, " at ", files[i]);
      std::copy_n(f.data(), f.numel(), out.data() + static_cast<int64_t>(i) * f.numel());
    }
    return out;
  }
  Tensor<uint8_t> t = npy::load<uint8_t>(path);
  if (t.rank() != 3) raise<BadShape>("video npy must be TxHxW, got ", t.shape_str());
  return t;
}

/// Cache a preprocessed LipSequence as a float32 .npy (shape T x H x W).
inline void save_lip_sequence(const std::string& path, const LipSequence& seq) {
  npy::save(path, seq.frames);
}

inline LipSequence load_lip_sequence(const std::string& path, double fps = 25.0) {
  LipSequence seq;
  seq.frames = npy::load<float>(path);
  if (seq.frames.rank() != 3)
    raise<BadShape>("lip sequence npy must be TxHxW, got ", seq.frames.shape_str());
  seq.fps = fps;
  return seq;
}

}  // namespace avlip
