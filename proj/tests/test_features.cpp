// tests/test_features.cpp

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

#include "avlip/features.hpp"
#include "avlip/rng.hpp"

using namespace avlip;
namespace fs = std::filesystem;

namespace {

Waveform random_speechy_wave(double seconds, int rate, uint64_t seed) {
  Rng rng(seed);
  Waveform w;
  w.sample_rate = rate;
  const size_t n = static_cast<size_t>(seconds * rate);
  w.samples.resize(n);
  for (size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / rate;
    w.samples[i] = 0.3 * std::sin(2 * M_PI * 180 * t) + 0.2 * std::sin(2 * M_PI * 950 * t) +
                   0.05 * rng.normal();
  }
  return w;
}

std::vector<std::string> captured_warnings;
struct WarningCapture {
  WarningCapture() {
    captured_warnings.clear();
    warn_handler() = [](const std::string& m) { captured_warnings.push_back(m); };
  }
  ~WarningCapture() {
    warn_handler() = [](const std::string& m) { std::cerr << "WARNING: " << m << "\n"; };
  }
};

LipSequence const_sequence(int64_t t, float value = 0.5f) {
  LipSequence s;
  s.frames.resize({t, kRoiSize, kRoiSize});
  s.frames.fill(value);
  return s;
}

}  // namespace

TEST_CASE("mfcc frame count follows the closed-form formula") {
  MfccConfig cfg;
  const Waveform w = random_speechy_wave(1.0, 16000, 1);
  REQUIRE(w.samples.size() == 16000);
  const FeatureMatrix f = extract_mfcc(w, cfg);
  CHECK(f.num_frames() == 98);  // 1 + (16000-400)/160
  CHECK(f.num_coeffs() == 26);

  // property: random lengths and window geometries
  Rng rng(2);
  for (int trial = 0; trial < 25; ++trial) {
    MfccConfig c;
    c.frame_length_ms = static_cast<double>(rng.uniform_int(10, 30));
    c.frame_shift_ms = static_cast<double>(rng.uniform_int(5, 15));
    c.n_fft = 512;
    c.cmvn = false;
    const int rate = 16000;
    const int64_t flen = static_cast<int64_t>(c.frame_length_ms * rate / 1000);
    const int64_t shift = static_cast<int64_t>(c.frame_shift_ms * rate / 1000);
    const int64_t n = flen + rng.uniform_int(0, 4000);
    Waveform wv;
    wv.sample_rate = rate;
    wv.samples.resize(static_cast<size_t>(n));
    for (auto& s : wv.samples) s = rng.uniform(-0.5, 0.5);
    const FeatureMatrix m = extract_mfcc(wv, c);
    CHECK(m.num_frames() == 1 + (n - flen) / shift);
  }
}

TEST_CASE("mfcc degenerate inputs") {
  MfccConfig cfg;
  Waveform zeros;
  zeros.sample_rate = 16000;
  zeros.samples.assign(16000, 0.0);
  const FeatureMatrix f = extract_mfcc(zeros, cfg);
  for (int64_t i = 0; i < f.values.numel(); ++i) REQUIRE(std::isfinite(f.values[i]));

  Waveform tiny;
  tiny.sample_rate = 16000;
  tiny.samples.assign(200, 0.1);  // shorter than one 400-sample frame
  CHECK_THROWS_AS(extract_mfcc(tiny, cfg), TooShort);
}

TEST_CASE("cmvn zeroes column means") {
  MfccConfig cfg;  // cmvn on by default
  const FeatureMatrix f = extract_mfcc(random_speechy_wave(0.8, 16000, 3), cfg);
  for (int64_t c = 0; c < f.num_coeffs(); ++c) {
    double mean = 0.0;
    for (int64_t t = 0; t < f.num_frames(); ++t) mean += f.values(t, c);
    mean /= static_cast<double>(f.num_frames());
    CHECK(std::abs(mean) < 1e-6);
  }
}

TEST_CASE("cmvn output is invariant to waveform scaling") {
  MfccConfig cfg;
  const Waveform base = random_speechy_wave(0.7, 16000, 4);
  const FeatureMatrix ref = extract_mfcc(base, cfg);
  for (double c : {0.5, 2.0}) {
    Waveform scaled = base;
    for (auto& s : scaled.samples) s *= c;
    const FeatureMatrix got = extract_mfcc(scaled, cfg);
    REQUIRE(got.num_frames() == ref.num_frames());
    for (int64_t i = 0; i < got.values.numel(); ++i)
      CHECK(std::abs(got.values[i] - ref.values[i]) < 1e-6);
  }
}

TEST_CASE("mfcc config validation") {
  MfccConfig bad;
  bad.n_fft = 500;  // not a power of two
  Waveform w = random_speechy_wave(0.5, 16000, 5);
  CHECK_THROWS_AS(extract_mfcc(w, bad), ConfigError);
  bad = MfccConfig{};
  bad.n_bins = 400;  // > n_fft/2
  CHECK_THROWS_AS(extract_mfcc(w, bad), ConfigError);
  bad = MfccConfig{};
  bad.n_coeffs = 30;  // > n_bins
  CHECK_THROWS_AS(extract_mfcc(w, bad), ConfigError);
}

TEST_CASE("resampling changes the rate, keeps the duration") {
  const Waveform w = random_speechy_wave(0.5, 44100, 6);
  const Waveform r = resample(w, 16000);
  CHECK(r.sample_rate == 16000);
  CHECK(std::abs(r.duration() - w.duration()) < 0.01);
  // extraction accepts non-target rates directly
  MfccConfig cfg;
  CHECK_NOTHROW(extract_mfcc(w, cfg));
}

TEST_CASE("deltas and energy-based frame dropping") {
  MfccConfig cfg;
  cfg.cmvn = false;
  const FeatureMatrix f = extract_mfcc(random_speechy_wave(0.6, 16000, 7), cfg);
  const FeatureMatrix d = append_deltas(f, 2);
  CHECK(d.num_coeffs() == 3 * f.num_coeffs());
  CHECK(d.num_frames() == f.num_frames());
  for (int64_t t = 0; t < f.num_frames(); ++t)
    CHECK(d.values(t, int64_t(0)) == f.values(t, int64_t(0)));

  const FeatureMatrix kept = drop_quiet_frames(f, 1e9);  // threshold keeps all
  CHECK(kept.num_frames() == f.num_frames());
  const FeatureMatrix none = drop_quiet_frames(f, 0.0);  // only the max survives
  CHECK(none.num_frames() >= 1);
  CHECK(none.num_frames() <= f.num_frames());
}

TEST_CASE("preprocess_roi crops a 96x96 grayscale ROI") {
  // 360x288 RGB frame (GRID-like geometry), mouth around (180, 200)
  Tensor<uint8_t> frame({288, 360, 3});
  for (int64_t y = 0; y < 288; ++y)
    for (int64_t x = 0; x < 360; ++x) {
      frame(y, x, int64_t(0)) = static_cast<uint8_t>(x % 256);
      frame(y, x, int64_t(1)) = static_cast<uint8_t>(y % 256);
      frame(y, x, int64_t(2)) = 40;
    }
  const LipSequence seq =
      preprocess_roi({frame}, {MouthBox{180.0, 200.0}}, 25.0);
  REQUIRE(seq.num_frames() == 1);
  CHECK(seq.height() == 96);
  CHECK(seq.width() == 96);
  for (int64_t i = 0; i < seq.frames.numel(); ++i) {
    CHECK(seq.frames[i] >= 0.0f);
    CHECK(seq.frames[i] <= 1.0f);
  }
  // luma of the known source pixel
  const double expected =
      (0.299 * ((180 - 48) % 256) + 0.587 * ((200 - 48) % 256) + 0.114 * 40) / 255.0;
  CHECK(std::abs(seq.frames(int64_t(0), int64_t(0), int64_t(0)) - expected) < 1e-6);
}

TEST_CASE("pure white frame converts to all ones") {
  Tensor<uint8_t> frame({120, 120, 3});
  frame.fill(255);
  const LipSequence seq = preprocess_roi({frame}, {full_frame_box(120, 120)});
  for (int64_t i = 0; i < seq.frames.numel(); ++i)
    REQUIRE(seq.frames[i] == 1.0f);
}

TEST_CASE("missing annotation raises MissingLandmarks") {
  Tensor<uint8_t> frame({120, 120});
  CHECK_THROWS_AS(preprocess_roi({frame}, {FrameAnnotation{}}), MissingLandmarks);
  CHECK_THROWS_AS(preprocess_roi({frame}, {}), MissingLandmarks);  // count mismatch
}

TEST_CASE("out-of-bounds crop pads with edge pixels and warns") {
  WarningCapture capture;
  Tensor<uint8_t> frame({100, 100});
  for (int64_t y = 0; y < 100; ++y)
    for (int64_t x = 0; x < 100; ++x) frame(y, x) = static_cast<uint8_t>(x);
  const LipSequence seq = preprocess_roi({frame}, {MouthBox{10.0, 50.0}});
  REQUIRE_FALSE(captured_warnings.empty());
  CHECK(captured_warnings[0].find("crop out of bounds") != std::string::npos);
  // columns left of the frame replicate column 0
  CHECK(seq.frames(int64_t(0), int64_t(48), int64_t(0)) == seq.frames(int64_t(0), int64_t(48), int64_t(1)));
}

TEST_CASE("landmark alignment matches a box crop for the identity transform") {
  Tensor<uint8_t> frame({150, 150});
  Rng rng(8);
  for (int64_t i = 0; i < frame.numel(); ++i)
    frame[i] = static_cast<uint8_t>(rng.uniform_int(0, 255));
  LandmarkAlign lm;
  lm.source = {{10, 10}, {140, 12}, {70, 130}};
  lm.reference = lm.source;  // identity
  lm.mouth_cx = 75.0;
  lm.mouth_cy = 75.0;
  const LipSequence a = preprocess_roi({frame}, {lm});
  const LipSequence b = preprocess_roi({frame}, {MouthBox{75.0, 75.0}});
  double max_diff = 0.0;
  for (int64_t i = 0; i < a.frames.numel(); ++i)
    max_diff = std::max<double>(max_diff, std::abs(a.frames[i] - b.frames[i]));
  CHECK(max_diff < 1e-4);  // bilinear at integer grid = exact lookup
}

TEST_CASE("segment_sequence drops remainders with a warning") {
  WarningCapture capture;
  LipSequence seq = const_sequence(75);
  Rng rng(9);
  for (int64_t i = 0; i < seq.frames.numel(); ++i)
    seq.frames[i] = static_cast<float>(rng.uniform());
  const auto segs = segment_sequence(seq, 29);
  REQUIRE(segs.size() == 2);
  REQUIRE_FALSE(captured_warnings.empty());
  CHECK(captured_warnings[0].find("17") != std::string::npos);

  // concatenation equals the first 58 input frames bit-exactly
  for (int64_t s = 0; s < 2; ++s)
    for (int64_t i = 0; i < segs[0].frames.numel(); ++i)
      REQUIRE(segs[static_cast<size_t>(s)].frames[i] ==
              seq.frames[s * segs[0].frames.numel() + i]);

  CHECK(segment_sequence(const_sequence(29), 29).size() == 1);
  CHECK(segment_sequence(const_sequence(28), 29).empty());
  CHECK_THROWS_AS(segment_sequence(seq, 0), ConfigError);
}

TEST_CASE("augment_video eval mode is the deterministic center crop") {
  LipSequence seq = const_sequence(5);
  Rng rng(10);
  for (int64_t i = 0; i < seq.frames.numel(); ++i)
    seq.frames[i] = static_cast<float>(rng.uniform());
  Rng unused(0);
  const auto before = unused.state();
  const LipSequence out = augment_video(seq, AugmentMode::kEval, unused);
  CHECK(unused.state() == before);  // no RNG consumption in eval mode
  REQUIRE(out.height() == 88);
  REQUIRE(out.width() == 88);
  for (int64_t t = 0; t < 5; ++t)
    for (int64_t y = 0; y < 88; ++y)
      for (int64_t x = 0; x < 88; ++x)
        REQUIRE(out.frames(t, y, x) == seq.frames(t, y + 4, x + 4));
}

TEST_CASE("augment_video train mode: reproducible crops in range, shared flip") {
  LipSequence seq = const_sequence(3);
  Rng rng(11);
  for (int64_t i = 0; i < seq.frames.numel(); ++i)
    seq.frames[i] = static_cast<float>(rng.uniform());

  Rng r1(77), r2(77);
  const LipSequence a = augment_video(seq, AugmentMode::kTrain, r1);
  const LipSequence b = augment_video(seq, AugmentMode::kTrain, r2);
  for (int64_t i = 0; i < a.frames.numel(); ++i) REQUIRE(a.frames[i] == b.frames[i]);

  // every train crop window must come from the valid [0,8]^2 offset range:
  // check the output matches some (dx, dy, flip) combination
  bool matched = false;
  for (int64_t dy = 0; dy <= 8 && !matched; ++dy)
    for (int64_t dx = 0; dx <= 8 && !matched; ++dx)
      for (bool flip : {false, true}) {
        bool ok = true;
        for (int64_t y = 0; y < 88 && ok; y += 7)
          for (int64_t x = 0; x < 88 && ok; x += 7)
            ok = a.frames(int64_t(0), y, x) ==
                 seq.frames(int64_t(0), dy + y, dx + (flip ? 87 - x : x));
        if (ok) matched = true;
      }
  CHECK(matched);

  CHECK_THROWS_AS(augment_video(augment_video(seq, AugmentMode::kEval, r1),
                                AugmentMode::kEval, r1),
                  BadShape);  // 88x88 input rejected
}

TEST_CASE("horizontal flip is an involution") {
  LipSequence seq = const_sequence(2);
  Rng rng(12);
  for (int64_t i = 0; i < seq.frames.numel(); ++i)
    seq.frames[i] = static_cast<float>(rng.uniform());
  auto flip = [](const LipSequence& s) {
    LipSequence out = s;
    for (int64_t t = 0; t < s.num_frames(); ++t)
      for (int64_t y = 0; y < s.height(); ++y)
        for (int64_t x = 0; x < s.width(); ++x)
          out.frames(t, y, x) = s.frames(t, y, s.width() - 1 - x);
    return out;
  };
  const LipSequence twice = flip(flip(seq));
  for (int64_t i = 0; i < seq.frames.numel(); ++i)
    REQUIRE(twice.frames[i] == seq.frames[i]);
}

TEST_CASE("variable_length_view samples contiguous windows") {
  LipSequence seq = const_sequence(29);
  for (int64_t t = 0; t < 29; ++t)
    for (int64_t i = 0; i < kRoiSize * kRoiSize; ++i)
      seq.frames[t * kRoiSize * kRoiSize + i] = static_cast<float>(t);

  Rng r1(5), r2(5);
  const LipSequence a = variable_length_view(seq, r1);
  const LipSequence b = variable_length_view(seq, r2);
  REQUIRE(a.num_frames() == b.num_frames());
  CHECK(a.num_frames() >= 16);
  CHECK(a.num_frames() <= 29);
  for (int64_t i = 0; i < a.frames.numel(); ++i) REQUIRE(a.frames[i] == b.frames[i]);
  // contiguity: frame markers increase by exactly one
  for (int64_t t = 1; t < a.num_frames(); ++t)
    REQUIRE(a.frames(t, int64_t(0), int64_t(0)) ==
            a.frames(t - 1, int64_t(0), int64_t(0)) + 1.0f);

  const LipSequence full = variable_length_view(const_sequence(16), r1);
  CHECK(full.num_frames() == 16);
  CHECK_THROWS_AS(variable_length_view(const_sequence(15), r1), TooShort);
}

TEST_CASE("npy and wav files round trip") {
  const fs::path dir = fs::temp_directory_path() / "avlip_test_io";
  fs::create_directories(dir);

  Tensor<float> t({3, 4, 5});
  Rng rng(13);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.normal());
  npy::save((dir / "t.npy").string(), t);
  const Tensor<float> back = npy::load<float>((dir / "t.npy").string());
  REQUIRE(back.shape() == t.shape());
  for (int64_t i = 0; i < t.numel(); ++i) REQUIRE(back[i] == t[i]);

  Tensor<uint8_t> img({7, 9});
  for (int64_t i = 0; i < img.numel(); ++i) img[i] = static_cast<uint8_t>(i * 3);
  pgm::save((dir / "i.pgm").string(), img);
  const Tensor<uint8_t> img2 = pgm::load((dir / "i.pgm").string());
  REQUIRE(img2.shape() == img.shape());
  for (int64_t i = 0; i < img.numel(); ++i) REQUIRE(img2[i] == img[i]);

  Waveform w = random_speechy_wave(0.25, 16000, 14);
  wav::save((dir / "w.wav").string(), w);
  const Waveform w2 = wav::load((dir / "w.wav").string());
  REQUIRE(w2.sample_rate == 16000);
  REQUIRE(w2.samples.size() == w.samples.size());
  for (size_t i = 0; i < w.samples.size(); ++i)
    REQUIRE(std::abs(w2.samples[i] - w.samples[i]) < 1.0 / 32000.0);

  // a cached lip sequence keeps shape and values
  LipSequence seq = const_sequence(4, 0.25f);
  save_lip_sequence((dir / "seq.npy").string(), seq);
  const LipSequence seq2 = load_lip_sequence((dir / "seq.npy").string());
  REQUIRE(seq2.num_frames() == 4);
  REQUIRE(seq2.frames(int64_t(1), int64_t(10), int64_t(10)) == 0.25f);
}
