// avlip/synth.hpp

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
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "avlip/common.hpp"
#include "avlip/corpus.hpp"
#include "avlip/io/npy.hpp"
#include "avlip/io/pgm.hpp"
#include "avlip/io/wav.hpp"
#include "avlip/rng.hpp"
#include "avlip/tensor.hpp"

// Deterministic synthetic audio-visual corpus.  Speaker identity is encoded
// in BOTH modalities: the audio carries a speaker-specific harmonic stack
// shaped by resonance peaks, the video a lip-like ellipse ring with
// speaker-specific geometry and opening motion.  Either stream alone can
// separate the speakers.

namespace avlip {

struct SynthSpeakerParams {
  std::string speaker_id;
  // audio
  double f0 = 120.0;               // fundamental, Hz
  std::vector<double> resonances;  // formant-like peaks, Hz
  double noise_level = 0.02;
  // video (pixels on the rendered canvas)
  double lip_half_width = 34.0;
  double lip_half_height = 9.0;
  double lip_thickness = 4.0;
  double open_amplitude = 8.0;
  double open_freq_hz = 2.0;
};

struct SynthConfig {
  int n_speakers = 4;
  int utts_per_speaker = 8;
  uint64_t seed = 0;
  int sample_rate = 16000;
  double min_duration_s = 1.4;
  double max_duration_s = 2.2;
  double fps = 25.0;
  int frame_size = 112;  // square canvas, >= 96 so the ROI crop is real work
  int min_frames = 32;
  int max_frames = 52;
  std::string video_format = "npy";  // "npy" (TxHxW u1) or "pgm" (frame dir)
};

namespace detail {

// Stable per-(speaker, utterance) seed so regeneration of any subset is
// reproducible regardless of generation order.
inline uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b) {
  uint64_t z = seed ^ (a * 0x9e3779b97f4a7c15ull) ^ (b * 0xc2b2ae3d27d4eb4full);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::vector<int> seeded_permutation(int n, Rng& rng) {
  std::vector<int> p(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
  rng.shuffle(p);
  return p;
}

}  // namespace detail

/// Speaker parameter vectors, pairwise distinct by construction: every family
/// lies on a strictly separated grid indexed by a seeded permutation.
inline std::vector<SynthSpeakerParams> synth_speaker_params(int n_speakers,
                                                            uint64_t seed) {
  if (n_speakers < 1) raise<ConfigError>("n_speakers must be >= 1");
  Rng rng(detail::mix_seed(seed, 0x5eedu, 0));
  const auto p_f1 = detail::seeded_permutation(n_speakers, rng);
  const auto p_f2 = detail::seeded_permutation(n_speakers, rng);
  const auto p_geo = detail::seeded_permutation(n_speakers, rng);
  const auto p_open = detail::seeded_permutation(n_speakers, rng);
  const double n = n_speakers;

  std::vector<SynthSpeakerParams> out;
  out.reserve(static_cast<size_t>(n_speakers));
  for (int i = 0; i < n_speakers; ++i) {
    SynthSpeakerParams s;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "spk%03d", i);
    s.speaker_id = buf;
    s.f0 = 95.0 + 140.0 * i / n + rng.uniform(0.0, 50.0 / n);
    s.resonances = {
        330.0 + 520.0 * p_f1[static_cast<size_t>(i)] / n + rng.uniform(0.0, 200.0 / n),
        950.0 + 1500.0 * p_f2[static_cast<size_t>(i)] / n + rng.uniform(0.0, 600.0 / n),
        2600.0 + 900.0 * i / n + rng.uniform(0.0, 350.0 / n),
    };
    s.noise_level = rng.uniform(0.008, 0.02);
    s.lip_half_width = 26.0 + 18.0 * p_geo[static_cast<size_t>(i)] / n + rng.uniform(0.0, 7.0 / n);
    s.lip_half_height = 6.0 + 7.0 * p_open[static_cast<size_t>(i)] / n + rng.uniform(0.0, 2.5 / n);
    s.lip_thickness = 3.0 + 3.5 * i / n + rng.uniform(0.0, 1.2 / n);
    s.open_amplitude = 5.0 + 11.0 * p_geo[static_cast<size_t>(i)] / n + rng.uniform(0.0, 4.0 / n);
    s.open_freq_hz = 1.2 + 3.2 * p_f1[static_cast<size_t>(i)] / n + rng.uniform(0.0, 1.0 / n);
    out.push_back(std::move(s));
  }
  return out;
}

namespace detail {

inline Waveform synth_audio(const SynthSpeakerParams& spk, const SynthConfig& cfg,
                            Rng& rng) {
  Waveform w;
  w.sample_rate = cfg.sample_rate;
  const double duration = rng.uniform(cfg.min_duration_s, cfg.max_duration_s);
  const size_t n = static_cast<size_t>(duration * cfg.sample_rate);
  w.samples.assign(n, 0.0);

  const int n_harmonics = 14;
  std::vector<double> phase(n_harmonics), amp(n_harmonics);
  for (int h = 0; h < n_harmonics; ++h) {
    phase[static_cast<size_t>(h)] = rng.uniform(0.0, 2.0 * M_PI);
    const double freq = (h + 1) * spk.f0;
    double a = 0.12;  // base tilt
    for (double res : spk.resonances) {
      const double d = (freq - res) / 180.0;
      a += std::exp(-d * d);
    }
    amp[static_cast<size_t>(h)] = a / (1.0 + 0.25 * h);
  }
  const double vibrato_rate = rng.uniform(4.0, 7.0);
  const double vibrato_depth = rng.uniform(0.002, 0.01);
  const double syllable_rate = rng.uniform(2.0, 4.5);
  const double syllable_phase = rng.uniform(0.0, 2.0 * M_PI);

  double peak = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / cfg.sample_rate;
    const double f0_t = spk.f0 * (1.0 + vibrato_depth * std::sin(2.0 * M_PI * vibrato_rate * t));
    double x = 0.0;
    for (int h = 0; h < n_harmonics; ++h)
      x += amp[static_cast<size_t>(h)] *
           std::sin(2.0 * M_PI * (h + 1) * f0_t * t + phase[static_cast<size_t>(h)]);
    const double env = 0.65 + 0.35 * std::sin(2.0 * M_PI * syllable_rate * t + syllable_phase);
    x = x * env + spk.noise_level * rng.normal();
    w.samples[i] = x;
    peak = std::max(peak, std::abs(x));
  }
  if (peak > 0)
    for (auto& s : w.samples) s *= 0.7 / peak;
  return w;
}

inline Tensor<uint8_t> synth_video(const SynthSpeakerParams& spk, const SynthConfig& cfg,
                                   Rng& rng) {
  const int n_frames = static_cast<int>(rng.uniform_int(cfg.min_frames, cfg.max_frames));
  const int sz = cfg.frame_size;
  Tensor<uint8_t> frames({n_frames, sz, sz});

  const double cx = sz / 2.0 + rng.uniform(-2.0, 2.0);
  const double cy = sz / 2.0 + rng.uniform(-2.0, 2.0);
  const double open_phase = rng.uniform(0.0, 2.0 * M_PI);
  const double open_rate = spk.open_freq_hz + rng.uniform(-0.15, 0.15);
  const double bg = rng.uniform(30.0, 45.0);

  for (int t = 0; t < n_frames; ++t) {
    const double time = t / cfg.fps;
    // mouth opening: half-height oscillates between closed and open
    const double opening = 0.5 + 0.5 * std::sin(2.0 * M_PI * open_rate * time + open_phase);
    const double b = spk.lip_half_height + spk.open_amplitude * opening;
    const double a = spk.lip_half_width;
    const double jx = cx + 0.6 * std::sin(2.0 * M_PI * 0.7 * time + open_phase);
    const double jy = cy + 0.4 * std::cos(2.0 * M_PI * 0.5 * time + open_phase);
    const double ring_w = spk.lip_thickness / std::min(a, b);

    for (int y = 0; y < sz; ++y) {
      for (int x = 0; x < sz; ++x) {
        const double ex = (x - jx) / a;
        const double ey = (y - jy) / b;
        const double rho = std::sqrt(ex * ex + ey * ey);
        // shaded background with a soft vertical gradient
        double v = bg + 0.25 * y;
        if (rho < 1.0 - ring_w) {
          v = 12.0 + 10.0 * rho;  // mouth cavity, darker
        } else {
          const double d = (rho - 1.0) / ring_w;
          v += 185.0 * std::exp(-d * d);  // lip ring highlight
        }
        v += 2.0 * rng.normal();  // sensor-ish noise
        frames(t, y, x) = static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
      }
    }
  }
  return frames;
}

}  // namespace detail

/// Writes one WAV and one video file per utterance under out_dir and returns
/// the manifest (also written to out_dir/manifest.tsv).  Bit-identical output
/// for a fixed config.
inline Manifest synth_corpus(const SynthConfig& cfg, const std::string& out_dir) {
  if (cfg.n_speakers < 1 || cfg.utts_per_speaker < 1)
    raise<ConfigError>("n_speakers and utts_per_speaker must be >= 1");
  if (cfg.frame_size < 96)
    raise<ConfigError>("frame_size must be >= 96, got ", cfg.frame_size);
  if (cfg.min_frames < 29)
    raise<ConfigError>("min_frames must be >= 29, got ", cfg.min_frames);
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) raise<IoError>("cannot create ", out_dir, ": ", ec.message());

  const auto speakers = synth_speaker_params(cfg.n_speakers, cfg.seed);
  Manifest m;
  m.name = "synth";
  for (int s = 0; s < cfg.n_speakers; ++s) {
    const auto& spk = speakers[static_cast<size_t>(s)];
    for (int u = 0; u < cfg.utts_per_speaker; ++u) {
      Rng rng(detail::mix_seed(cfg.seed, static_cast<uint64_t>(s) + 1,
                               static_cast<uint64_t>(u) + 1));
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%s_u%03d", spk.speaker_id.c_str(), u);
      const std::string utt_id = buf;

      const Waveform audio = detail::synth_audio(spk, cfg, rng);
      const Tensor<uint8_t> video = detail::synth_video(spk, cfg, rng);

      const std::string audio_path = (fs::path(out_dir) / (utt_id + ".wav")).string();
      wav::save(audio_path, audio);

      std::string video_path;
      if (cfg.video_format == "pgm") {
        video_path = (fs::path(out_dir) / (utt_id + "_frames")).string();
        fs::create_directories(video_path, ec);
        if (ec) raise<IoError>("cannot create ", video_path, ": ", ec.message());
        for (int64_t t = 0; t < video.dim(0); ++t) {
          Tensor<uint8_t> frame({video.dim(1), video.dim(2)});
          std::copy_n(video.data() + t * frame.numel(), frame.numel(), frame.data());
          std::snprintf(buf, sizeof(buf), "frame_%04d.pgm", static_cast<int>(t));
          pgm::save((fs::path(video_path) / buf).string(), frame);
        }
      } else {
        video_path = (fs::path(out_dir) / (utt_id + ".npy")).string();
        npy::save(video_path, video);
      }

      UtteranceRecord r;
      r.utt_id = utt_id;
      r.speaker_id = spk.speaker_id;
      r.audio_path = audio_path;
      r.video_path = video_path;
      r.fps = cfg.fps;
      r.sample_rate = cfg.sample_rate;
      r.duration = audio.duration();
      m.records.push_back(std::move(r));
    }
  }
  save_manifest((fs::path(out_dir) / "manifest.tsv").string(), m);
  return m;
}

}  // namespace avlip
