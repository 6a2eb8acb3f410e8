// avlip/pipeline.hpp

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

#include <atomic>
#include <filesystem>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "avlip/backends.hpp"
#include "avlip/config.hpp"
#include "avlip/corpus.hpp"
#include "avlip/evaluation.hpp"
#include "avlip/features.hpp"
#include "avlip/lipnet.hpp"
#include "avlip/xvector.hpp"

// End-to-end glue: media -> features -> train sets / embedding stores.
// Feature extraction is pure per utterance and fans out over a bounded worker
// pool; network forwards run on the coordinator in manifest order so outputs
// are deterministic.

namespace avlip {

/// Speaker ids sorted lexically; the index is the training class label.
inline std::map<std::string, int> speaker_labels(const Manifest& m) {
  std::map<std::string, int> labels;
  for (const auto& spk : m.speakers()) {
    const int next = static_cast<int>(labels.size());
    labels.emplace(spk, next);
  }
  return labels;
}

/// Loads the utterance audio, resamples to the configured rate, extracts MFCC.
inline FeatureMatrix utterance_mfcc(const UtteranceRecord& r, const MfccConfig& cfg) {
  return extract_mfcc(wav::load(r.audio_path), cfg);
}

namespace detail {

// Optional sidecar annotation: `<video_path>.boxes`, one `frame cx cy` line
// per frame.  Without it every frame uses the full-frame box (the synthetic
// corpus and pre-cropped corpora need nothing else).
inline std::vector<FrameAnnotation> video_annotations(const std::string& video_path,
                                                      int64_t t, int64_t h, int64_t w) {
  const std::string sidecar = video_path + ".boxes";
  if (!std::filesystem::exists(sidecar))
    return std::vector<FrameAnnotation>(static_cast<size_t>(t), full_frame_box(h, w));
  std::ifstream is(sidecar);
  std::vector<FrameAnnotation> ann(static_cast<size_t>(t));
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto f = split_tabs(line);
    if (f.size() != 3) raise<ParseError>(sidecar, ":", lineno, ": expected 3 fields");
    const int64_t idx = std::stoll(f[0]);
    if (idx < 0 || idx >= t) raise<ParseError>(sidecar, ":", lineno, ": frame out of range");
    ann[static_cast<size_t>(idx)] = MouthBox{std::stod(f[1]), std::stod(f[2])};
  }
  return ann;
}

}  // namespace detail

/// Loads video frames and produces the 96x96 mouth-ROI sequence.
inline LipSequence utterance_lips(const UtteranceRecord& r) {
  const Tensor<uint8_t> raw = load_video_frames(r.video_path);
  const int64_t t = raw.dim(0), h = raw.dim(1), w = raw.dim(2);
  std::vector<Tensor<uint8_t>> frames(static_cast<size_t>(t));
  for (int64_t i = 0; i < t; ++i) {
    frames[static_cast<size_t>(i)].resize({h, w});
    std::copy_n(raw.data() + i * h * w, h * w, frames[static_cast<size_t>(i)].data());
  }
  return preprocess_roi(frames, detail::video_annotations(r.video_path, t, h, w), r.fps);
}

/// Runs fn(i) for i in [0, n) on up to `jobs` workers.  fn must be pure
/// w.r.t. shared state; any exception is rethrown on the caller.
template <typename Fn>
void parallel_for(int64_t n, int jobs, Fn&& fn) {
  jobs = std::max(1, jobs);
  if (jobs == 1 || n <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int64_t> next(0);
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<size_t>(jobs));
  for (int w = 0; w < jobs; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int64_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
      } catch (...) {
        errors[static_cast<size_t>(w)] = std::current_exception();
        next.store(n);
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Train-set construction
// ---------------------------------------------------------------------------

inline AudioTrainSet build_audio_train_set(const Manifest& m, const MfccConfig& cfg,
                                           int jobs = 1) {
  const auto labels = speaker_labels(m);
  AudioTrainSet set;
  set.n_classes = static_cast<int>(labels.size());
  set.items.resize(m.records.size());
  parallel_for(static_cast<int64_t>(m.records.size()), jobs, [&](int64_t i) {
    const auto& r = m.records[static_cast<size_t>(i)];
    const FeatureMatrix f = utterance_mfcc(r, cfg);
    auto& item = set.items[static_cast<size_t>(i)];
    item.label = labels.at(r.speaker_id);
    item.feats.resize({f.num_frames(), f.num_coeffs()});
    for (int64_t j = 0; j < item.feats.numel(); ++j)
      item.feats[j] = static_cast<float>(f.values[j]);
  });
  return set;
}

inline VideoTrainSet build_video_train_set(const Manifest& m, int segment_frames,
                                           int jobs = 1) {
  const auto labels = speaker_labels(m);
  VideoTrainSet set;
  set.n_classes = static_cast<int>(labels.size());
  set.segment_frames = segment_frames;
  std::vector<std::vector<VideoTrainItem>> per_utt(m.records.size());
  parallel_for(static_cast<int64_t>(m.records.size()), jobs, [&](int64_t i) {
    const auto& r = m.records[static_cast<size_t>(i)];
    const LipSequence seq = utterance_lips(r);
    for (auto& seg : segment_sequence(seq, segment_frames)) {
      VideoTrainItem item;
      item.label = labels.at(r.speaker_id);
      item.frames.resize(seg.frames.shape());
      for (int64_t j = 0; j < seg.frames.numel(); ++j)
        item.frames[j] = static_cast<uint8_t>(
            std::lround(std::clamp(seg.frames[j], 0.0f, 1.0f) * 255.0f));
      per_utt[static_cast<size_t>(i)].push_back(std::move(item));
    }
  });
  for (auto& items : per_utt)
    for (auto& it : items) set.items.push_back(std::move(it));
  return set;
}

// ---------------------------------------------------------------------------
// Embedding extraction
// ---------------------------------------------------------------------------

struct ExtractionFailure {
  std::string utt_id;
  std::string stream;
  std::string reason;
};

struct ExtractionResult {
  EmbeddingStore store;
  std::vector<ExtractionFailure> failures;
};

/// One embedding per utterance per requested stream.  Feature extraction is
/// parallel; model forwards run in manifest order.  Per-utterance failures
/// (e.g. no full video segment) are collected, not fatal.
inline ExtractionResult extract_embeddings(const Manifest& m,
                                           EtdnnModel<float>* audio_model,
                                           McnnModel<float>* video_model,
                                           const MfccConfig& mfcc_cfg,
                                           int segment_frames = kSegmentFrames,
                                           int jobs = 1) {
  ExtractionResult result;
  const int64_t n = static_cast<int64_t>(m.records.size());

  std::vector<Tensor<float>> audio_feats(static_cast<size_t>(n));
  std::vector<LipSequence> lips(static_cast<size_t>(n));
  std::vector<std::string> audio_err(static_cast<size_t>(n)), video_err(static_cast<size_t>(n));
  parallel_for(n, jobs, [&](int64_t i) {
    const auto& r = m.records[static_cast<size_t>(i)];
    if (audio_model != nullptr) {
      try {
        const FeatureMatrix f = utterance_mfcc(r, mfcc_cfg);
        auto& t = audio_feats[static_cast<size_t>(i)];
        t.resize({int64_t(1), f.num_frames(), f.num_coeffs()});
        for (int64_t j = 0; j < f.values.numel(); ++j) t[j] = static_cast<float>(f.values[j]);
      } catch (const Error& e) {
        audio_err[static_cast<size_t>(i)] = e.what();
      }
    }
    if (video_model != nullptr) {
      try {
        lips[static_cast<size_t>(i)] = utterance_lips(r);
      } catch (const Error& e) {
        video_err[static_cast<size_t>(i)] = e.what();
      }
    }
  });

  for (int64_t i = 0; i < n; ++i) {
    const auto& r = m.records[static_cast<size_t>(i)];
    if (audio_model != nullptr) {
      if (!audio_err[static_cast<size_t>(i)].empty()) {
        result.failures.push_back({r.utt_id, "audio", audio_err[static_cast<size_t>(i)]});
      } else {
        try {
          Tensor<float> emb = audio_model->embed(audio_feats[static_cast<size_t>(i)], false);
          std::vector<float> v(static_cast<size_t>(emb.dim(1)));
          for (int64_t c = 0; c < emb.dim(1); ++c) v[static_cast<size_t>(c)] = emb(int64_t(0), c);
          result.store.set(r.utt_id, Stream::kAudio, std::move(v));
        } catch (const Error& e) {
          result.failures.push_back({r.utt_id, "audio", e.what()});
        }
      }
    }
    if (video_model != nullptr) {
      if (!video_err[static_cast<size_t>(i)].empty()) {
        result.failures.push_back({r.utt_id, "video", video_err[static_cast<size_t>(i)]});
      } else {
        try {
          auto v = embed_utterance_video(*video_model, lips[static_cast<size_t>(i)], segment_frames);
          result.store.set(r.utt_id, Stream::kVideo, std::move(v));
        } catch (const Error& e) {
          result.failures.push_back({r.utt_id, "video", e.what()});
        }
      }
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Synth-mode partitioning: per speaker, the first train_utts utterances go to
// training, the next dev_utts to development, the rest to test.
// ---------------------------------------------------------------------------

inline PartitionSet synth_partitions(const Manifest& m, int train_utts, int dev_utts) {
  std::map<std::string, int> seen;
  Partition train{"training", PartitionRole::kTraining, {}};
  Partition dev{"development", PartitionRole::kDevelopment, {}};
  Partition test{"test", PartitionRole::kTest, {}};
  train.manifest.name = "training";
  dev.manifest.name = "development";
  test.manifest.name = "test";
  for (const auto& r : m.records) {
    const int idx = seen[r.speaker_id]++;
    if (idx < train_utts) train.manifest.records.push_back(r);
    else if (idx < train_utts + dev_utts) dev.manifest.records.push_back(r);
    else test.manifest.records.push_back(r);
  }
  PartitionSet out;
  for (auto* p : {&train, &dev, &test})
    if (!p->manifest.records.empty()) out.partitions.push_back(std::move(*p));
  if (out.partitions.empty()) raise<EmptyPartition>("synthetic corpus is empty");
  out.check_disjoint();
  return out;
}

// ---------------------------------------------------------------------------
// GMM-UBM trial scoring (frame-level backend; no embeddings involved)
// ---------------------------------------------------------------------------

inline Eigen::MatrixXd gmm_frames(const FeatureMatrix& f, const UbmPipelineConfig& cfg) {
  FeatureMatrix feats = f;
  if (cfg.energy_vad) feats = drop_quiet_frames(feats, cfg.vad_threshold);
  if (cfg.deltas) feats = append_deltas(feats, 2);
  Eigen::MatrixXd out(feats.num_frames(), feats.num_coeffs());
  for (int64_t t = 0; t < feats.num_frames(); ++t)
    for (int64_t c = 0; c < feats.num_coeffs(); ++c) out(t, c) = feats.values(t, c);
  return out;
}

/// Scores a trial list with the classic UBM / MAP-adapted-model LLR.  Enroll
/// utterance frames adapt the UBM; test utterance frames are scored.
inline ScoreSet gmm_ubm_score_trials(const GmmModel& ubm, const Manifest& test_manifest,
                                     const TrialList& trials, const MfccConfig& mfcc_cfg,
                                     const UbmPipelineConfig& cfg, int jobs = 1) {
  std::map<std::string, int64_t> index;
  for (size_t i = 0; i < test_manifest.records.size(); ++i)
    index[test_manifest.records[i].utt_id] = static_cast<int64_t>(i);

  // every utterance referenced by the trial list, featurized once
  std::vector<int64_t> needed;
  {
    std::map<std::string, bool> mark;
    for (const auto& t : trials) {
      for (const auto& utt : {t.enroll_utt, t.test_utt}) {
        if (mark.emplace(utt, true).second) {
          auto it = index.find(utt);
          if (it == index.end()) raise<MissingEmbedding>("utt not in manifest: ", utt);
          needed.push_back(it->second);
        }
      }
    }
  }
  std::map<std::string, Eigen::MatrixXd> frames;
  {
    std::vector<Eigen::MatrixXd> tmp(needed.size());
    parallel_for(static_cast<int64_t>(needed.size()), jobs, [&](int64_t i) {
      const auto& r = test_manifest.records[static_cast<size_t>(needed[static_cast<size_t>(i)])];
      tmp[static_cast<size_t>(i)] = gmm_frames(utterance_mfcc(r, mfcc_cfg), cfg);
    });
    for (size_t i = 0; i < needed.size(); ++i)
      frames[test_manifest.records[static_cast<size_t>(needed[i])].utt_id] = std::move(tmp[i]);
  }

  std::map<std::string, GmmModel> adapted;
  ScoreSet out;
  out.trials = trials;
  out.system_name = "audio-gmm-ubm";
  out.scores.reserve(trials.size());
  for (const auto& t : trials) {
    auto it = adapted.find(t.enroll_utt);
    if (it == adapted.end())
      it = adapted.emplace(t.enroll_utt,
                           map_adapt(ubm, frames.at(t.enroll_utt), cfg.relevance)).first;
    out.scores.push_back(gmm_ubm_score(ubm, it->second, frames.at(t.test_utt)));
  }
  return out;
}

}  // namespace avlip
