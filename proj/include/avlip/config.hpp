// avlip/config.hpp

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

#include <fstream>
#include <json.hpp>
#include <map>
#include <string>
#include <vector>

#include "avlip/backends.hpp"
#include "avlip/common.hpp"
#include "avlip/corpus.hpp"
#include "avlip/features.hpp"
#include "avlip/lipnet.hpp"
#include "avlip/synth.hpp"
#include "avlip/xvector.hpp"

// Declarative run configuration.  Every default below is the training recipe
// the toolkit ships with, so a zero-flag run needs no config edits.

namespace avlip {

inline void to_json(nlohmann::json& j, const MfccConfig& c) {
  j = {{"n_fft", c.n_fft},
       {"n_bins", c.n_bins},
       {"n_coeffs", c.n_coeffs},
       {"frame_length_ms", c.frame_length_ms},
       {"frame_shift_ms", c.frame_shift_ms},
       {"pre_emphasis", c.pre_emphasis},
       {"cmvn", c.cmvn},
       {"target_sample_rate", c.target_sample_rate}};
}

inline void from_json(const nlohmann::json& j, MfccConfig& c) {
  j.at("n_fft").get_to(c.n_fft);
  j.at("n_bins").get_to(c.n_bins);
  j.at("n_coeffs").get_to(c.n_coeffs);
  j.at("frame_length_ms").get_to(c.frame_length_ms);
  j.at("frame_shift_ms").get_to(c.frame_shift_ms);
  j.at("pre_emphasis").get_to(c.pre_emphasis);
  j.at("cmvn").get_to(c.cmvn);
  j.at("target_sample_rate").get_to(c.target_sample_rate);
}

inline void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = {{"n_speakers", c.n_speakers},
       {"utts_per_speaker", c.utts_per_speaker},
       {"seed", c.seed},
       {"sample_rate", c.sample_rate},
       {"min_duration_s", c.min_duration_s},
       {"max_duration_s", c.max_duration_s},
       {"fps", c.fps},
       {"frame_size", c.frame_size},
       {"min_frames", c.min_frames},
       {"max_frames", c.max_frames},
       {"video_format", c.video_format}};
}

inline void from_json(const nlohmann::json& j, SynthConfig& c) {
  j.at("n_speakers").get_to(c.n_speakers);
  j.at("utts_per_speaker").get_to(c.utts_per_speaker);
  j.at("seed").get_to(c.seed);
  j.at("sample_rate").get_to(c.sample_rate);
  j.at("min_duration_s").get_to(c.min_duration_s);
  j.at("max_duration_s").get_to(c.max_duration_s);
  j.at("fps").get_to(c.fps);
  j.at("frame_size").get_to(c.frame_size);
  j.at("min_frames").get_to(c.min_frames);
  j.at("max_frames").get_to(c.max_frames);
  j.at("video_format").get_to(c.video_format);
}

namespace nn {
inline void to_json(nlohmann::json& j, const AmSoftmaxConfig& c) {
  j = {{"margin", c.margin}, {"scale", c.scale}};
}
inline void from_json(const nlohmann::json& j, AmSoftmaxConfig& c) {
  j.at("margin").get_to(c.margin);
  j.at("scale").get_to(c.scale);
}
}  // namespace nn

struct VideoStreamConfig {
  int segment_frames = kSegmentFrames;  // 29-frame segments, remainder dropped
  int crop_size = kCropSize;            // 88 x 88 training crops
  McnnConfig model;
  VideoTrainHyper train;
  std::string optimizer = "adam";
  std::string loss = "cross_entropy";
  std::string schedule = "cosine";
};

inline void to_json(nlohmann::json& j, const VideoStreamConfig& c) {
  j = {{"segment_frames", c.segment_frames},
       {"crop_size", c.crop_size},
       {"model", c.model},
       {"optimizer", c.optimizer},
       {"loss", c.loss},
       {"schedule", c.schedule},
       {"lr", c.train.lr},
       {"weight_decay", c.train.weight_decay},
       {"epochs", c.train.epochs},
       {"batch_size", c.train.batch_size},
       {"augment", c.train.augment},
       {"variable_length", c.train.variable_length},
       {"min_frames", c.train.min_frames}};
}

inline void from_json(const nlohmann::json& j, VideoStreamConfig& c) {
  j.at("segment_frames").get_to(c.segment_frames);
  j.at("crop_size").get_to(c.crop_size);
  j.at("model").get_to(c.model);
  j.at("optimizer").get_to(c.optimizer);
  j.at("loss").get_to(c.loss);
  j.at("schedule").get_to(c.schedule);
  j.at("lr").get_to(c.train.lr);
  j.at("weight_decay").get_to(c.train.weight_decay);
  j.at("epochs").get_to(c.train.epochs);
  j.at("batch_size").get_to(c.train.batch_size);
  j.at("augment").get_to(c.train.augment);
  j.at("variable_length").get_to(c.train.variable_length);
  j.at("min_frames").get_to(c.train.min_frames);
  c.train.cosine_schedule = (c.schedule == "cosine");
}

struct AudioStreamConfig {
  EtdnnConfig model;
  AudioTrainHyper train;
  std::string optimizer = "sgd";
  std::string loss = "am_softmax";
};

inline void to_json(nlohmann::json& j, const AudioStreamConfig& c) {
  j = {{"model", c.model},
       {"optimizer", c.optimizer},
       {"loss", c.loss},
       {"lr", c.train.lr},
       {"weight_decay", c.train.weight_decay},
       {"epochs", c.train.epochs},
       {"pretrain_epochs", c.train.pretrain_epochs},
       {"batch_size", c.train.batch_size},
       {"am_softmax", c.train.am_softmax},
       {"variable_length", c.train.variable_length},
       {"min_crop_frames", c.train.min_crop_frames},
       {"momentum", c.train.momentum}};
}

inline void from_json(const nlohmann::json& j, AudioStreamConfig& c) {
  j.at("model").get_to(c.model);
  j.at("optimizer").get_to(c.optimizer);
  j.at("loss").get_to(c.loss);
  j.at("lr").get_to(c.train.lr);
  j.at("weight_decay").get_to(c.train.weight_decay);
  j.at("epochs").get_to(c.train.epochs);
  j.at("pretrain_epochs").get_to(c.train.pretrain_epochs);
  j.at("batch_size").get_to(c.train.batch_size);
  j.at("am_softmax").get_to(c.train.am_softmax);
  j.at("variable_length").get_to(c.train.variable_length);
  j.at("min_crop_frames").get_to(c.train.min_crop_frames);
  j.at("momentum").get_to(c.train.momentum);
}

inline void to_json(nlohmann::json& j, const PldaConfig& c) {
  j = {{"rank", c.rank},
       {"max_iters", c.max_iters},
       {"tol", c.tol},
       {"center", c.center},
       {"length_norm", c.length_norm},
       {"pca_dim", c.pca_dim}};
}

inline void from_json(const nlohmann::json& j, PldaConfig& c) {
  j.at("rank").get_to(c.rank);
  j.at("max_iters").get_to(c.max_iters);
  j.at("tol").get_to(c.tol);
  j.at("center").get_to(c.center);
  j.at("length_norm").get_to(c.length_norm);
  j.at("pca_dim").get_to(c.pca_dim);
}

struct UbmPipelineConfig {
  GmmConfig gmm;               // 64 mixtures by default
  double relevance = 16.0;     // MAP relevance factor
  bool deltas = true;          // MFCC + delta + delta-delta
  bool energy_vad = false;     // energy-based frame dropping
  double vad_threshold = 30.0;
};

inline void to_json(nlohmann::json& j, const UbmPipelineConfig& c) {
  j = {{"mixtures", c.gmm.mixtures},
       {"kmeans_iters", c.gmm.kmeans_iters},
       {"max_iters", c.gmm.max_iters},
       {"tol", c.gmm.tol},
       {"floor_factor", c.gmm.floor_factor},
       {"relevance", c.relevance},
       {"deltas", c.deltas},
       {"energy_vad", c.energy_vad},
       {"vad_threshold", c.vad_threshold}};
}

inline void from_json(const nlohmann::json& j, UbmPipelineConfig& c) {
  j.at("mixtures").get_to(c.gmm.mixtures);
  j.at("kmeans_iters").get_to(c.gmm.kmeans_iters);
  j.at("max_iters").get_to(c.gmm.max_iters);
  j.at("tol").get_to(c.gmm.tol);
  j.at("floor_factor").get_to(c.gmm.floor_factor);
  j.at("relevance").get_to(c.relevance);
  j.at("deltas").get_to(c.deltas);
  j.at("energy_vad").get_to(c.energy_vad);
  j.at("vad_threshold").get_to(c.vad_threshold);
}

struct TrialSpec {
  int64_t n_pairs = 20000;
  uint64_t seed = 7;
  std::vector<std::string> partitions;  // empty = every test-role partition
};

inline void to_json(nlohmann::json& j, const TrialSpec& c) {
  j = {{"n_pairs", c.n_pairs}, {"seed", c.seed}, {"partitions", c.partitions}};
}
inline void from_json(const nlohmann::json& j, TrialSpec& c) {
  j.at("n_pairs").get_to(c.n_pairs);
  j.at("seed").get_to(c.seed);
  j.at("partitions").get_to(c.partitions);
}

struct DataConfig {
  std::string mode = "synth";  // "synth" or "manifests"
  SynthConfig synth{16, 20, 7};
  int synth_train_utts = 8;  // per speaker; the rest are held out for trials
  int synth_dev_utts = 4;    // held-out utterances reserved for the dev partition
  std::map<std::string, std::string> manifests;  // name -> path
  std::vector<PartitionRule> rules;
  uint64_t partition_seed = 0;
  TrialSpec trials;
};

inline void to_json(nlohmann::json& j, const PartitionRule& r) {
  j = {{"name", r.partition_name},
       {"role", to_string(r.role)},
       {"source", r.source},
       {"speakers", r.speakers},
       {"n_speakers", r.n_speakers}};
}

inline void from_json(const nlohmann::json& j, PartitionRule& r) {
  j.at("name").get_to(r.partition_name);
  r.role = partition_role_from_string(j.at("role").get<std::string>());
  j.at("source").get_to(r.source);
  j.at("speakers").get_to(r.speakers);
  j.at("n_speakers").get_to(r.n_speakers);
}

inline void to_json(nlohmann::json& j, const DataConfig& c) {
  j = {{"mode", c.mode},
       {"synth", c.synth},
       {"synth_train_utts", c.synth_train_utts},
       {"synth_dev_utts", c.synth_dev_utts},
       {"manifests", c.manifests},
       {"partitions", c.rules},
       {"partition_seed", c.partition_seed},
       {"trials", c.trials}};
}

inline void from_json(const nlohmann::json& j, DataConfig& c) {
  j.at("mode").get_to(c.mode);
  j.at("synth").get_to(c.synth);
  j.at("synth_train_utts").get_to(c.synth_train_utts);
  j.at("synth_dev_utts").get_to(c.synth_dev_utts);
  j.at("manifests").get_to(c.manifests);
  j.at("partitions").get_to(c.rules);
  j.at("partition_seed").get_to(c.partition_seed);
  j.at("trials").get_to(c.trials);
}

struct FusionSpec {
  std::string mode = "both";  // "feature", "score", "both"
  double weight_audio = 0.5;  // equal contribution by default
  double weight_video = 0.5;
  std::string measure = "cosine";  // fused pipelines default to cosine
};

inline void to_json(nlohmann::json& j, const FusionSpec& c) {
  j = {{"mode", c.mode},
       {"weights", std::vector<double>{c.weight_audio, c.weight_video}},
       {"measure", c.measure}};
}

inline void from_json(const nlohmann::json& j, FusionSpec& c) {
  j.at("mode").get_to(c.mode);
  const auto w = j.at("weights").get<std::vector<double>>();
  if (w.size() != 2) raise<ConfigError>("fusion weights must have 2 entries");
  c.weight_audio = w[0];
  c.weight_video = w[1];
  j.at("measure").get_to(c.measure);
}

struct MetricSpec {
  double p_target = 0.01;
  double c_miss = 1.0;
  double c_fa = 1.0;
};

inline void to_json(nlohmann::json& j, const MetricSpec& c) {
  j = {{"p_target", c.p_target}, {"c_miss", c.c_miss}, {"c_fa", c.c_fa}};
}
inline void from_json(const nlohmann::json& j, MetricSpec& c) {
  j.at("p_target").get_to(c.p_target);
  j.at("c_miss").get_to(c.c_miss);
  j.at("c_fa").get_to(c.c_fa);
}

struct RunConfig {
  uint64_t seed = 42;
  std::string workdir = "work";
  int jobs = 1;
  bool strict = false;
  DataConfig data;
  MfccConfig mfcc;
  VideoStreamConfig video;
  AudioStreamConfig audio;
  PldaConfig plda;
  UbmPipelineConfig ubm;
  FusionSpec fusion;
  MetricSpec metrics;

  void validate() const {
    mfcc.validate();
    video.model.validate();
    audio.model.validate();
    if (video.optimizer != "adam" && video.optimizer != "sgd")
      raise<ConfigError>("video optimizer must be adam or sgd");
    if (audio.optimizer != "sgd" && audio.optimizer != "adam")
      raise<ConfigError>("audio optimizer must be sgd or adam");
    if (audio.loss != "am_softmax")
      raise<ConfigError>("audio loss must be am_softmax");
    if (video.loss != "cross_entropy")
      raise<ConfigError>("video loss must be cross_entropy");
    if (video.crop_size != kCropSize)
      raise<ConfigError>("crop_size must be ", kCropSize);
    if (data.mode != "synth" && data.mode != "manifests")
      raise<ConfigError>("data mode must be synth or manifests");
    if (fusion.mode != "feature" && fusion.mode != "score" && fusion.mode != "both")
      raise<ConfigError>("fusion mode must be feature, score or both");
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"seed", c.seed},   {"workdir", c.workdir}, {"jobs", c.jobs},
       {"strict", c.strict}, {"data", c.data},     {"mfcc", c.mfcc},
       {"video", c.video}, {"audio", c.audio},     {"plda", c.plda},
       {"ubm", c.ubm},     {"fusion", c.fusion},   {"metrics", c.metrics}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  j.at("seed").get_to(c.seed);
  j.at("workdir").get_to(c.workdir);
  j.at("jobs").get_to(c.jobs);
  j.at("strict").get_to(c.strict);
  j.at("data").get_to(c.data);
  j.at("mfcc").get_to(c.mfcc);
  j.at("video").get_to(c.video);
  j.at("audio").get_to(c.audio);
  j.at("plda").get_to(c.plda);
  j.at("ubm").get_to(c.ubm);
  j.at("fusion").get_to(c.fusion);
  j.at("metrics").get_to(c.metrics);
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) raise<ConfigError>("cannot open config: ", path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    raise<ConfigError>("bad config JSON in ", path, ": ", e.what());
  }
  // defaults first, then overlay the file so partial configs are valid
  nlohmann::json base = RunConfig{};
  base.merge_patch(j);
  RunConfig cfg;
  try {
    base.get_to(cfg);
  } catch (const nlohmann::json::exception& e) {
    raise<ConfigError>("bad config value in ", path, ": ", e.what());
  }
  cfg.validate();
  return cfg;
}

inline void save_config(const std::string& path, const RunConfig& cfg) {
  std::ofstream os(path);
  if (!os) raise<IoError>("cannot open for writing: ", path);
  nlohmann::json j = cfg;
  os << j.dump(2) << "\n";
  if (!os) raise<IoError>("short write: ", path);
}

}  // namespace avlip
