// tests/test_config.cpp

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
#include <fstream>

#include "avlip/config.hpp"

using namespace avlip;
namespace fs = std::filesystem;

TEST_CASE("golden defaults serialize the training recipe exactly") {
  const RunConfig cfg;
  const nlohmann::json j = cfg;

  // video stream: Adam, lr 0.05, weight decay 1e-4, 300 epochs, cosine
  CHECK(j["video"]["optimizer"] == "adam");
  CHECK(j["video"]["lr"].get<double>() == 0.05);
  CHECK(j["video"]["weight_decay"].get<double>() == 1e-4);
  CHECK(j["video"]["epochs"].get<int>() == 300);
  CHECK(j["video"]["schedule"] == "cosine");
  CHECK(j["video"]["loss"] == "cross_entropy");

  // audio stream: SGD, lr 0.01, weight decay 1e-5, batch 256, AM-Softmax
  CHECK(j["audio"]["optimizer"] == "sgd");
  CHECK(j["audio"]["lr"].get<double>() == 0.01);
  CHECK(j["audio"]["weight_decay"].get<double>() == 1e-5);
  CHECK(j["audio"]["batch_size"].get<int>() == 256);
  CHECK(j["audio"]["loss"] == "am_softmax");
  CHECK(j["audio"]["am_softmax"]["margin"].get<double>() == 0.2);
  CHECK(j["audio"]["am_softmax"]["scale"].get<double>() == 30.0);
  CHECK(j["audio"]["epochs"].get<int>() == 10);
  CHECK(j["audio"]["pretrain_epochs"].get<int>() == 30);

  // MFCC 512-point FFT, 26 bins/coefficients
  CHECK(j["mfcc"]["n_fft"].get<int>() == 512);
  CHECK(j["mfcc"]["n_bins"].get<int>() == 26);
  CHECK(j["mfcc"]["n_coeffs"].get<int>() == 26);
  CHECK(j["mfcc"]["frame_length_ms"].get<double>() == 25.0);
  CHECK(j["mfcc"]["frame_shift_ms"].get<double>() == 10.0);
  CHECK(j["mfcc"]["pre_emphasis"].get<double>() == 0.97);

  // backends: PLDA rank 150, UBM with 64 mixtures
  CHECK(j["plda"]["rank"].get<int>() == 150);
  CHECK(j["ubm"]["mixtures"].get<int>() == 64);

  // segmentation and crops
  CHECK(j["video"]["segment_frames"].get<int>() == 29);
  CHECK(j["video"]["crop_size"].get<int>() == 88);

  // architecture defaults
  CHECK(j["video"]["model"]["stem_kernel"] == nlohmann::json({5, 7, 7}));
  CHECK(j["video"]["model"]["embedding_dim"].get<int>() == 512);
  CHECK(j["audio"]["model"]["embedding_dim"].get<int>() == 512);
  CHECK(j["audio"]["model"]["prepool_width"].get<int>() == 1500);

  // fusion: equal contributors, cosine measurement
  CHECK(j["fusion"]["weights"] == nlohmann::json({0.5, 0.5}));
  CHECK(j["fusion"]["measure"] == "cosine");

  // metrics: NIST-style operating point
  CHECK(j["metrics"]["p_target"].get<double>() == 0.01);
  CHECK(j["metrics"]["c_miss"].get<double>() == 1.0);
  CHECK(j["metrics"]["c_fa"].get<double>() == 1.0);
}

TEST_CASE("config file round trip") {
  const fs::path dir = fs::temp_directory_path() / "avlip_test_config";
  fs::create_directories(dir);
  RunConfig cfg;
  cfg.seed = 1234;
  cfg.data.synth.n_speakers = 5;
  save_config((dir / "c.json").string(), cfg);
  const RunConfig back = load_config((dir / "c.json").string());
  CHECK(back.seed == 1234);
  CHECK(back.data.synth.n_speakers == 5);
  CHECK(back.video.train.lr == 0.05);
}

TEST_CASE("partial configs overlay the defaults") {
  const fs::path dir = fs::temp_directory_path() / "avlip_test_config2";
  fs::create_directories(dir);
  {
    std::ofstream os(dir / "partial.json");
    os << R"({"seed": 9, "video": {"lr": 0.02}})";
  }
  const RunConfig cfg = load_config((dir / "partial.json").string());
  CHECK(cfg.seed == 9);
  CHECK(cfg.video.train.lr == 0.02);
  CHECK(cfg.video.train.epochs == 300);  // untouched default
  CHECK(cfg.audio.train.lr == 0.01);
}

TEST_CASE("invalid configs are rejected") {
  const fs::path dir = fs::temp_directory_path() / "avlip_test_config3";
  fs::create_directories(dir);
  {
    std::ofstream os(dir / "bad_mode.json");
    os << R"({"data": {"mode": "nonsense"}})";
  }
  CHECK_THROWS_AS(load_config((dir / "bad_mode.json").string()), ConfigError);
  {
    std::ofstream os(dir / "bad_json.json");
    os << "{ not json";
  }
  CHECK_THROWS_AS(load_config((dir / "bad_json.json").string()), ConfigError);
  CHECK_THROWS_AS(load_config((dir / "missing.json").string()), ConfigError);

  RunConfig cfg;
  cfg.video.crop_size = 64;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
