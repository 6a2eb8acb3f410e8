// avlip/nn/train.hpp

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

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "avlip/common.hpp"

namespace avlip::nn {

struct EpochMetrics {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  double lr = 0.0;
};

struct TrainLog {
  std::vector<EpochMetrics> epochs;
  int best_epoch = -1;
  double best_accuracy = 0.0;
  double best_loss = 0.0;
};

// Metrics log line format: epoch <TAB> loss <TAB> accuracy <TAB> lr
inline void save_metrics_log(const std::string& path, const TrainLog& log) {
  std::ofstream os(path);
  if (!os) raise<IoError>("cannot open for writing: ", path);
  os << "# epoch\tloss\taccuracy\tlr\n";
  char buf[160];
  for (const auto& e : log.epochs) {
    std::snprintf(buf, sizeof(buf), "%d\t%.6f\t%.6f\t%.8g\n", e.epoch, e.loss,
                  e.accuracy, e.lr);
    os << buf;
  }
  if (!os) raise<IoError>("short write: ", path);
}

}  // namespace avlip::nn
