// avlip/common.hpp

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

#include <functional>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace avlip {

// Base class for every error the toolkit throws.  Subclasses carry no extra
// state; they exist so callers can catch specific failure modes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define AVLIP_DEFINE_ERROR(NAME)          \
  class NAME : public Error {             \
   public:                                \
    using Error::Error;                   \
  }

// corpus
AVLIP_DEFINE_ERROR(ParseError);
AVLIP_DEFINE_ERROR(MissingMedia);
AVLIP_DEFINE_ERROR(DuplicateUttId);
AVLIP_DEFINE_ERROR(OverlapError);
AVLIP_DEFINE_ERROR(EmptyPartition);
AVLIP_DEFINE_ERROR(InfeasibleTrials);
AVLIP_DEFINE_ERROR(IoError);
// features
AVLIP_DEFINE_ERROR(TooShort);
AVLIP_DEFINE_ERROR(BadShape);
AVLIP_DEFINE_ERROR(MissingLandmarks);
// models
AVLIP_DEFINE_ERROR(ConfigError);
AVLIP_DEFINE_ERROR(DataError);
AVLIP_DEFINE_ERROR(BadLabel);
AVLIP_DEFINE_ERROR(MissingCheckpoint);
// backends
AVLIP_DEFINE_ERROR(ZeroVector);
AVLIP_DEFINE_ERROR(InsufficientData);
AVLIP_DEFINE_ERROR(RankTooHigh);
AVLIP_DEFINE_ERROR(ModelNotTrained);
AVLIP_DEFINE_ERROR(EmptyData);
AVLIP_DEFINE_ERROR(ShapeMismatch);
// evaluation
AVLIP_DEFINE_ERROR(MissingStream);
AVLIP_DEFINE_ERROR(TrialMismatch);
AVLIP_DEFINE_ERROR(MissingEmbedding);
AVLIP_DEFINE_ERROR(OneClassOnly);

#undef AVLIP_DEFINE_ERROR

namespace detail {
inline void str_append(std::ostringstream&) {}
template <typename T, typename... Rest>
void str_append(std::ostringstream& oss, T&& head, Rest&&... rest) {
  oss << std::forward<T>(head);
  str_append(oss, std::forward<Rest>(rest)...);
}
}  // namespace detail

// Concatenates all arguments via operator<<.
template <typename... Args>
std::string strcat_(Args&&... args) {
  std::ostringstream oss;
  detail::str_append(oss, std::forward<Args>(args)...);
  return oss.str();
}

template <typename Err, typename... Args>
[[noreturn]] void raise(Args&&... args) {
  throw Err(strcat_(std::forward<Args>(args)...));
}

// Recoverable conditions (dropped frames, pad fallbacks, component reseeds)
// go through this hook instead of a logger dependency.  Tests may swap it.
using WarnHandler = std::function<void(const std::string&)>;

inline WarnHandler& warn_handler() {
  static WarnHandler handler = [](const std::string& msg) {
    std::cerr << "avlip WARNING: " << msg << std::endl;
  };
  return handler;
}

template <typename... Args>
void warn(Args&&... args) {
  warn_handler()(strcat_(std::forward<Args>(args)...));
}

}  // namespace avlip
