// avlip/io/pgm.hpp

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
#include <string>

#include "avlip/common.hpp"
#include "avlip/tensor.hpp"

// Binary PGM (P5), the frame-directory interchange format for video input.

namespace avlip::pgm {

inline void save(const std::string& path, const Tensor<uint8_t>& img) {
  if (img.rank() != 2) raise<BadShape>("pgm expects HxW, got ", img.shape_str());
  std::ofstream os(path, std::ios::binary);
  if (!os) raise<IoError>("cannot open for writing: ", path);
  os << "P5\n" << img.dim(1) << " " << img.dim(0) << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.data()),
           static_cast<std::streamsize>(img.numel()));
  if (!os) raise<IoError>("short write: ", path);
}

inline Tensor<uint8_t> load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) raise<IoError>("cannot open: ", path);
  std::string magic;
  is >> magic;
  if (magic != "P5") raise<ParseError>("not a binary PGM: ", path);
  // header tokens may be separated by whitespace or '#' comment lines
  auto next_int = [&]() {
    int v = -1;
    while (is) {
      is >> std::ws;
      if (is.peek() == '#') {
        std::string line;
        std::getline(is, line);
        continue;
      }
      is >> v;
      break;
    }
    if (v < 0) raise<ParseError>("bad PGM header: ", path);
    return v;
  };
  const int w = next_int(), h = next_int(), maxval = next_int();
  if (maxval != 255) raise<ParseError>("only maxval 255 PGM supported: ", path);
  is.get();  // single whitespace after maxval
  Tensor<uint8_t> img({h, w});
  is.read(reinterpret_cast<char*>(img.data()),
          static_cast<std::streamsize>(img.numel()));
  if (!is) raise<ParseError>("truncated PGM data: ", path);
  return img;
}

}  // namespace avlip::pgm
