// avlip/io/npy.hpp

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

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "avlip/common.hpp"
#include "avlip/tensor.hpp"

// Minimal reader/writer for the NumPy .npy format (version 1.0).  Cached
// features and synthetic video frames are stored this way: a self-describing
// array file with shape/dtype header that external scripts can open directly.

namespace avlip::npy {

template <typename T>
const char* dtype_descr() {
  if constexpr (std::is_same_v<T, uint8_t>) return "|u1";
  else if constexpr (std::is_same_v<T, float>) return "<f4";
  else if constexpr (std::is_same_v<T, double>) return "<f8";
  else if constexpr (std::is_same_v<T, int32_t>) return "<i4";
  else if constexpr (std::is_same_v<T, int64_t>) return "<i8";
  else static_assert(sizeof(T) == 0, "unsupported npy dtype");
}

template <typename T>
void save(const std::string& path, const Tensor<T>& t) {
  std::string shape = "(";
  for (int i = 0; i < t.rank(); ++i) {
    if (i) shape += ", ";
    shape += std::to_string(t.dim(i));
  }
  if (t.rank() == 1) shape += ",";  // python 1-tuple syntax
  shape += ")";
  std::string header = strcat_("{'descr': '", dtype_descr<T>(),
                               "', 'fortran_order': False, 'shape': ", shape, ", }");
  // pad with spaces so that magic+len+header is a multiple of 64, '\n' last
  size_t unpadded = 10 + header.size() + 1;
  size_t padded = (unpadded + 63) / 64 * 64;
  header.append(padded - unpadded, ' ');
  header += '\n';

  std::ofstream os(path, std::ios::binary);
  if (!os) raise<IoError>("cannot open for writing: ", path);
  const char magic[] = "\x93NUMPY";
  os.write(magic, 6);
  const char version[2] = {1, 0};
  os.write(version, 2);
  const uint16_t hlen = static_cast<uint16_t>(header.size());
  os.write(reinterpret_cast<const char*>(&hlen), 2);
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(sizeof(T) * static_cast<size_t>(t.numel())));
  if (!os) raise<IoError>("short write: ", path);
}

namespace detail {

inline std::string parse_field(const std::string& header, const std::string& key) {
  auto pos = header.find("'" + key + "'");
  if (pos == std::string::npos) raise<ParseError>("npy header missing key ", key);
  pos = header.find(':', pos);
  auto end = header.find(',', pos);
  // shape tuples contain commas; grab through the closing paren instead
  auto paren = header.find('(', pos);
  if (paren != std::string::npos && paren < end) end = header.find(')', paren) + 1;
  return header.substr(pos + 1, end - pos - 1);
}

inline std::vector<int64_t> parse_shape(std::string field) {
  std::vector<int64_t> shape;
  std::string num;
  for (char c : field) {
    if (c >= '0' && c <= '9') {
      num += c;
    } else if (!num.empty()) {
      shape.push_back(std::stoll(num));
      num.clear();
    }
  }
  if (!num.empty()) shape.push_back(std::stoll(num));
  return shape;
}

}  // namespace detail

template <typename T>
Tensor<T> load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) raise<IoError>("cannot open: ", path);
  char magic[6];
  is.read(magic, 6);
  if (!is || std::memcmp(magic, "\x93NUMPY", 6) != 0)
    raise<ParseError>("not an npy file: ", path);
  char version[2];
  is.read(version, 2);
  uint32_t hlen = 0;
  if (version[0] == 1) {
    uint16_t h16;
    is.read(reinterpret_cast<char*>(&h16), 2);
    hlen = h16;
  } else {
    is.read(reinterpret_cast<char*>(&hlen), 4);
  }
  std::string header(hlen, '\0');
  is.read(header.data(), hlen);
  if (!is) raise<ParseError>("truncated npy header: ", path);

  const std::string descr = detail::parse_field(header, "descr");
  if (descr.find(dtype_descr<T>()) == std::string::npos)
    raise<ParseError>("npy dtype mismatch in ", path, ": file has ", descr,
                      ", expected ", dtype_descr<T>());
  if (detail::parse_field(header, "fortran_order").find("True") != std::string::npos)
    raise<ParseError>("fortran-order npy not supported: ", path);

  Tensor<T> t(detail::parse_shape(detail::parse_field(header, "shape")));
  is.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(sizeof(T) * static_cast<size_t>(t.numel())));
  if (!is) raise<ParseError>("truncated npy data: ", path);
  return t;
}

}  // namespace avlip::npy
