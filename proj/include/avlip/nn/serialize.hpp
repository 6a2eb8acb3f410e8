// avlip/nn/serialize.hpp

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
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "avlip/common.hpp"
#include "avlip/nn/layers.hpp"

// Checkpoint file: "AVLCKPT1\n" magic, little-endian u64 header length, JSON
// header (model config, epoch, RNG state, tensor directory), raw tensor data.
// Self-describing; written atomically (temp file + rename).

namespace avlip::nn {

constexpr char kCheckpointMagic[] = "AVLCKPT1\n";

template <typename T>
void save_checkpoint(const std::string& path, nlohmann::json meta,
                     const std::vector<Param<T>*>& params,
                     const std::vector<std::vector<double>*>& buffers) {
  nlohmann::json dir = nlohmann::json::array();
  uint64_t offset = 0;
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& p = *params[i];
    nlohmann::json e;
    e["name"] = strcat_("p", i, ".", p.name);
    e["shape"] = p.value.shape();
    e["dtype"] = sizeof(T) == 4 ? "f4" : "f8";
    e["offset"] = offset;
    offset += sizeof(T) * static_cast<uint64_t>(p.value.numel());
    dir.push_back(std::move(e));
  }
  nlohmann::json bdir = nlohmann::json::array();
  for (size_t i = 0; i < buffers.size(); ++i) {
    nlohmann::json e;
    e["name"] = strcat_("b", i);
    e["size"] = buffers[i]->size();
    e["dtype"] = "f8";
    e["offset"] = offset;
    offset += sizeof(double) * buffers[i]->size();
    bdir.push_back(std::move(e));
  }
  meta["format"] = 1;
  meta["tensors"] = std::move(dir);
  meta["buffers"] = std::move(bdir);
  const std::string header = meta.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) raise<IoError>("cannot open for writing: ", tmp);
    os.write(kCheckpointMagic, 9);
    const uint64_t hlen = header.size();
    os.write(reinterpret_cast<const char*>(&hlen), 8);
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto* p : params)
      os.write(reinterpret_cast<const char*>(p->value.data()),
               static_cast<std::streamsize>(sizeof(T) * static_cast<size_t>(p->value.numel())));
    for (const auto* b : buffers)
      os.write(reinterpret_cast<const char*>(b->data()),
               static_cast<std::streamsize>(sizeof(double) * b->size()));
    if (!os) raise<IoError>("short write: ", tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) raise<IoError>("cannot rename ", tmp, " -> ", path, ": ", ec.message());
}

/// Reads the header only (to recover the stored config before building the
/// model the weights belong to).
inline nlohmann::json load_checkpoint_meta(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) raise<MissingCheckpoint>("cannot open checkpoint: ", path);
  char magic[9];
  is.read(magic, 9);
  if (!is || std::string(magic, 9) != kCheckpointMagic)
    raise<ParseError>("not a checkpoint file: ", path);
  uint64_t hlen = 0;
  is.read(reinterpret_cast<char*>(&hlen), 8);
  std::string header(hlen, '\0');
  is.read(header.data(), static_cast<std::streamsize>(hlen));
  if (!is) raise<ParseError>("truncated checkpoint header: ", path);
  return nlohmann::json::parse(header);
}

template <typename T>
nlohmann::json load_checkpoint(const std::string& path,
                               const std::vector<Param<T>*>& params,
                               const std::vector<std::vector<double>*>& buffers) {
  const nlohmann::json meta = load_checkpoint_meta(path);
  std::ifstream is(path, std::ios::binary);
  is.seekg(9);
  uint64_t hlen = 0;
  is.read(reinterpret_cast<char*>(&hlen), 8);
  is.seekg(static_cast<std::streamoff>(9 + 8 + hlen));

  const auto& dir = meta.at("tensors");
  if (dir.size() != params.size())
    raise<ParseError>(path, ": checkpoint has ", dir.size(), " tensors, model expects ",
                      params.size());
  const std::string want_dtype = sizeof(T) == 4 ? "f4" : "f8";
  for (size_t i = 0; i < params.size(); ++i) {
    const auto shape = dir[i].at("shape").get<std::vector<int64_t>>();
    if (shape != params[i]->value.shape())
      raise<ParseError>(path, ": tensor ", i, " shape mismatch");
    if (dir[i].at("dtype").get<std::string>() != want_dtype)
      raise<ParseError>(path, ": tensor ", i, " dtype mismatch");
    is.read(reinterpret_cast<char*>(params[i]->value.data()),
            static_cast<std::streamsize>(sizeof(T) *
                                         static_cast<size_t>(params[i]->value.numel())));
  }
  const auto& bdir = meta.at("buffers");
  if (bdir.size() != buffers.size())
    raise<ParseError>(path, ": checkpoint has ", bdir.size(), " buffers, model expects ",
                      buffers.size());
  for (size_t i = 0; i < buffers.size(); ++i) {
    if (bdir[i].at("size").get<size_t>() != buffers[i]->size())
      raise<ParseError>(path, ": buffer ", i, " size mismatch");
    is.read(reinterpret_cast<char*>(buffers[i]->data()),
            static_cast<std::streamsize>(sizeof(double) * buffers[i]->size()));
  }
  if (!is) raise<ParseError>("truncated checkpoint data: ", path);
  return meta;
}

}  // namespace avlip::nn
