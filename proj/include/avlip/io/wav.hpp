// avlip/io/wav.hpp

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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "avlip/common.hpp"

namespace avlip {

/// Mono audio signal, amplitudes in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;

  double duration() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

namespace wav {

namespace detail {
inline void put_u32(std::ofstream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}
inline void put_u16(std::ofstream& os, uint16_t v) {
  os.write(reinterpret_cast<const char*>(&v), 2);
}
inline uint32_t get_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
inline uint16_t get_u16(const uint8_t* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}
}  // namespace detail

// 16-bit PCM mono RIFF writer.
inline void save(const std::string& path, const Waveform& w) {
  std::ofstream os(path, std::ios::binary);
  if (!os) raise<IoError>("cannot open for writing: ", path);
  const uint32_t n = static_cast<uint32_t>(w.samples.size());
  const uint32_t data_bytes = n * 2;
  os.write("RIFF", 4);
  detail::put_u32(os, 36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  detail::put_u32(os, 16);
  detail::put_u16(os, 1);  // PCM
  detail::put_u16(os, 1);  // mono
  detail::put_u32(os, static_cast<uint32_t>(w.sample_rate));
  detail::put_u32(os, static_cast<uint32_t>(w.sample_rate) * 2);
  detail::put_u16(os, 2);   // block align
  detail::put_u16(os, 16);  // bits
  os.write("data", 4);
  detail::put_u32(os, data_bytes);
  for (double s : w.samples) {
    const double clipped = std::clamp(s, -1.0, 1.0);
    const int16_t q = static_cast<int16_t>(std::lrint(clipped * 32767.0));
    os.write(reinterpret_cast<const char*>(&q), 2);
  }
  if (!os) raise<IoError>("short write: ", path);
}

// Reads mono or multichannel RIFF (16-bit PCM or 32-bit IEEE float);
// multichannel input is averaged down to mono.
inline Waveform load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) raise<IoError>("cannot open: ", path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(is)),
                           std::istreambuf_iterator<char>());
  if (buf.size() < 44 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    raise<ParseError>("not a RIFF/WAVE file: ", path);

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  size_t data_off = 0, data_len = 0;
  size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const uint32_t chunk_len = detail::get_u32(buf.data() + pos + 4);
    if (std::memcmp(buf.data() + pos, "fmt ", 4) == 0 && chunk_len >= 16) {
      format = detail::get_u16(buf.data() + pos + 8);
      channels = detail::get_u16(buf.data() + pos + 10);
      rate = detail::get_u32(buf.data() + pos + 12);
      bits = detail::get_u16(buf.data() + pos + 22);
    } else if (std::memcmp(buf.data() + pos, "data", 4) == 0) {
      data_off = pos + 8;
      data_len = std::min<size_t>(chunk_len, buf.size() - data_off);
    }
    pos += 8 + chunk_len + (chunk_len & 1);
  }
  if (rate == 0 || channels == 0 || data_off == 0)
    raise<ParseError>("missing fmt/data chunk: ", path);

  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  const size_t bytes_per = bits / 8;
  const size_t frames = data_len / (bytes_per * channels);
  w.samples.resize(frames);
  const uint8_t* p = buf.data() + data_off;
  for (size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (uint16_t c = 0; c < channels; ++c) {
      const uint8_t* sp = p + (i * channels + c) * bytes_per;
      if (format == 1 && bits == 16) {
        int16_t v;
        std::memcpy(&v, sp, 2);
        acc += v / 32768.0;
      } else if (format == 3 && bits == 32) {
        float v;
        std::memcpy(&v, sp, 4);
        acc += v;
      } else {
        raise<ParseError>("unsupported wav encoding (format ", format, ", ", bits,
                          " bits): ", path);
      }
    }
    w.samples[i] = acc / channels;
  }
  return w;
}

}  // namespace wav

// Linear-interpolation resampler.
inline Waveform resample(const Waveform& in, int target_rate) {
  if (target_rate <= 0) raise<ConfigError>("target sample rate must be > 0");
  if (in.sample_rate == target_rate || in.samples.empty()) {
    Waveform out = in;
    out.sample_rate = target_rate;
    return out;
  }
  const double ratio = static_cast<double>(in.sample_rate) / target_rate;
  const size_t n_out = static_cast<size_t>(
      std::floor(static_cast<double>(in.samples.size() - 1) / ratio)) + 1;
  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(n_out);
  for (size_t i = 0; i < n_out; ++i) {
    const double t = i * ratio;
    const size_t i0 = static_cast<size_t>(t);
    const size_t i1 = std::min(i0 + 1, in.samples.size() - 1);
    const double frac = t - static_cast<double>(i0);
    out.samples[i] = (1.0 - frac) * in.samples[i0] + frac * in.samples[i1];
  }
  return out;
}

}  // namespace avlip
