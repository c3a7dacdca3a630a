// Copyright 2026 The crtrain Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "crtrain/util.hpp"

namespace crtrain {

struct Waveform {
  std::vector<double> samples;  // amplitude in [-1, 1]
  int sample_rate = 16000;
};

namespace detail {

inline void put_u32(std::vector<uint8_t>& b, uint32_t v) {
  b.push_back(v & 0xff);
  b.push_back((v >> 8) & 0xff);
  b.push_back((v >> 16) & 0xff);
  b.push_back((v >> 24) & 0xff);
}

inline void put_u16(std::vector<uint8_t>& b, uint16_t v) {
  b.push_back(v & 0xff);
  b.push_back((v >> 8) & 0xff);
}

inline uint32_t get_u32(const uint8_t* p) {
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 |
         uint32_t(p[3]) << 24;
}

inline uint16_t get_u16(const uint8_t* p) {
  return uint16_t(p[0]) | uint16_t(p[1]) << 8;
}

}  // namespace detail

// Canonical 16-bit PCM mono WAV.
inline void write_wav(const std::string& path, const Waveform& w) {
  std::vector<uint8_t> bytes;
  uint32_t n = static_cast<uint32_t>(w.samples.size());
  uint32_t data_bytes = n * 2;
  bytes.reserve(44 + data_bytes);
  bytes.insert(bytes.end(), {'R', 'I', 'F', 'F'});
  detail::put_u32(bytes, 36 + data_bytes);
  bytes.insert(bytes.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  detail::put_u32(bytes, 16);
  detail::put_u16(bytes, 1);  // PCM
  detail::put_u16(bytes, 1);  // mono
  detail::put_u32(bytes, static_cast<uint32_t>(w.sample_rate));
  detail::put_u32(bytes, static_cast<uint32_t>(w.sample_rate) * 2);
  detail::put_u16(bytes, 2);
  detail::put_u16(bytes, 16);
  bytes.insert(bytes.end(), {'d', 'a', 't', 'a'});
  detail::put_u32(bytes, data_bytes);
  for (double s : w.samples) {
    double c = s < -1.0 ? -1.0 : (s > 1.0 ? 1.0 : s);
    auto v = static_cast<int16_t>(std::lrint(c * 32767.0));
    detail::put_u16(bytes, static_cast<uint16_t>(v));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_wav: cannot open " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write_wav: short write to " + path);
}

inline Waveform read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_wav: cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw IoError("read_wav: " + path + " is not a RIFF/WAVE file");
  }
  // walk chunks; require PCM16 mono
  size_t pos = 12;
  int sample_rate = 0;
  const uint8_t* data = nullptr;
  uint32_t data_len = 0;
  while (pos + 8 <= bytes.size()) {
    uint32_t len = detail::get_u32(bytes.data() + pos + 4);
    if (std::memcmp(bytes.data() + pos, "fmt ", 4) == 0) {
      if (len < 16 || pos + 8 + 16 > bytes.size()) {
        throw IoError("read_wav: malformed fmt chunk in " + path);
      }
      const uint8_t* p = bytes.data() + pos + 8;
      if (detail::get_u16(p) != 1) {
        throw IoError("read_wav: " + path + " is not PCM");
      }
      if (detail::get_u16(p + 2) != 1) {
        throw IoError("read_wav: " + path + " is not mono");
      }
      sample_rate = static_cast<int>(detail::get_u32(p + 4));
      if (detail::get_u16(p + 14) != 16) {
        throw IoError("read_wav: " + path + " is not 16-bit");
      }
    } else if (std::memcmp(bytes.data() + pos, "data", 4) == 0) {
      data = bytes.data() + pos + 8;
      data_len = len;
    }
    pos += 8 + len + (len & 1);
  }
  if (sample_rate == 0 || data == nullptr) {
    throw IoError("read_wav: missing fmt/data chunk in " + path);
  }
  if (data + data_len > bytes.data() + bytes.size()) {
    throw IoError("read_wav: truncated data chunk in " + path);
  }
  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.resize(data_len / 2);
  for (size_t i = 0; i < w.samples.size(); ++i) {
    auto v = static_cast<int16_t>(detail::get_u16(data + 2 * i));
    w.samples[i] = static_cast<double>(v) / 32767.0;
  }
  return w;
}

}  // namespace crtrain
