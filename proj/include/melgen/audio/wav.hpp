// Copyright 2026 The melgen Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace melgen {

struct Waveform {
  std::vector<double> samples;  // amplitudes in [-1, 1]
  int sample_rate = 0;

  std::size_t size() const { return samples.size(); }
  double duration() const { return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0; }
};

class AudioFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace wav_detail {

inline std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<unsigned char>((v >> (8 * k)) & 0xff));
}
inline void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
}

}  // namespace wav_detail

/// Decodes a 16-bit PCM RIFF/WAVE byte stream. Multi-channel audio is mixed
/// to mono by averaging channels.
inline Waveform decode_wav(const std::vector<unsigned char>& bytes) {
  using namespace wav_detail;
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw AudioFormatError("not a RIFF/WAVE stream");
  }
  std::size_t pos = 12;
  int channels = 0, bits = 0, format = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = std::min<std::size_t>(size, bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (avail < 16) throw AudioFormatError("truncated fmt chunk");
      format = read_u16(chunk + 8);
      channels = read_u16(chunk + 10);
      rate = read_u32(chunk + 12);
      bits = read_u16(chunk + 22);
      if (format == 0xFFFE && avail >= 26) format = read_u16(chunk + 32);  // extensible: sub-format tag
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_size = avail;
    }
    pos = body + size + (size & 1u);
  }
  if (!have_fmt) throw AudioFormatError("missing fmt chunk");
  if (format != 1 || bits != 16) {
    throw AudioFormatError("unsupported encoding: format " + std::to_string(format) + ", " + std::to_string(bits) +
                           " bits (expected 16-bit PCM)");
  }
  if (channels < 1 || rate == 0) throw AudioFormatError("invalid channel count or sample rate");
  const std::size_t frame_bytes = static_cast<std::size_t>(channels) * 2;
  const std::size_t frames = data == nullptr ? 0 : data_size / frame_bytes;
  if (frames == 0) throw AudioFormatError("empty audio stream");

  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  w.samples.resize(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) {
      const auto raw = static_cast<std::int16_t>(read_u16(data + f * frame_bytes + static_cast<std::size_t>(c) * 2));
      acc += static_cast<double>(raw) / 32768.0;
    }
    w.samples[f] = acc / channels;
  }
  return w;
}

inline Waveform load_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open WAV file: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_wav(bytes);
}

/// Encodes interleaved 16-bit PCM with the given channel count.
inline std::vector<unsigned char> encode_wav_pcm16(const std::vector<std::int16_t>& interleaved, int channels,
                                                   int sample_rate) {
  using namespace wav_detail;
  std::vector<unsigned char> out;
  const auto data_bytes = static_cast<std::uint32_t>(interleaved.size() * 2);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, static_cast<std::uint16_t>(channels));
  put_u32(out, static_cast<std::uint32_t>(sample_rate));
  put_u32(out, static_cast<std::uint32_t>(sample_rate * channels * 2));
  put_u16(out, static_cast<std::uint16_t>(channels * 2));
  put_u16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_bytes);
  for (std::int16_t s : interleaved) put_u16(out, static_cast<std::uint16_t>(s));
  return out;
}

inline std::int16_t to_pcm16(double v) {
  const double scaled = std::round(std::clamp(v, -1.0, 1.0) * 32768.0);
  return static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
}

inline std::vector<unsigned char> encode_wav(const Waveform& w) {
  std::vector<std::int16_t> pcm(w.samples.size());
  std::transform(w.samples.begin(), w.samples.end(), pcm.begin(), to_pcm16);
  return encode_wav_pcm16(pcm, 1, w.sample_rate);
}

/// Writes 16-bit mono PCM; samples outside [-1, 1] are clipped.
inline void save_wav(const std::filesystem::path& path, const Waveform& w) {
  if (w.sample_rate <= 0) throw std::invalid_argument("save_wav: sample rate must be positive");
  const auto bytes = encode_wav(w);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write WAV file: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace melgen
