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

#include "melgen/audio/mel.hpp"
#include "melgen/audio/wav.hpp"
#include "melgen/tts/vocabulary.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace melgen::toy {

struct Clip {
  Waveform audio;
  std::string text;  // empty for unconditional corpora
};

/// Analysis settings shared by the toy corpora: 8 kHz audio, 10 ms hop,
/// 16 mel channels.
inline SpectrogramConfig spectrogram_config() {
  SpectrogramConfig c;
  c.sample_rate = 8000;
  c.hop = 80;
  c.window = 320;
  c.fft_size = 512;
  c.mel_channels = 16;
  c.f_min = 0.0;
  c.f_max = 4000.0;
  return c;
}

struct TonesOptions {
  int count = 16;
  double min_seconds = 1.0;
  double max_seconds = 2.0;
  double min_segment = 0.1;   // seconds
  double max_segment = 0.4;
  double min_hz = 150.0;
  double max_hz = 1500.0;
  double noise = 1e-3;
  SpectrogramConfig spec = spectrogram_config();
};

/// Clips of random piecewise-constant pitch: each segment holds one
/// fundamental (plus a weaker octave) under an attack-release envelope.
inline std::vector<Clip> tones(const TonesOptions& o, std::uint64_t seed) {
  if (o.count < 1) throw std::invalid_argument("tones: count must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dur(o.min_seconds, o.max_seconds);
  std::uniform_real_distribution<double> seg(o.min_segment, o.max_segment);
  std::uniform_real_distribution<double> logf(std::log(o.min_hz), std::log(o.max_hz));
  std::uniform_real_distribution<double> amp(0.2, 0.6);
  std::normal_distribution<double> noise(0.0, o.noise);
  const double sr = o.spec.sample_rate;
  std::vector<Clip> out;
  for (int n = 0; n < o.count; ++n) {
    const auto total = static_cast<std::size_t>(dur(rng) * sr);
    Clip c;
    c.audio.sample_rate = o.spec.sample_rate;
    c.audio.samples.assign(total, 0.0);
    std::size_t pos = 0;
    double phase = 0.0;
    while (pos < total) {
      const auto len = std::min(total - pos, static_cast<std::size_t>(seg(rng) * sr));
      const double f = std::exp(logf(rng));
      const double a = amp(rng);
      const double ramp = 0.01 * sr;
      for (std::size_t k = 0; k < len; ++k) {
        const double t = static_cast<double>(k);
        const double env = std::min({1.0, t / ramp, static_cast<double>(len - k) / ramp});
        phase += 2.0 * std::numbers::pi * f / sr;
        c.audio.samples[pos + k] = a * env * (std::sin(phase) + 0.3 * std::sin(2.0 * phase));
      }
      pos += len;
    }
    for (auto& v : c.audio.samples) v += noise(rng);
    out.push_back(std::move(c));
  }
  return out;
}

struct CharToneOptions {
  int count = 32;
  int min_chars = 3;
  int max_chars = 6;
  int frames_per_char = 8;
  double amplitude = 0.5;
  double ramp = 0.01;  // seconds of raised-cosine fade at each character edge
  double noise = 1e-3;
  SpectrogramConfig spec = spectrogram_config();
};

struct SpeechLikeOptions {
  double seconds = 1.0;
  int sample_rate = 16000;
  double min_f0 = 90.0;
  double max_f0 = 220.0;
  double syllables_per_second = 4.0;
};

/// Source-filter stand-in for a spoken phrase: a glottal pulse train with a
/// wandering pitch, shaped by three formant resonators that glide between
/// vowel targets, with syllable envelopes and short noise bursts between
/// syllables.
inline Waveform speech_like(const SpeechLikeOptions& o, std::uint64_t seed) {
  if (!(o.seconds > 0.0) || o.sample_rate <= 0 || !(o.min_f0 > 0.0 && o.max_f0 > o.min_f0)) {
    throw std::invalid_argument("speech_like: invalid options");
  }
  static constexpr double kVowels[][3] = {
      {730, 1090, 2440}, {270, 2290, 3010}, {300, 870, 2240}, {530, 1840, 2480}, {570, 840, 2410}, {660, 1720, 2410}};
  constexpr double kBandwidth[3] = {80.0, 120.0, 160.0};
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> vowel(0, 5);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sr = o.sample_rate;
  const auto n = static_cast<std::size_t>(std::llround(o.seconds * sr));
  const auto syllable = static_cast<std::size_t>(sr / o.syllables_per_second);

  Waveform w;
  w.sample_rate = o.sample_rate;
  w.samples.assign(n, 0.0);
  double y1[3] = {0, 0, 0}, y2[3] = {0, 0, 0};
  double phase = 0.0, f0 = 0.5 * (o.min_f0 + o.max_f0);
  const double nyquist = 0.5 * sr;
  int from = vowel(rng), to = vowel(rng);
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t pos = t % syllable;
    if (pos == 0 && t > 0) {
      from = to;
      to = vowel(rng);
    }
    const double frac = static_cast<double>(pos) / static_cast<double>(syllable);
    f0 = std::clamp(f0 + 0.3 * normal(rng), o.min_f0, o.max_f0);
    phase += f0 / sr;
    double source = 0.0;
    if (phase >= 1.0) {
      phase -= 1.0;
      source = 1.0;
    }
    // Voicing fades in and out; the syllable gap carries a noise burst.
    const double voiced = std::sin(std::numbers::pi * std::min(1.0, frac / 0.8));
    const double excitation = frac < 0.8 ? voiced * source : 0.05 * normal(rng);
    double out = 0.0;
    for (int k = 0; k < 3; ++k) {
      const double f = std::min(kVowels[from][k] + (kVowels[to][k] - kVowels[from][k]) * frac, 0.9 * nyquist);
      const double r = std::exp(-std::numbers::pi * kBandwidth[k] / sr);
      const double a1 = 2.0 * r * std::cos(2.0 * std::numbers::pi * f / sr), a2 = -r * r;
      const double y = (1.0 - r) * excitation + a1 * y1[k] + a2 * y2[k];
      y2[k] = y1[k];
      y1[k] = y;
      out += y / static_cast<double>(k + 1);
    }
    w.samples[t] = out;
  }
  const double peak = std::max(1e-12, std::abs(*std::max_element(w.samples.begin(), w.samples.end(),
                                                                    [](double a, double b) { return std::abs(a) < std::abs(b); })));
  for (auto& v : w.samples) v *= 0.5 / peak;
  return w;
}

/// Eight symbols, each bound to the center frequency of one mel channel.
inline const std::vector<std::string>& char_tone_symbols() {
  static const std::vector<std::string> s{"a", "b", "c", "d", "e", "f", "g", "h"};
  return s;
}

/// Mel channel assigned to symbol id k: every other channel starting at 1.
inline int char_tone_channel(int k, const SpectrogramConfig& spec) {
  const int c = 1 + 2 * k;
  if (c >= spec.mel_channels) throw std::invalid_argument("char-to-tone: too few mel channels for the vocabulary");
  return c;
}

inline double char_tone_hz(int k, const SpectrogramConfig& spec) {
  return mel_center_frequencies(spec)[static_cast<std::size_t>(char_tone_channel(k, spec))];
}

/// (text, audio) pairs: each character holds its pitch for a fixed number
/// of hops, so clip duration is U times the per-character duration. The
/// fades keep pitch changes from clicking, which would otherwise spread
/// energy over every channel. Joins sit half a hop before a frame center
/// (the first character is half a hop shorter, the last half a hop longer)
/// so no frame is split evenly between two pitches.
inline std::vector<Clip> char_to_tone(const CharToneOptions& o, std::uint64_t seed) {
  if (o.count < 1 || o.min_chars < 1 || o.max_chars < o.min_chars || o.frames_per_char < 1 || !(o.ramp >= 0.0)) {
    throw std::invalid_argument("char-to-tone: invalid options");
  }
  std::mt19937_64 rng(seed);
  const auto& symbols = char_tone_symbols();
  std::uniform_int_distribution<int> length(o.min_chars, o.max_chars);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(symbols.size()) - 1);
  std::normal_distribution<double> noise(0.0, o.noise);
  const double sr = o.spec.sample_rate;
  const std::size_t per_char = static_cast<std::size_t>(o.frames_per_char) * static_cast<std::size_t>(o.spec.hop);
  const std::size_t shift = static_cast<std::size_t>(o.spec.hop / 2);
  const double ramp = std::min(o.ramp * sr, 0.5 * static_cast<double>(per_char - shift));
  std::vector<Clip> out;
  for (int n = 0; n < o.count; ++n) {
    Clip c;
    c.audio.sample_rate = o.spec.sample_rate;
    const int u = length(rng);
    double phase = 0.0;
    for (int k = 0; k < u; ++k) {
      const int id = pick(rng);
      c.text += symbols[static_cast<std::size_t>(id)];
      const double f = char_tone_hz(id, o.spec);
      std::size_t len = per_char;
      if (k == 0) len -= shift;
      if (k == u - 1) len += shift;
      for (std::size_t s = 0; s < len; ++s) {
        phase += 2.0 * std::numbers::pi * f / sr;
        const double edge = std::min(static_cast<double>(s), static_cast<double>(len - 1 - s));
        const double env = edge < ramp ? 0.5 - 0.5 * std::cos(std::numbers::pi * edge / ramp) : 1.0;
        c.audio.samples.push_back(o.amplitude * env * std::sin(phase));
      }
    }
    for (auto& v : c.audio.samples) v += noise(rng);
    out.push_back(std::move(c));
  }
  return out;
}

/// Writes clip_NNNN.wav plus a manifest (file <TAB> text [<TAB> speaker])
/// and, for texted corpora, vocab.txt.
inline void write_corpus(const std::vector<Clip>& clips, const std::filesystem::path& dir,
                         const std::vector<std::string>& vocabulary = {}) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw std::runtime_error("cannot create corpus directory " + dir.string());
  std::ofstream manifest(dir / "manifest.tsv");
  if (!manifest) throw std::runtime_error("cannot write " + (dir / "manifest.tsv").string());
  for (std::size_t k = 0; k < clips.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "clip_%04zu", k);
    save_wav(dir / (std::string(name) + ".wav"), clips[k].audio);
    manifest << name << ".wav\t" << clips[k].text << '\n';
  }
  if (!vocabulary.empty()) Vocabulary(vocabulary).save(dir / "vocab.txt");
}

struct CorpusEntry {
  std::filesystem::path wav;
  std::string text;
  int speaker = -1;  // optional third manifest column
};

inline std::vector<CorpusEntry> read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.tsv");
  if (!in) throw std::runtime_error("corpus has no manifest.tsv: " + dir.string());
  std::vector<CorpusEntry> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    CorpusEntry e;
    e.wav = dir / line.substr(0, tab);
    if (tab != std::string::npos) {
      const std::string rest = line.substr(tab + 1);
      const auto tab2 = rest.find('\t');
      e.text = rest.substr(0, tab2);
      if (tab2 != std::string::npos) e.speaker = std::stoi(rest.substr(tab2 + 1));
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace melgen::toy
