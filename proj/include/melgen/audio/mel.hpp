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

#include "melgen/audio/fft.hpp"
#include "melgen/audio/wav.hpp"
#include "melgen/core/tape.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace melgen {

inline int next_power_of_two(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

/// Analysis settings. The window defaults to six hops and the FFT size to
/// the next power of two that holds the window.
struct SpectrogramConfig {
  int sample_rate = 22050;
  int hop = 256;
  int window = 6 * 256;
  int fft_size = 2048;
  int mel_channels = 256;
  double f_min = 0.0;
  double f_max = 11025.0;
  double log_floor = 1e-5;

  static SpectrogramConfig make(int sample_rate, int hop, int mel_channels) {
    SpectrogramConfig c;
    c.sample_rate = sample_rate;
    c.hop = hop;
    c.window = 6 * hop;
    c.fft_size = next_power_of_two(c.window);
    c.mel_channels = mel_channels;
    c.f_min = 0.0;
    c.f_max = sample_rate / 2.0;
    return c;
  }

  int bins() const { return fft_size / 2 + 1; }
  double log_floor_value() const { return std::log(log_floor); }

  void validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("spectrogram config: " + what); };
    if (sample_rate <= 0) fail("sample_rate must be positive");
    if (hop <= 0) fail("hop must be positive");
    if (window <= 0) fail("window must be positive");
    if (fft_size < window || (fft_size & (fft_size - 1)) != 0) fail("fft_size must be a power of two >= window");
    if (mel_channels < 1) fail("mel_channels must be >= 1");
    if (!(f_min >= 0.0 && f_min < f_max && f_max <= sample_rate / 2.0)) fail("need 0 <= f_min < f_max <= sample_rate/2");
    if (!(log_floor > 0.0)) fail("log_floor must be positive");
  }

  bool operator==(const SpectrogramConfig&) const = default;
};

/// Time-major log-mel grid: values(i, j) is frame i, mel channel j.
struct MelSpectrogram {
  Matrix values;
  SpectrogramConfig config;

  Eigen::Index frames() const { return values.rows(); }
  Eigen::Index channels() const { return values.cols(); }
};

inline double hz_to_mel(double hz) {
  if (!(hz >= 0.0)) throw std::invalid_argument("hz_to_mel: frequency must be non-negative");
  return 2595.0 * std::log10(1.0 + hz / 700.0);
}

inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Center frequencies (Hz) of the mel filters, plus the two outer edges:
/// returns mel_channels + 2 points equally spaced on the mel axis.
inline std::vector<double> mel_band_edges(const SpectrogramConfig& c) {
  const double lo = hz_to_mel(c.f_min), hi = hz_to_mel(c.f_max);
  std::vector<double> hz(static_cast<std::size_t>(c.mel_channels) + 2);
  for (std::size_t k = 0; k < hz.size(); ++k) {
    hz[k] = mel_to_hz(lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(c.mel_channels + 1));
  }
  return hz;
}

inline std::vector<double> mel_center_frequencies(const SpectrogramConfig& c) {
  auto edges = mel_band_edges(c);
  return std::vector<double>(edges.begin() + 1, edges.end() - 1);
}

/// Triangular filters with unit peak, one row per mel channel, one column
/// per FFT bin.
inline Matrix build_mel_filterbank(const SpectrogramConfig& c) {
  c.validate();
  const auto edges = mel_band_edges(c);
  Matrix fb = Matrix::Zero(c.mel_channels, c.bins());
  for (int m = 0; m < c.mel_channels; ++m) {
    const double lo = edges[static_cast<std::size_t>(m)];
    const double mid = edges[static_cast<std::size_t>(m) + 1];
    const double hi = edges[static_cast<std::size_t>(m) + 2];
    for (int k = 0; k < c.bins(); ++k) {
      const double f = static_cast<double>(k) * c.sample_rate / c.fft_size;
      const double up = (f - lo) / (mid - lo);
      const double down = (hi - f) / (hi - mid);
      fb(m, k) = std::max(0.0, std::min(up, down));
    }
    if (fb.row(m).maxCoeff() <= 0.0) {
      throw std::invalid_argument("mel filterbank: channel " + std::to_string(m) +
                                  " covers no FFT bin; reduce mel_channels or raise fft_size");
    }
  }
  return fb;
}

/// Periodic Hann window of `window` samples, zero-padded and centered in
/// an FFT frame.
inline std::vector<double> analysis_window(const SpectrogramConfig& c) {
  std::vector<double> w(static_cast<std::size_t>(c.fft_size), 0.0);
  const int offset = (c.fft_size - c.window) / 2;
  for (int n = 0; n < c.window; ++n) {
    w[static_cast<std::size_t>(offset + n)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / c.window);
  }
  return w;
}

inline int frame_count(std::size_t samples, int hop) {
  return static_cast<int>((samples + static_cast<std::size_t>(hop) - 1) / static_cast<std::size_t>(hop));
}

/// Mirror index for reflection padding; repeats the reflection for inputs
/// shorter than the pad.
inline std::size_t reflect_index(long p, std::size_t n) {
  if (n == 1) return 0;
  const long period = 2 * (static_cast<long>(n) - 1);
  long q = p % period;
  if (q < 0) q += period;
  if (q >= static_cast<long>(n)) q = period - q;
  return static_cast<std::size_t>(q);
}

/// Signal padded by fft_size / 2 on both sides with reflection, so frame i
/// is centered on sample i * hop.
inline std::vector<double> reflect_pad(const std::vector<double>& y, int pad) {
  std::vector<double> out(y.size() + 2 * static_cast<std::size_t>(pad));
  for (std::size_t p = 0; p < out.size(); ++p) out[p] = y[reflect_index(static_cast<long>(p) - pad, y.size())];
  return out;
}

/// Complex STFT of an already padded signal: frame t reads padded samples
/// [t * hop, t * hop + fft_size).
inline std::vector<std::vector<fft::Complex>> stft_padded(const std::vector<double>& padded, int frames,
                                                          const SpectrogramConfig& c,
                                                          const std::vector<double>& window) {
  const auto& plan = fft::plan(c.fft_size);
  std::vector<std::vector<fft::Complex>> out(static_cast<std::size_t>(frames));
  std::vector<double> buf(static_cast<std::size_t>(c.fft_size));
  for (int t = 0; t < frames; ++t) {
    const std::size_t start = static_cast<std::size_t>(t) * static_cast<std::size_t>(c.hop);
    for (int n = 0; n < c.fft_size; ++n) {
      const std::size_t idx = start + static_cast<std::size_t>(n);
      buf[static_cast<std::size_t>(n)] = idx < padded.size() ? padded[idx] * window[static_cast<std::size_t>(n)] : 0.0;
    }
    out[static_cast<std::size_t>(t)].resize(static_cast<std::size_t>(c.bins()));
    plan.forward(buf.data(), out[static_cast<std::size_t>(t)].data());
  }
  return out;
}

/// Squared-magnitude STFT, frames x bins.
inline Matrix power_spectrogram(const Waveform& y, const SpectrogramConfig& c) {
  const int frames = frame_count(y.samples.size(), c.hop);
  const auto spec = stft_padded(reflect_pad(y.samples, c.fft_size / 2), frames, c, analysis_window(c));
  Matrix p(frames, c.bins());
  for (int t = 0; t < frames; ++t)
    for (int k = 0; k < c.bins(); ++k) p(t, k) = std::norm(spec[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)]);
  return p;
}

inline Matrix log_mel_from_power(const Matrix& power, const Matrix& filterbank, double floor) {
  Matrix mel = power * filterbank.transpose();
  return mel.unaryExpr([floor](double v) { return std::log(std::max(v, floor)); });
}

/// x = ln(max(filterbank . |STFT(y)|^2, floor)), shape [ceil(n / hop), M].
inline MelSpectrogram compute_melspectrogram(const Waveform& y, const SpectrogramConfig& c) {
  c.validate();
  if (y.samples.empty()) throw std::invalid_argument("compute_melspectrogram: empty waveform");
  if (y.sample_rate != c.sample_rate) {
    throw std::invalid_argument("compute_melspectrogram: waveform sample rate " + std::to_string(y.sample_rate) +
                                " does not match config " + std::to_string(c.sample_rate));
  }
  for (double s : y.samples) {
    if (!std::isfinite(s)) throw std::invalid_argument("compute_melspectrogram: non-finite sample");
  }
  return MelSpectrogram{log_mel_from_power(power_spectrogram(y, c), build_mel_filterbank(c), c.log_floor), c};
}

}  // namespace melgen
