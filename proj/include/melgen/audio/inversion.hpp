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

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace melgen {

/// Recovers non-negative linear power per FFT bin from a log-mel grid by
/// projected-gradient NNLS on the filterbank. Elements at the log floor are
/// treated as zero energy.
inline Matrix unmel_power(const MelSpectrogram& x, int iterations = 100) {
  const auto& c = x.config;
  const Matrix fb = build_mel_filterbank(c);
  if (x.channels() != c.mel_channels) throw std::invalid_argument("unmel: channel count does not match config");
  const double floor_log = c.log_floor_value();
  Matrix mel = x.values.unaryExpr([floor_log](double v) { return v <= floor_log + 1e-9 ? 0.0 : std::exp(v); });

  // Pseudo-inverse F^T (F F^T)^-1; F has full row rank once every filter is non-empty.
  const Eigen::MatrixXd ffT = fb * fb.transpose();
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(ffT);
  const Matrix pinv_t = ldlt.solve(Eigen::MatrixXd(fb)).transpose();  // bins x M
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(ffT, Eigen::EigenvaluesOnly);
  const double step = 1.0 / eig.eigenvalues().maxCoeff();

  Matrix init = (mel * pinv_t.transpose()).cwiseMax(0.0);  // frames x bins
  Matrix p = init;
  for (int it = 0; it < iterations; ++it) {
    Matrix resid = p * fb.transpose() - mel;
    p = (p - step * resid * fb).cwiseMax(0.0);
  }
  auto residual = [&](const Matrix& q) { return (q * fb.transpose() - mel).squaredNorm(); };
  if (!p.allFinite() || residual(p) > residual(init)) return init;
  return p;
}

struct InversionResult {
  Waveform waveform;
  /// Griffin-Lim: spectral convergence before each iteration and after the
  /// last one (iterations + 1 entries). Gradient: log-mel MSE per accepted step.
  std::vector<double> trace;
  bool silent_target = false;
  std::string warning;
};

struct GriffinLimOptions {
  int iterations = 50;
  bool random_phase = false;
  std::uint64_t seed = 0;
};

namespace inversion_detail {

/// Weights that turn a sum over n/2 + 1 real-FFT bins into the full-spectrum sum.
inline std::vector<double> bin_weights(int fft_size) {
  std::vector<double> w(static_cast<std::size_t>(fft_size / 2 + 1), 2.0);
  w.front() = 1.0;
  w.back() = 1.0;
  return w;
}

/// Least-squares signal for a set of (possibly inconsistent) STFT frames.
inline std::vector<double> istft_least_squares(const std::vector<std::vector<fft::Complex>>& spec, std::size_t length,
                                               const SpectrogramConfig& c, const std::vector<double>& window) {
  const auto& plan = fft::plan(c.fft_size);
  std::vector<double> num(length, 0.0), den(length, 0.0), frame(static_cast<std::size_t>(c.fft_size));
  for (std::size_t t = 0; t < spec.size(); ++t) {
    plan.inverse_unnormalized(spec[t].data(), frame.data());
    const std::size_t start = t * static_cast<std::size_t>(c.hop);
    for (int n = 0; n < c.fft_size; ++n) {
      const std::size_t idx = start + static_cast<std::size_t>(n);
      if (idx >= length) break;
      const double w = window[static_cast<std::size_t>(n)];
      num[idx] += w * frame[static_cast<std::size_t>(n)] / c.fft_size;
      den[idx] += w * w;
    }
  }
  for (std::size_t i = 0; i < length; ++i) num[i] = den[i] > 1e-10 ? num[i] / den[i] : 0.0;
  return num;
}

inline double spectral_convergence(const std::vector<std::vector<fft::Complex>>& spec, const Matrix& target,
                                   const std::vector<double>& weights) {
  double err = 0.0, ref = 0.0;
  for (Eigen::Index t = 0; t < target.rows(); ++t) {
    for (Eigen::Index k = 0; k < target.cols(); ++k) {
      const double d = std::abs(spec[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)]) - target(t, k);
      err += weights[static_cast<std::size_t>(k)] * d * d;
      ref += weights[static_cast<std::size_t>(k)] * target(t, k) * target(t, k);
    }
  }
  return std::sqrt(err / ref);
}

}  // namespace inversion_detail

/// Griffin-Lim phase reconstruction against the un-mel'd magnitudes.
///
/// Iterates on the padded signal so each step is an exact least-squares
/// projection; the spectral-convergence trace is therefore non-increasing.
/// The returned waveform is the centre n = frames * hop samples.
inline InversionResult invert_griffin_lim(const MelSpectrogram& x, const GriffinLimOptions& opt = {}) {
  using namespace inversion_detail;
  const auto& c = x.config;
  c.validate();
  if (opt.iterations < 0) throw std::invalid_argument("griffin-lim: iterations must be >= 0");
  if (!x.values.allFinite()) throw std::invalid_argument("griffin-lim: spectrogram has non-finite values");
  const int frames = static_cast<int>(x.frames());
  const std::size_t n = static_cast<std::size_t>(frames) * static_cast<std::size_t>(c.hop);
  const int pad = c.fft_size / 2;
  const std::size_t padded_len = n + 2 * static_cast<std::size_t>(pad);

  InversionResult result;
  result.waveform.sample_rate = c.sample_rate;
  const Matrix magnitude = unmel_power(x).cwiseSqrt();
  if (magnitude.maxCoeff() <= 0.0) {
    result.waveform.samples.assign(n, 0.0);
    result.silent_target = true;
    result.warning = "spectrogram is at the log floor everywhere; returning silence";
    return result;
  }

  const auto window = analysis_window(c);
  const auto weights = bin_weights(c.fft_size);
  std::vector<std::vector<fft::Complex>> target(static_cast<std::size_t>(frames),
                                                std::vector<fft::Complex>(static_cast<std::size_t>(c.bins())));
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> phase(-std::numbers::pi, std::numbers::pi);
  for (int t = 0; t < frames; ++t) {
    for (int k = 0; k < c.bins(); ++k) {
      const double a = magnitude(t, k);
      const bool real_bin = k == 0 || k == c.bins() - 1;
      target[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)] =
          opt.random_phase && !real_bin ? std::polar(a, phase(rng)) : fft::Complex(a, 0.0);
    }
  }

  std::vector<double> signal = istft_least_squares(target, padded_len, c, window);
  for (int it = 0;; ++it) {
    auto spec = stft_padded(signal, frames, c, window);
    result.trace.push_back(spectral_convergence(spec, magnitude, weights));
    if (it == opt.iterations) break;
    for (int t = 0; t < frames; ++t) {
      for (int k = 0; k < c.bins(); ++k) {
        auto& s = spec[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)];
        const double mag = std::abs(s);
        const fft::Complex unit = mag > 0.0 ? s / mag : fft::Complex(1.0, 0.0);
        s = magnitude(t, k) * unit;
      }
    }
    signal = istft_least_squares(spec, padded_len, c, window);
  }
  result.waveform.samples.assign(signal.begin() + pad, signal.begin() + pad + static_cast<long>(n));
  return result;
}

/// Log-mel mean squared error between compute_melspectrogram(y) and x, with
/// its gradient with respect to the samples of y.
struct LogMelLoss {
  double loss = 0.0;
  std::vector<double> gradient;
};

inline LogMelLoss log_mel_loss(const std::vector<double>& y, const MelSpectrogram& x, bool with_gradient) {
  const auto& c = x.config;
  const int frames = static_cast<int>(x.frames());
  if (frame_count(y.size(), c.hop) != frames) throw std::invalid_argument("log_mel_loss: frame count mismatch");
  const int pad = c.fft_size / 2;
  const auto window = analysis_window(c);
  const Matrix fb = build_mel_filterbank(c);
  const std::vector<double> padded = reflect_pad(y, pad);
  auto spec = stft_padded(padded, frames, c, window);
  Matrix power(frames, c.bins());
  for (int t = 0; t < frames; ++t)
    for (int k = 0; k < c.bins(); ++k) power(t, k) = std::norm(spec[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)]);
  const Matrix mel = power * fb.transpose();
  const double count = static_cast<double>(x.values.size());
  LogMelLoss out;
  Matrix dmel(frames, c.mel_channels);
  for (int t = 0; t < frames; ++t) {
    for (int m = 0; m < c.mel_channels; ++m) {
      const double v = mel(t, m);
      const double d = std::log(std::max(v, c.log_floor)) - x.values(t, m);
      out.loss += d * d / count;
      dmel(t, m) = v > c.log_floor ? 2.0 * d / count / v : 0.0;
    }
  }
  if (!with_gradient) return out;

  const Matrix dpower = dmel * fb;  // frames x bins
  const auto& plan = fft::plan(c.fft_size);
  std::vector<double> dpadded(padded.size(), 0.0), frame(static_cast<std::size_t>(c.fft_size));
  std::vector<fft::Complex> g(static_cast<std::size_t>(c.bins()));
  for (int t = 0; t < frames; ++t) {
    for (int k = 0; k < c.bins(); ++k) {
      // d|X|^2/dRe = 2 Re, d|X|^2/dIm = 2 Im; interior bins are halved so
      // the Hermitian inverse counts each one exactly once.
      const double half = (k == 0 || k == c.bins() - 1) ? 1.0 : 0.5;
      g[static_cast<std::size_t>(k)] = 2.0 * dpower(t, k) * half * spec[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)];
    }
    plan.inverse_unnormalized(g.data(), frame.data());
    const std::size_t start = static_cast<std::size_t>(t) * static_cast<std::size_t>(c.hop);
    for (int n = 0; n < c.fft_size; ++n) {
      dpadded[start + static_cast<std::size_t>(n)] += window[static_cast<std::size_t>(n)] * frame[static_cast<std::size_t>(n)];
    }
  }
  out.gradient.assign(y.size(), 0.0);
  for (std::size_t p = 0; p < dpadded.size(); ++p) {
    out.gradient[reflect_index(static_cast<long>(p) - pad, y.size())] += dpadded[p];
  }
  return out;
}

struct GradientInversionOptions {
  int steps = 200;
  double step_size = 1e-2;
  int griffin_lim_iterations = 50;  // used when no init is given
};

/// Gradient descent on the samples to minimise log-mel MSE. A step that
/// raises the loss is rejected and the step size halved.
inline InversionResult invert_gradient_based(const MelSpectrogram& x, const GradientInversionOptions& opt = {},
                                             const std::optional<Waveform>& init = std::nullopt) {
  const auto& c = x.config;
  c.validate();
  if (opt.steps < 0) throw std::invalid_argument("gradient inversion: steps must be >= 0");
  InversionResult result;
  Waveform y;
  if (init) {
    if (init->sample_rate != c.sample_rate) throw std::invalid_argument("gradient inversion: init sample rate mismatch");
    y = *init;
  } else {
    auto gl = invert_griffin_lim(x, GriffinLimOptions{opt.griffin_lim_iterations, false, 0});
    y = std::move(gl.waveform);
    result.silent_target = gl.silent_target;
    result.warning = gl.warning;
  }
  result.waveform.sample_rate = c.sample_rate;
  if (opt.steps == 0) {
    result.trace.push_back(log_mel_loss(y.samples, x, false).loss);
    result.waveform = std::move(y);
    return result;
  }

  double step = opt.step_size;
  LogMelLoss current = log_mel_loss(y.samples, x, true);
  if (!std::isfinite(current.loss)) throw NumericError("gradient inversion: initial loss is not finite");
  result.trace.push_back(current.loss);
  std::vector<double> candidate(y.samples.size());
  for (int s = 0; s < opt.steps && current.loss > 0.0; ++s) {
    for (std::size_t i = 0; i < candidate.size(); ++i) candidate[i] = y.samples[i] - step * current.gradient[i];
    LogMelLoss next = log_mel_loss(candidate, x, true);
    if (!std::isfinite(next.loss)) {
      throw NumericError("gradient inversion: loss became non-finite at step " + std::to_string(s) +
                         " (step size " + std::to_string(step) + " too large)");
    }
    if (next.loss <= current.loss) {
      y.samples.swap(candidate);
      current = std::move(next);
      result.trace.push_back(current.loss);
    } else {
      step *= 0.5;
    }
  }
  result.waveform = std::move(y);
  return result;
}

}  // namespace melgen
