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

#include "melgen/core/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace melgen {

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;  // ln(2 pi) / 2
inline constexpr double kMinStd = 1e-8;

/// Unconstrained mixture parameters, one row per grid element in raster
/// order and 3K columns laid out as [mu_hat | sigma_hat | pi_hat].
struct RawParamGrid {
  Eigen::Index frames = 0;
  Eigen::Index channels = 0;
  Matrix values;

  Eigen::Index mixtures() const { return values.cols() / 3; }
};

/// Per-element Gaussian mixtures; rows are grid elements (i * channels + j).
struct GmmParamGrid {
  Eigen::Index frames = 0;
  Eigen::Index channels = 0;
  Matrix mean;
  Matrix stddev;
  Matrix weight;

  Eigen::Index mixtures() const { return mean.cols(); }
  Eigen::Index row(Eigen::Index i, Eigen::Index j) const { return i * channels + j; }
};

/// One element's mixture, borrowed from a grid row or built by hand.
struct GmmView {
  std::span<const double> mean;
  std::span<const double> stddev;
  std::span<const double> weight;
};

inline GmmView element(const GmmParamGrid& g, Eigen::Index r) {
  const auto k = static_cast<std::size_t>(g.mixtures());
  return GmmView{{g.mean.row(r).data(), k}, {g.stddev.row(r).data(), k}, {g.weight.row(r).data(), k}};
}

/// mu = mu_hat, sigma = exp(sigma_hat), pi = softmax(pi_hat).
inline GmmParamGrid constrain_params(const RawParamGrid& raw) {
  if (raw.values.cols() == 0 || raw.values.cols() % 3 != 0) {
    throw std::invalid_argument("constrain_params: last dimension must be a positive multiple of 3");
  }
  if (raw.values.rows() != raw.frames * raw.channels) throw std::invalid_argument("constrain_params: grid shape mismatch");
  if (!raw.values.allFinite()) throw std::invalid_argument("constrain_params: non-finite input");
  const Eigen::Index k = raw.mixtures();
  GmmParamGrid g;
  g.frames = raw.frames;
  g.channels = raw.channels;
  g.mean = raw.values.leftCols(k);
  g.stddev = raw.values.middleCols(k, k).array().exp().matrix();
  g.weight.resize(raw.values.rows(), k);
  for (Eigen::Index r = 0; r < raw.values.rows(); ++r) {
    auto logits = raw.values.row(r).rightCols(k);
    const double m = logits.maxCoeff();
    g.weight.row(r) = (logits.array() - m).exp();
    g.weight.row(r) /= g.weight.row(r).sum();
  }
  return g;
}

namespace gmm_detail {

inline void validate(const GmmView& p) {
  const std::size_t k = p.mean.size();
  if (k == 0 || p.stddev.size() != k || p.weight.size() != k) throw std::invalid_argument("gmm: inconsistent sizes");
  double total = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    if (!(p.stddev[c] > 0.0)) throw std::invalid_argument("gmm: standard deviations must be positive");
    if (!(p.weight[c] >= 0.0)) throw std::invalid_argument("gmm: weights must be non-negative");
    total += p.weight[c];
  }
  if (std::abs(total - 1.0) > 1e-6) throw std::invalid_argument("gmm: weights must sum to one");
}

}  // namespace gmm_detail

/// ln sum_k pi_k N(v; mu_k, sigma_k), evaluated with log-sum-exp.
inline double gmm_log_density(double v, const GmmView& p) {
  gmm_detail::validate(p);
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> terms(p.mean.size());
  for (std::size_t c = 0; c < p.mean.size(); ++c) {
    const double z = (v - p.mean[c]) / p.stddev[c];
    terms[c] = std::log(p.weight[c]) - std::log(p.stddev[c]) - kHalfLog2Pi - 0.5 * z * z;
    best = std::max(best, terms[c]);
  }
  if (!std::isfinite(best)) return best;
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - best);
  return best + std::log(acc);
}

/// Draws from the mixture with biasing: the component is chosen from pi,
/// then the value from N(mu_k, (temperature * sigma_k)^2). Temperature 0
/// returns the chosen component's mean.
inline double gmm_sample(const GmmView& p, double temperature, std::mt19937_64& rng) {
  gmm_detail::validate(p);
  if (!(temperature >= 0.0 && temperature <= 1.0)) throw std::invalid_argument("gmm_sample: temperature must be in [0, 1]");
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double u = uniform(rng);
  std::size_t chosen = p.mean.size() - 1;
  double cum = 0.0;
  for (std::size_t c = 0; c < p.mean.size(); ++c) {
    cum += p.weight[c];
    if (u < cum && p.weight[c] > 0.0) {
      chosen = c;
      break;
    }
  }
  while (p.weight[chosen] <= 0.0 && chosen > 0) --chosen;  // rounding left u past the last positive weight
  std::normal_distribution<double> normal(0.0, 1.0);
  const double eps = normal(rng);
  return p.mean[chosen] + temperature * p.stddev[chosen] * eps;
}

/// Mean negative log-likelihood in nats per element.
inline double spectrogram_nll(const Matrix& x, const GmmParamGrid& params) {
  if (x.rows() != params.frames || x.cols() != params.channels || params.mean.rows() != x.size()) {
    throw std::invalid_argument("spectrogram_nll: shape mismatch");
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) total -= gmm_log_density(x(i, j), element(params, params.row(i, j)));
  return total / static_cast<double>(x.size());
}

/// Affine map between data units and the units the network predicts in.
struct Normalization {
  double shift = 0.0;
  double scale = 1.0;

  double to_model(double v) const { return (v - shift) / scale; }
  double to_data(double v) const { return shift + scale * v; }
};

/// Converts raw network outputs (in normalized units) into data-unit mixtures.
inline GmmParamGrid constrain_params(const RawParamGrid& raw, const Normalization& norm) {
  GmmParamGrid g = constrain_params(raw);
  g.mean = (g.mean.array() * norm.scale + norm.shift).matrix();
  g.stddev *= norm.scale;
  return g;
}

/// Mean teacher-forced NLL (nats per element, data units) of `targets`
/// (N x 1) under raw outputs (N x 3K). Standard deviations are floored at
/// 1e-8 in normalized units; the floor blocks the sigma gradient.
inline Var gmm_nll_loss(Var raw, const Matrix& targets, const Normalization& norm = {}) {
  const Eigen::Index n = raw.rows();
  const Eigen::Index k = raw.cols() / 3;
  if (raw.cols() != 3 * k || k == 0 || targets.rows() != n || targets.cols() != 1) {
    throw std::invalid_argument("gmm_nll_loss: shape mismatch");
  }
  const Matrix& th = raw.value();
  const double log_min_std = std::log(kMinStd);
  // Responsibilities, weights and standardized residuals are kept for backward.
  Matrix resp(n, k), weight(n, k), z(n, k);
  double total = 0.0;
  std::vector<double> terms(static_cast<std::size_t>(k));
  for (Eigen::Index r = 0; r < n; ++r) {
    const double v = norm.to_model(targets(r, 0));
    const double pm = th.row(r).rightCols(k).maxCoeff();
    double pz = 0.0;
    for (Eigen::Index c = 0; c < k; ++c) pz += std::exp(th(r, 2 * k + c) - pm);
    const double log_pz = pm + std::log(pz);
    double best = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < k; ++c) {
      const double log_sigma = std::max(th(r, k + c), log_min_std);
      const double zc = (v - th(r, c)) / std::exp(log_sigma);
      z(r, c) = zc;
      const double log_w = th(r, 2 * k + c) - log_pz;
      weight(r, c) = std::exp(log_w);
      terms[static_cast<std::size_t>(c)] = log_w - log_sigma - kHalfLog2Pi - 0.5 * zc * zc;
      best = std::max(best, terms[static_cast<std::size_t>(c)]);
    }
    double acc = 0.0;
    for (Eigen::Index c = 0; c < k; ++c) acc += std::exp(terms[static_cast<std::size_t>(c)] - best);
    const double lse = best + std::log(acc);
    for (Eigen::Index c = 0; c < k; ++c) resp(r, c) = std::exp(terms[static_cast<std::size_t>(c)] - lse);
    total -= lse;
  }
  Matrix v(1, 1);
  v(0, 0) = total / static_cast<double>(n) + std::log(norm.scale);
  if (!std::isfinite(v(0, 0))) throw NumericError("mixture NLL is not finite");
  return raw.tape->push(std::move(v), {raw},
                        [id = raw.id, resp = std::move(resp), weight = std::move(weight), z = std::move(z), k,
                         log_min_std](Tape& t, int self) {
                          const double g = t.grad(self)(0, 0) / static_cast<double>(resp.rows());
                          const Matrix& th = t.value(id);
                          Matrix d(resp.rows(), 3 * k);
                          for (Eigen::Index r = 0; r < resp.rows(); ++r) {
                            for (Eigen::Index c = 0; c < k; ++c) {
                              const double sigma = std::exp(std::max(th(r, k + c), log_min_std));
                              d(r, c) = -g * resp(r, c) * z(r, c) / sigma;
                              d(r, k + c) = th(r, k + c) > log_min_std ? -g * resp(r, c) * (z(r, c) * z(r, c) - 1.0) : 0.0;
                              d(r, 2 * k + c) = g * (weight(r, c) - resp(r, c));
                            }
                          }
                          t.accumulate(id, d);
                        });
}

}  // namespace melgen
