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

#include "melgen/net/network.hpp"

#include <random>

namespace melgen {

struct SampleOptions {
  double temperature = 1.0;
  Matrix prime;        // leading frames clamped to these values; may be empty
  double tau = -1.0;   // stop threshold on the attention survival; negative disables
};

struct SampleResult {
  Matrix x;                              // frames actually produced x channels
  std::vector<AttentionGamma> gammas;    // per produced frame, attention models only
  bool terminated = false;               // stopped by the survival rule
};

/// Raster-order ancestral sampling of one tier. `frames` is the target (or,
/// with a stop threshold, the maximum) frame count. `context` is the
/// interleaved lower tiers for upsampling tiers and is otherwise empty.
inline SampleResult sample_tier(Network& net, int frames, int channels, const Matrix& context,
                                const Eigen::RowVectorXd& condition, const std::vector<int>& text,
                                const SampleOptions& opt, std::mt19937_64& rng) {
  const auto& cfg = net.config();
  if (frames < 1 || channels < 1) throw std::invalid_argument("sample_tier: empty target shape");
  if (opt.prime.size() > 0 && (opt.prime.rows() > frames || opt.prime.cols() != channels)) {
    throw std::invalid_argument("sample_tier: prime does not fit the target shape");
  }
  if (!opt.prime.allFinite()) throw std::invalid_argument("sample_tier: non-finite prime");
  Matrix features;
  if (cfg.feature_layers > 0) {
    if (context.rows() != frames || context.cols() != channels) throw std::invalid_argument("sample_tier: context shape must equal the tier shape");
    features = net.context_features(context);
  }
  const bool stop_rule = cfg.has_attention() && opt.tau >= 0.0;
  const int text_len = static_cast<int>(text.size());

  Generator gen(net, channels, std::move(features), condition, text);
  SampleResult out;
  out.x = Matrix::Zero(frames, channels);
  Eigen::RowVectorXd prev;
  int produced = 0;
  for (int i = 0; i < frames; ++i) {
    gen.begin_frame(prev);
    const bool primed = i < opt.prime.rows();
    if (gen.gamma()) {
      if (!primed && stop_rule && should_terminate(*gen.gamma(), text_len, opt.tau)) {
        out.terminated = true;
        break;
      }
      out.gammas.push_back(*gen.gamma());
    }
    if (primed) {
      out.x.row(i) = opt.prime.row(i);
    } else {
      for (int j = 0; j < channels; ++j) {
        const Eigen::RowVectorXd raw = gen.element(j, j > 0 ? out.x(i, j - 1) : 0.0);
        RawParamGrid r{1, 1, Matrix(raw)};
        const GmmParamGrid p = constrain_params(r, cfg.norm);
        const double v = gmm_sample(element(p, 0), opt.temperature, rng);
        if (!std::isfinite(v)) throw NumericError("sample_tier: non-finite sample");
        out.x(i, j) = v;
      }
    }
    prev = out.x.row(i);
    ++produced;
  }
  out.x.conservativeResize(produced, channels);
  return out;
}

/// Stop threshold for generation: the mean attention survival one frame
/// past the end of each teacher-forced example. That frame only sees the
/// real frames through the autoregressive inputs, so its own values are
/// irrelevant and are set to the normalization shift.
inline double estimate_stop_threshold(Network& net, const std::vector<TierExample>& corpus) {
  if (!net.config().has_attention()) throw std::invalid_argument("estimate_stop_threshold: model has no attention");
  std::vector<double> survivals;
  for (const auto& e : corpus) {
    TierExample ext = e;
    ext.x.conservativeResize(e.x.rows() + 1, Eigen::NoChange);
    ext.x.row(e.x.rows()).setConstant(net.config().norm.shift);
    std::vector<AttentionTrace> traces;
    net.network_forward(ext, &traces);
    survivals.push_back(survival(traces.front().gamma.back(), static_cast<int>(e.text.size())));
  }
  return estimate_tau(survivals);
}

}  // namespace melgen
