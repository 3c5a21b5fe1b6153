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

#include "melgen/core/recurrent.hpp"
#include "melgen/tts/attention.hpp"

#include <optional>
#include <string>
#include <vector>

namespace melgen {

/// Residual stack of forward-in-time LSTMs over frame vectors. Serves as the
/// centralized stack of the fine-grained model and as the decoder of the
/// frame-level baselines. One layer may be an attention cell instead.
struct FrameStack {
  std::vector<Lstm> rnn;     // index l - 1; unused at the attention layer
  std::vector<int> proj;     // H x H, bias-free
  int attention_layer = 0;   // 1-based; 0 when there is no attention
  std::optional<AttentionCell> attention;
  Eigen::Index hidden = 0;

  static FrameStack create(ParameterSet& ps, const std::string& prefix, int layers, Eigen::Index hidden,
                           int attention_components, std::mt19937_64& rng, double kappa_bias = 0.0) {
    FrameStack s;
    s.hidden = hidden;
    if (attention_components > 0) s.attention_layer = std::max(1, layers / 2);
    for (int l = 1; l <= layers; ++l) {
      const std::string name = prefix + "." + std::to_string(l);
      if (l == s.attention_layer) {
        s.attention = AttentionCell::create(ps, name + ".attention", hidden, attention_components, rng, kappa_bias);
        s.rnn.push_back(Lstm{});
        s.proj.push_back(-1);
        continue;
      }
      s.rnn.push_back(make_lstm(ps, name + ".rnn", hidden, hidden, rng));
      s.proj.push_back(ps.add(name + ".proj", hidden, hidden));
      init::scaled_uniform(ps[s.proj.back()].value, rng);
    }
    return s;
  }

  int layers() const { return static_cast<int>(rnn.size()); }

  /// h[l] = W_l F_l(h[l-1]) + h[l-1]; input rows are (b, i).
  Var layer(Tape& tape, ParameterSet& ps, int l, Var h, int batch, int frames, const TextContext* text,
            std::vector<AttentionTrace>* traces) const {
    if (l == attention_layer) {
      if (text == nullptr) throw std::invalid_argument("frame stack: attention layer needs text features");
      return ops::add(attention->run(tape, ps, h, batch, frames, *text, traces), h);
    }
    const auto idx = static_cast<std::size_t>(l - 1);
    Var f = run_lstm(tape, ps, rnn[idx], h, layout::frames(batch, frames, false));
    return ops::add(ops::matmul(f, tape.param(ps[proj[idx]])), h);
  }

  /// Outputs of layers 1..L.
  std::vector<Var> run(Tape& tape, ParameterSet& ps, Var h0, int batch, int frames, const TextContext* text,
                       std::vector<AttentionTrace>* traces = nullptr) const {
    std::vector<Var> out;
    Var h = h0;
    for (int l = 1; l <= layers(); ++l) {
      h = layer(tape, ps, l, h, batch, frames, text, traces);
      out.push_back(h);
    }
    return out;
  }
};

/// Residual stack of bidirectional frame LSTMs (non-causal), used as the
/// inference network of the VAE baselines.
struct BidirectionalFrameStack {
  std::vector<Lstm> fwd, bwd;
  std::vector<int> proj;  // 2H x H
  Eigen::Index hidden = 0;

  static BidirectionalFrameStack create(ParameterSet& ps, const std::string& prefix, int layers, Eigen::Index hidden,
                                        std::mt19937_64& rng) {
    BidirectionalFrameStack s;
    s.hidden = hidden;
    for (int l = 1; l <= layers; ++l) {
      const std::string name = prefix + "." + std::to_string(l);
      s.fwd.push_back(make_lstm(ps, name + ".fwd", hidden, hidden, rng));
      s.bwd.push_back(make_lstm(ps, name + ".bwd", hidden, hidden, rng));
      s.proj.push_back(ps.add(name + ".proj", 2 * hidden, hidden));
      init::scaled_uniform(ps[s.proj.back()].value, rng);
    }
    return s;
  }

  Var run(Tape& tape, ParameterSet& ps, Var h, int batch, int frames) const {
    for (std::size_t l = 0; l < fwd.size(); ++l) {
      Var a = run_lstm(tape, ps, fwd[l], h, layout::frames(batch, frames, false));
      Var b = run_lstm(tape, ps, bwd[l], h, layout::frames(batch, frames, true));
      h = ops::add(ops::matmul(ops::concat_cols({a, b}), tape.param(ps[proj[l]])), h);
    }
    return h;
  }
};

}  // namespace melgen
