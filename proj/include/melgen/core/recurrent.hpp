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

#include "melgen/core/ops.hpp"
#include "melgen/core/parameters.hpp"

#include <string>
#include <vector>

namespace melgen {

/// Order in which an RNN visits the rows of a flattened feature map. Each
/// step lists the rows processed in parallel at that step.
struct StepLayout {
  std::vector<std::vector<int>> steps;
  Eigen::Index rows = 0;
};

namespace layout {

/// Grid rows are ordered (b, i, j): row = (b * frames + i) * channels + j.
inline int grid_row(int b, int i, int j, int frames, int channels) { return (b * frames + i) * channels + j; }

/// One step per frequency channel; every (b, i) slice runs in parallel.
inline StepLayout along_frequency(int batch, int frames, int channels, bool reverse) {
  StepLayout l;
  l.rows = static_cast<Eigen::Index>(batch) * frames * channels;
  for (int s = 0; s < channels; ++s) {
    const int j = reverse ? channels - 1 - s : s;
    std::vector<int> rows;
    rows.reserve(static_cast<std::size_t>(batch * frames));
    for (int b = 0; b < batch; ++b)
      for (int i = 0; i < frames; ++i) rows.push_back(grid_row(b, i, j, frames, channels));
    l.steps.push_back(std::move(rows));
  }
  return l;
}

/// One step per frame; every (b, j) column runs in parallel.
inline StepLayout along_time(int batch, int frames, int channels, bool reverse) {
  StepLayout l;
  l.rows = static_cast<Eigen::Index>(batch) * frames * channels;
  for (int s = 0; s < frames; ++s) {
    const int i = reverse ? frames - 1 - s : s;
    std::vector<int> rows;
    rows.reserve(static_cast<std::size_t>(batch * channels));
    for (int b = 0; b < batch; ++b)
      for (int j = 0; j < channels; ++j) rows.push_back(grid_row(b, i, j, frames, channels));
    l.steps.push_back(std::move(rows));
  }
  return l;
}

/// Frame-level sequences: rows ordered (b, i) = b * frames + i.
inline StepLayout frames(int batch, int frames, bool reverse) { return along_time(batch, frames, 1, reverse); }

}  // namespace layout

/// Parameter indices of one LSTM.
struct Lstm {
  int w_in = -1;
  int w_rec = -1;
  int bias = -1;
  int init = -1;  // trainable initial [h | c]
  Eigen::Index input = 0;
  Eigen::Index hidden = 0;
};

inline Lstm make_lstm(ParameterSet& ps, const std::string& prefix, Eigen::Index input, Eigen::Index hidden,
                      std::mt19937_64& rng) {
  Lstm l;
  l.input = input;
  l.hidden = hidden;
  l.w_in = ps.add(prefix + ".w_in", input, 4 * hidden);
  l.w_rec = ps.add(prefix + ".w_rec", hidden, 4 * hidden);
  l.bias = ps.add(prefix + ".bias", 1, 4 * hidden);
  l.init = ps.add(prefix + ".init", 1, 2 * hidden);
  init::scaled_uniform(ps[l.w_in].value, rng);
  init::orthogonal_blocks(ps[l.w_rec].value, rng);
  return l;
}

inline Var lstm_initial_state(Tape& tape, ParameterSet& ps, const Lstm& l, Eigen::Index n) {
  return ops::broadcast_rows(tape.param(ps[l.init]), n);
}

/// Input contribution to the gates, x W_in + b, for any number of rows.
inline Var lstm_gates(Tape& tape, ParameterSet& ps, const Lstm& l, Var x) {
  return ops::add_row(ops::matmul(x, tape.param(ps[l.w_in])), tape.param(ps[l.bias]));
}

/// Single recurrent step from precomputed input gates.
inline Var lstm_step(Tape& tape, ParameterSet& ps, const Lstm& l, Var gates_in, Var hc) {
  return ops::lstm_cell(gates_in, hc, tape.param(ps[l.w_rec]));
}

/// Runs the LSTM over a flattened feature map following `steps` and returns
/// the hidden states as a (rows x hidden) map in the input's row order.
inline Var run_lstm(Tape& tape, ParameterSet& ps, const Lstm& l, Var x, const StepLayout& steps) {
  Var gates = lstm_gates(tape, ps, l, x);
  const auto per_step = static_cast<Eigen::Index>(steps.steps.front().size());
  Var hc = lstm_initial_state(tape, ps, l, per_step);
  std::vector<Var> outs;
  outs.reserve(steps.steps.size());
  for (const auto& rows : steps.steps) {
    hc = lstm_step(tape, ps, l, ops::gather_rows(gates, rows), hc);
    outs.push_back(hc);
  }
  return ops::assemble_rows(outs, steps.steps, steps.rows, l.hidden);
}

}  // namespace melgen
