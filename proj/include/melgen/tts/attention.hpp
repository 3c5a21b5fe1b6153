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

#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace melgen {

/// Parameters of the attention's logistic mixture over character positions.
struct AttentionGamma {
  std::vector<double> kappa;  // locations, non-decreasing over frames
  std::vector<double> beta;   // scales, positive
  std::vector<double> alpha;  // weights, a simplex

  std::size_t components() const { return kappa.size(); }
};

struct AttentionWeights {
  std::vector<double> phi;  // phi[u - 1] for characters u = 1..U
  double left_mass = 0.0;   // F(0.5)
  double right_mass = 0.0;  // 1 - F(U + 0.5), the survival past the last character
};

namespace attention_detail {

inline double logistic(double a) { return 1.0 / (1.0 + std::exp(-a)); }

inline void validate(const AttentionGamma& g) {
  const std::size_t m = g.kappa.size();
  if (m == 0 || g.beta.size() != m || g.alpha.size() != m) throw std::invalid_argument("attention: inconsistent gamma");
  double total = 0.0;
  for (std::size_t c = 0; c < m; ++c) {
    if (!std::isfinite(g.kappa[c])) throw std::invalid_argument("attention: kappa must be finite");
    if (!(g.beta[c] > 0.0)) throw std::invalid_argument("attention: beta must be positive");
    if (!(g.alpha[c] >= 0.0)) throw std::invalid_argument("attention: alpha must be non-negative");
    total += g.alpha[c];
  }
  if (std::abs(total - 1.0) > 1e-6) throw std::invalid_argument("attention: alpha must sum to one");
}

}  // namespace attention_detail

/// F(v) = sum_m alpha_m / (1 + exp((kappa_m - v) / beta_m)).
inline double logistic_mixture_cdf(const AttentionGamma& g, double v) {
  double f = 0.0;
  for (std::size_t m = 0; m < g.components(); ++m) {
    f += g.alpha[m] * attention_detail::logistic((v - g.kappa[m]) / g.beta[m]);
  }
  return f;
}

/// 1 - F(U + 0.5), summed from the upper tails so it stays non-negative.
inline double survival(const AttentionGamma& g, int length) {
  double s = 0.0;
  for (std::size_t m = 0; m < g.components(); ++m) {
    s += g.alpha[m] * attention_detail::logistic((g.kappa[m] - (length + 0.5)) / g.beta[m]);
  }
  return s;
}

/// phi(u) = F(u + 0.5) - F(u - 0.5) for u = 1..U, plus the two tail masses.
/// Each component's differences telescope, so the total is one.
inline AttentionWeights discretized_attention_weights(const AttentionGamma& g, int length) {
  attention_detail::validate(g);
  if (length < 1) throw std::invalid_argument("attention: text length must be >= 1");
  AttentionWeights w;
  w.phi.resize(static_cast<std::size_t>(length));
  double prev = logistic_mixture_cdf(g, 0.5);
  w.left_mass = prev;
  for (int u = 1; u <= length; ++u) {
    const double next = logistic_mixture_cdf(g, u + 0.5);
    w.phi[static_cast<std::size_t>(u - 1)] = std::max(0.0, next - prev);
    prev = next;
  }
  w.right_mass = survival(g, length);
  return w;
}

/// True once the attention believes it has read past the last character.
inline bool should_terminate(const AttentionGamma& g, int length, double tau) {
  attention_detail::validate(g);
  return survival(g, length) > tau;
}

/// Empirical mean of terminal survival values.
inline double estimate_tau(std::span<const double> terminal_survivals) {
  if (terminal_survivals.empty()) throw std::invalid_argument("estimate_tau: empty dataset");
  return std::accumulate(terminal_survivals.begin(), terminal_survivals.end(), 0.0) /
         static_cast<double>(terminal_survivals.size());
}

namespace ops {

/// w_b = sum_u phi_b(u) C[b * max_len + u - 1] with phi from the logistic
/// mixture (kappa, beta, alpha), each B x M. Characters past lengths[b]
/// receive no weight.
inline Var attention_read(Var kappa, Var beta, Var alpha, Var chars, std::vector<int> lengths, int max_len) {
  const Eigen::Index batch = kappa.rows(), comps = kappa.cols();
  detail::require(beta.rows() == batch && alpha.rows() == batch && beta.cols() == comps && alpha.cols() == comps,
                  "attention_read: gamma shape mismatch");
  detail::require(static_cast<Eigen::Index>(lengths.size()) == batch && chars.rows() == batch * max_len,
                  "attention_read: character feature shape mismatch");
  const Matrix& kv = kappa.value();
  const Matrix& bv = beta.value();
  const Matrix& av = alpha.value();
  const Matrix& cv = chars.value();
  Matrix phi = Matrix::Zero(batch, max_len);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (int u = 1; u <= lengths[static_cast<std::size_t>(b)]; ++u) {
      double p = 0.0;
      for (Eigen::Index m = 0; m < comps; ++m) {
        p += av(b, m) * (attention_detail::logistic((u + 0.5 - kv(b, m)) / bv(b, m)) -
                         attention_detail::logistic((u - 0.5 - kv(b, m)) / bv(b, m)));
      }
      phi(b, u - 1) = p;
    }
  }
  Matrix w(batch, cv.cols());
  for (Eigen::Index b = 0; b < batch; ++b) w.row(b) = phi.row(b) * cv.middleRows(b * max_len, max_len);
  return kappa.tape->push(
      std::move(w), {kappa, beta, alpha, chars},
      [k = kappa.id, be = beta.id, a = alpha.id, c = chars.id, phi = std::move(phi), lengths = std::move(lengths),
       max_len](Tape& t, int self) {
        const Matrix& g = t.grad(self);
        const Matrix& kv = t.value(k);
        const Matrix& bv = t.value(be);
        const Matrix& av = t.value(a);
        const Matrix& cv = t.value(c);
        const Eigen::Index batch = kv.rows(), comps = kv.cols();
        Matrix dk = Matrix::Zero(batch, comps), db = Matrix::Zero(batch, comps), da = Matrix::Zero(batch, comps);
        Matrix dc = Matrix::Zero(cv.rows(), cv.cols());
        for (Eigen::Index b = 0; b < batch; ++b) {
          for (int u = 1; u <= lengths[static_cast<std::size_t>(b)]; ++u) {
            const Eigen::Index row = b * max_len + u - 1;
            const double dphi = g.row(b).dot(cv.row(row));
            dc.row(row) = phi(b, u - 1) * g.row(b);
            for (Eigen::Index m = 0; m < comps; ++m) {
              const double hi = (u + 0.5 - kv(b, m)) / bv(b, m);
              const double lo = (u - 0.5 - kv(b, m)) / bv(b, m);
              const double shi = attention_detail::logistic(hi), slo = attention_detail::logistic(lo);
              const double dhi = shi * (1.0 - shi), dlo = slo * (1.0 - slo);
              da(b, m) += dphi * (shi - slo);
              dk(b, m) += dphi * av(b, m) * (dlo - dhi) / bv(b, m);
              db(b, m) += dphi * av(b, m) * (dlo * lo - dhi * hi) / bv(b, m);
            }
          }
        }
        t.accumulate(k, dk);
        t.accumulate(be, db);
        t.accumulate(a, da);
        t.accumulate(c, dc);
      });
}

}  // namespace ops

/// Embedding followed by a bidirectional LSTM; the two directions are
/// concatenated and projected back to the hidden width.
struct TextEncoder {
  int embedding = -1;
  Lstm forward;
  Lstm backward;
  int projection = -1;
  Eigen::Index hidden = 0;
  int vocab_size = 0;

  static TextEncoder create(ParameterSet& ps, const std::string& prefix, int vocab_size, Eigen::Index hidden,
                            std::mt19937_64& rng) {
    TextEncoder e;
    e.hidden = hidden;
    e.vocab_size = vocab_size;
    e.embedding = ps.add(prefix + ".embedding", vocab_size, hidden);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index i = 0; i < ps[e.embedding].value.size(); ++i) ps[e.embedding].value.data()[i] = normal(rng);
    e.forward = make_lstm(ps, prefix + ".fwd", hidden, hidden, rng);
    e.backward = make_lstm(ps, prefix + ".bwd", hidden, hidden, rng);
    e.projection = ps.add(prefix + ".proj", 2 * hidden, hidden);
    init::scaled_uniform(ps[e.projection].value, rng);
    return e;
  }

  /// Character features, U x hidden.
  Var encode(Tape& tape, ParameterSet& ps, std::span<const int> tokens) const {
    if (tokens.empty()) throw std::invalid_argument("encode_text: empty character sequence");
    for (int id : tokens) {
      if (id < 0 || id >= vocab_size) throw std::invalid_argument("encode_text: unknown token id " + std::to_string(id));
    }
    const int len = static_cast<int>(tokens.size());
    Var emb = ops::gather_rows(tape.param(ps[embedding]), tokens);
    Var fwd = run_lstm(tape, ps, forward, emb, layout::frames(1, len, false));
    Var bwd = run_lstm(tape, ps, backward, emb, layout::frames(1, len, true));
    return ops::matmul(ops::concat_cols({fwd, bwd}), tape.param(ps[projection]));
  }

  /// Features of a batch packed as (B * max_len) x hidden, zero-padded.
  Var encode_batch(Tape& tape, ParameterSet& ps, const std::vector<std::vector<int>>& texts, int& max_len) const {
    max_len = 0;
    for (const auto& t : texts) max_len = std::max(max_len, static_cast<int>(t.size()));
    std::vector<Var> parts;
    std::vector<std::vector<int>> index;
    for (std::size_t b = 0; b < texts.size(); ++b) {
      parts.push_back(encode(tape, ps, texts[b]));
      std::vector<int> rows(texts[b].size());
      std::iota(rows.begin(), rows.end(), static_cast<int>(b) * max_len);
      index.push_back(std::move(rows));
    }
    return ops::assemble_rows(parts, index, static_cast<Eigen::Index>(texts.size()) * max_len, hidden);
  }
};

/// Per-frame record of the attention state for one batch element.
struct AttentionTrace {
  std::vector<AttentionGamma> gamma;  // one per frame
  int text_length = 0;
};

/// Text context handed to an attention cell.
struct TextContext {
  Var chars;  // (B * max_len) x hidden
  std::vector<int> lengths;
  int max_len = 0;
};

/// Recurrent cell that reads character features through a discretized
/// logistic-mixture window whose locations only move forward.
struct AttentionCell {
  Lstm rnn;  // input is [y_i, w_{i-1}]
  int w_gamma = -1;
  int b_gamma = -1;
  int w_out = -1;  // [h_i, w_i] -> hidden
  Eigen::Index hidden = 0;
  int components = 0;

  /// `kappa_bias` initializes the location-step bias, so the window
  /// initially advances exp(kappa_bias) characters per frame.
  static AttentionCell create(ParameterSet& ps, const std::string& prefix, Eigen::Index hidden, int components,
                              std::mt19937_64& rng, double kappa_bias = 0.0) {
    AttentionCell a;
    a.hidden = hidden;
    a.components = components;
    a.rnn = make_lstm(ps, prefix + ".rnn", 2 * hidden, hidden, rng);
    a.w_gamma = ps.add(prefix + ".w_gamma", hidden, 3 * components);
    a.b_gamma = ps.add(prefix + ".b_gamma", 1, 3 * components);
    ps[a.b_gamma].value.leftCols(components).setConstant(kappa_bias);
    a.w_out = ps.add(prefix + ".w_out", 2 * hidden, hidden);
    init::scaled_uniform(ps[a.w_gamma].value, rng);
    init::scaled_uniform(ps[a.w_out].value, rng);
    return a;
  }

  struct StepOutput {
    Var hc;
    Var kappa;
    Var w;
    Var out;
  };

  /// One frame: h_i = RNN([y_i, w_{i-1}], h_{i-1}); gamma_i = g(h_i);
  /// w_i = sum_u phi_i(u) c_u. `out` is [h_i, w_i] projected to hidden.
  StepOutput step(Tape& tape, ParameterSet& ps, Var y, Var w_prev, Var hc_prev, Var kappa_prev,
                  const TextContext& text, std::vector<AttentionGamma>* gammas = nullptr) const {
    const int m = components;
    Var hc = lstm_step(tape, ps, rnn, lstm_gates(tape, ps, rnn, ops::concat_cols({y, w_prev})), hc_prev);
    Var h = ops::slice_cols(hc, 0, hidden);
    Var raw = ops::add_row(ops::matmul(h, tape.param(ps[w_gamma])), tape.param(ps[b_gamma]));
    Var kappa = ops::add(kappa_prev, ops::exp(ops::slice_cols(raw, 0, m)));
    Var beta = ops::exp(ops::slice_cols(raw, m, m));
    Var alpha = ops::softmax_rows(ops::slice_cols(raw, 2 * m, m));
    Var w = ops::attention_read(kappa, beta, alpha, text.chars, text.lengths, text.max_len);
    Var out = ops::matmul(ops::concat_cols({h, w}), tape.param(ps[w_out]));
    if (gammas != nullptr) {
      for (Eigen::Index b = 0; b < kappa.rows(); ++b) {
        AttentionGamma g;
        for (int c = 0; c < m; ++c) {
          g.kappa.push_back(kappa.value()(b, c));
          g.beta.push_back(beta.value()(b, c));
          g.alpha.push_back(alpha.value()(b, c));
        }
        gammas[b].push_back(std::move(g));
      }
    }
    return StepOutput{hc, kappa, w, out};
  }

  /// Runs over B sequences of `frames` steps; y is (B * frames) x hidden with
  /// rows (b, i). Returns the projected outputs in the same layout.
  Var run(Tape& tape, ParameterSet& ps, Var y, int batch, int frames, const TextContext& text,
          std::vector<AttentionTrace>* traces = nullptr) const {
    const StepLayout steps = layout::frames(batch, frames, false);
    Var hc = lstm_initial_state(tape, ps, rnn, batch);
    Var kappa = tape.constant(Matrix::Zero(batch, components));
    Var w = tape.constant(Matrix::Zero(batch, hidden));
    std::vector<std::vector<AttentionGamma>> gammas(static_cast<std::size_t>(batch));
    std::vector<Var> outs;
    for (const auto& rows : steps.steps) {
      auto s = step(tape, ps, ops::gather_rows(y, rows), w, hc, kappa, text, traces ? gammas.data() : nullptr);
      hc = s.hc;
      kappa = s.kappa;
      w = s.w;
      outs.push_back(s.out);
    }
    if (traces != nullptr) {
      traces->resize(static_cast<std::size_t>(batch));
      for (int b = 0; b < batch; ++b) {
        (*traces)[static_cast<std::size_t>(b)].gamma = std::move(gammas[static_cast<std::size_t>(b)]);
        (*traces)[static_cast<std::size_t>(b)].text_length = text.lengths[static_cast<std::size_t>(b)];
      }
    }
    return ops::assemble_rows(outs, steps.steps, steps.rows, hidden);
  }
};

}  // namespace melgen
