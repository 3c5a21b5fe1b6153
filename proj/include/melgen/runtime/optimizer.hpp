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

#include "melgen/core/parameters.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace melgen {

struct RmsPropConfig {
  double learning_rate = 1e-4;
  double momentum = 0.9;
  double decay = 0.9;
  double epsilon = 1e-8;
};

/// Second-moment and momentum buffers, one pair per parameter.
struct RmsPropState {
  std::vector<Matrix> mean_square;
  std::vector<Matrix> velocity;
};

/// RMSProp with momentum:
///   s <- decay s + (1 - decay) g^2
///   v <- momentum v + lr g / sqrt(s + eps)
///   p <- p - v
inline void rmsprop_step(ParameterSet& ps, RmsPropState& st, const RmsPropConfig& cfg) {
  if (st.mean_square.size() != ps.size()) {
    st.mean_square.clear();
    st.velocity.clear();
    for (const auto& p : ps.all()) {
      st.mean_square.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
      st.velocity.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    }
  }
  for (std::size_t k = 0; k < ps.size(); ++k) {
    Parameter& p = ps.all()[k];
    Matrix& s = st.mean_square[k];
    Matrix& v = st.velocity[k];
    s = cfg.decay * s + (1.0 - cfg.decay) * p.grad.cwiseProduct(p.grad);
    v = cfg.momentum * v + cfg.learning_rate * (p.grad.array() / (s.array() + cfg.epsilon).sqrt()).matrix();
    p.value -= v;
  }
}

inline double global_grad_norm(const ParameterSet& ps) {
  double sq = 0.0;
  for (const auto& p : ps.all()) sq += p.grad.squaredNorm();
  return std::sqrt(sq);
}

/// Rescales all gradients so their joint norm is at most `max_norm`.
/// Returns the norm before clipping.
inline double clip_grad_norm(ParameterSet& ps, double max_norm) {
  const double norm = global_grad_norm(ps);
  if (std::isfinite(max_norm) && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& p : ps.all()) p.grad *= s;
  }
  return norm;
}

}  // namespace melgen
