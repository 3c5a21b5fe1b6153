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

// Checks shared by the unit tests and the acceptance runner.

#pragma once

#include "melgen/net/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace melgen::testing {

inline Matrix random_grid(int frames, int channels, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Matrix x(frames, channels);
  for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = n(rng);
  return x;
}

struct GradientCheck {
  double max_rel_error = 0.0;
  std::string worst;    // "name[index]"
  std::size_t checked = 0;
};

/// |a - n| / max(|a|, |n|, floor) between the analytic gradient a and the
/// central difference n of the mean NLL, over every parameter scalar.
inline GradientCheck check_gradients(Network& net, const TierExample& e, double step = 1e-5, double floor = 1e-6) {
  auto& ps = net.parameters();
  ps.zero_grad();
  {
    Tape tape;
    Var l = net.loss(tape, std::span<const TierExample>(&e, 1));
    tape.backward(l);
  }
  GradientCheck out;
  for (auto& p : ps.all()) {
    const Matrix analytic = p.grad;
    for (Eigen::Index k = 0; k < p.value.size(); ++k) {
      const double keep = p.value.data()[k];
      p.value.data()[k] = keep + step;
      const double up = net.nll(e);
      p.value.data()[k] = keep - step;
      const double down = net.nll(e);
      p.value.data()[k] = keep;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic.data()[k];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      if (rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst = p.name + "[" + std::to_string(k) + "]";
      }
      ++out.checked;
    }
  }
  return out;
}

struct CausalityCheck {
  std::size_t violations = 0;
  std::size_t comparisons = 0;
};

/// Perturbs every element in turn and compares the mixture parameters of
/// all raster-earlier-or-equal positions bit for bit.
inline CausalityCheck check_causality(Network& net, const TierExample& e, double delta = 0.75) {
  const GmmParamGrid base = net.network_forward(e);
  const Eigen::Index t = e.x.rows(), m = e.x.cols();
  CausalityCheck out;
  for (Eigen::Index p = 0; p < t; ++p) {
    for (Eigen::Index q = 0; q < m; ++q) {
      TierExample moved = e;
      moved.x(p, q) += delta;
      const GmmParamGrid g = net.network_forward(moved);
      const Eigen::Index last = p * m + q;
      for (Eigen::Index r = 0; r <= last; ++r) {
        ++out.comparisons;
        if (g.mean.row(r) != base.mean.row(r) || g.stddev.row(r) != base.stddev.row(r) ||
            g.weight.row(r) != base.weight.row(r)) {
          ++out.violations;
        }
      }
    }
  }
  return out;
}

}  // namespace melgen::testing
