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

#include "melgen/runtime/sampling.hpp"

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

namespace melgen {

/// Grids are frames x channels: Time indexes rows, Frequency indexes columns.
enum class Axis { Time, Frequency };

inline const char* axis_name(Axis a) { return a == Axis::Time ? "time" : "frequency"; }

inline Axis parse_axis(const std::string& s) {
  if (s == "time" || s == "t") return Axis::Time;
  if (s == "frequency" || s == "freq" || s == "f") return Axis::Frequency;
  throw std::invalid_argument("unknown axis '" + s + "'");
}

/// Entry k is the axis of the k-th split counted from the full grid.
using AxisSchedule = std::vector<Axis>;

/// Even (index 0, 2, ...) and odd (1, 3, ...) rows or columns.
inline std::pair<Matrix, Matrix> split(const Matrix& x, Axis axis) {
  const Eigen::Index n = axis == Axis::Time ? x.rows() : x.cols();
  if (n == 0 || n % 2 != 0) {
    throw std::invalid_argument(std::string("split: size along ") + axis_name(axis) + " must be even, got " + std::to_string(n));
  }
  const Eigen::Index h = n / 2;
  if (axis == Axis::Time) {
    Matrix even(h, x.cols()), odd(h, x.cols());
    for (Eigen::Index r = 0; r < h; ++r) {
      even.row(r) = x.row(2 * r);
      odd.row(r) = x.row(2 * r + 1);
    }
    return {std::move(even), std::move(odd)};
  }
  Matrix even(x.rows(), h), odd(x.rows(), h);
  for (Eigen::Index c = 0; c < h; ++c) {
    even.col(c) = x.col(2 * c);
    odd.col(c) = x.col(2 * c + 1);
  }
  return {std::move(even), std::move(odd)};
}

/// Inverse of split: x_g takes index 0, x_lt index 1, and so on.
inline Matrix interleave(const Matrix& x_g, const Matrix& x_lt, Axis axis) {
  if (x_g.rows() != x_lt.rows() || x_g.cols() != x_lt.cols()) throw std::invalid_argument("interleave: incompatible shapes");
  if (axis == Axis::Time) {
    Matrix out(2 * x_g.rows(), x_g.cols());
    for (Eigen::Index r = 0; r < x_g.rows(); ++r) {
      out.row(2 * r) = x_g.row(r);
      out.row(2 * r + 1) = x_lt.row(r);
    }
    return out;
  }
  Matrix out(x_g.rows(), 2 * x_g.cols());
  for (Eigen::Index c = 0; c < x_g.cols(); ++c) {
    out.col(2 * c) = x_g.col(c);
    out.col(2 * c + 1) = x_lt.col(c);
  }
  return out;
}

/// Shape (frames, channels) of the remainder after the first `splits` splits.
inline std::pair<int, int> shape_after(const AxisSchedule& s, int frames, int channels, std::size_t splits) {
  for (std::size_t k = 0; k < splits; ++k) {
    int& n = s[k] == Axis::Time ? frames : channels;
    if (n % 2 != 0 || n == 0) {
      throw std::invalid_argument(std::string("schedule: ") + axis_name(s[k]) + " size " + std::to_string(n) +
                                  " is not divisible at split " + std::to_string(k + 1));
    }
    n /= 2;
  }
  return {frames, channels};
}

/// Alternating schedule starting with frequency at the full grid.
inline AxisSchedule default_schedule(int tiers, int frames, int channels) {
  if (tiers < 1) throw std::invalid_argument("default_schedule: tier count must be >= 1");
  AxisSchedule s;
  for (int k = 0; k + 1 < tiers; ++k) s.push_back(k % 2 == 0 ? Axis::Frequency : Axis::Time);
  shape_after(s, frames, channels, s.size());
  return s;
}

inline int time_splits(const AxisSchedule& s) {
  return static_cast<int>(std::count(s.begin(), s.end(), Axis::Time));
}

/// Shape (frames, channels) of tier g (1-based). Tier 1 is the coarsest.
inline std::pair<int, int> tier_shape(const AxisSchedule& s, int g, int frames, int channels) {
  const int count = static_cast<int>(s.size()) + 1;
  if (g < 1 || g > count) throw std::out_of_range("tier_shape: tier index out of range");
  if (g == 1) return shape_after(s, frames, channels, s.size());
  return shape_after(s, frames, channels, static_cast<std::size_t>(count - g + 1));
}

struct TierSet {
  std::vector<Matrix> tiers;  // tiers[0] is tier 1
  AxisSchedule schedule;

  int count() const { return static_cast<int>(tiers.size()); }
};

inline TierSet decompose(const Matrix& x, const AxisSchedule& schedule) {
  shape_after(schedule, static_cast<int>(x.rows()), static_cast<int>(x.cols()), schedule.size());
  const std::size_t g = schedule.size() + 1;
  TierSet t;
  t.schedule = schedule;
  t.tiers.resize(g);
  Matrix rest = x;
  for (std::size_t k = 0; k < schedule.size(); ++k) {
    auto [even, odd] = split(rest, schedule[k]);
    t.tiers[g - 1 - k] = std::move(even);
    rest = std::move(odd);
  }
  t.tiers[0] = std::move(rest);
  return t;
}

/// Interleaves tiers 1..upto (1-based) into x^{<upto+1}.
inline Matrix recombine(const std::vector<Matrix>& tiers, const AxisSchedule& schedule, int upto) {
  const int count = static_cast<int>(schedule.size()) + 1;
  if (upto < 1 || upto > count || upto > static_cast<int>(tiers.size())) throw std::out_of_range("recombine: tier index out of range");
  Matrix cur = tiers[0];
  for (int g = 2; g <= upto; ++g) {
    cur = interleave(tiers[static_cast<std::size_t>(g - 1)], cur, schedule[static_cast<std::size_t>(count - g)]);
  }
  return cur;
}

inline Matrix recombine(const TierSet& t) { return recombine(t.tiers, t.schedule, t.count()); }

/// Context x^{<g} for tier g >= 2: the lower tiers recombined.
inline Matrix tier_context(const TierSet& t, int g) {
  if (g < 2) throw std::invalid_argument("tier_context: tier 1 has no context");
  return recombine(t.tiers, t.schedule, g - 1);
}

/// Training example for tier g. Speaker and text conditioning go to tier 1 only.
inline TierExample tier_example(const TierSet& t, int g, const Eigen::RowVectorXd& condition = {},
                                const std::vector<int>& text = {}) {
  TierExample e;
  e.x = t.tiers.at(static_cast<std::size_t>(g - 1));
  if (g >= 2) e.context = tier_context(t, g);
  if (g == 1) {
    e.condition = condition;
    e.text = text;
  }
  return e;
}

/// Total log-likelihood (nats) of x under the tier factorization.
inline double multiscale_log_likelihood(std::vector<Network*> models, const Matrix& x, const AxisSchedule& schedule,
                                        const Eigen::RowVectorXd& condition = {}, const std::vector<int>& text = {}) {
  if (models.size() != schedule.size() + 1) throw std::invalid_argument("multiscale: one model per tier required");
  const TierSet t = decompose(x, schedule);
  double total = 0.0;
  for (int g = 1; g <= t.count(); ++g) {
    const TierExample e = tier_example(t, g, condition, text);
    total -= models[static_cast<std::size_t>(g - 1)]->nll(e) * static_cast<double>(e.x.size());
  }
  return total;
}

/// Coarse-to-fine sampling. Tier 1 is sampled with the given conditioning;
/// each later tier is sampled given the interleaved lower tiers and merged
/// in. A prime (leading full-resolution frames, data units) is decomposed
/// like the target, so its frame count must divide by the time scale
/// factor. With a stop threshold tier 1 may end early and the output
/// shrinks accordingly.
inline Matrix multiscale_sample(std::vector<Network*> models, const AxisSchedule& schedule, int frames, int channels,
                                const Eigen::RowVectorXd& condition, const std::vector<int>& text,
                                const SampleOptions& opt, std::mt19937_64& rng) {
  if (models.size() != schedule.size() + 1) throw std::invalid_argument("multiscale: one model per tier required");
  for (std::size_t g = 1; g < models.size(); ++g) {
    if (models[g]->config().feature_layers == 0) throw std::invalid_argument("multiscale: upsampling tier without a context extractor");
  }
  // A prime is decomposed like the target; each tier clamps its own part.
  std::vector<Matrix> prime_tiers(models.size());
  if (opt.prime.size() > 0) {
    if (opt.prime.cols() != channels || opt.prime.rows() > frames) throw std::invalid_argument("multiscale: prime does not fit the target shape");
    prime_tiers = decompose(opt.prime, schedule).tiers;
  }
  auto [f1, c1] = tier_shape(schedule, 1, frames, channels);
  SampleOptions lowest = opt;
  lowest.prime = prime_tiers[0];
  SampleResult first = sample_tier(*models[0], f1, c1, Matrix(), condition, text, lowest, rng);
  if (first.x.rows() == 0) throw std::runtime_error("multiscale: first tier terminated before producing a frame");
  const int scale = 1 << time_splits(schedule);
  const int out_frames = static_cast<int>(first.x.rows()) * scale;
  std::vector<Matrix> tiers{first.x};
  SampleOptions upper;
  upper.temperature = opt.temperature;
  const int count = static_cast<int>(models.size());
  for (int g = 2; g <= count; ++g) {
    Matrix ctx = recombine(tiers, schedule, g - 1);
    upper.prime = prime_tiers[static_cast<std::size_t>(g - 1)];
    SampleResult r = sample_tier(*models[static_cast<std::size_t>(g - 1)], static_cast<int>(ctx.rows()),
                                 static_cast<int>(ctx.cols()), ctx, Eigen::RowVectorXd(), {}, upper, rng);
    tiers.push_back(std::move(r.x));
  }
  Matrix out = recombine(tiers, schedule, count);
  if (out.rows() != out_frames || out.cols() != channels) throw std::logic_error("multiscale: recombined shape mismatch");
  return out;
}

}  // namespace melgen
