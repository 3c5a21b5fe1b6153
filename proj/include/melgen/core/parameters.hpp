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

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace melgen {

/// Owns every trainable tensor of a model. Layers refer to entries by index
/// so that copying a model copies its parameters without dangling pointers.
class ParameterSet {
 public:
  int add(std::string name, Eigen::Index rows, Eigen::Index cols) {
    Parameter p;
    p.name = std::move(name);
    p.value = Matrix::Zero(rows, cols);
    params_.push_back(std::move(p));
    return static_cast<int>(params_.size()) - 1;
  }

  Parameter& operator[](int i) { return params_.at(static_cast<std::size_t>(i)); }
  const Parameter& operator[](int i) const { return params_.at(static_cast<std::size_t>(i)); }

  std::size_t size() const { return params_.size(); }
  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::vector<Parameter> params_;
};

namespace init {

/// Glorot-style uniform fill, U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
inline void scaled_uniform(Matrix& m, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  std::uniform_real_distribution<double> dist(-a, a);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
}

/// Fills each square H x H block of an H x (k*H) matrix with an orthogonal matrix.
inline void orthogonal_blocks(Matrix& m, std::mt19937_64& rng) {
  const Eigen::Index h = m.rows();
  std::normal_distribution<double> dist(0.0, 1.0);
  for (Eigen::Index off = 0; off + h <= m.cols(); off += h) {
    Eigen::MatrixXd g(h, h);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = dist(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ();
    // Sign fix makes the draw uniform over the orthogonal group.
    Eigen::VectorXd d = qr.matrixQR().diagonal();
    for (Eigen::Index c = 0; c < h; ++c) {
      if (d(c) < 0) q.col(c) = -q.col(c);
    }
    m.block(0, off, h, h) = q;
  }
}

}  // namespace init

}  // namespace melgen
