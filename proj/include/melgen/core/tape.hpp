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

#include <Eigen/Dense>

#include <functional>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace melgen {

/// Dense row-major matrix. Feature maps put one grid element per row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Thrown when activations, losses or samples leave the finite range.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr; }
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

/// Reverse-mode automatic differentiation over dense matrices.
///
/// Nodes are appended in evaluation order; backward() walks them in reverse.
/// A tape built with record=false keeps values only, which is what sampling
/// and evaluation use.
class Tape {
 public:
  using Backward = std::function<void(Tape&, int)>;

  explicit Tape(bool record = true) : record_(record) { nodes_.reserve(1024); }

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Matrix v) {
    nodes_.push_back(Node{std::move(v), Matrix(), nullptr, nullptr, false});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  /// Leaf bound to a parameter. Repeated calls return the same node so that
  /// gradients from every use accumulate in one place.
  Var param(Parameter& p) {
    auto it = param_ids_.find(&p);
    if (it != param_ids_.end()) return Var{this, it->second};
    nodes_.push_back(Node{p.value, Matrix(), nullptr, &p, record_});
    int id = static_cast<int>(nodes_.size()) - 1;
    param_ids_.emplace(&p, id);
    return Var{this, id};
  }

  Var push(Matrix v, std::initializer_list<Var> inputs, Backward fn) {
    bool needs = false;
    if (record_) {
      for (const Var& in : inputs) needs = needs || nodes_[in.id].needs_grad;
    }
    nodes_.push_back(Node{std::move(v), Matrix(), needs ? std::move(fn) : nullptr, nullptr, needs});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  Var push(Matrix v, const std::vector<Var>& inputs, Backward fn) {
    bool needs = false;
    if (record_) {
      for (const Var& in : inputs) needs = needs || nodes_[in.id].needs_grad;
    }
    nodes_.push_back(Node{std::move(v), Matrix(), needs ? std::move(fn) : nullptr, nullptr, needs});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  const Matrix& value(int id) const { return nodes_[id].value; }
  bool needs(int id) const { return nodes_[id].needs_grad; }
  const Matrix& grad(int id) const { return nodes_[id].grad; }

  template <typename Derived>
  void accumulate(int id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Adds a gradient into a block of a node's gradient, allocating zeros first.
  template <typename Derived>
  void accumulate_block(int id, Eigen::Index row, Eigen::Index col, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
    n.grad.block(row, col, g.rows(), g.cols()) += g;
  }

  Matrix& grad_buffer(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  /// Backpropagates from a 1x1 node and adds leaf gradients into the bound
  /// parameters' grad buffers.
  void backward(Var loss) {
    if (!record_) throw std::logic_error("backward on a non-recording tape");
    if (loss.tape != this || value(loss.id).size() != 1) {
      throw std::invalid_argument("backward expects a scalar node of this tape");
    }
    if (!nodes_[loss.id].needs_grad) return;
    nodes_[loss.id].grad = Matrix::Ones(1, 1);
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, id);
      if (n.param != nullptr) {
        if (n.param->grad.size() == 0) n.param->zero_grad();
        n.param->grad += n.grad;
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    Parameter* param;
    bool needs_grad;
  };

  bool record_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_ids_;
};

inline const Matrix& Var::value() const { return tape->value(id); }

}  // namespace melgen
