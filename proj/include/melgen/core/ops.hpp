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
#include <span>
#include <vector>

namespace melgen::ops {

namespace detail {

inline void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace detail

inline Var matmul(Var a, Var b) {
  detail::require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Matrix v = a.value() * b.value();
  return a.tape->push(std::move(v), {a, b}, [a = a.id, b = b.id](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.needs(a)) t.accumulate(a, g * t.value(b).transpose());
    if (t.needs(b)) t.accumulate(b, t.value(a).transpose() * g);
  });
}

inline Var add(Var a, Var b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Matrix v = a.value() + b.value();
  return a.tape->push(std::move(v), {a, b}, [a = a.id, b = b.id](Tape& t, int self) {
    t.accumulate(a, t.grad(self));
    t.accumulate(b, t.grad(self));
  });
}

inline Var sub(Var a, Var b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  Matrix v = a.value() - b.value();
  return a.tape->push(std::move(v), {a, b}, [a = a.id, b = b.id](Tape& t, int self) {
    t.accumulate(a, t.grad(self));
    t.accumulate(b, -t.grad(self));
  });
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  Matrix v = a.value().cwiseProduct(b.value());
  return a.tape->push(std::move(v), {a, b}, [a = a.id, b = b.id](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.needs(a)) t.accumulate(a, g.cwiseProduct(t.value(b)));
    if (t.needs(b)) t.accumulate(b, g.cwiseProduct(t.value(a)));
  });
}

inline Var scale(Var a, double s) {
  Matrix v = a.value() * s;
  return a.tape->push(std::move(v), {a}, [a = a.id, s](Tape& t, int self) { t.accumulate(a, t.grad(self) * s); });
}

/// Adds a 1 x C row to every row of a.
inline Var add_row(Var a, Var row) {
  detail::require(row.rows() == 1 && row.cols() == a.cols(), "add_row: expects a matching 1xC row");
  Matrix v = a.value().rowwise() + row.value().row(0);
  return a.tape->push(std::move(v), {a, row}, [a = a.id, r = row.id](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    t.accumulate(a, g);
    if (t.needs(r)) t.accumulate(r, g.colwise().sum());
  });
}

inline Var exp(Var a) {
  Matrix v = a.value().array().exp().matrix();
  return a.tape->push(std::move(v), {a}, [a = a.id](Tape& t, int self) {
    t.accumulate(a, t.grad(self).cwiseProduct(t.value(self)));
  });
}

inline Var tanh(Var a) {
  Matrix v = a.value().array().tanh().matrix();
  return a.tape->push(std::move(v), {a}, [a = a.id](Tape& t, int self) {
    const Matrix& y = t.value(self);
    t.accumulate(a, (t.grad(self).array() * (1.0 - y.array().square())).matrix());
  });
}

inline Var sigmoid(Var a) {
  Matrix v = a.value().unaryExpr([](double x) { return detail::sigmoid(x); });
  return a.tape->push(std::move(v), {a}, [a = a.id](Tape& t, int self) {
    const Matrix& y = t.value(self);
    t.accumulate(a, (t.grad(self).array() * y.array() * (1.0 - y.array())).matrix());
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  detail::require(!parts.empty(), "concat_cols: no inputs");
  Eigen::Index rows = parts.front().rows(), cols = 0;
  for (const Var& p : parts) {
    detail::require(p.rows() == rows, "concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix v(rows, cols);
  std::vector<int> ids;
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    v.middleCols(off, p.cols()) = p.value();
    ids.push_back(p.id);
    offsets.push_back(off);
    off += p.cols();
  }
  return parts.front().tape->push(std::move(v), parts, [ids, offsets](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.needs(ids[k])) t.accumulate(ids[k], g.middleCols(offsets[k], t.value(ids[k]).cols()));
    }
  });
}

inline Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  detail::require(start >= 0 && start + count <= a.cols(), "slice_cols: out of range");
  Matrix v = a.value().middleCols(start, count);
  return a.tape->push(std::move(v), {a}, [a = a.id, start](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    t.accumulate_block(a, 0, start, g);
  });
}

/// Row gather: out.row(r) = a.row(index[r]). Backward scatter-adds.
inline Var gather_rows(Var a, std::span<const int> index) {
  const Matrix& av = a.value();
  Matrix v(static_cast<Eigen::Index>(index.size()), av.cols());
  for (std::size_t r = 0; r < index.size(); ++r) v.row(static_cast<Eigen::Index>(r)) = av.row(index[r]);
  std::vector<int> idx(index.begin(), index.end());
  return a.tape->push(std::move(v), {a}, [a = a.id, idx = std::move(idx)](Tape& t, int self) {
    if (!t.needs(a)) return;
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad_buffer(a);
    for (std::size_t r = 0; r < idx.size(); ++r) ga.row(idx[r]) += g.row(static_cast<Eigen::Index>(r));
  });
}

/// Builds a (rows x cols) matrix whose row index[p][r] is the first `cols`
/// columns of parts[p].row(r). Rows not named by any index stay zero.
inline Var assemble_rows(const std::vector<Var>& parts, const std::vector<std::vector<int>>& index,
                         Eigen::Index rows, Eigen::Index cols) {
  detail::require(!parts.empty() && parts.size() == index.size(), "assemble_rows: parts/index mismatch");
  Matrix v = Matrix::Zero(rows, cols);
  std::vector<int> ids;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Matrix& pv = parts[p].value();
    detail::require(pv.cols() >= cols && pv.rows() == static_cast<Eigen::Index>(index[p].size()),
                    "assemble_rows: part shape mismatch");
    for (std::size_t r = 0; r < index[p].size(); ++r) {
      v.row(index[p][r]) = pv.row(static_cast<Eigen::Index>(r)).head(cols);
    }
    ids.push_back(parts[p].id);
  }
  return parts.front().tape->push(std::move(v), parts, [ids, index, cols](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    for (std::size_t p = 0; p < ids.size(); ++p) {
      if (!t.needs(ids[p])) continue;
      Matrix gp = Matrix::Zero(static_cast<Eigen::Index>(index[p].size()), t.value(ids[p]).cols());
      for (std::size_t r = 0; r < index[p].size(); ++r) {
        gp.row(static_cast<Eigen::Index>(r)).head(cols) = g.row(index[p][r]);
      }
      t.accumulate(ids[p], gp);
    }
  });
}

/// Repeats a 1 x C row n times.
inline Var broadcast_rows(Var row, Eigen::Index n) {
  detail::require(row.rows() == 1, "broadcast_rows: expects a single row");
  Matrix v = row.value().replicate(n, 1);
  return row.tape->push(std::move(v), {row}, [r = row.id](Tape& t, int self) {
    t.accumulate(r, t.grad(self).colwise().sum());
  });
}

inline Var sum(Var a) {
  Matrix v(1, 1);
  v(0, 0) = a.value().sum();
  return a.tape->push(std::move(v), {a}, [a = a.id](Tape& t, int self) {
    const double g = t.grad(self)(0, 0);
    t.accumulate(a, Matrix::Constant(t.value(a).rows(), t.value(a).cols(), g));
  });
}

/// Row-wise softmax.
inline Var softmax_rows(Var a) {
  Matrix v = a.value();
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const double m = v.row(r).maxCoeff();
    v.row(r) = (v.row(r).array() - m).exp();
    v.row(r) /= v.row(r).sum();
  }
  return a.tape->push(std::move(v), {a}, [a = a.id](Tape& t, int self) {
    const Matrix& y = t.value(self);
    const Matrix& g = t.grad(self);
    Eigen::VectorXd dot = (g.cwiseProduct(y)).rowwise().sum();
    Matrix ga = y.cwiseProduct(g.colwise() - dot);
    t.accumulate(a, ga);
  });
}

/// LSTM cell with a fused recurrent matmul.
///
/// gates_in: N x 4H input contribution (x W_in + b); hc_prev: N x 2H holding
/// [h | c]; w_rec: H x 4H. Gate order is input, forget, output, candidate.
/// Returns the new [h | c].
inline Var lstm_cell(Var gates_in, Var hc_prev, Var w_rec) {
  const Eigen::Index n = gates_in.rows();
  const Eigen::Index h = w_rec.rows();
  detail::require(gates_in.cols() == 4 * h && w_rec.cols() == 4 * h, "lstm_cell: gate width mismatch");
  detail::require(hc_prev.rows() == n && hc_prev.cols() == 2 * h, "lstm_cell: state shape mismatch");
  const Matrix& hcp = hc_prev.value();
  Matrix gates = gates_in.value();
  gates.noalias() += hcp.leftCols(h) * w_rec.value();
  // Activated gates are kept for the backward pass: [i f o u tanh(c)].
  Matrix act(n, 5 * h);
  Matrix out(n, 2 * h);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index k = 0; k < h; ++k) {
      const double ig = detail::sigmoid(gates(r, k));
      const double fg = detail::sigmoid(gates(r, h + k));
      const double og = detail::sigmoid(gates(r, 2 * h + k));
      const double ug = std::tanh(gates(r, 3 * h + k));
      const double c = fg * hcp(r, h + k) + ig * ug;
      const double tc = std::tanh(c);
      act(r, k) = ig;
      act(r, h + k) = fg;
      act(r, 2 * h + k) = og;
      act(r, 3 * h + k) = ug;
      act(r, 4 * h + k) = tc;
      out(r, k) = og * tc;
      out(r, h + k) = c;
    }
  }
  return gates_in.tape->push(
      std::move(out), {gates_in, hc_prev, w_rec},
      [gi = gates_in.id, hp = hc_prev.id, wr = w_rec.id, act = std::move(act), h](Tape& t, int self) {
        const Matrix& g = t.grad(self);
        const Matrix& hcp = t.value(hp);
        const Eigen::Index n = g.rows();
        Matrix dgates(n, 4 * h);
        Matrix dhc_prev = Matrix::Zero(n, 2 * h);
        for (Eigen::Index r = 0; r < n; ++r) {
          for (Eigen::Index k = 0; k < h; ++k) {
            const double ig = act(r, k), fg = act(r, h + k), og = act(r, 2 * h + k);
            const double ug = act(r, 3 * h + k), tc = act(r, 4 * h + k);
            const double dh = g(r, k);
            const double dc = g(r, h + k) + dh * og * (1.0 - tc * tc);
            dgates(r, k) = dc * ug * ig * (1.0 - ig);
            dgates(r, h + k) = dc * hcp(r, h + k) * fg * (1.0 - fg);
            dgates(r, 2 * h + k) = dh * tc * og * (1.0 - og);
            dgates(r, 3 * h + k) = dc * ig * (1.0 - ug * ug);
            dhc_prev(r, h + k) = dc * fg;
          }
        }
        if (t.needs(hp) || t.needs(wr)) {
          if (t.needs(hp)) dhc_prev.leftCols(h).noalias() += dgates * t.value(wr).transpose();
          if (t.needs(wr)) t.accumulate(wr, hcp.leftCols(h).transpose() * dgates);
        }
        t.accumulate(gi, dgates);
        t.accumulate(hp, dhc_prev);
      });
}

/// Sum over rows of the diagonal-Gaussian negative log-density of targets
/// given per-element means and log standard deviations (all N x D).
inline Var diag_gaussian_nll(const Matrix& target, Var mean, Var log_std) {
  detail::require(mean.rows() == target.rows() && mean.cols() == target.cols() &&
                      log_std.rows() == target.rows() && log_std.cols() == target.cols(),
                  "diag_gaussian_nll: shape mismatch");
  constexpr double kHalfLog2Pi = 0.91893853320467274178;
  const Matrix& mu = mean.value();
  const Matrix& ls = log_std.value();
  Matrix zsq = ((target - mu).array() * (-ls.array()).exp()).square().matrix();
  Matrix v(1, 1);
  v(0, 0) = (0.5 * zsq.array() + ls.array() + kHalfLog2Pi).sum();
  return mean.tape->push(std::move(v), {mean, log_std},
                         [m = mean.id, l = log_std.id, target, zsq](Tape& t, int self) {
                           const double g = t.grad(self)(0, 0);
                           const Matrix& mu = t.value(m);
                           const Matrix& ls = t.value(l);
                           if (t.needs(m)) {
                             t.accumulate(m, (-g * (target - mu).array() * (-2.0 * ls.array()).exp()).matrix());
                           }
                           if (t.needs(l)) t.accumulate(l, (g * (1.0 - zsq.array())).matrix());
                         });
}

/// Sum of KL(N(mean, exp(log_std)^2) || N(0, 1)) over all entries.
inline Var kl_standard_normal(Var mean, Var log_std) {
  detail::require(mean.rows() == log_std.rows() && mean.cols() == log_std.cols(), "kl: shape mismatch");
  const Matrix& mu = mean.value();
  const Matrix& ls = log_std.value();
  Matrix v(1, 1);
  v(0, 0) = (0.5 * (mu.array().square() + (2.0 * ls.array()).exp() - 1.0) - ls.array()).sum();
  if (!std::isfinite(v(0, 0))) throw NumericError("KL divergence is not finite");
  return mean.tape->push(std::move(v), {mean, log_std}, [m = mean.id, l = log_std.id](Tape& t, int self) {
    const double g = t.grad(self)(0, 0);
    if (t.needs(m)) t.accumulate(m, g * t.value(m));
    if (t.needs(l)) t.accumulate(l, (g * ((2.0 * t.value(l).array()).exp() - 1.0)).matrix());
  });
}

/// Averages rows in groups: out.row(b) = mean of a rows [b*group, (b+1)*group).
inline Var mean_row_groups(Var a, Eigen::Index group) {
  detail::require(group > 0 && a.rows() % group == 0, "mean_row_groups: rows not divisible");
  const Eigen::Index n = a.rows() / group;
  Matrix v(n, a.cols());
  for (Eigen::Index b = 0; b < n; ++b) v.row(b) = a.value().middleRows(b * group, group).colwise().mean();
  return a.tape->push(std::move(v), {a}, [a = a.id, group](Tape& t, int self) {
    if (!t.needs(a)) return;
    const Matrix& g = t.grad(self);
    Matrix ga(g.rows() * group, g.cols());
    for (Eigen::Index b = 0; b < g.rows(); ++b) {
      ga.middleRows(b * group, group) = g.row(b).replicate(group, 1) / static_cast<double>(group);
    }
    t.accumulate(a, ga);
  });
}

}  // namespace melgen::ops
