// Copyright (c) 2026 The evc Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "evc/autodiff.h"

#include <cmath>

namespace evc::ad {

namespace {

void CheckSameShape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ValidationError(std::string(op) + ": shape mismatch " +
                          std::to_string(a.rows()) + "x" +
                          std::to_string(a.cols()) + " vs " +
                          std::to_string(b.rows()) + "x" +
                          std::to_string(b.cols()));
  }
}

}  // namespace

Var Tape::Constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::Variable(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::Push(Matrix value, std::initializer_list<Var> parents,
               BackwardFn fn) {
  bool needs = false;
  for (const Var& p : parents) needs = needs || nodes_[p.id()].requires_grad;
  Node n;
  n.value = std::move(value);
  n.requires_grad = needs;
  if (needs) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::Push(Matrix value, const std::vector<Var>& parents, BackwardFn fn) {
  bool needs = false;
  for (const Var& p : parents) needs = needs || nodes_[p.id()].requires_grad;
  Node n;
  n.value = std::move(value);
  n.requires_grad = needs;
  if (needs) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Matrix& Tape::AccumulateInto(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::Backward(const Var& root) {
  if (root.tape() != this) throw ValidationError("Backward: foreign Var");
  if (root.rows() != 1 || root.cols() != 1) {
    throw ValidationError("Backward: root must be 1x1");
  }
  for (Node& n : nodes_) n.grad.resize(0, 0);
  nodes_[root.id()].grad = Matrix::Ones(1, 1);
  for (int i = root.id(); i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.backward && n.grad.size() != 0) n.backward(*this, i);
  }
}

Matrix Tape::Grad(const Var& v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var MatMul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw ValidationError("MatMul: inner dimensions " +
                          std::to_string(a.cols()) + " vs " +
                          std::to_string(b.rows()));
  }
  Tape* t = a.tape();
  const int ia = a.id(), ib = b.id();
  return t->Push(a.value() * b.value(), {a, b}, [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.AccumulateInto(ia).noalias() += g * tp.value(ib).transpose();
    if (tp.requires_grad(ib)) tp.AccumulateInto(ib).noalias() += tp.value(ia).transpose() * g;
  });
}

Var Add(const Var& a, const Var& b) {
  CheckSameShape(a, b, "Add");
  const int ia = a.id(), ib = b.id();
  return a.tape()->Push(a.value() + b.value(), {a, b},
                        [ia, ib](Tape& tp, int self) {
                          const Matrix& g = tp.grad(self);
                          if (tp.requires_grad(ia)) tp.AccumulateInto(ia) += g;
                          if (tp.requires_grad(ib)) tp.AccumulateInto(ib) += g;
                        });
}

Var Sub(const Var& a, const Var& b) {
  CheckSameShape(a, b, "Sub");
  const int ia = a.id(), ib = b.id();
  return a.tape()->Push(a.value() - b.value(), {a, b},
                        [ia, ib](Tape& tp, int self) {
                          const Matrix& g = tp.grad(self);
                          if (tp.requires_grad(ia)) tp.AccumulateInto(ia) += g;
                          if (tp.requires_grad(ib)) tp.AccumulateInto(ib) -= g;
                        });
}

Var Mul(const Var& a, const Var& b) {
  CheckSameShape(a, b, "Mul");
  const int ia = a.id(), ib = b.id();
  return a.tape()->Push(
      a.value().cwiseProduct(b.value()), {a, b}, [ia, ib](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        if (tp.requires_grad(ia)) tp.AccumulateInto(ia) += g.cwiseProduct(tp.value(ib));
        if (tp.requires_grad(ib)) tp.AccumulateInto(ib) += g.cwiseProduct(tp.value(ia));
      });
}

Var Scale(const Var& a, double s) {
  const int ia = a.id();
  return a.tape()->Push(a.value() * s, {a}, [ia, s](Tape& tp, int self) {
    tp.AccumulateInto(ia) += tp.grad(self) * s;
  });
}

Var AddScalar(const Var& a, double s) {
  const int ia = a.id();
  return a.tape()->Push(a.value().array() + s, {a}, [ia](Tape& tp, int self) {
    tp.AccumulateInto(ia) += tp.grad(self);
  });
}

Var MulScalar(const Var& a, const Var& s) {
  if (s.rows() != 1 || s.cols() != 1) {
    throw ValidationError("MulScalar: scalar operand must be 1x1");
  }
  const int ia = a.id(), is = s.id();
  return a.tape()->Push(a.value() * s.scalar(), {a, s},
                        [ia, is](Tape& tp, int self) {
                          const Matrix& g = tp.grad(self);
                          if (tp.requires_grad(ia)) {
                            tp.AccumulateInto(ia) += g * tp.value(is)(0, 0);
                          }
                          if (tp.requires_grad(is)) {
                            tp.AccumulateInto(is)(0, 0) +=
                                g.cwiseProduct(tp.value(ia)).sum();
                          }
                        });
}

Var AddRow(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ValidationError("AddRow: row must be 1x" + std::to_string(a.cols()));
  }
  const int ia = a.id(), ir = row.id();
  Matrix out = a.value().rowwise() + row.value().row(0);
  return a.tape()->Push(std::move(out), {a, row}, [ia, ir](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.AccumulateInto(ia) += g;
    if (tp.requires_grad(ir)) tp.AccumulateInto(ir) += g.colwise().sum();
  });
}

Var Transpose(const Var& a) {
  const int ia = a.id();
  return a.tape()->Push(a.value().transpose(), {a}, [ia](Tape& tp, int self) {
    tp.AccumulateInto(ia) += tp.grad(self).transpose();
  });
}

Var Tanh(const Var& a) {
  const int ia = a.id();
  return a.tape()->Push(a.value().array().tanh().matrix(), {a},
                        [ia](Tape& tp, int self) {
                          const Matrix& y = tp.value(self);
                          tp.AccumulateInto(ia).array() +=
                              tp.grad(self).array() * (1.0 - y.array().square());
                        });
}

Var Sigmoid(const Var& a) {
  const int ia = a.id();
  Matrix y = a.value().unaryExpr([](double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                  : std::exp(x) / (1.0 + std::exp(x));
  });
  return a.tape()->Push(std::move(y), {a}, [ia](Tape& tp, int self) {
    const Matrix& y = tp.value(self);
    tp.AccumulateInto(ia).array() +=
        tp.grad(self).array() * y.array() * (1.0 - y.array());
  });
}

Var Exp(const Var& a) {
  const int ia = a.id();
  return a.tape()->Push(a.value().array().exp().matrix(), {a},
                        [ia](Tape& tp, int self) {
                          tp.AccumulateInto(ia).array() +=
                              tp.grad(self).array() * tp.value(self).array();
                        });
}

Var Log(const Var& a, double floor) {
  const int ia = a.id();
  Matrix y = a.value().unaryExpr(
      [floor](double x) { return std::log(std::max(x, floor)); });
  return a.tape()->Push(std::move(y), {a}, [ia, floor](Tape& tp, int self) {
    const Matrix& x = tp.value(ia);
    const Matrix& g = tp.grad(self);
    Matrix& acc = tp.AccumulateInto(ia);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      if (x(i) > floor) acc(i) += g(i) / x(i);
    }
  });
}

Var Abs(const Var& a) {
  const int ia = a.id();
  return a.tape()->Push(a.value().cwiseAbs(), {a}, [ia](Tape& tp, int self) {
    const Matrix& x = tp.value(ia);
    tp.AccumulateInto(ia).array() +=
        tp.grad(self).array() * x.array().sign();
  });
}

Var Square(const Var& a) {
  const int ia = a.id();
  return a.tape()->Push(a.value().array().square().matrix(), {a},
                        [ia](Tape& tp, int self) {
                          tp.AccumulateInto(ia).array() +=
                              2.0 * tp.grad(self).array() * tp.value(ia).array();
                        });
}

Var SoftmaxRows(const Var& a) {
  const int ia = a.id();
  Matrix y = a.value();
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const double mx = y.row(r).maxCoeff();
    y.row(r) = (y.row(r).array() - mx).exp();
    y.row(r) /= y.row(r).sum();
  }
  return a.tape()->Push(std::move(y), {a}, [ia](Tape& tp, int self) {
    const Matrix& y = tp.value(self);
    const Matrix& g = tp.grad(self);
    Matrix& acc = tp.AccumulateInto(ia);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double dot = g.row(r).dot(y.row(r));
      acc.row(r).array() += y.row(r).array() * (g.row(r).array() - dot);
    }
  });
}

Var NormalizeRows(const Var& a, double eps) {
  const int ia = a.id();
  Matrix x = a.value().array() + eps;
  Vector sums = x.rowwise().sum();
  Matrix y = x;
  for (Eigen::Index r = 0; r < y.rows(); ++r) y.row(r) /= sums(r);
  return a.tape()->Push(std::move(y), {a}, [ia, sums](Tape& tp, int self) {
    const Matrix& y = tp.value(self);
    const Matrix& g = tp.grad(self);
    Matrix& acc = tp.AccumulateInto(ia);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double dot = g.row(r).dot(y.row(r));
      acc.row(r).array() += (g.row(r).array() - dot) / sums(r);
    }
  });
}

Var Sum(const Var& a) {
  const int ia = a.id();
  Matrix y(1, 1);
  y(0, 0) = a.value().sum();
  return a.tape()->Push(std::move(y), {a}, [ia](Tape& tp, int self) {
    tp.AccumulateInto(ia).array() += tp.grad(self)(0, 0);
  });
}

Var Mean(const Var& a) {
  const int ia = a.id();
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw ValidationError("Mean: empty operand");
  Matrix y(1, 1);
  y(0, 0) = a.value().sum() / n;
  return a.tape()->Push(std::move(y), {a}, [ia, n](Tape& tp, int self) {
    tp.AccumulateInto(ia).array() += tp.grad(self)(0, 0) / n;
  });
}

Var MeanRows(const Var& a) {
  const int ia = a.id();
  const double n = static_cast<double>(a.rows());
  if (n == 0) throw ValidationError("MeanRows: empty operand");
  Matrix y = a.value().colwise().sum() / n;
  return a.tape()->Push(std::move(y), {a}, [ia, n](Tape& tp, int self) {
    tp.AccumulateInto(ia).rowwise() += tp.grad(self).row(0) / n;
  });
}

Var ConcatCols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ValidationError("ConcatCols: no operands");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ValidationError("ConcatCols: row mismatch");
    cols += p.cols();
  }
  Matrix y(rows, cols);
  std::vector<int> ids;
  std::vector<Eigen::Index> widths;
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    y.middleCols(c, p.cols()) = p.value();
    c += p.cols();
    ids.push_back(p.id());
    widths.push_back(p.cols());
  }
  return parts[0].tape()->Push(
      std::move(y), parts, [ids, widths](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        Eigen::Index c = 0;
        for (size_t k = 0; k < ids.size(); ++k) {
          if (tp.requires_grad(ids[k])) {
            tp.AccumulateInto(ids[k]) += g.middleCols(c, widths[k]);
          }
          c += widths[k];
        }
      });
}

Var ConcatRows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ValidationError("ConcatRows: no operands");
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw ValidationError("ConcatRows: column mismatch");
    rows += p.rows();
  }
  Matrix y(rows, cols);
  std::vector<int> ids;
  std::vector<Eigen::Index> heights;
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    y.middleRows(r, p.rows()) = p.value();
    r += p.rows();
    ids.push_back(p.id());
    heights.push_back(p.rows());
  }
  return parts[0].tape()->Push(
      std::move(y), parts, [ids, heights](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        Eigen::Index r = 0;
        for (size_t k = 0; k < ids.size(); ++k) {
          if (tp.requires_grad(ids[k])) {
            tp.AccumulateInto(ids[k]) += g.middleRows(r, heights[k]);
          }
          r += heights[k];
        }
      });
}

Var SliceRows(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw ValidationError("SliceRows: range out of bounds");
  }
  const int ia = a.id();
  return a.tape()->Push(a.value().middleRows(start, count), {a},
                        [ia, start, count](Tape& tp, int self) {
                          tp.AccumulateInto(ia).middleRows(start, count) +=
                              tp.grad(self);
                        });
}

Var SliceCols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw ValidationError("SliceCols: range out of bounds");
  }
  const int ia = a.id();
  return a.tape()->Push(a.value().middleCols(start, count), {a},
                        [ia, start, count](Tape& tp, int self) {
                          tp.AccumulateInto(ia).middleCols(start, count) +=
                              tp.grad(self);
                        });
}

Var GatherRows(const Var& table, const std::vector<int>& ids) {
  const Matrix& t = table.value();
  Matrix y(static_cast<Eigen::Index>(ids.size()), t.cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= t.rows()) {
      throw ValidationError("GatherRows: index " + std::to_string(ids[i]) +
                            " out of range [0, " + std::to_string(t.rows()) +
                            ")");
    }
    y.row(static_cast<Eigen::Index>(i)) = t.row(ids[i]);
  }
  const int it = table.id();
  return table.tape()->Push(std::move(y), {table}, [it, ids](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Matrix& acc = tp.AccumulateInto(it);
    for (size_t i = 0; i < ids.size(); ++i) {
      acc.row(ids[i]) += g.row(static_cast<Eigen::Index>(i));
    }
  });
}

Var Reshape(const Var& a, Eigen::Index rows, Eigen::Index cols) {
  const Matrix& x = a.value();
  if (rows * cols != x.size()) throw ValidationError("Reshape: size mismatch");
  const Eigen::Index in_cols = x.cols();
  Matrix y(rows, cols);
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    y(k / cols, k % cols) = x(k / in_cols, k % in_cols);
  }
  const int ia = a.id();
  return a.tape()->Push(std::move(y), {a}, [ia, cols, in_cols](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Matrix& acc = tp.AccumulateInto(ia);
    for (Eigen::Index k = 0; k < g.size(); ++k) {
      acc(k / in_cols, k % in_cols) += g(k / cols, k % cols);
    }
  });
}

Var ShiftRight(const Var& a) {
  if (a.rows() != 1) throw ValidationError("ShiftRight: expects a single row");
  const Eigen::Index n = a.cols();
  Matrix y = Matrix::Zero(1, n);
  if (n > 1) y.rightCols(n - 1) = a.value().leftCols(n - 1);
  const int ia = a.id();
  return a.tape()->Push(std::move(y), {a}, [ia, n](Tape& tp, int self) {
    if (n > 1) {
      tp.AccumulateInto(ia).leftCols(n - 1) += tp.grad(self).rightCols(n - 1);
    }
  });
}

Var ConvWindows(const Var& a, int width) {
  if (width < 1 || width % 2 == 0) {
    throw ValidationError("ConvWindows: width must be odd and positive");
  }
  const Matrix& x = a.value();
  const Eigen::Index len = x.rows(), ch = x.cols();
  const int half = width / 2;
  Matrix y = Matrix::Zero(len, ch * width);
  for (Eigen::Index t = 0; t < len; ++t) {
    for (int k = 0; k < width; ++k) {
      const Eigen::Index src = t + k - half;
      if (src >= 0 && src < len) y.block(t, k * ch, 1, ch) = x.row(src);
    }
  }
  const int ia = a.id();
  return a.tape()->Push(std::move(y), {a}, [ia, width, half, len, ch](Tape& tp,
                                                                     int self) {
    const Matrix& g = tp.grad(self);
    Matrix& acc = tp.AccumulateInto(ia);
    for (Eigen::Index t = 0; t < len; ++t) {
      for (int k = 0; k < width; ++k) {
        const Eigen::Index src = t + k - half;
        if (src >= 0 && src < len) acc.row(src) += g.block(t, k * ch, 1, ch);
      }
    }
  });
}

Var StackFrames(const Var& a, int k) {
  if (k < 1) throw ValidationError("StackFrames: factor must be >= 1");
  const Matrix& x = a.value();
  const Eigen::Index len = x.rows(), ch = x.cols();
  const Eigen::Index out_len = (len + k - 1) / k;
  Matrix y = Matrix::Zero(out_len, ch * k);
  for (Eigen::Index t = 0; t < len; ++t) {
    y.block(t / k, (t % k) * ch, 1, ch) = x.row(t);
  }
  const int ia = a.id();
  return a.tape()->Push(std::move(y), {a}, [ia, k, len, ch](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Matrix& acc = tp.AccumulateInto(ia);
    for (Eigen::Index t = 0; t < len; ++t) {
      acc.row(t) += g.block(t / k, (t % k) * ch, 1, ch);
    }
  });
}

Var Graph::Param(const std::string& name) {
  auto it = leaves_.find(name);
  if (it != leaves_.end()) return it->second;
  auto p = params_->find(name);
  if (p == params_->end()) {
    throw ValidationError("unknown parameter array '" + name + "'");
  }
  Var v = (!trainable_ || trainable_(name)) ? tape_->Variable(p->second)
                                             : tape_->Constant(p->second);
  leaves_.emplace(name, v);
  return v;
}

ParameterSet Graph::Gradients() const {
  ParameterSet out;
  for (const auto& [name, v] : leaves_) {
    if (tape_->requires_grad(v.id())) out.emplace(name, tape_->Grad(v));
  }
  return out;
}

}  // namespace evc::ad
