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

// Reverse-mode differentiation over dense double matrices.
//
// A Tape records every operation applied to its Vars. Calling Backward on a
// 1x1 Var walks the tape in reverse creation order, which is always a valid
// topological order. Vars are cheap handles (tape pointer + index) and stay
// valid for the lifetime of the tape.

#ifndef EVC_AUTODIFF_H_
#define EVC_AUTODIFF_H_

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "evc/common.h"

namespace evc::ad {

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int)>;

  Tape() { nodes_.reserve(1024); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var Constant(Matrix value);
  // Leaf whose gradient is tracked.
  Var Variable(Matrix value);

  // Seeds d(root)/d(root) = 1 and propagates. May be called more than once
  // on the same tape; gradients are reset first.
  void Backward(const Var& root);

  // Gradient of the last Backward root with respect to v (zeros if v did not
  // influence it).
  Matrix Grad(const Var& v) const;

  size_t size() const { return nodes_.size(); }

  // Used by operation implementations.
  Var Push(Matrix value, std::initializer_list<Var> parents, BackwardFn fn);
  Var Push(Matrix value, const std::vector<Var>& parents, BackwardFn fn);
  const Matrix& value(int id) const { return nodes_[id].value; }
  const Matrix& grad(int id) const { return nodes_[id].grad; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  // Accumulation target for a parent's gradient, zero-initialised on first
  // touch.
  Matrix& AccumulateInto(int id);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }

// Elementwise and linear algebra.
Var MatMul(const Var& a, const Var& b);
Var Add(const Var& a, const Var& b);
Var Sub(const Var& a, const Var& b);
Var Mul(const Var& a, const Var& b);
Var Scale(const Var& a, double s);
Var AddScalar(const Var& a, double s);
// Multiplies every entry of a by the 1x1 Var s.
Var MulScalar(const Var& a, const Var& s);
// Adds the 1xC row to every row of a.
Var AddRow(const Var& a, const Var& row);
Var Transpose(const Var& a);

// Nonlinearities.
Var Tanh(const Var& a);
Var Sigmoid(const Var& a);
Var Exp(const Var& a);
// log(max(a, floor)); gradient is zero where the floor is active.
Var Log(const Var& a, double floor);
Var Abs(const Var& a);
Var Square(const Var& a);
Var SoftmaxRows(const Var& a);
// (a + eps) / rowsum(a + eps).
Var NormalizeRows(const Var& a, double eps);

// Reductions.
Var Sum(const Var& a);
Var Mean(const Var& a);
// 1xC mean over rows.
Var MeanRows(const Var& a);

// Structural.
Var ConcatCols(const std::vector<Var>& parts);
Var ConcatRows(const std::vector<Var>& parts);
Var SliceRows(const Var& a, Eigen::Index start, Eigen::Index count);
Var SliceCols(const Var& a, Eigen::Index start, Eigen::Index count);
Var GatherRows(const Var& table, const std::vector<int>& ids);
// Row-major reshape.
Var Reshape(const Var& a, Eigen::Index rows, Eigen::Index cols);
// For a 1xL row: out[0] = 0, out[j] = a[j-1].
Var ShiftRight(const Var& a);
// LxC -> Lx(C*width): row t holds rows t-width/2 .. t+width/2 of a, zero
// padded at the edges. A convolution is then a MatMul.
Var ConvWindows(const Var& a, int width);
// TxC -> ceil(T/k) x (k*C): concatenates k consecutive rows, zero padding the
// tail.
Var StackFrames(const Var& a, int k);

// Named parameter arrays. std::map keeps iteration order stable, which the
// optimizer and checkpoint formats rely on.
using ParameterSet = std::map<std::string, Matrix>;

// Binds a ParameterSet to a tape. Each parameter becomes a leaf the first
// time it is requested.
class Graph {
 public:
  Graph(Tape* tape, const ParameterSet* params) : tape_(tape), params_(params) {}

  // Parameters rejected by the filter are bound as constants, so no
  // gradient is computed for them. Must be set before the first Param call.
  void SetTrainable(std::function<bool(const std::string&)> filter) {
    trainable_ = std::move(filter);
  }

  Var Param(const std::string& name);
  Var Constant(Matrix value) { return tape_->Constant(std::move(value)); }
  Tape& tape() { return *tape_; }
  const ParameterSet& params() const { return *params_; }
  bool Has(const std::string& name) const { return params_->count(name) > 0; }

  // Gradients for every trainable parameter touched on this tape after
  // Backward.
  ParameterSet Gradients() const;

 private:
  Tape* tape_;
  const ParameterSet* params_;
  std::map<std::string, Var> leaves_;
  std::function<bool(const std::string&)> trainable_;
};

}  // namespace evc::ad

#endif  // EVC_AUTODIFF_H_
