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

#ifndef EVC_COMMON_H_
#define EVC_COMMON_H_

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace evc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

// Bad input or violated precondition. The CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed record in a text file; the message names the line.
class ParseError : public ValidationError {
 public:
  ParseError(const std::string& file, int line, const std::string& what)
      : ValidationError(file + ":" + std::to_string(line) + ": " + what),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

// Not enough records to satisfy a split quota.
class QuotaError : public ValidationError {
 public:
  QuotaError(const std::string& emotion, const std::string& what)
      : ValidationError(what), emotion_(emotion) {}
  const std::string& emotion() const { return emotion_; }

 private:
  std::string emotion_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite loss or gradient during training.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Portable seeded generator. The distributions are implemented here rather
// than with <random> distributions so draws are identical across standard
// libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t NextU64();
  // Uniform in [0, 1).
  double Uniform();
  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }
  double Normal();
  // Uniform integer in [0, n).
  uint64_t Below(uint64_t n);
  template <typename T>
  void Shuffle(std::vector<T>* v) {
    for (size_t i = v->size(); i > 1; --i) {
      size_t j = static_cast<size_t>(Below(i));
      std::swap((*v)[i - 1], (*v)[j]);
    }
  }

 private:
  uint64_t state_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Derives an independent stream seed from a base seed and a tag.
uint64_t DeriveSeed(uint64_t base, std::string_view tag);

// 64-bit FNV-1a.
uint64_t Fnv1a(std::string_view data, uint64_t h = 0xcbf29ce484222325ULL);
uint64_t HashMatrix(const Matrix& m, uint64_t h = 0xcbf29ce484222325ULL);
std::string HexDigest(uint64_t h);

bool AllFinite(const Matrix& m);

}  // namespace evc

#endif  // EVC_COMMON_H_
