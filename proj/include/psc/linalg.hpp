// Copyright 2026 The PSC Authors. All Rights Reserved.
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

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace psc {

/// Row-major dense matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  static Matrix identity(std::size_t n);

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  Matrix transposed() const;
  /// First `count` rows.
  Matrix top_rows(std::size_t count) const;

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

Matrix operator*(const Matrix& a, const Matrix& b);
double frobenius_norm(const Matrix& m);
/// max |M Mt - I| over all entries.
double row_orthonormality_error(const Matrix& m);
/// max |Mt M - I| over all entries.
double column_orthonormality_error(const Matrix& m);

class SvdError : public std::runtime_error {
 public:
  SvdError(const std::string& what, double residual) : std::runtime_error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// Thin SVD: A (m x n) = U diag(sigma) Vt with r = min(m, n),
/// U m x r, V n x r, both with orthonormal columns, sigma nonincreasing.
struct Svd {
  Matrix u;
  std::vector<double> sigma;
  Matrix v;
};

struct SvdOptions {
  int max_sweeps = 100;
  double tolerance = 1e-12;
};

/// One-sided Jacobi on the side with the smaller Gram matrix. Each left
/// singular vector is signed so its largest-magnitude entry is nonnegative.
Svd svd(const Matrix& a, const SvdOptions& options = {});

/// Extends the orthonormal columns of `basis` to a square orthogonal matrix.
Matrix complete_orthonormal_columns(const Matrix& basis);

}  // namespace psc
