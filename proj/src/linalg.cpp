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

#include "psc/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace psc {

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::transposed() const {
  Matrix t(cols, rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Matrix Matrix::top_rows(std::size_t count) const {
  if (count > rows) throw std::invalid_argument("top_rows: count exceeds row count");
  Matrix m(count, cols);
  std::copy(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(count * cols), m.data.begin());
  return m;
}

Matrix operator*(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw std::invalid_argument("matrix product: inner dimensions differ");
  Matrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols; ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

double frobenius_norm(const Matrix& m) {
  double s = 0.0;
  for (double v : m.data) s += v * v;
  return std::sqrt(s);
}

double row_orthonormality_error(const Matrix& m) {
  const Matrix g = m * m.transposed();
  double err = 0.0;
  for (std::size_t i = 0; i < g.rows; ++i)
    for (std::size_t j = 0; j < g.cols; ++j) err = std::max(err, std::abs(g(i, j) - (i == j ? 1.0 : 0.0)));
  return err;
}

double column_orthonormality_error(const Matrix& m) { return row_orthonormality_error(m.transposed()); }

namespace {

// Orthonormalizes unit vector e_j against the columns already in `q` (two
// Gram-Schmidt passes); returns false when e_j lies in their span.
bool orthonormal_candidate(const Matrix& q, std::size_t filled, std::size_t j, std::vector<double>& out) {
  const std::size_t m = q.rows;
  out.assign(m, 0.0);
  out[j] = 1.0;
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t c = 0; c < filled; ++c) {
      double proj = 0.0;
      for (std::size_t r = 0; r < m; ++r) proj += q(r, c) * out[r];
      for (std::size_t r = 0; r < m; ++r) out[r] -= proj * q(r, c);
    }
  }
  double norm = 0.0;
  for (double v : out) norm += v * v;
  norm = std::sqrt(norm);
  if (norm < 1e-8) return false;
  for (double& v : out) v /= norm;
  return true;
}

// Replaces the columns flagged in `missing` with vectors orthonormal to the rest.
void fill_missing_columns(Matrix& q, const std::vector<bool>& missing) {
  // Move valid columns to the front so candidates are orthogonalized against them.
  std::vector<std::size_t> order;
  for (std::size_t c = 0; c < q.cols; ++c)
    if (!missing[c]) order.push_back(c);
  Matrix packed(q.rows, q.cols);
  std::size_t filled = 0;
  for (auto c : order) {
    for (std::size_t r = 0; r < q.rows; ++r) packed(r, filled) = q(r, c);
    ++filled;
  }
  std::vector<double> cand;
  std::size_t next_unit = 0;
  for (std::size_t c = 0; c < q.cols; ++c) {
    if (!missing[c]) continue;
    while (next_unit < q.rows && !orthonormal_candidate(packed, filled, next_unit, cand)) ++next_unit;
    if (next_unit >= q.rows) throw std::logic_error("cannot complete orthonormal basis");
    ++next_unit;
    for (std::size_t r = 0; r < q.rows; ++r) {
      packed(r, filled) = cand[r];
      q(r, c) = cand[r];
    }
    ++filled;
  }
}

// Jacobi on the columns of b (m x k, m >= k); returns sigma and V (k x k);
// b is overwritten with U * diag(sigma).
void one_sided_jacobi(Matrix& b, Matrix& v, const SvdOptions& options) {
  const std::size_t m = b.rows;
  const std::size_t k = b.cols;
  v = Matrix::identity(k);
  double worst = 0.0;
  for (int sweep = 0; sweep < options.max_sweeps; ++sweep) {
    bool rotated = false;
    worst = 0.0;
    for (std::size_t p = 0; p + 1 < k; ++p) {
      for (std::size_t q = p + 1; q < k; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t r = 0; r < m; ++r) {
          const double bp = b(r, p);
          const double bq = b(r, q);
          alpha += bp * bp;
          beta += bq * bq;
          gamma += bp * bq;
        }
        if (gamma == 0.0) continue;
        const double off = std::abs(gamma) / std::sqrt(alpha * beta);
        worst = std::max(worst, off);
        if (off <= options.tolerance) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t r = 0; r < m; ++r) {
          const double bp = b(r, p);
          const double bq = b(r, q);
          b(r, p) = c * bp - s * bq;
          b(r, q) = s * bp + c * bq;
        }
        for (std::size_t r = 0; r < k; ++r) {
          const double vp = v(r, p);
          const double vq = v(r, q);
          v(r, p) = c * vp - s * vq;
          v(r, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) return;
  }
  throw SvdError("Jacobi SVD did not converge in " + std::to_string(options.max_sweeps) +
                     " sweeps; max off-diagonal ratio " + std::to_string(worst),
                 worst);
}

}  // namespace

Matrix complete_orthonormal_columns(const Matrix& basis) {
  Matrix q(basis.rows, basis.rows);
  std::vector<bool> missing(basis.rows, true);
  for (std::size_t c = 0; c < basis.cols; ++c) {
    for (std::size_t r = 0; r < basis.rows; ++r) q(r, c) = basis(r, c);
    missing[c] = false;
  }
  fill_missing_columns(q, missing);
  return q;
}

Svd svd(const Matrix& a, const SvdOptions& options) {
  for (double v : a.data) {
    if (!std::isfinite(v)) throw SvdError("svd: matrix has non-finite entries", 0.0);
  }
  const bool transpose = a.rows < a.cols;
  Matrix b = transpose ? a.transposed() : a;
  Matrix v;
  one_sided_jacobi(b, v, options);

  const std::size_t m = b.rows;
  const std::size_t k = b.cols;
  std::vector<double> norms(k);
  for (std::size_t c = 0; c < k; ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < m; ++r) s += b(r, c) * b(r, c);
    norms[c] = std::sqrt(s);
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

  const double smax = k ? norms[order[0]] : 0.0;
  const double cutoff = smax * 1e-14;
  Matrix left(m, k);
  Matrix right(k, k);
  std::vector<double> sigma(k);
  std::vector<bool> missing(k, false);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t c = order[i];
    const bool zero = norms[c] <= cutoff || norms[c] == 0.0;
    sigma[i] = zero ? 0.0 : norms[c];
    missing[i] = zero;
    for (std::size_t r = 0; r < m; ++r) left(r, i) = zero ? 0.0 : b(r, c) / norms[c];
    for (std::size_t r = 0; r < k; ++r) right(r, i) = v(r, c);
  }
  fill_missing_columns(left, missing);

  Svd out;
  out.sigma = std::move(sigma);
  if (transpose) {
    out.u = std::move(right);
    out.v = std::move(left);
  } else {
    out.u = std::move(left);
    out.v = std::move(right);
  }
  // Sign convention on the left singular vectors.
  for (std::size_t c = 0; c < out.u.cols; ++c) {
    std::size_t best = 0;
    for (std::size_t r = 1; r < out.u.rows; ++r) {
      if (std::abs(out.u(r, c)) > std::abs(out.u(best, c))) best = r;
    }
    if (out.u(best, c) < 0.0) {
      for (std::size_t r = 0; r < out.u.rows; ++r) out.u(r, c) = -out.u(r, c);
      for (std::size_t r = 0; r < out.v.rows; ++r) out.v(r, c) = -out.v(r, c);
    }
  }
  return out;
}

}  // namespace psc
