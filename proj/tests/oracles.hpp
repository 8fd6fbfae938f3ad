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

// Reference implementations used only by tests. Each one follows a different
// computational path than the library code it checks.

#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "psc/conv.hpp"
#include "psc/linalg.hpp"
#include "psc/tensor.hpp"

namespace psc::testing {

/// Output-major nested loops with an explicit bounds test per tap.
inline Tensor naive_conv3d(const Tensor& x, const Tensor& w, const Tensor* bias, const ConvSpec& spec) {
  const std::size_t N = x.dim(0), C = x.dim(1);
  const long D[3] = {long(x.dim(2)), long(x.dim(3)), long(x.dim(4))};
  const std::size_t F = w.dim(0);
  const long J[3] = {long(w.dim(2)), long(w.dim(3)), long(w.dim(4))};
  long O[3];
  for (int k = 0; k < 3; ++k) O[k] = (D[k] + 2 * long(spec.padding[k]) - J[k]) / long(spec.stride[k]) + 1;
  Tensor y({N, F, std::size_t(O[0]), std::size_t(O[1]), std::size_t(O[2])});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t f = 0; f < F; ++f)
      for (long a = 0; a < O[0]; ++a)
        for (long b = 0; b < O[1]; ++b)
          for (long c = 0; c < O[2]; ++c) {
            double acc = bias ? (*bias)[f] : 0.0;
            for (std::size_t ch = 0; ch < C; ++ch)
              for (long p = 0; p < J[0]; ++p)
                for (long q = 0; q < J[1]; ++q)
                  for (long r = 0; r < J[2]; ++r) {
                    const long i = a * long(spec.stride[0]) + p - long(spec.padding[0]);
                    const long j = b * long(spec.stride[1]) + q - long(spec.padding[1]);
                    const long k = c * long(spec.stride[2]) + r - long(spec.padding[2]);
                    if (i < 0 || j < 0 || k < 0 || i >= D[0] || j >= D[1] || k >= D[2]) continue;
                    acc += w.at({f, ch, std::size_t(p), std::size_t(q), std::size_t(r)}) *
                           x.at({n, ch, std::size_t(i), std::size_t(j), std::size_t(k)});
                  }
            y.at({n, f, std::size_t(a), std::size_t(b), std::size_t(c)}) = acc;
          }
  return y;
}

inline Tensor naive_maxpool(const Tensor& x, const Extent3& win, const Extent3& st) {
  const std::size_t O1 = (x.dim(2) - win[0]) / st[0] + 1;
  const std::size_t O2 = (x.dim(3) - win[1]) / st[1] + 1;
  const std::size_t O3 = (x.dim(4) - win[2]) / st[2] + 1;
  Tensor y({x.dim(0), x.dim(1), O1, O2, O3});
  for (std::size_t n = 0; n < x.dim(0); ++n)
    for (std::size_t c = 0; c < x.dim(1); ++c)
      for (std::size_t a = 0; a < O1; ++a)
        for (std::size_t b = 0; b < O2; ++b)
          for (std::size_t d = 0; d < O3; ++d) {
            double m = -INFINITY;
            for (std::size_t p = 0; p < win[0]; ++p)
              for (std::size_t q = 0; q < win[1]; ++q)
                for (std::size_t r = 0; r < win[2]; ++r)
                  m = std::max(m, x.at({n, c, a * st[0] + p, b * st[1] + q, d * st[2] + r}));
            y.at({n, c, a, b, d}) = m;
          }
  return y;
}

/// Eigenvalues of a symmetric PSD matrix by power iteration with deflation.
inline std::vector<double> power_iteration_eigenvalues(Matrix g, int iterations = 5000) {
  std::vector<double> out;
  const std::size_t n = g.rows;
  for (std::size_t e = 0; e < n; ++e) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = 1.0 + 0.1 * double(i) + 0.01 * double(e);
    double lambda = 0.0;
    for (int it = 0; it < iterations; ++it) {
      std::vector<double> w(n, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) w[i] += g(i, j) * v[j];
      double norm = 0.0;
      for (double t : w) norm += t * t;
      norm = std::sqrt(norm);
      if (norm == 0.0) {
        lambda = 0.0;
        break;
      }
      for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / norm;
      lambda = norm;
    }
    out.push_back(lambda);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) g(i, j) -= lambda * v[i] * v[j];
  }
  return out;
}

/// Cyclic two-sided Jacobi eigen-decomposition of a symmetric matrix.
/// Returns eigenvectors as columns sorted by descending eigenvalue.
inline std::pair<std::vector<double>, Matrix> symmetric_eigen(Matrix a) {
  const std::size_t n = a.rows;
  Matrix v = Matrix::identity(n);
  for (int sweep = 0; sweep < 200; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto x, auto y) { return a(x, x) > a(y, y); });
  std::vector<double> vals(n);
  Matrix vecs(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    vals[i] = a(order[i], order[i]);
    for (std::size_t k = 0; k < n; ++k) vecs(k, i) = v(k, order[i]);
  }
  return {vals, vecs};
}

}  // namespace psc::testing
