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

#include "psc/decomp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "psc/conv.hpp"

namespace psc {
namespace {

void require_rank4(const Tensor& t, const char* what) {
  if (t.rank() != 4) {
    throw ShapeError(std::string(what) + " must be J1 x J2 x J3 x C, got " + shape_to_string(t.shape()));
  }
}

// Row-major strides of a rank-4 shape.
std::array<std::size_t, 4> strides4(const Shape& s) {
  return {s[1] * s[2] * s[3], s[2] * s[3], s[3], 1};
}

}  // namespace

Axis parse_axis(int one_based) {
  if (one_based < 1 || one_based > 3) {
    throw std::invalid_argument("axis must be 1, 2 or 3, got " + std::to_string(one_based));
  }
  return static_cast<Axis>(one_based);
}

Kernel4::Kernel4(Tensor tensor) : tensor_(std::move(tensor)) {
  require_rank4(tensor_, "Kernel4");
  if (!tensor_.all_finite()) throw std::invalid_argument("Kernel4 entries must be finite");
}

Tensor Kernel4::as_weights() const {
  const Shape& s = tensor_.shape();
  Tensor w({1, s[3], s[0], s[1], s[2]});
  const std::size_t vol = s[0] * s[1] * s[2];
  for (std::size_t p = 0; p < vol; ++p)
    for (std::size_t c = 0; c < s[3]; ++c) w[c * vol + p] = tensor_[p * s[3] + c];
  return w;
}

Kernel4 Kernel4::from_weights(const Tensor& weights, std::size_t co) {
  if (weights.rank() != 5 || co >= weights.dim(0)) {
    throw ShapeError("conv weights " + shape_to_string(weights.shape()) + " have no output channel " +
                     std::to_string(co));
  }
  const Shape& s = weights.shape();
  const std::size_t vol = s[2] * s[3] * s[4];
  Tensor k({s[2], s[3], s[4], s[1]});
  for (std::size_t c = 0; c < s[1]; ++c)
    for (std::size_t p = 0; p < vol; ++p) k[p * s[1] + c] = weights[(co * s[1] + c) * vol + p];
  return Kernel4(std::move(k));
}

Matrix mode_unfold(const Tensor& t4, Axis mode) {
  require_rank4(t4, "mode_unfold input");
  const Shape& s = t4.shape();
  const std::size_t k = axis_index(mode);
  Matrix m(s[k], t4.size() / s[k]);
  std::array<std::size_t, 4> idx{};
  for (std::size_t flat = 0; flat < t4.size(); ++flat) {
    std::size_t col = 0;
    for (std::size_t a = 0; a < 4; ++a) {
      if (a != k) col = col * s[a] + idx[a];
    }
    m(idx[k], col) = t4[flat];
    for (std::size_t a = 4; a-- > 0;) {
      if (++idx[a] < s[a]) break;
      idx[a] = 0;
    }
  }
  return m;
}

Tensor mode_fold(const Matrix& m, const Shape& shape, Axis mode) {
  if (shape.size() != 4) throw ShapeError("mode_fold target must have rank 4");
  const std::size_t k = axis_index(mode);
  if (m.rows != shape[k] || m.rows * m.cols != shape_numel(shape)) {
    throw ShapeError("mode_fold: matrix does not match shape " + shape_to_string(shape));
  }
  Tensor t(shape);
  std::array<std::size_t, 4> idx{};
  for (std::size_t flat = 0; flat < t.size(); ++flat) {
    std::size_t col = 0;
    for (std::size_t a = 0; a < 4; ++a) {
      if (a != k) col = col * shape[a] + idx[a];
    }
    t[flat] = m(idx[k], col);
    for (std::size_t a = 4; a-- > 0;) {
      if (++idx[a] < shape[a]) break;
      idx[a] = 0;
    }
  }
  return t;
}

Tensor mode_product(const Tensor& t4, const Matrix& m, Axis mode) {
  require_rank4(t4, "mode_product input");
  const std::size_t k = axis_index(mode);
  if (m.cols != t4.dim(k)) {
    throw ShapeError("mode_product: matrix has " + std::to_string(m.cols) + " columns, mode " +
                     std::to_string(k + 1) + " has extent " + std::to_string(t4.dim(k)));
  }
  Shape out_shape = t4.shape();
  out_shape[k] = m.rows;
  return mode_fold(m * mode_unfold(t4, mode), out_shape, mode);
}

HosvdFactors hosvd(const Kernel4& kernel) {
  const Tensor& a = kernel.tensor();
  HosvdFactors f;
  for (std::size_t k = 0; k < 3; ++k) {
    const Axis ax = axis_from_index(k);
    Svd d = svd(mode_unfold(a, ax));
    const Matrix u = complete_orthonormal_columns(d.u);
    f.modes[k] = u.transposed();
    d.sigma.resize(u.rows, 0.0);
    f.singular_values[k] = std::move(d.sigma);
  }
  Tensor core = a;
  for (std::size_t k = 0; k < 3; ++k) core = mode_product(core, f.modes[k], axis_from_index(k));
  f.core = std::move(core);
  return f;
}

Tensor reconstruct(const HosvdFactors& factors) {
  Tensor t = factors.core;
  for (std::size_t k = 0; k < 3; ++k) t = mode_product(t, factors.modes[k].transposed(), axis_from_index(k));
  return t;
}

TruncatedDecomposition truncated_decompose(const Kernel4& kernel, const std::array<std::size_t, 3>& ranks) {
  for (std::size_t k = 0; k < 3; ++k) {
    const std::size_t j = kernel.extent(axis_from_index(k));
    if (ranks[k] < 1 || ranks[k] > j) {
      throw std::invalid_argument("rank " + std::to_string(ranks[k]) + " for mode " + std::to_string(k + 1) +
                                  " outside [1, " + std::to_string(j) + "]");
    }
  }
  HosvdFactors full = hosvd(kernel);
  TruncatedDecomposition out;
  Tensor core = kernel.tensor();
  for (std::size_t k = 0; k < 3; ++k) {
    out.factors.modes[k] = full.modes[k].top_rows(ranks[k]);
    out.factors.singular_values[k] = full.singular_values[k];
    core = mode_product(core, out.factors.modes[k], axis_from_index(k));
  }
  out.factors.core = std::move(core);
  out.frob_error = relative_error(reconstruct(out.factors), kernel.tensor());
  return out;
}

std::array<std::vector<std::size_t>, 3> SlabAssignment::groups() const {
  std::array<std::vector<std::size_t>, 3> g;
  for (std::size_t l = 0; l < entries.size(); ++l) g[axis_index(entries[l].axis)].push_back(l);
  return g;
}

namespace {

// Per spatial core position, whether any channel entry is nonzero.
std::vector<bool> nonzero_positions(const Tensor& core) {
  const Shape& s = core.shape();
  const double cutoff = kCoreZeroTolerance * frobenius_norm(core);
  const std::size_t positions = s[0] * s[1] * s[2];
  std::vector<bool> nz(positions, false);
  for (std::size_t p = 0; p < positions; ++p)
    for (std::size_t c = 0; c < s[3]; ++c)
      if (std::abs(core[p * s[3] + c]) > cutoff) nz[p] = true;
  return nz;
}

bool contains(const SlabEntry& e, std::size_t i1, std::size_t i2, std::size_t i3) {
  const std::array<std::size_t, 3> i{i1, i2, i3};
  return i[axis_index(e.axis)] == e.index;
}

// Owner entry per spatial core position, or -1.
std::vector<long> slab_owners(const Shape& s, const std::vector<SlabEntry>& entries) {
  std::vector<long> owner(s[0] * s[1] * s[2], -1);
  std::size_t p = 0;
  for (std::size_t i1 = 0; i1 < s[0]; ++i1)
    for (std::size_t i2 = 0; i2 < s[1]; ++i2)
      for (std::size_t i3 = 0; i3 < s[2]; ++i3, ++p)
        for (std::size_t l = 0; l < entries.size(); ++l)
          if (contains(entries[l], i1, i2, i3)) {
            owner[p] = static_cast<long>(l);
            break;
          }
  return owner;
}

}  // namespace

void validate_assignment(const HosvdFactors& factors, const SlabAssignment& assignment) {
  const Shape& s = factors.core.shape();
  require_rank4(factors.core, "core");
  for (std::size_t l = 0; l < assignment.entries.size(); ++l) {
    const auto& e = assignment.entries[l];
    const int a = static_cast<int>(e.axis);
    if (a < 1 || a > 3) throw std::invalid_argument("slab " + std::to_string(l) + " has invalid axis");
    if (e.index >= s[axis_index(e.axis)]) {
      throw std::invalid_argument("slab " + std::to_string(l) + " index " + std::to_string(e.index) +
                                  " out of range on axis " + std::to_string(a));
    }
    for (std::size_t prev = 0; prev < l; ++prev) {
      if (assignment.entries[prev] == e) {
        throw std::invalid_argument("slab (" + std::to_string(a) + ", " + std::to_string(e.index) +
                                    ") assigned more than once");
      }
    }
  }
  const auto nz = nonzero_positions(factors.core);
  const auto owner = slab_owners(s, assignment.entries);
  for (std::size_t p = 0; p < nz.size(); ++p) {
    if (nz[p] && owner[p] < 0) {
      const std::size_t i3 = p % s[2];
      const std::size_t i2 = (p / s[2]) % s[1];
      const std::size_t i1 = p / (s[1] * s[2]);
      throw std::invalid_argument("slab assignment does not cover nonzero core entry (" + std::to_string(i1) +
                                  ", " + std::to_string(i2) + ", " + std::to_string(i3) + ")");
    }
  }
}

SlabAssignment default_assignment(const HosvdFactors& factors) {
  const Shape& s = factors.core.shape();
  const auto nz = nonzero_positions(factors.core);
  SlabAssignment out;
  std::array<std::size_t, 3> next{0, 0, 0};
  auto covered = [&] {
    const auto owner = slab_owners(s, out.entries);
    for (std::size_t p = 0; p < nz.size(); ++p)
      if (nz[p] && owner[p] < 0) return false;
    return true;
  };
  std::size_t axis = 0;
  while (!covered()) {
    if (next[axis] < s[axis]) {
      out.entries.push_back({axis_from_index(axis), next[axis]});
      ++next[axis];
    }
    axis = (axis + 1) % 3;
  }
  return out;
}

Kernel4 SeparableKernel::compose() const {
  const std::size_t k = axis_index(axis);
  Shape shape = rest.shape();
  if (shape.size() != 4 || shape[k] != 1 || vec.rank() != 1) {
    throw ShapeError("separable kernel rest " + shape_to_string(rest.shape()) + " must have extent 1 on axis " +
                     std::to_string(k + 1));
  }
  shape[k] = vec.size();
  Tensor out(shape);
  const auto rst = strides4(rest.shape());
  std::array<std::size_t, 4> idx{};
  for (std::size_t flat = 0; flat < out.size(); ++flat) {
    std::size_t roff = 0;
    for (std::size_t a = 0; a < 4; ++a) roff += (a == k ? 0 : idx[a]) * rst[a];
    out[flat] = vec[idx[k]] * rest[roff];
    for (std::size_t a = 4; a-- > 0;) {
      if (++idx[a] < shape[a]) break;
      idx[a] = 0;
    }
  }
  return Kernel4(std::move(out));
}

Tensor SeparableKernel::vec_weights() const {
  Shape s{1, 1, 1, 1, 1};
  s[2 + axis_index(axis)] = vec.size();
  return vec.reshaped(s);
}

Tensor SeparableKernel::rest_weights() const { return Kernel4(rest).as_weights(); }

SlabDecomposition slab_decompose(const HosvdFactors& factors, const SlabAssignment& assignment) {
  validate_assignment(factors, assignment);
  const Shape& s = factors.core.shape();
  const auto owner = slab_owners(s, assignment.entries);
  SlabDecomposition out;
  for (std::size_t l = 0; l < assignment.entries.size(); ++l) {
    const auto& e = assignment.entries[l];
    const std::size_t k = axis_index(e.axis);
    Shape slice_shape = s;
    slice_shape[k] = 1;
    Tensor slice(slice_shape);
    const auto sst = strides4(slice_shape);
    double energy = 0.0;
    std::size_t p = 0;
    for (std::size_t i1 = 0; i1 < s[0]; ++i1)
      for (std::size_t i2 = 0; i2 < s[1]; ++i2)
        for (std::size_t i3 = 0; i3 < s[2]; ++i3, ++p) {
          if (owner[p] != static_cast<long>(l)) continue;
          std::array<std::size_t, 3> i{i1, i2, i3};
          i[k] = 0;
          for (std::size_t c = 0; c < s[3]; ++c) {
            const double v = factors.core[p * s[3] + c];
            slice[i[0] * sst[0] + i[1] * sst[1] + i[2] * sst[2] + c] = v;
            energy += v * v;
          }
        }
    for (std::size_t o = 0; o < 3; ++o) {
      if (o != k) slice = mode_product(slice, factors.modes[o].transposed(), axis_from_index(o));
    }
    const Matrix& u = factors.modes[k];
    Tensor vec({u.cols});
    for (std::size_t j = 0; j < u.cols; ++j) vec[j] = u(e.index, j);
    out.kernels.push_back({e.axis, std::move(vec), std::move(slice)});
    out.energy.push_back(energy);
  }
  return out;
}

Tensor sum_separable(std::span<const SeparableKernel> kernels) {
  if (kernels.empty()) throw std::invalid_argument("sum_separable needs at least one kernel");
  Tensor total = kernels.front().compose().tensor();
  for (std::size_t l = 1; l < kernels.size(); ++l) total += kernels[l].compose().tensor();
  return total;
}

ChainCheck verify_separable_chain(const SeparableKernel& kernel, const Tensor& input) {
  const Kernel4 composed = kernel.compose();
  const Shape& ks = composed.tensor().shape();
  ConvSpec full;
  full.kernel = {ks[0], ks[1], ks[2]};
  full.in_channels = ks[3];
  full.out_channels = 1;

  ConvSpec plane = full;
  plane.kernel[axis_index(kernel.axis)] = 1;
  ConvSpec line;
  line.kernel = {1, 1, 1};
  line.kernel[axis_index(kernel.axis)] = kernel.vec.size();

  ChainCheck out;
  out.lhs = conv_forward(input, composed.as_weights(), nullptr, full);
  out.rhs = conv_forward(conv_forward(input, kernel.rest_weights(), nullptr, plane), kernel.vec_weights(), nullptr,
                         line);
  out.max_abs_diff = max_abs_diff(out.lhs, out.rhs);
  return out;
}

Tensor full_convolve_1d(const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || b.rank() != 1) throw ShapeError("full_convolve_1d expects vectors");
  Tensor c({a.size() + b.size() - 1});
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) c[i + j] += a[i] * b[j];
  return c;
}

FusedChain fuse_consecutive(const SeparableKernel& a, const SeparableKernel& b) {
  if (a.axis != b.axis) {
    throw std::invalid_argument("fuse_consecutive: kernels are separable along different axes (" +
                                std::to_string(static_cast<int>(a.axis)) + " vs " +
                                std::to_string(static_cast<int>(b.axis)) + ")");
  }
  if (a.rest.rank() != 4 || b.rest.rank() != 4 || a.rest.dim(3) != 1 || b.rest.dim(3) != 1) {
    throw std::invalid_argument(
        "fuse_consecutive: only single-channel kernels compose directly; multichannel layers mix channels "
        "between the two convolutions");
  }
  FusedChain out;
  out.axis = a.axis;
  out.composed_1d = full_convolve_1d(a.vec, b.vec);
  Shape line{1, 1, 1, 1};
  line[axis_index(a.axis)] = out.composed_1d.size();
  out.chain = {out.composed_1d.reshaped(line), a.rest, b.rest};
  return out;
}

Tensor apply_chain(std::span<const Tensor> chain, const Tensor& input) {
  Tensor x = input;
  for (const auto& k4 : chain) {
    const Kernel4 k(k4);
    if (k.channels() != 1) throw std::invalid_argument("apply_chain expects single-channel kernels");
    ConvSpec spec;
    spec.kernel = {k4.dim(0), k4.dim(1), k4.dim(2)};
    x = conv_forward(x, k.as_weights(), nullptr, spec);
  }
  return x;
}

}  // namespace psc
