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

// Tucker/HOSVD factorization of J1 x J2 x J3 x C convolution kernels over the
// three spatial modes, slab splitting of the core tensor into separable
// kernels, and the algebraic identities that connect separable kernels with
// chains of lower-dimensional convolutions.

#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "psc/linalg.hpp"
#include "psc/tensor.hpp"

namespace psc {

/// Spatial axis of a volume or kernel. Values match the 1-based mode numbers.
enum class Axis : int { d1 = 1, d2 = 2, d3 = 3 };

constexpr std::size_t axis_index(Axis a) { return static_cast<std::size_t>(a) - 1; }
constexpr Axis axis_from_index(std::size_t i) { return static_cast<Axis>(static_cast<int>(i) + 1); }
/// Throws on values outside 1..3.
Axis parse_axis(int one_based);

/// J1 x J2 x J3 x C kernel (channel last) producing one output channel.
class Kernel4 {
 public:
  explicit Kernel4(Tensor tensor);

  const Tensor& tensor() const noexcept { return tensor_; }
  std::size_t extent(Axis a) const { return tensor_.dim(axis_index(a)); }
  std::size_t channels() const { return tensor_.dim(3); }

  /// As conv weights [1, C, J1, J2, J3].
  Tensor as_weights() const;
  /// Output channel `co` of conv weights [C_out, C_in, J1, J2, J3].
  static Kernel4 from_weights(const Tensor& weights, std::size_t co = 0);

 private:
  Tensor tensor_;
};

/// Mode matrices U(k) are I_k x J_k with orthonormal rows; the core is I1 x I2 x I3 x C.
struct HosvdFactors {
  std::array<Matrix, 3> modes;
  std::array<std::vector<double>, 3> singular_values;
  Tensor core;

  std::array<std::size_t, 3> ranks() const { return {modes[0].rows, modes[1].rows, modes[2].rows}; }
  const Matrix& mode(Axis a) const { return modes[axis_index(a)]; }
};

/// Matrix J_mode x (remaining extents x C) whose rows are the mode fibers.
Matrix mode_unfold(const Tensor& t4, Axis mode);
Tensor mode_fold(const Matrix& m, const Shape& shape, Axis mode);

/// Multiplies spatial mode `mode` of a rank-4 tensor by `m` (rows x extent).
Tensor mode_product(const Tensor& t4, const Matrix& m, Axis mode);

HosvdFactors hosvd(const Kernel4& kernel);
Tensor reconstruct(const HosvdFactors& factors);

struct TruncatedDecomposition {
  HosvdFactors factors;
  double frob_error = 0.0;  // ||A - A_hat|| / ||A||
};

/// Keeps the leading ranks[k] singular vectors of each spatial mode.
TruncatedDecomposition truncated_decompose(const Kernel4& kernel, const std::array<std::size_t, 3>& ranks);

/// Slab (alpha, beta): the core entries whose index along axis alpha is beta.
struct SlabEntry {
  Axis axis = Axis::d1;
  std::size_t index = 0;  // 0-based

  friend bool operator==(const SlabEntry&, const SlabEntry&) = default;
};

/// Ordered slab list. Core entries lying in several listed slabs belong to the
/// first such slab, so the slab parts partition the core.
struct SlabAssignment {
  std::vector<SlabEntry> entries;

  /// Entry indices grouped by axis (the per-orientation stream groups).
  std::array<std::vector<std::size_t>, 3> groups() const;
};

/// Core entries with |s| below this fraction of ||S||_F are treated as zero
/// when checking slab coverage.
inline constexpr double kCoreZeroTolerance = 1e-12;

/// Throws std::invalid_argument for duplicate or out-of-range slabs or when a
/// nonzero core entry lies in no slab.
void validate_assignment(const HosvdFactors& factors, const SlabAssignment& assignment);

/// Round-robin over axes 1, 2, 3, each turn taking that axis's next slab in
/// descending singular-value order, until the nonzero core is covered.
SlabAssignment default_assignment(const HosvdFactors& factors);

/// A J1 x J2 x J3 x C kernel written as vec (along `axis`) times rest (extent 1 on `axis`).
struct SeparableKernel {
  Axis axis = Axis::d1;
  Tensor vec;   // [J_axis]
  Tensor rest;  // J1 x J2 x J3 x C with extent 1 on axis

  /// Outer product of vec and rest.
  Kernel4 compose() const;
  /// vec as [1, 1, ...] conv weights oriented along axis.
  Tensor vec_weights() const;
  /// rest as [1, C, J1, J2, J3] conv weights.
  Tensor rest_weights() const;
};

struct SlabDecomposition {
  std::vector<SeparableKernel> kernels;
  std::vector<double> energy;  // squared Frobenius norm of each slab's core part
};

SlabDecomposition slab_decompose(const HosvdFactors& factors, const SlabAssignment& assignment);

/// Sum of the composed kernels.
Tensor sum_separable(std::span<const SeparableKernel> kernels);

struct ChainCheck {
  Tensor lhs;  // conv with the composed kernel
  Tensor rhs;  // conv with rest, then conv with vec
  double max_abs_diff = 0.0;
};

/// Compares direct convolution with the composed kernel against the 2D-then-1D
/// chain on `input` [N, C, D1, D2, D3], no padding.
ChainCheck verify_separable_chain(const SeparableKernel& kernel, const Tensor& input);

struct FusedChain {
  Tensor composed_1d;          // full 1D convolution of the two vecs
  std::vector<Tensor> chain;   // Kernel4 tensors, applied in order
  Axis axis = Axis::d1;
};

/// Single-channel fusion of two kernels separable along the same axis.
FusedChain fuse_consecutive(const SeparableKernel& a, const SeparableKernel& b);

/// Applies each Kernel4 in turn as a single-channel "valid" convolution.
Tensor apply_chain(std::span<const Tensor> chain, const Tensor& input);

/// Full (non-truncated) 1D convolution.
Tensor full_convolve_1d(const Tensor& a, const Tensor& b);

}  // namespace psc
