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

// Volumetric convolution primitives on [batch, channel, d1, d2, d3] tensors.
// Convolution is cross-correlation (no kernel flip) with zero padding.

#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "psc/tensor.hpp"

namespace psc {

using Extent3 = std::array<std::size_t, 3>;

enum class ConvKind { kPointwise, k1D, k2D, k3D };

const char* to_string(ConvKind kind);

struct ConvSpec {
  Extent3 kernel{1, 1, 1};
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  Extent3 stride{1, 1, 1};
  Extent3 padding{0, 0, 0};
  bool bias = false;

  /// Classified by how many spatial extents equal 1.
  ConvKind kind() const;
  void validate() const;
  Shape weight_shape() const;
  std::size_t param_count() const;

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

/// floor((D + 2p - J) / s) + 1 per axis; throws on zero-size output.
Extent3 conv_output_extent(const ConvSpec& spec, const Extent3& input_extent);

Extent3 spatial_extent(const Tensor& volume);

/// input [N, C_in, D1, D2, D3], weights [C_out, C_in, J1, J2, J3], bias [C_out] or null.
Tensor conv_forward(const Tensor& input, const Tensor& weights, const Tensor* bias, const ConvSpec& spec);

struct ConvGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

/// Gradients of sum(grad_output * conv_forward(input, weights, bias)).
ConvGrads conv_backward(const Tensor& grad_output, const Tensor& input, const Tensor& weights,
                        const ConvSpec& spec);

Tensor relu_forward(const Tensor& x);
Tensor relu_backward(const Tensor& grad, const Tensor& x);

Tensor concat_channels(std::span<const Tensor> parts);
/// Channels [begin, begin + count) of a 5D tensor.
Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count);

Tensor maxpool3d(const Tensor& x, const Extent3& window, const Extent3& stride);
/// Routes each output gradient to the first maximal element of its window.
Tensor maxpool3d_backward(const Tensor& grad, const Tensor& x, const Extent3& window, const Extent3& stride);

Tensor upsample_nearest(const Tensor& x, const Extent3& factor);
Tensor upsample_nearest_backward(const Tensor& grad, const Extent3& factor);

using ScalarFn = std::function<double(const Tensor&)>;

/// Central differences (f(x + eps e_i) - f(x - eps e_i)) / 2eps per component.
Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double eps);

/// max_i |a_i - n_i| / max(|a_i|, |n_i|, floor), floor = 1e-3 * max|n| + 1e-12.
/// The floor keeps components far below the gradient's scale from dominating.
double gradient_check_error(const Tensor& analytic, const Tensor& numeric);

}  // namespace psc
