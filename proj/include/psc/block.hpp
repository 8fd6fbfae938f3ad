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

// Parallel separable convolution blocks: m streams, each a stack of n planar
// (d x d x 1) convolutions with ReLU after each, closed by one d-tap line
// convolution along the axis the planes leave untouched. Stream outputs are
// concatenated along channels.

#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <vector>

#include "psc/conv.hpp"
#include "psc/decomp.hpp"
#include "psc/tensor.hpp"

namespace psc {

/// Sub-space filter count that matches a k_prev -> k_i, d^3 convolution:
/// floor(k_i k_prev d^3 / (k_prev d^2 + k_i d)), at least 1.
std::size_t compute_M(std::size_t k_i, std::size_t k_prev, std::size_t d);

struct PscBlockSpec {
  int m = 1;
  int n = 1;
  std::size_t d = 3;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t M = 1;
  std::size_t s = 1;
  std::size_t per_stream_filters = 1;
  std::vector<std::size_t> per_stream_out;
  /// Line-convolution axis of each stream; the planar convs span the other two.
  std::vector<Axis> orientations;
  /// In-plane components go to the first planar conv, the axis component to the line conv.
  Extent3 stride{1, 1, 1};
  Extent3 padding{1, 1, 1};

  /// Throws std::invalid_argument when an invariant is broken.
  void validate() const;

  ConvSpec plane_conv(std::size_t stream, std::size_t layer) const;
  ConvSpec line_conv(std::size_t stream) const;

  friend bool operator==(const PscBlockSpec&, const PscBlockSpec&) = default;
};

/// The two axes spanned by the planar convs of a stream with line axis `axis`.
std::array<Axis, 2> plane_axes(Axis axis);

struct BuildOptions {
  /// Give every stream the full M filters instead of M / m (then s = 1).
  bool full_M_per_stream = false;
  Extent3 stride{1, 1, 1};
  /// Defaults to (d - 1) / 2 on every axis.
  std::optional<Extent3> padding;
};

PscBlockSpec build_block(int m, int n, std::size_t d, std::size_t in_ch, std::size_t out_ch,
                         const BuildOptions& options = {});

std::size_t block_param_count(const PscBlockSpec& spec);

struct StreamWeights {
  std::vector<Tensor> planes;  // n tensors
  Tensor line;
  Tensor bias;  // [per_stream_out]
};

struct BlockWeights {
  std::vector<StreamWeights> streams;

  std::size_t param_count() const;
  /// Flattened view in a fixed order (stream, planes, line, bias).
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
};

/// Zero-filled weights shaped for `spec`.
BlockWeights zero_block_weights(const PscBlockSpec& spec);
/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]; biases zero.
BlockWeights init_block_weights(const PscBlockSpec& spec, Rng& rng);
void check_block_weights(const PscBlockSpec& spec, const BlockWeights& weights);

struct BlockForwardOptions {
  /// Test hook: false replaces every ReLU by the identity.
  bool relu = true;
  /// Test hook: sum the streams instead of concatenating (needs equal per_stream_out).
  bool sum_streams = false;
};

Tensor block_forward(const PscBlockSpec& spec, const BlockWeights& weights, const Tensor& input,
                     const BlockForwardOptions& options = {});

/// Smallest |value| entering any ReLU of the block. Finite-difference checks
/// are only meaningful when this exceeds the perturbation's effect.
double block_min_preactivation(const PscBlockSpec& spec, const BlockWeights& weights, const Tensor& input);

struct BlockGrads {
  Tensor input;
  BlockWeights weights;
};

BlockGrads block_backward(const PscBlockSpec& spec, const BlockWeights& weights, const Tensor& input,
                          const Tensor& grad_output);

}  // namespace psc
