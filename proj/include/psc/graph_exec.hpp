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

#include <map>
#include <string>
#include <vector>

#include "psc/block.hpp"
#include "psc/graph.hpp"
#include "psc/tensor.hpp"

namespace psc {

struct ConvWeights {
  Tensor weights;  // [C_out, C_in, J1, J2, J3]
  Tensor bias;     // [C_out], empty when the conv has no bias
};

/// Learnable tensors of a graph, keyed by node id.
struct GraphWeights {
  std::map<std::string, ConvWeights> convs;
  std::map<std::string, BlockWeights> blocks;

  std::size_t param_count() const;
  /// Every tensor in a fixed order: convs by id (weights, bias), then blocks by id.
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
};

GraphWeights zero_graph_weights(const ModelGraph& graph);
/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per conv, biases zero; nodes visited in stored order.
GraphWeights init_graph_weights(const ModelGraph& graph, Rng& rng);

/// Every node's output from one forward pass.
struct GraphTrace {
  std::map<std::string, Tensor> values;
};

Tensor graph_forward(const ModelGraph& graph, const GraphWeights& weights, const Tensor& input,
                     GraphTrace* trace = nullptr);

struct GraphGrads {
  Tensor input;
  GraphWeights weights;
};

/// Gradients of sum(grad_output * graph_forward(...)), using the trace of that forward pass.
GraphGrads graph_backward(const ModelGraph& graph, const GraphWeights& weights, const GraphTrace& trace,
                          const Tensor& grad_output);

}  // namespace psc
