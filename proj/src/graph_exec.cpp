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

#include "psc/graph_exec.hpp"

#include <cmath>

#include "psc/conv.hpp"

namespace psc {

std::size_t GraphWeights::param_count() const {
  std::size_t n = 0;
  for (const auto& [id, c] : convs) n += c.weights.size() + c.bias.size();
  for (const auto& [id, b] : blocks) n += b.param_count();
  return n;
}

std::vector<Tensor*> GraphWeights::tensors() {
  std::vector<Tensor*> out;
  for (auto& [id, c] : convs) {
    out.push_back(&c.weights);
    if (!c.bias.empty()) out.push_back(&c.bias);
  }
  for (auto& [id, b] : blocks)
    for (Tensor* t : b.tensors()) out.push_back(t);
  return out;
}

std::vector<const Tensor*> GraphWeights::tensors() const {
  std::vector<const Tensor*> out;
  for (Tensor* t : const_cast<GraphWeights*>(this)->tensors()) out.push_back(t);
  return out;
}

GraphWeights zero_graph_weights(const ModelGraph& graph) {
  GraphWeights w;
  for (const Node& n : graph.nodes()) {
    if (n.op == OpKind::conv3d) {
      const ConvSpec& c = n.conv();
      w.convs[n.id] = {Tensor(c.weight_shape()), c.bias ? Tensor({c.out_channels}) : Tensor()};
    } else if (n.op == OpKind::psc_block) {
      w.blocks[n.id] = zero_block_weights(n.block().spec);
    }
  }
  return w;
}

GraphWeights init_graph_weights(const ModelGraph& graph, Rng& rng) {
  GraphWeights w = zero_graph_weights(graph);
  for (const Node& n : graph.nodes()) {
    if (n.op == OpKind::conv3d) {
      const ConvSpec& c = n.conv();
      const double fan_in = static_cast<double>(c.in_channels * c.kernel[0] * c.kernel[1] * c.kernel[2]);
      const double a = 1.0 / std::sqrt(fan_in);
      w.convs[n.id].weights = Tensor::random_uniform(c.weight_shape(), rng, -a, a);
    } else if (n.op == OpKind::psc_block) {
      w.blocks[n.id] = init_block_weights(n.block().spec, rng);
    }
  }
  return w;
}

namespace {

const ConvWeights& conv_weights(const GraphWeights& w, const std::string& id) {
  auto it = w.convs.find(id);
  if (it == w.convs.end()) throw GraphError(id, "weights", "no weights for conv node");
  return it->second;
}

const BlockWeights& block_weights(const GraphWeights& w, const std::string& id) {
  auto it = w.blocks.find(id);
  if (it == w.blocks.end()) throw GraphError(id, "weights", "no weights for psc_block node");
  return it->second;
}

}  // namespace

Tensor graph_forward(const ModelGraph& graph, const GraphWeights& weights, const Tensor& input,
                     GraphTrace* trace) {
  GraphTrace local;
  GraphTrace& t = trace ? *trace : local;
  t.values.clear();
  for (std::size_t i : graph.topo_order()) {
    const Node& n = graph.nodes()[i];
    auto in = [&](std::size_t k) -> const Tensor& { return t.values.at(n.inputs[k]); };
    Tensor out;
    switch (n.op) {
      case OpKind::input:
        if (input.rank() != 5 || input.dim(1) != graph.channels(n.id)) {
          throw GraphError(n.id, "channels", "input tensor " + shape_to_string(input.shape()) + " does not have " +
                                                 std::to_string(graph.channels(n.id)) + " channels");
        }
        out = input;
        break;
      case OpKind::output: out = in(0); break;
      case OpKind::relu: out = relu_forward(in(0)); break;
      case OpKind::conv3d: {
        const ConvWeights& cw = conv_weights(weights, n.id);
        out = conv_forward(in(0), cw.weights, cw.bias.empty() ? nullptr : &cw.bias, n.conv());
        break;
      }
      case OpKind::psc_block: out = block_forward(n.block().spec, block_weights(weights, n.id), in(0)); break;
      case OpKind::maxpool: {
        const auto& p = std::get<PoolAttrs>(n.attrs);
        out = maxpool3d(in(0), p.window, p.stride);
        break;
      }
      case OpKind::upsample: out = upsample_nearest(in(0), std::get<UpsampleAttrs>(n.attrs).factor); break;
      case OpKind::concat: {
        std::vector<Tensor> parts;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) parts.push_back(in(k));
        out = concat_channels(parts);
        break;
      }
      case OpKind::add:
        out = in(0);
        for (std::size_t k = 1; k < n.inputs.size(); ++k) {
          require_same_shape(out, in(k), "add");
          out += in(k);
        }
        break;
    }
    t.values[n.id] = std::move(out);
  }
  return t.values.at(graph.output_node().id);
}

GraphGrads graph_backward(const ModelGraph& graph, const GraphWeights& weights, const GraphTrace& trace,
                          const Tensor& grad_output) {
  GraphGrads g{Tensor(), zero_graph_weights(graph)};
  std::map<std::string, Tensor> grad;
  auto accumulate = [&](const std::string& id, Tensor delta) {
    auto it = grad.find(id);
    if (it == grad.end()) {
      grad.emplace(id, std::move(delta));
    } else {
      it->second += delta;
    }
  };
  const std::string out_id = graph.output_node().id;
  require_same_shape(grad_output, trace.values.at(out_id), "graph_backward");
  grad.emplace(out_id, grad_output);

  const auto& order = graph.topo_order();
  for (auto r = order.rbegin(); r != order.rend(); ++r) {
    const Node& n = graph.nodes()[*r];
    auto it = grad.find(n.id);
    if (it == grad.end()) continue;  // does not reach the output
    const Tensor& dy = it->second;
    auto x = [&](std::size_t k) -> const Tensor& { return trace.values.at(n.inputs[k]); };
    switch (n.op) {
      case OpKind::input: g.input = dy; break;
      case OpKind::output: accumulate(n.inputs[0], dy); break;
      case OpKind::relu: accumulate(n.inputs[0], relu_backward(dy, x(0))); break;
      case OpKind::conv3d: {
        ConvGrads cg = conv_backward(dy, x(0), conv_weights(weights, n.id).weights, n.conv());
        ConvWeights& dw = g.weights.convs.at(n.id);
        dw.weights = std::move(cg.weights);
        if (!dw.bias.empty()) dw.bias = std::move(cg.bias);
        accumulate(n.inputs[0], std::move(cg.input));
        break;
      }
      case OpKind::psc_block: {
        BlockGrads bg = block_backward(n.block().spec, block_weights(weights, n.id), x(0), dy);
        g.weights.blocks.at(n.id) = std::move(bg.weights);
        accumulate(n.inputs[0], std::move(bg.input));
        break;
      }
      case OpKind::maxpool: {
        const auto& p = std::get<PoolAttrs>(n.attrs);
        accumulate(n.inputs[0], maxpool3d_backward(dy, x(0), p.window, p.stride));
        break;
      }
      case OpKind::upsample:
        accumulate(n.inputs[0], upsample_nearest_backward(dy, std::get<UpsampleAttrs>(n.attrs).factor));
        break;
      case OpKind::concat: {
        std::size_t begin = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const std::size_t c = x(k).dim(1);
          accumulate(n.inputs[k], slice_channels(dy, begin, c));
          begin += c;
        }
        break;
      }
      case OpKind::add:
        for (const auto& src : n.inputs) accumulate(src, dy);
        break;
    }
  }
  if (g.input.empty()) g.input = Tensor(trace.values.at(graph.input_node().id).shape());
  return g;
}

}  // namespace psc
