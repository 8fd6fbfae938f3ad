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

#include "psc/block.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace psc {

std::size_t compute_M(std::size_t k_i, std::size_t k_prev, std::size_t d) {
  if (k_i == 0 || k_prev == 0 || d == 0) throw std::invalid_argument("compute_M arguments must be >= 1");
  const std::size_t num = k_i * k_prev * d * d * d;
  const std::size_t den = k_prev * d * d + k_i * d;
  return std::max<std::size_t>(1, num / den);
}

std::array<Axis, 2> plane_axes(Axis axis) {
  switch (axis) {
    case Axis::d1: return {Axis::d2, Axis::d3};
    case Axis::d2: return {Axis::d1, Axis::d3};
    case Axis::d3: return {Axis::d1, Axis::d2};
  }
  throw std::invalid_argument("invalid axis");
}

void PscBlockSpec::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("psc block: " + msg); };
  if (m < 1 || m > 3) fail("m must be 1, 2 or 3, got " + std::to_string(m));
  if (n < 1) fail("n must be >= 1, got " + std::to_string(n));
  if (d < 1) fail("d must be >= 1");
  if (in_channels < 1 || out_channels < 1) fail("channel counts must be >= 1");
  if (s < 1) fail("s must be >= 1");
  if (per_stream_filters != std::max<std::size_t>(1, M / s)) {
    fail("per_stream_filters " + std::to_string(per_stream_filters) + " != max(1, floor(M / s)) = " +
         std::to_string(std::max<std::size_t>(1, M / s)));
  }
  if (per_stream_out.size() != static_cast<std::size_t>(m) || orientations.size() != static_cast<std::size_t>(m)) {
    fail("per_stream_out and orientations must have m entries");
  }
  std::size_t total = 0;
  for (auto c : per_stream_out) {
    if (c == 0) fail("every stream needs at least one output channel");
    total += c;
  }
  if (total != out_channels) fail("per_stream_out sums to " + std::to_string(total) + ", not out_channels");
  for (std::size_t a = 0; a < orientations.size(); ++a) {
    const int v = static_cast<int>(orientations[a]);
    if (v < 1 || v > 3) fail("invalid orientation axis");
    for (std::size_t b = 0; b < a; ++b)
      if (orientations[a] == orientations[b]) fail("orientations must be pairwise distinct");
  }
  if (m == 1 && orientations[0] != Axis::d1) fail("a single stream convolves planes (d2, d3) then along d1");
  for (int k = 0; k < 3; ++k)
    if (stride[k] < 1) fail("stride components must be >= 1");
}

ConvSpec PscBlockSpec::plane_conv(std::size_t stream, std::size_t layer) const {
  const Axis axis = orientations.at(stream);
  ConvSpec c;
  c.kernel = {d, d, d};
  c.kernel[axis_index(axis)] = 1;
  c.in_channels = layer == 0 ? in_channels : per_stream_filters;
  c.out_channels = per_stream_filters;
  c.padding = padding;
  c.padding[axis_index(axis)] = 0;
  if (layer == 0) {
    c.stride = stride;
    c.stride[axis_index(axis)] = 1;
  }
  c.bias = false;
  return c;
}

ConvSpec PscBlockSpec::line_conv(std::size_t stream) const {
  const std::size_t k = axis_index(orientations.at(stream));
  ConvSpec c;
  c.kernel = {1, 1, 1};
  c.kernel[k] = d;
  c.in_channels = per_stream_filters;
  c.out_channels = per_stream_out.at(stream);
  c.padding = {0, 0, 0};
  c.padding[k] = padding[k];
  c.stride = {1, 1, 1};
  c.stride[k] = stride[k];
  c.bias = true;
  return c;
}

PscBlockSpec build_block(int m, int n, std::size_t d, std::size_t in_ch, std::size_t out_ch,
                         const BuildOptions& options) {
  if (m < 1 || m > 3) throw std::invalid_argument("m must be 1, 2 or 3, got " + std::to_string(m));
  if (n < 1) throw std::invalid_argument("n must be >= 1, got " + std::to_string(n));
  if (out_ch < static_cast<std::size_t>(m)) {
    throw std::invalid_argument("out_channels " + std::to_string(out_ch) + " < m = " + std::to_string(m) +
                                ": every stream needs an output channel");
  }
  PscBlockSpec spec;
  spec.m = m;
  spec.n = n;
  spec.d = d;
  spec.in_channels = in_ch;
  spec.out_channels = out_ch;
  spec.M = compute_M(out_ch, in_ch, d);
  spec.s = options.full_M_per_stream ? 1 : static_cast<std::size_t>(m);
  spec.per_stream_filters = std::max<std::size_t>(1, spec.M / spec.s);
  const std::size_t base = out_ch / static_cast<std::size_t>(m);
  const std::size_t extra = out_ch % static_cast<std::size_t>(m);
  for (std::size_t j = 0; j < static_cast<std::size_t>(m); ++j) {
    spec.per_stream_out.push_back(base + (j < extra ? 1 : 0));
    spec.orientations.push_back(axis_from_index(j));
  }
  spec.stride = options.stride;
  const std::size_t p = (d - 1) / 2;
  spec.padding = options.padding.value_or(Extent3{p, p, p});
  spec.validate();
  return spec;
}

std::size_t block_param_count(const PscBlockSpec& spec) {
  const std::size_t f = spec.per_stream_filters;
  const std::size_t d = spec.d;
  std::size_t total = 0;
  for (std::size_t j = 0; j < spec.per_stream_out.size(); ++j) {
    const std::size_t out = spec.per_stream_out[j];
    total += spec.in_channels * f * d * d;
    total += static_cast<std::size_t>(spec.n - 1) * f * f * d * d;
    total += f * out * d + out;
  }
  return total;
}

std::size_t BlockWeights::param_count() const {
  std::size_t n = 0;
  for (const Tensor* t : tensors()) n += t->size();
  return n;
}

std::vector<Tensor*> BlockWeights::tensors() {
  std::vector<Tensor*> out;
  for (auto& s : streams) {
    for (auto& p : s.planes) out.push_back(&p);
    out.push_back(&s.line);
    out.push_back(&s.bias);
  }
  return out;
}

std::vector<const Tensor*> BlockWeights::tensors() const {
  std::vector<const Tensor*> out;
  for (const auto& s : streams) {
    for (const auto& p : s.planes) out.push_back(&p);
    out.push_back(&s.line);
    out.push_back(&s.bias);
  }
  return out;
}

BlockWeights zero_block_weights(const PscBlockSpec& spec) {
  spec.validate();
  BlockWeights w;
  for (std::size_t j = 0; j < spec.per_stream_out.size(); ++j) {
    StreamWeights s;
    for (int i = 0; i < spec.n; ++i) s.planes.emplace_back(spec.plane_conv(j, std::size_t(i)).weight_shape());
    s.line = Tensor(spec.line_conv(j).weight_shape());
    s.bias = Tensor({spec.per_stream_out[j]});
    w.streams.push_back(std::move(s));
  }
  return w;
}

BlockWeights init_block_weights(const PscBlockSpec& spec, Rng& rng) {
  BlockWeights w = zero_block_weights(spec);
  auto fill = [&rng](Tensor& t) {
    const std::size_t fan_in = t.size() / t.dim(0);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t.data()) v = rng.uniform(-bound, bound);
  };
  for (auto& s : w.streams) {
    for (auto& p : s.planes) fill(p);
    fill(s.line);
  }
  return w;
}

void check_block_weights(const PscBlockSpec& spec, const BlockWeights& weights) {
  const BlockWeights ref = zero_block_weights(spec);
  if (weights.streams.size() != ref.streams.size()) throw ShapeError("block weights have the wrong stream count");
  for (std::size_t j = 0; j < ref.streams.size(); ++j) {
    const auto& a = weights.streams[j];
    const auto& b = ref.streams[j];
    if (a.planes.size() != b.planes.size()) throw ShapeError("stream " + std::to_string(j) + " needs n planar convs");
    for (std::size_t i = 0; i < a.planes.size(); ++i) {
      if (a.planes[i].shape() != b.planes[i].shape()) {
        throw ShapeError("stream " + std::to_string(j) + " planar conv " + std::to_string(i) + " has shape " +
                         shape_to_string(a.planes[i].shape()) + ", expected " + shape_to_string(b.planes[i].shape()));
      }
    }
    if (a.line.shape() != b.line.shape() || a.bias.shape() != b.bias.shape()) {
      throw ShapeError("stream " + std::to_string(j) + " line conv or bias has the wrong shape");
    }
  }
}

namespace {

struct StreamTrace {
  std::vector<Tensor> pre;   // planar conv outputs
  std::vector<Tensor> post;  // activations feeding each conv; post[0] is the block input
  Tensor out;
};

StreamTrace run_stream(const PscBlockSpec& spec, const StreamWeights& w, std::size_t j, const Tensor& input,
                       bool relu) {
  StreamTrace t;
  t.post.push_back(input);
  for (std::size_t i = 0; i < w.planes.size(); ++i) {
    t.pre.push_back(conv_forward(t.post.back(), w.planes[i], nullptr, spec.plane_conv(j, i)));
    t.post.push_back(relu ? relu_forward(t.pre.back()) : t.pre.back());
  }
  t.out = conv_forward(t.post.back(), w.line, &w.bias, spec.line_conv(j));
  return t;
}

}  // namespace

Tensor block_forward(const PscBlockSpec& spec, const BlockWeights& weights, const Tensor& input,
                     const BlockForwardOptions& options) {
  check_block_weights(spec, weights);
  std::vector<Tensor> outs;
  for (std::size_t j = 0; j < weights.streams.size(); ++j) {
    outs.push_back(run_stream(spec, weights.streams[j], j, input, options.relu).out);
  }
  if (!options.sum_streams) return concat_channels(outs);
  Tensor total = outs.front();
  for (std::size_t j = 1; j < outs.size(); ++j) {
    require_same_shape(total, outs[j], "summed streams");
    total += outs[j];
  }
  return total;
}

double block_min_preactivation(const PscBlockSpec& spec, const BlockWeights& weights, const Tensor& input) {
  check_block_weights(spec, weights);
  double lo = INFINITY;
  for (std::size_t j = 0; j < weights.streams.size(); ++j) {
    for (const auto& z : run_stream(spec, weights.streams[j], j, input, true).pre) {
      for (double v : z.data()) lo = std::min(lo, std::abs(v));
    }
  }
  return lo;
}

BlockGrads block_backward(const PscBlockSpec& spec, const BlockWeights& weights, const Tensor& input,
                          const Tensor& grad_output) {
  check_block_weights(spec, weights);
  BlockGrads g{Tensor(input.shape()), zero_block_weights(spec)};
  std::size_t c0 = 0;
  for (std::size_t j = 0; j < weights.streams.size(); ++j) {
    const auto& w = weights.streams[j];
    const StreamTrace t = run_stream(spec, w, j, input, true);
    const std::size_t cj = spec.per_stream_out[j];
    if (grad_output.rank() != 5 || grad_output.dim(1) != spec.out_channels) {
      throw ShapeError("block grad_output has shape " + shape_to_string(grad_output.shape()));
    }
    const Tensor gy = slice_channels(grad_output, c0, cj);
    c0 += cj;

    auto& gw = g.weights.streams[j];
    auto line = conv_backward(gy, t.post.back(), w.line, spec.line_conv(j));
    gw.line = std::move(line.weights);
    gw.bias = std::move(line.bias);
    Tensor upstream = std::move(line.input);
    for (std::size_t i = w.planes.size(); i-- > 0;) {
      const Tensor gz = relu_backward(upstream, t.pre[i]);
      auto plane = conv_backward(gz, t.post[i], w.planes[i], spec.plane_conv(j, i));
      gw.planes[i] = std::move(plane.weights);
      upstream = std::move(plane.input);
    }
    g.input += upstream;
  }
  return g;
}

}  // namespace psc
