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

#include "psc/verify.hpp"

#include <algorithm>
#include <stdexcept>

#include "psc/block.hpp"
#include "psc/conv.hpp"
#include "psc/decomp.hpp"
#include "psc/linalg.hpp"

namespace psc {

nlohmann::json SuiteReport::to_json() const {
  return {{"suite", suite},
          {"tolerance", tolerance},
          {"max_residual", max_residual},
          {"cases", cases},
          {"pass", pass},
          {"details", details}};
}

const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"eq1", "eq3", "eq4", "eq5", "hosvd", "grad"};
  return names;
}

SuiteReport run_suite(const std::string& name, const SuiteOptions& options) {
  if (name == "eq1") return suite_chain(options);
  if (name == "eq3") return suite_slab_sum(options);
  if (name == "eq4") return suite_fusion(options);
  if (name == "eq5") return suite_param_budget(options);
  if (name == "hosvd") return suite_hosvd(options);
  if (name == "grad") return suite_grad(options);
  throw std::invalid_argument("unknown suite '" + name + "'");
}

namespace {

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
}

SeparableKernel random_separable(Axis axis, std::size_t len, const std::array<std::size_t, 3>& extent,
                                 std::size_t channels, Rng& rng) {
  Shape rest{extent[0], extent[1], extent[2], channels};
  rest[axis_index(axis)] = 1;
  return {axis, Tensor::random_normal({len}, rng), Tensor::random_normal(rest, rng)};
}

void finish(SuiteReport& r) {
  r.cases = r.details.size();
  r.pass = r.cases > 0 && r.max_residual < r.tolerance;
}

}  // namespace

SuiteReport suite_chain(const SuiteOptions& o) {
  SuiteReport r{"eq1", 1e-10};
  for (std::size_t i = 0; i < o.seeds; ++i) {
    Rng rng(o.seed + i);
    const std::array<std::size_t, 3> j{pick(rng, 1, 5), pick(rng, 1, 5), pick(rng, 1, 5)};
    const Axis axis = axis_from_index(pick(rng, 0, 2));
    const std::size_t c = pick(rng, 1, 2);
    const SeparableKernel k = random_separable(axis, j[axis_index(axis)], j, c, rng);
    const std::size_t lo = *std::max_element(j.begin(), j.end());
    const Tensor x = Tensor::random_normal({1, c, pick(rng, lo, 8), pick(rng, lo, 8), pick(rng, lo, 8)}, rng);
    const ChainCheck chk = verify_separable_chain(k, x);
    r.max_residual = std::max(r.max_residual, chk.max_abs_diff);
    r.details.push_back({{"seed", o.seed + i},
                         {"axis", static_cast<int>(axis)},
                         {"kernel", {j[0], j[1], j[2], c}},
                         {"input", x.shape()},
                         {"residual", chk.max_abs_diff}});
  }
  finish(r);
  return r;
}

SuiteReport suite_slab_sum(const SuiteOptions& o, std::size_t per_kernel) {
  SuiteReport r{"eq3", 1e-10};
  for (std::size_t i = 0; i < o.seeds; ++i) {
    Rng rng(o.seed + i);
    const Kernel4 k(Tensor::random_normal({pick(rng, 1, 4), pick(rng, 1, 4), pick(rng, 1, 4), pick(rng, 1, 3)}, rng));
    const HosvdFactors f = hosvd(k);
    std::vector<SlabEntry> all;
    for (Axis a : {Axis::d1, Axis::d2, Axis::d3})
      for (std::size_t b = 0; b < f.mode(a).rows; ++b) all.push_back({a, b});
    for (std::size_t t = 0; t < per_kernel; ++t) {
      SlabAssignment asg;
      if (t == 0) {
        asg = default_assignment(f);
      } else {
        // Random order; the shortest covering prefix is a valid assignment.
        std::vector<SlabEntry> order = all;
        for (std::size_t n = order.size(); n > 1; --n) std::swap(order[n - 1], order[pick(rng, 0, n - 1)]);
        for (const auto& e : order) {
          asg.entries.push_back(e);
          try {
            validate_assignment(f, asg);
            break;
          } catch (const std::invalid_argument&) {
          }
        }
      }
      const SlabDecomposition d = slab_decompose(f, asg);
      const Tensor total = sum_separable(d.kernels);
      Tensor grouped(k.tensor().shape());
      for (const auto& group : asg.groups())
        for (auto l : group) grouped += d.kernels[l].compose().tensor();
      const double scale = std::max(1.0, max_abs(k.tensor()));
      const double res = std::max(max_abs_diff(total, k.tensor()), max_abs_diff(grouped, k.tensor())) / scale;
      r.max_residual = std::max(r.max_residual, res);
      r.details.push_back({{"seed", o.seed + i},
                           {"assignment", t},
                           {"slabs", asg.entries.size()},
                           {"kernel", k.tensor().shape()},
                           {"residual", res}});
    }
  }
  finish(r);
  return r;
}

SuiteReport suite_fusion(const SuiteOptions& o) {
  SuiteReport r{"eq4", 1e-10};
  for (std::size_t i = 0; i < o.seeds; ++i) {
    Rng rng(o.seed + i);
    const Axis axis = axis_from_index(pick(rng, 0, 2));
    auto make = [&] {
      const std::array<std::size_t, 3> j{pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)};
      return random_separable(axis, pick(rng, 1, 4), j, 1, rng);
    };
    const SeparableKernel a = make();
    const SeparableKernel b = make();
    const Tensor x = Tensor::random_normal({1, 1, 8, 8, 8}, rng);
    auto valid = [](const Tensor& in, const Kernel4& k) {
      ConvSpec s;
      s.kernel = {k.extent(Axis::d1), k.extent(Axis::d2), k.extent(Axis::d3)};
      return conv_forward(in, k.as_weights(), nullptr, s);
    };
    const Tensor sequential = valid(valid(x, a.compose()), b.compose());
    const FusedChain fused = fuse_consecutive(a, b);
    const double res = max_abs_diff(apply_chain(fused.chain, x), sequential);
    r.max_residual = std::max(r.max_residual, res);
    r.details.push_back({{"seed", o.seed + i},
                         {"axis", static_cast<int>(axis)},
                         {"composed_1d", fused.composed_1d.values()},
                         {"residual", res}});
  }
  finish(r);
  return r;
}

SuiteReport suite_param_budget(const SuiteOptions& o, std::size_t samples) {
  // Residual is the worst deficit as a fraction of its bound; parity counts
  // as a violation (residual 1) unless exact.
  SuiteReport r{"eq5", 1.0};
  const std::size_t dense = 64 * 64 * 27 + 64;
  const std::size_t block = block_param_count(build_block(1, 1, 3, 64, 64));
  r.details.push_back({{"k_i", 64}, {"k_prev", 64}, {"d", 3}, {"conv3d", dense}, {"block", block}});
  if (block != dense) r.max_residual = 1.0;
  Rng rng(o.seed);
  for (std::size_t t = 0; t < samples; ++t) {
    const std::size_t ki = pick(rng, 4, 128);
    const std::size_t kp = pick(rng, 4, 128);
    const std::size_t full = kp * ki * 27 + ki;
    const std::size_t b = block_param_count(build_block(1, 1, 3, kp, ki));
    const double bound = static_cast<double>(kp * 9 + ki * 3 + ki);  // + bias slack
    const double res = b > full ? 1.0 : static_cast<double>(full - b) / bound;
    r.max_residual = std::max(r.max_residual, res);
    r.details.push_back({{"k_i", ki}, {"k_prev", kp}, {"d", 3}, {"conv3d", full}, {"block", b}});
  }
  finish(r);
  return r;
}

SuiteReport suite_hosvd(const SuiteOptions& o) {
  SuiteReport r{"hosvd", 1e-10};
  for (std::size_t i = 0; i < o.seeds; ++i) {
    Rng rng(o.seed + i);
    const Kernel4 k(Tensor::random_normal({pick(rng, 1, 5), pick(rng, 1, 5), pick(rng, 1, 5), pick(rng, 1, 3)}, rng));
    const HosvdFactors f = hosvd(k);
    const double recon = relative_error(reconstruct(f), k.tensor());
    double ortho = 0.0;
    for (const Matrix& u : f.modes) ortho = std::max(ortho, row_orthonormality_error(u));
    r.max_residual = std::max({r.max_residual, recon, ortho});
    r.details.push_back(
        {{"seed", o.seed + i}, {"kernel", k.tensor().shape()}, {"reconstruction", recon}, {"orthonormality", ortho}});
  }
  finish(r);
  return r;
}

namespace {

double check(const Tensor& analytic, const ScalarFn& f, const Tensor& at) {
  return gradient_check_error(analytic, finite_diff_grad(f, at, 1e-6));
}

}  // namespace

SuiteReport suite_grad(const SuiteOptions& o) {
  SuiteReport r{"grad", 1e-4};
  for (std::size_t i = 0; i < o.seeds; ++i) {
    Rng rng(o.seed + i);
    nlohmann::json rec{{"seed", o.seed + i}};

    // Convolution with random geometry.
    ConvSpec s;
    s.kernel = {pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)};
    s.in_channels = pick(rng, 1, 2);
    s.out_channels = pick(rng, 1, 2);
    s.stride = {pick(rng, 1, 2), pick(rng, 1, 2), pick(rng, 1, 2)};
    s.padding = {pick(rng, 0, 1), pick(rng, 0, 1), pick(rng, 0, 1)};
    s.bias = rng.uniform() < 0.5;
    const Tensor x = Tensor::random_normal({1, s.in_channels, 5, 5, 5}, rng);
    const Tensor w = Tensor::random_normal(s.weight_shape(), rng);
    const Tensor bias = Tensor::random_normal({s.out_channels}, rng);
    const Tensor* bp = s.bias ? &bias : nullptr;
    const Tensor y = conv_forward(x, w, bp, s);
    const Tensor dy = Tensor::random_normal(y.shape(), rng);
    const ConvGrads g = conv_backward(dy, x, w, s);
    double conv_err = std::max(
        check(g.input, [&](const Tensor& v) { return dot(conv_forward(v, w, bp, s), dy); }, x),
        check(g.weights, [&](const Tensor& v) { return dot(conv_forward(x, v, bp, s), dy); }, w));
    if (s.bias) {
      conv_err = std::max(conv_err, check(g.bias, [&](const Tensor& v) { return dot(conv_forward(x, w, &v, s), dy); },
                                          bias));
    }
    rec["conv"] = conv_err;

    // ReLU away from the kink.
    Tensor rx = Tensor::random_normal({1, 2, 3, 3, 3}, rng);
    for (double& v : rx.data())
      if (std::abs(v) < 1e-2) v = v < 0 ? -0.5 : 0.5;
    const Tensor rdy = Tensor::random_normal(rx.shape(), rng);
    const double relu_err =
        check(relu_backward(rdy, rx), [&](const Tensor& v) { return dot(relu_forward(v), rdy); }, rx);
    rec["relu"] = relu_err;

    // Block; redraw the weights when a pre-activation sits near the kink.
    const int m = static_cast<int>(pick(rng, 1, 3));
    const int n = static_cast<int>(pick(rng, 1, 2));
    const std::size_t in = pick(rng, 1, 2);
    const PscBlockSpec spec = build_block(m, n, 3, in, pick(rng, std::size_t(m), 3));
    const Tensor bx = Tensor::random_normal({1, in, 4, 4, 4}, rng);
    BlockWeights bw = init_block_weights(spec, rng);
    std::size_t redraws = 0;
    while (block_min_preactivation(spec, bw, bx) < 1e-3 && redraws < 100) {
      bw = init_block_weights(spec, rng);
      ++redraws;
    }
    const Tensor bdy = Tensor::random_normal(block_forward(spec, bw, bx).shape(), rng);
    const BlockGrads bg = block_backward(spec, bw, bx, bdy);
    double block_err =
        check(bg.input, [&](const Tensor& v) { return dot(block_forward(spec, bw, v), bdy); }, bx);
    auto params = bw.tensors();
    const auto gparams = bg.weights.tensors();
    for (std::size_t k = 0; k < params.size(); ++k) {
      const Tensor saved = *params[k];
      block_err = std::max(block_err, check(*gparams[k],
                                            [&](const Tensor& v) {
                                              *params[k] = v;
                                              const double out = dot(block_forward(spec, bw, bx), bdy);
                                              *params[k] = saved;
                                              return out;
                                            },
                                            saved));
    }
    rec["block"] = block_err;
    rec["block_mn"] = {m, n};
    rec["redraws"] = redraws;
    r.max_residual = std::max({r.max_residual, conv_err, relu_err, block_err});
    r.details.push_back(rec);
  }
  finish(r);
  return r;
}

}  // namespace psc
