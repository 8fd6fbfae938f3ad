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

#include "psc/conv.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace psc {
namespace {

struct Range {
  std::size_t lo = 0;
  std::size_t hi = 0;  // exclusive
};

// Output positions o with 0 <= o*s + j - p < D.
Range tap_range(std::size_t out_extent, std::size_t in_extent, std::size_t stride, std::size_t tap,
                std::size_t pad) {
  const auto s = static_cast<std::ptrdiff_t>(stride);
  const auto j = static_cast<std::ptrdiff_t>(tap);
  const auto p = static_cast<std::ptrdiff_t>(pad);
  const auto d = static_cast<std::ptrdiff_t>(in_extent);
  std::ptrdiff_t lo = 0;
  if (p > j) lo = (p - j + s - 1) / s;
  const std::ptrdiff_t top = d - 1 + p - j;
  if (top < 0) return {};
  std::ptrdiff_t hi = top / s + 1;
  hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(out_extent));
  if (hi <= lo) return {};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

void require_volume(const Tensor& t, const char* what) {
  if (t.rank() != 5) {
    throw ShapeError(std::string(what) + " must be [N, C, D1, D2, D3], got " + shape_to_string(t.shape()));
  }
}

struct ConvGeometry {
  std::size_t batch = 0;
  Extent3 in{};
  Extent3 out{};
};

ConvGeometry check_conv(const Tensor& input, const Tensor& weights, const ConvSpec& spec) {
  spec.validate();
  require_volume(input, "conv input");
  if (input.dim(1) != spec.in_channels) {
    throw ShapeError("conv input channel dimension is " + std::to_string(input.dim(1)) + ", expected " +
                     std::to_string(spec.in_channels));
  }
  if (weights.shape() != spec.weight_shape()) {
    throw ShapeError("conv weights have shape " + shape_to_string(weights.shape()) + ", expected " +
                     shape_to_string(spec.weight_shape()));
  }
  ConvGeometry g;
  g.batch = input.dim(0);
  g.in = spatial_extent(input);
  g.out = conv_output_extent(spec, g.in);
  return g;
}

}  // namespace

const char* to_string(ConvKind kind) {
  switch (kind) {
    case ConvKind::kPointwise: return "pointwise";
    case ConvKind::k1D: return "1d";
    case ConvKind::k2D: return "2d";
    case ConvKind::k3D: return "3d";
  }
  return "?";
}

ConvKind ConvSpec::kind() const {
  const auto ones = std::count(kernel.begin(), kernel.end(), std::size_t{1});
  switch (ones) {
    case 3: return ConvKind::kPointwise;
    case 2: return ConvKind::k1D;
    case 1: return ConvKind::k2D;
    default: return ConvKind::k3D;
  }
}

void ConvSpec::validate() const {
  for (int k = 0; k < 3; ++k) {
    if (kernel[k] == 0) throw ShapeError("kernel extent on axis " + std::to_string(k + 1) + " must be >= 1");
    if (stride[k] == 0) throw ShapeError("stride on axis " + std::to_string(k + 1) + " must be >= 1");
  }
  if (in_channels == 0 || out_channels == 0) throw ShapeError("channel counts must be >= 1");
}

Shape ConvSpec::weight_shape() const {
  return {out_channels, in_channels, kernel[0], kernel[1], kernel[2]};
}

std::size_t ConvSpec::param_count() const {
  return out_channels * in_channels * kernel[0] * kernel[1] * kernel[2] + (bias ? out_channels : 0);
}

Extent3 conv_output_extent(const ConvSpec& spec, const Extent3& input_extent) {
  Extent3 out{};
  for (int k = 0; k < 3; ++k) {
    const std::size_t padded = input_extent[k] + 2 * spec.padding[k];
    if (padded < spec.kernel[k]) {
      throw ShapeError("padded extent " + std::to_string(padded) + " on axis " + std::to_string(k + 1) +
                       " is smaller than kernel extent " + std::to_string(spec.kernel[k]));
    }
    out[k] = (padded - spec.kernel[k]) / spec.stride[k] + 1;
  }
  return out;
}

Extent3 spatial_extent(const Tensor& volume) {
  require_volume(volume, "volume");
  return {volume.dim(2), volume.dim(3), volume.dim(4)};
}

Tensor conv_forward(const Tensor& input, const Tensor& weights, const Tensor* bias, const ConvSpec& spec) {
  const auto g = check_conv(input, weights, spec);
  const std::size_t cin = spec.in_channels;
  const std::size_t cout = spec.out_channels;
  if (bias && bias->shape() != Shape{cout}) {
    throw ShapeError("conv bias has shape " + shape_to_string(bias->shape()) + ", expected [" +
                     std::to_string(cout) + "]");
  }

  Tensor out({g.batch, cout, g.out[0], g.out[1], g.out[2]});
  const std::size_t in_vol = g.in[0] * g.in[1] * g.in[2];
  const std::size_t out_vol = g.out[0] * g.out[1] * g.out[2];
  const auto& K = spec.kernel;
  const auto& S = spec.stride;
  const auto& P = spec.padding;
  const auto x = input.data();
  const auto w = weights.data();
  auto y = out.data();

  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t co = 0; co < cout; ++co) {
      double* yc = y.data() + (n * cout + co) * out_vol;
      if (bias) std::fill(yc, yc + out_vol, (*bias)[co]);
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const double* xc = x.data() + (n * cin + ci) * in_vol;
        const double* wc = w.data() + (co * cin + ci) * K[0] * K[1] * K[2];
        for (std::size_t j1 = 0; j1 < K[0]; ++j1) {
          const Range r1 = tap_range(g.out[0], g.in[0], S[0], j1, P[0]);
          for (std::size_t j2 = 0; j2 < K[1]; ++j2) {
            const Range r2 = tap_range(g.out[1], g.in[1], S[1], j2, P[1]);
            for (std::size_t j3 = 0; j3 < K[2]; ++j3) {
              const Range r3 = tap_range(g.out[2], g.in[2], S[2], j3, P[2]);
              const double wv = wc[(j1 * K[1] + j2) * K[2] + j3];
              for (std::size_t o1 = r1.lo; o1 < r1.hi; ++o1) {
                const std::size_t i1 = o1 * S[0] + j1 - P[0];
                for (std::size_t o2 = r2.lo; o2 < r2.hi; ++o2) {
                  const std::size_t i2 = o2 * S[1] + j2 - P[1];
                  double* yrow = yc + (o1 * g.out[1] + o2) * g.out[2];
                  const double* xrow = xc + (i1 * g.in[1] + i2) * g.in[2];
                  for (std::size_t o3 = r3.lo; o3 < r3.hi; ++o3) {
                    yrow[o3] += wv * xrow[o3 * S[2] + j3 - P[2]];
                  }
                }
              }
            }
          }
        }
      }
    }
  }
  return out;
}

ConvGrads conv_backward(const Tensor& grad_output, const Tensor& input, const Tensor& weights,
                        const ConvSpec& spec) {
  const auto g = check_conv(input, weights, spec);
  const std::size_t cin = spec.in_channels;
  const std::size_t cout = spec.out_channels;
  const Shape expected{g.batch, cout, g.out[0], g.out[1], g.out[2]};
  if (grad_output.shape() != expected) {
    throw ShapeError("grad_output has shape " + shape_to_string(grad_output.shape()) + ", forward output is " +
                     shape_to_string(expected));
  }

  ConvGrads grads{Tensor(input.shape()), Tensor(weights.shape()), Tensor({cout})};
  const std::size_t in_vol = g.in[0] * g.in[1] * g.in[2];
  const std::size_t out_vol = g.out[0] * g.out[1] * g.out[2];
  const auto& K = spec.kernel;
  const auto& S = spec.stride;
  const auto& P = spec.padding;
  const auto x = input.data();
  const auto w = weights.data();
  const auto gy = grad_output.data();
  auto gx = grads.input.data();
  auto gw = grads.weights.data();

  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t co = 0; co < cout; ++co) {
      const double* gyc = gy.data() + (n * cout + co) * out_vol;
      double bsum = 0.0;
      for (std::size_t i = 0; i < out_vol; ++i) bsum += gyc[i];
      grads.bias[co] += bsum;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const double* xc = x.data() + (n * cin + ci) * in_vol;
        double* gxc = gx.data() + (n * cin + ci) * in_vol;
        const std::size_t wbase = (co * cin + ci) * K[0] * K[1] * K[2];
        for (std::size_t j1 = 0; j1 < K[0]; ++j1) {
          const Range r1 = tap_range(g.out[0], g.in[0], S[0], j1, P[0]);
          for (std::size_t j2 = 0; j2 < K[1]; ++j2) {
            const Range r2 = tap_range(g.out[1], g.in[1], S[1], j2, P[1]);
            for (std::size_t j3 = 0; j3 < K[2]; ++j3) {
              const Range r3 = tap_range(g.out[2], g.in[2], S[2], j3, P[2]);
              const std::size_t widx = wbase + (j1 * K[1] + j2) * K[2] + j3;
              const double wv = w[widx];
              double acc = 0.0;
              for (std::size_t o1 = r1.lo; o1 < r1.hi; ++o1) {
                const std::size_t i1 = o1 * S[0] + j1 - P[0];
                for (std::size_t o2 = r2.lo; o2 < r2.hi; ++o2) {
                  const std::size_t i2 = o2 * S[1] + j2 - P[1];
                  const double* gyrow = gyc + (o1 * g.out[1] + o2) * g.out[2];
                  const std::size_t xrow = (i1 * g.in[1] + i2) * g.in[2];
                  for (std::size_t o3 = r3.lo; o3 < r3.hi; ++o3) {
                    const std::size_t i3 = o3 * S[2] + j3 - P[2];
                    acc += gyrow[o3] * xc[xrow + i3];
                    gxc[xrow + i3] += wv * gyrow[o3];
                  }
                }
              }
              gw[widx] += acc;
            }
          }
        }
      }
    }
  }
  return grads;
}

Tensor relu_forward(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.data()) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& grad, const Tensor& x) {
  require_same_shape(grad, x, "relu_backward");
  Tensor g = grad;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (x[i] <= 0.0) g[i] = 0.0;
  }
  return g;
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_channels needs at least one part");
  const Shape& ref = parts.front().shape();
  if (ref.size() < 2) throw ShapeError("concat_channels needs tensors of rank >= 2");
  std::size_t channels = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Shape& s = parts[p].shape();
    if (s.size() != ref.size()) throw ShapeError("concat part " + std::to_string(p) + " has a different rank");
    for (std::size_t a = 0; a < s.size(); ++a) {
      if (a != 1 && s[a] != ref[a]) {
        throw ShapeError("concat part " + std::to_string(p) + " disagrees on dimension " + std::to_string(a) +
                         ": " + std::to_string(s[a]) + " vs " + std::to_string(ref[a]));
      }
    }
    channels += s[1];
  }
  Shape out_shape = ref;
  out_shape[1] = channels;
  Tensor out(out_shape);
  const std::size_t inner = shape_numel(ref) / (ref[0] * ref[1]);
  for (std::size_t n = 0; n < ref[0]; ++n) {
    std::size_t c0 = 0;
    for (const auto& part : parts) {
      const std::size_t pc = part.dim(1);
      const double* src = part.data().data() + n * pc * inner;
      double* dst = out.data().data() + (n * channels + c0) * inner;
      std::copy(src, src + pc * inner, dst);
      c0 += pc;
    }
  }
  return out;
}

Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count) {
  if (x.rank() < 2 || count == 0 || begin + count > x.dim(1)) {
    throw ShapeError("channel slice [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for shape " + shape_to_string(x.shape()));
  }
  Shape s = x.shape();
  const std::size_t channels = s[1];
  s[1] = count;
  Tensor out(s);
  const std::size_t inner = x.size() / (s[0] * channels);
  for (std::size_t n = 0; n < s[0]; ++n) {
    const double* src = x.data().data() + (n * channels + begin) * inner;
    std::copy(src, src + count * inner, out.data().data() + n * count * inner);
  }
  return out;
}

namespace {

Extent3 pool_output_extent(const Tensor& x, const Extent3& window, const Extent3& stride) {
  const Extent3 in = spatial_extent(x);
  Extent3 out{};
  for (int k = 0; k < 3; ++k) {
    if (window[k] == 0 || stride[k] == 0) throw ShapeError("pool window and stride must be >= 1");
    if (window[k] > in[k]) {
      throw ShapeError("pool window " + std::to_string(window[k]) + " exceeds input extent " +
                       std::to_string(in[k]) + " on axis " + std::to_string(k + 1));
    }
    out[k] = (in[k] - window[k]) / stride[k] + 1;
  }
  return out;
}

// Visits each pooling window and reports the flat input index of its first maximum.
template <typename Fn>
void for_each_pool_argmax(const Tensor& x, const Extent3& window, const Extent3& stride, Fn&& fn) {
  const Extent3 in = spatial_extent(x);
  const Extent3 out = pool_output_extent(x, window, stride);
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t in_vol = in[0] * in[1] * in[2];
  std::size_t out_flat = 0;
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t o1 = 0; o1 < out[0]; ++o1)
      for (std::size_t o2 = 0; o2 < out[1]; ++o2)
        for (std::size_t o3 = 0; o3 < out[2]; ++o3, ++out_flat) {
          std::size_t best = 0;
          bool found = false;
          for (std::size_t w1 = 0; w1 < window[0]; ++w1)
            for (std::size_t w2 = 0; w2 < window[1]; ++w2)
              for (std::size_t w3 = 0; w3 < window[2]; ++w3) {
                const std::size_t idx = p * in_vol + ((o1 * stride[0] + w1) * in[1] + o2 * stride[1] + w2) * in[2] +
                                        o3 * stride[2] + w3;
                if (!found || x[idx] > x[best]) {
                  best = idx;
                  found = true;
                }
              }
          fn(out_flat, best);
        }
  }
}

}  // namespace

Tensor maxpool3d(const Tensor& x, const Extent3& window, const Extent3& stride) {
  const Extent3 out = pool_output_extent(x, window, stride);
  Tensor y({x.dim(0), x.dim(1), out[0], out[1], out[2]});
  for_each_pool_argmax(x, window, stride, [&](std::size_t o, std::size_t i) { y[o] = x[i]; });
  return y;
}

Tensor maxpool3d_backward(const Tensor& grad, const Tensor& x, const Extent3& window, const Extent3& stride) {
  const Extent3 out = pool_output_extent(x, window, stride);
  if (grad.shape() != Shape{x.dim(0), x.dim(1), out[0], out[1], out[2]}) {
    throw ShapeError("maxpool gradient has shape " + shape_to_string(grad.shape()));
  }
  Tensor gx(x.shape());
  for_each_pool_argmax(x, window, stride, [&](std::size_t o, std::size_t i) { gx[i] += grad[o]; });
  return gx;
}

Tensor upsample_nearest(const Tensor& x, const Extent3& factor) {
  const Extent3 in = spatial_extent(x);
  for (auto f : factor) {
    if (f == 0) throw ShapeError("upsample factor must be >= 1");
  }
  const Extent3 out{in[0] * factor[0], in[1] * factor[1], in[2] * factor[2]};
  Tensor y({x.dim(0), x.dim(1), out[0], out[1], out[2]});
  const std::size_t planes = x.dim(0) * x.dim(1);
  std::size_t o = 0;
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t o1 = 0; o1 < out[0]; ++o1)
      for (std::size_t o2 = 0; o2 < out[1]; ++o2)
        for (std::size_t o3 = 0; o3 < out[2]; ++o3, ++o) {
          y[o] = x[((p * in[0] + o1 / factor[0]) * in[1] + o2 / factor[1]) * in[2] + o3 / factor[2]];
        }
  return y;
}

Tensor upsample_nearest_backward(const Tensor& grad, const Extent3& factor) {
  const Extent3 out = spatial_extent(grad);
  Extent3 in{};
  for (int k = 0; k < 3; ++k) {
    if (factor[k] == 0 || out[k] % factor[k] != 0) {
      throw ShapeError("upsample gradient extent not divisible by factor on axis " + std::to_string(k + 1));
    }
    in[k] = out[k] / factor[k];
  }
  Tensor gx({grad.dim(0), grad.dim(1), in[0], in[1], in[2]});
  const std::size_t planes = grad.dim(0) * grad.dim(1);
  std::size_t o = 0;
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t o1 = 0; o1 < out[0]; ++o1)
      for (std::size_t o2 = 0; o2 < out[1]; ++o2)
        for (std::size_t o3 = 0; o3 < out[2]; ++o3, ++o) {
          gx[((p * in[0] + o1 / factor[0]) * in[1] + o2 / factor[1]) * in[2] + o3 / factor[2]] += grad[o];
        }
  return gx;
}

Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_grad: eps must be positive");
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double fp = f(probe);
    probe[i] = orig - eps;
    const double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw std::domain_error("finite_diff_grad: non-finite function value at component " + std::to_string(i));
    }
    grad[i] = (fp - fm) / (2.0 * eps);
  }
  return grad;
}

double gradient_check_error(const Tensor& analytic, const Tensor& numeric) {
  require_same_shape(analytic, numeric, "gradient_check_error");
  const double floor = 1e-3 * max_abs(numeric) + 1e-12;
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

}  // namespace psc
