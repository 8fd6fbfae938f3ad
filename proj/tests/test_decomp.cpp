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

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "oracles.hpp"
#include "psc/conv.hpp"
#include "psc/decomp.hpp"

namespace psc {
namespace {

Tensor outer3(const Tensor& u, const Tensor& v, const Tensor& w) {
  Tensor t({u.size(), v.size(), w.size(), 1});
  for (std::size_t a = 0; a < u.size(); ++a)
    for (std::size_t b = 0; b < v.size(); ++b)
      for (std::size_t c = 0; c < w.size(); ++c) t.at({a, b, c, 0}) = u[a] * v[b] * w[c];
  return t;
}

Tensor unit_vector(std::size_t n, Rng& rng) {
  Tensor v = Tensor::random_normal({n}, rng);
  return (1.0 / frobenius_norm(v)) * v;
}

SeparableKernel random_separable(Axis axis, std::size_t j, std::size_t channels, Rng& rng) {
  Shape rest{j, j, j, channels};
  rest[axis_index(axis)] = 1;
  return {axis, Tensor::random_normal({j}, rng), Tensor::random_normal(rest, rng)};
}

TEST(ModeUnfold, RowsAreModeFibers) {
  Tensor t({2, 2, 2, 1});
  std::iota(t.data().begin(), t.data().end(), 1.0);
  const Matrix m1 = mode_unfold(t, Axis::d1);
  ASSERT_EQ(m1.rows, 2u);
  ASSERT_EQ(m1.cols, 4u);
  EXPECT_EQ(m1.data, (std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8}));
  const Matrix m2 = mode_unfold(t, Axis::d2);
  EXPECT_EQ(m2.data, (std::vector<double>{1, 2, 5, 6, 3, 4, 7, 8}));
  const Matrix m3 = mode_unfold(t, Axis::d3);
  EXPECT_EQ(m3.data, (std::vector<double>{1, 3, 5, 7, 2, 4, 6, 8}));
  for (Axis a : {Axis::d1, Axis::d2, Axis::d3}) EXPECT_EQ(mode_fold(mode_unfold(t, a), t.shape(), a), t);
}

TEST(ModeUnfold, FoldInvertsUnfoldOnRandomShapes) {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const Shape s{std::size_t(rng.uniform_int(1, 4)), std::size_t(rng.uniform_int(1, 4)),
                  std::size_t(rng.uniform_int(1, 4)), std::size_t(rng.uniform_int(1, 3))};
    const Tensor t = Tensor::random_normal(s, rng);
    for (Axis a : {Axis::d1, Axis::d2, Axis::d3}) EXPECT_EQ(mode_fold(mode_unfold(t, a), s, a), t);
  }
  const Matrix z = mode_unfold(Tensor({2, 3, 2, 2}), Axis::d2);
  EXPECT_TRUE(std::all_of(z.data.begin(), z.data.end(), [](double v) { return v == 0.0; }));
}

TEST(Hosvd, RankOneKernelHasSingleCoreEntry) {
  Rng rng(32);
  const Kernel4 k(outer3(unit_vector(3, rng), unit_vector(3, rng), unit_vector(3, rng)));
  const auto f = hosvd(k);
  std::vector<double> mags;
  for (double v : f.core.data()) mags.push_back(std::abs(v));
  std::sort(mags.rbegin(), mags.rend());
  EXPECT_NEAR(mags[0], 1.0, 1e-12);
  EXPECT_LT(mags[1], 1e-10);
}

TEST(Hosvd, ZeroKernel) {
  const auto f = hosvd(Kernel4(Tensor({3, 2, 3, 2})));
  EXPECT_EQ(max_abs(f.core), 0.0);
  for (const auto& u : f.modes) EXPECT_LT(row_orthonormality_error(u), 1e-12);
}

TEST(Hosvd, ReconstructsRandomKernel) {
  Rng rng(33);
  const Kernel4 k(Tensor::random_normal({3, 3, 3, 2}, rng));
  EXPECT_LT(relative_error(reconstruct(hosvd(k)), k.tensor()), 1e-10);
}

TEST(Hosvd, ExactAndOrthonormalAcrossShapes) {
  Rng rng(34);
  for (int seed = 0; seed < 50; ++seed) {
    const Shape s{std::size_t(rng.uniform_int(1, 5)), std::size_t(rng.uniform_int(1, 5)),
                  std::size_t(rng.uniform_int(1, 5)), std::size_t(rng.uniform_int(1, 3))};
    const Kernel4 k(Tensor::random_normal(s, rng));
    const auto f = hosvd(k);
    EXPECT_EQ(f.core.shape(), s);
    for (const auto& u : f.modes) EXPECT_LT(row_orthonormality_error(u), 1e-10);
    EXPECT_LT(relative_error(reconstruct(f), k.tensor()), 1e-10) << shape_to_string(s);
  }
}

TEST(Hosvd, ChannelModeIsNotCompressed) {
  Rng rng(35);
  const Kernel4 k(Tensor::random_normal({2, 3, 4, 5}, rng));
  const auto f = hosvd(k);
  EXPECT_EQ(f.core.dim(3), 5u);
  EXPECT_EQ(f.ranks(), (std::array<std::size_t, 3>{2, 3, 4}));
}

TEST(SlabDecompose, RankOneSingleSlab) {
  Rng rng(36);
  const Kernel4 k(outer3(unit_vector(3, rng), unit_vector(3, rng), unit_vector(3, rng)));
  const auto f = hosvd(k);
  const auto d = slab_decompose(f, {{{Axis::d1, 0}}});
  ASSERT_EQ(d.kernels.size(), 1u);
  EXPECT_LT(max_abs_diff(d.kernels[0].compose().tensor(), k.tensor()), 1e-12);
}

TEST(SlabDecompose, MixedAxesReconstruct) {
  Rng rng(37);
  const Kernel4 k(Tensor::random_normal({3, 3, 3, 1}, rng));
  const auto f = hosvd(k);
  SlabAssignment a;
  a.entries.push_back({Axis::d1, 0});
  for (std::size_t i = 0; i < 3; ++i) a.entries.push_back({Axis::d2, i});
  for (std::size_t i = 0; i < 3; ++i) a.entries.push_back({Axis::d3, i});
  const auto d = slab_decompose(f, a);
  ASSERT_EQ(d.kernels.size(), 7u);
  EXPECT_LT(relative_error(sum_separable(d.kernels), k.tensor()), 1e-10);
  for (const auto& sk : d.kernels) {
    EXPECT_EQ(sk.rest.dim(axis_index(sk.axis)), 1u);
    EXPECT_EQ(sk.vec.size(), 3u);
  }
  const double total = std::accumulate(d.energy.begin(), d.energy.end(), 0.0);
  EXPECT_NEAR(total, dot(f.core, f.core), 1e-10);
}

TEST(SlabDecompose, RejectsIncompleteOrOverlappingAssignments) {
  Rng rng(38);
  const auto f = hosvd(Kernel4(Tensor::random_normal({3, 3, 3, 1}, rng)));
  EXPECT_THROW(slab_decompose(f, {{{Axis::d1, 0}, {Axis::d1, 1}}}), std::invalid_argument);
  EXPECT_THROW(slab_decompose(f, {{{Axis::d1, 0}, {Axis::d1, 1}, {Axis::d1, 2}, {Axis::d1, 2}}}),
               std::invalid_argument);
  EXPECT_THROW(slab_decompose(f, {{{Axis::d2, 3}}}), std::invalid_argument);
  EXPECT_NO_THROW(slab_decompose(f, {{{Axis::d1, 0}, {Axis::d1, 1}, {Axis::d1, 2}}}));
}

TEST(SlabDecompose, DefaultAssignmentUsesEveryOrientation) {
  Rng rng(39);
  for (int trial = 0; trial < 10; ++trial) {
    const auto f = hosvd(Kernel4(Tensor::random_normal({3, 3, 3, 2}, rng)));
    const auto a = default_assignment(f);
    for (const auto& g : a.groups()) EXPECT_FALSE(g.empty());
    EXPECT_NO_THROW(validate_assignment(f, a));
    EXPECT_EQ(a.entries.front(), (SlabEntry{Axis::d1, 0}));
  }
}

TEST(SlabDecompose, RegroupingByAxisKeepsTheSum) {
  Rng rng(40);
  const Kernel4 k(Tensor::random_normal({3, 4, 2, 2}, rng));
  const auto f = hosvd(k);
  const auto a = default_assignment(f);
  const auto d = slab_decompose(f, a);
  Tensor grouped(k.tensor().shape());
  for (const auto& group : a.groups())
    for (auto l : group) grouped += d.kernels[l].compose().tensor();
  EXPECT_LT(max_abs_diff(grouped, sum_separable(d.kernels)), 1e-12);
  EXPECT_LT(relative_error(grouped, k.tensor()), 1e-10);
}

TEST(SeparableChain, DeltaFactorsAreIdentity) {
  Rng rng(41);
  const Tensor x = Tensor::random_normal({1, 1, 4, 4, 4}, rng);
  const SeparableKernel k{Axis::d1, Tensor({1}, 1.0), Tensor({1, 1, 1, 1}, 1.0)};
  const auto r = verify_separable_chain(k, x);
  EXPECT_EQ(r.lhs, x);
  EXPECT_EQ(r.rhs, x);
}

TEST(SeparableChain, AllOrientationsAgree) {
  Rng rng(42);
  for (Axis axis : {Axis::d1, Axis::d2, Axis::d3}) {
    const auto k = random_separable(axis, 3, 1, rng);
    const auto r = verify_separable_chain(k, Tensor::random_normal({1, 1, 6, 6, 6}, rng));
    EXPECT_EQ(r.lhs.shape(), (Shape{1, 1, 4, 4, 4}));
    EXPECT_LT(r.max_abs_diff, 1e-10);
  }
}

TEST(Fusion, DeltaPairActsAsIdentity) {
  Rng rng(43);
  const SeparableKernel d{Axis::d2, Tensor({1}, 1.0), Tensor({1, 1, 1, 1}, 1.0)};
  const auto fused = fuse_consecutive(d, d);
  const Tensor x = Tensor::random_normal({1, 1, 3, 3, 3}, rng);
  EXPECT_EQ(apply_chain(fused.chain, x), x);
}

TEST(Fusion, ComposesVectorsByPolynomialProduct) {
  const SeparableKernel a{Axis::d1, Tensor({2}, {1, 1}), Tensor({1, 1, 1, 1}, 1.0)};
  const SeparableKernel b{Axis::d1, Tensor({2}, {1, -1}), Tensor({1, 1, 1, 1}, 1.0)};
  EXPECT_EQ(fuse_consecutive(a, b).composed_1d.values(), (std::vector<double>{1, 0, -1}));
}

TEST(Fusion, ChainMatchesSequentialApplication) {
  Rng rng(44);
  for (int seed = 0; seed < 20; ++seed) {
    const Axis axis = axis_from_index(std::size_t(seed % 3));
    const auto a = random_separable(axis, std::size_t(rng.uniform_int(1, 4)), 1, rng);
    const auto b = random_separable(axis, std::size_t(rng.uniform_int(1, 4)), 1, rng);
    const Tensor x = Tensor::random_normal({1, 1, 8, 8, 8}, rng);
    const auto fused = fuse_consecutive(a, b);

    auto conv_valid = [](const Tensor& in, const Kernel4& k) {
      ConvSpec s;
      s.kernel = {k.extent(Axis::d1), k.extent(Axis::d2), k.extent(Axis::d3)};
      return testing::naive_conv3d(in, k.as_weights(), nullptr, s);
    };
    const Tensor sequential = conv_valid(conv_valid(x, a.compose()), b.compose());
    EXPECT_LT(max_abs_diff(apply_chain(fused.chain, x), sequential), 1e-10) << "seed " << seed;
  }
}

TEST(Fusion, RejectsMismatchedAxesAndMultichannel) {
  Rng rng(45);
  EXPECT_THROW(fuse_consecutive(random_separable(Axis::d1, 2, 1, rng), random_separable(Axis::d2, 2, 1, rng)),
               std::invalid_argument);
  EXPECT_THROW(fuse_consecutive(random_separable(Axis::d1, 2, 2, rng), random_separable(Axis::d1, 2, 2, rng)),
               std::invalid_argument);
}

// Projects onto the leading eigenvectors of each mode's Gram matrix.
double projection_oracle_error(const Tensor& a, const std::array<std::size_t, 3>& ranks) {
  Tensor approx = a;
  for (std::size_t k = 0; k < 3; ++k) {
    const Axis ax = axis_from_index(k);
    const Matrix unf = mode_unfold(a, ax);
    const auto [vals, vecs] = testing::symmetric_eigen(unf * unf.transposed());
    Matrix basis(vecs.rows, ranks[k]);
    for (std::size_t r = 0; r < vecs.rows; ++r)
      for (std::size_t c = 0; c < ranks[k]; ++c) basis(r, c) = vecs(r, c);
    approx = mode_product(approx, basis * basis.transposed(), ax);
  }
  return relative_error(approx, a);
}

TEST(Truncation, FullRanksAreExact) {
  Rng rng(46);
  const Kernel4 k(Tensor::random_normal({3, 4, 2, 2}, rng));
  EXPECT_LT(truncated_decompose(k, {3, 4, 2}).frob_error, 1e-10);
  const Kernel4 r1(outer3(unit_vector(3, rng), unit_vector(3, rng), unit_vector(3, rng)));
  EXPECT_LT(truncated_decompose(r1, {1, 1, 1}).frob_error, 1e-10);
}

TEST(Truncation, MatchesProjectionOracle) {
  Rng rng(47);
  const Kernel4 k(Tensor::random_normal({3, 3, 3, 1}, rng));
  const auto t = truncated_decompose(k, {2, 2, 2});
  EXPECT_EQ(t.factors.core.shape(), (Shape{2, 2, 2, 1}));
  EXPECT_NEAR(t.frob_error, projection_oracle_error(k.tensor(), {2, 2, 2}), 1e-8);
  EXPECT_GT(t.frob_error, 0.0);
}

TEST(Truncation, ErrorIsMonotoneOverTheRankLattice) {
  Rng rng(48);
  const Kernel4 k(Tensor::random_normal({3, 3, 3, 1}, rng));
  double err[4][4][4];
  for (std::size_t a = 1; a <= 3; ++a)
    for (std::size_t b = 1; b <= 3; ++b)
      for (std::size_t c = 1; c <= 3; ++c) err[a][b][c] = truncated_decompose(k, {a, b, c}).frob_error;
  for (std::size_t a = 1; a <= 3; ++a)
    for (std::size_t b = 1; b <= 3; ++b)
      for (std::size_t c = 1; c <= 3; ++c) {
        if (a < 3) {
          EXPECT_LE(err[a + 1][b][c], err[a][b][c] + 1e-12);
        }
        if (b < 3) {
          EXPECT_LE(err[a][b + 1][c], err[a][b][c] + 1e-12);
        }
        if (c < 3) {
          EXPECT_LE(err[a][b][c + 1], err[a][b][c] + 1e-12);
        }
      }
}

TEST(Truncation, RejectsRanksOutOfRange) {
  const Kernel4 k(Tensor({3, 3, 3, 1}, 1.0));
  EXPECT_THROW(truncated_decompose(k, {0, 1, 1}), std::invalid_argument);
  EXPECT_THROW(truncated_decompose(k, {1, 4, 1}), std::invalid_argument);
}

}  // namespace
}  // namespace psc
