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

#include <filesystem>
#include <bit>
#include <fstream>

#include "psc/tensor.hpp"
#include "psc/tensor_io.hpp"

namespace psc {
namespace {

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  EXPECT_THROW(Tensor({2, 0}), ShapeError);
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.at({1, 2}), 6.0);
  EXPECT_EQ(t.offset({1, 0}), 3u);
  EXPECT_THROW(t.at({2, 0}), ShapeError);
}

TEST(Tensor, ArithmeticHelpers) {
  Tensor a({3}, {1, -2, 3});
  Tensor b({3}, {1, 1, 1});
  EXPECT_DOUBLE_EQ(dot(a, b), 2.0);
  EXPECT_DOUBLE_EQ(max_abs(a), 3.0);
  EXPECT_DOUBLE_EQ(max_abs_diff(a, b), 3.0);
  EXPECT_EQ((a + b).values(), (std::vector<double>{2, -1, 4}));
  EXPECT_THROW(a + Tensor({2}), ShapeError);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    const double x = a.uniform(-1, 1);
    EXPECT_EQ(x, b.uniform(-1, 1));
    EXPECT_GE(x, -1.0);
    EXPECT_LT(x, 1.0);
  }
  EXPECT_NE(Rng(42).next_u64(), c.next_u64());
}

class TensorIo : public ::testing::Test {
 protected:
  std::filesystem::path dir_ = std::filesystem::temp_directory_path() / "psc_tensor_io_test";
  void SetUp() override { std::filesystem::create_directories(dir_); }
  void TearDown() override { std::filesystem::remove_all(dir_); }
};

TEST_F(TensorIo, RoundTripPreservesBits) {
  Rng rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    Shape s;
    const auto rank = rng.uniform_int(1, 5);
    for (int a = 0; a < rank; ++a) s.push_back(std::size_t(rng.uniform_int(1, 4)));
    Tensor t = Tensor::random_normal(s, rng, 1e3);
    t[0] = -0.0;
    write_tensor(dir_ / "t", t);
    const Tensor back = read_tensor(dir_ / "t.json");
    ASSERT_EQ(back.shape(), t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) {
      EXPECT_EQ(std::bit_cast<std::uint64_t>(back[i]), std::bit_cast<std::uint64_t>(t[i]));
    }
  }
}

TEST_F(TensorIo, LittleEndianLayout) {
  write_tensor(dir_ / "one", Tensor({1}, {1.0}));
  std::ifstream bin(dir_ / "one.bin", std::ios::binary);
  unsigned char bytes[8];
  bin.read(reinterpret_cast<char*>(bytes), 8);
  // 1.0 == 0x3FF0000000000000
  EXPECT_EQ(bytes[7], 0x3F);
  EXPECT_EQ(bytes[6], 0xF0);
  EXPECT_EQ(bytes[0], 0x00);
}

TEST_F(TensorIo, RejectsTruncatedData) {
  write_tensor(dir_ / "t", Tensor({4}, 1.0));
  std::filesystem::resize_file(dir_ / "t.bin", 24);
  EXPECT_THROW(read_tensor(dir_ / "t"), std::runtime_error);
  EXPECT_THROW(read_tensor(dir_ / "missing"), std::runtime_error);
}

}  // namespace
}  // namespace psc
