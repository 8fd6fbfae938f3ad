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

#include "psc/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <json.hpp>

namespace psc {
namespace {

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* ext) {
  auto p = stem;
  p += ext;
  return p;
}

std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
    return r;
  }
  return v;
}

}  // namespace

std::filesystem::path tensor_stem(const std::filesystem::path& path) {
  const auto ext = path.extension();
  if (ext == ".json" || ext == ".bin") {
    auto p = path;
    p.replace_extension();
    return p;
  }
  return path;
}

void write_tensor(const std::filesystem::path& path, const Tensor& tensor) {
  const auto stem = tensor_stem(path);
  nlohmann::json meta;
  meta["shape"] = tensor.shape();
  meta["dtype"] = "f64";
  meta["order"] = "row-major";
  {
    std::ofstream js(with_suffix(stem, ".json"));
    if (!js) throw std::runtime_error("cannot write " + with_suffix(stem, ".json").string());
    js << meta.dump(2) << '\n';
  }
  std::ofstream bin(with_suffix(stem, ".bin"), std::ios::binary);
  if (!bin) throw std::runtime_error("cannot write " + with_suffix(stem, ".bin").string());
  for (double v : tensor.data()) {
    const auto bits = to_little_endian(std::bit_cast<std::uint64_t>(v));
    char buf[8];
    std::memcpy(buf, &bits, 8);
    bin.write(buf, 8);
  }
}

Tensor read_tensor(const std::filesystem::path& path) {
  const auto stem = tensor_stem(path);
  const auto json_path = with_suffix(stem, ".json");
  std::ifstream js(json_path);
  if (!js) throw std::runtime_error("cannot open tensor header " + json_path.string());
  nlohmann::json meta;
  try {
    js >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(json_path.string() + ": malformed JSON (" + e.what() + ")");
  }
  if (!meta.contains("shape") || !meta["shape"].is_array()) {
    throw std::runtime_error(json_path.string() + ": missing \"shape\" array");
  }
  if (meta.value("dtype", "f64") != "f64") throw std::runtime_error(json_path.string() + ": dtype must be f64");
  if (meta.value("order", "row-major") != "row-major") {
    throw std::runtime_error(json_path.string() + ": order must be row-major");
  }
  const auto shape = meta["shape"].get<Shape>();

  const auto bin_path = with_suffix(stem, ".bin");
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw std::runtime_error("cannot open tensor data " + bin_path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  const std::size_t n = shape_numel(shape);
  if (raw.size() != n * 8) {
    throw std::runtime_error(bin_path.string() + ": expected " + std::to_string(n * 8) + " bytes, found " +
                             std::to_string(raw.size()));
  }
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, raw.data() + 8 * i, 8);
    values[i] = std::bit_cast<double>(to_little_endian(bits));
  }
  return Tensor(shape, std::move(values));
}

}  // namespace psc
