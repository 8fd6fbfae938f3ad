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

// Tensor files: <name>.json sidecar {"shape", "dtype": "f64", "order": "row-major"}
// next to <name>.bin holding little-endian IEEE-754 doubles.

#pragma once

#include <filesystem>

#include "psc/tensor.hpp"

namespace psc {

/// Accepts "<name>", "<name>.json" or "<name>.bin" and returns "<name>".
std::filesystem::path tensor_stem(const std::filesystem::path& path);

void write_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor read_tensor(const std::filesystem::path& path);

}  // namespace psc
