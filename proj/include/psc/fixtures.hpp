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

#include <string>
#include <vector>

#include "psc/graph.hpp"
#include "psc/tensor.hpp"

namespace psc {

enum class FixtureWidth { full, reduced };

/// 3D ResNet-34 with basic blocks; `base` channels in the first stage.
ModelGraph resnet34_3d(std::size_t base, std::size_t in_channels = 3);
/// Five dense blocks of four layers each, joined by 1x1x1 transitions and pooling.
ModelGraph densenet_3d(std::size_t growth, std::size_t stem_channels, std::size_t classes = 4);
/// Three-level UNet with two 3x3x3 convs per level and nearest upsampling.
ModelGraph unet_3d(std::size_t base, std::size_t classes = 3);

/// "resnet34_3d", "densenet_3d", "unet_3d".
const std::vector<std::string>& fixture_names();
ModelGraph fixture(const std::string& name, FixtureWidth width);
/// Input shape used to run the reduced-width variant.
Shape fixture_input_shape(const std::string& name);

}  // namespace psc
