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

// Writes the bundled fixture graphs as JSON.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "psc/fixtures.hpp"

int main(int argc, char** argv) {
  const std::filesystem::path dir = argc > 1 ? argv[1] : "fixtures";
  std::filesystem::create_directories(dir);
  for (const auto& name : psc::fixture_names()) {
    for (auto width : {psc::FixtureWidth::full, psc::FixtureWidth::reduced}) {
      const auto path = dir / (name + (width == psc::FixtureWidth::full ? ".json" : "_reduced.json"));
      std::ofstream f(path);
      f << psc::serialize_model(psc::fixture(name, width));
      if (!f) {
        std::cerr << "cannot write " << path << "\n";
        return 1;
      }
    }
  }
  return 0;
}
