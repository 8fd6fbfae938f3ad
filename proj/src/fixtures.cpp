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

#include "psc/fixtures.hpp"

#include <stdexcept>

namespace psc {

namespace {

class Builder {
 public:
  std::string input(std::size_t channels) {
    return push("input", OpKind::input, {}, InputAttrs{channels});
  }

  std::string conv(const std::string& id, const std::string& src, std::size_t in, std::size_t out, Extent3 kernel,
                   Extent3 stride = {1, 1, 1}, std::optional<Extent3> pad = std::nullopt) {
    ConvSpec c;
    c.kernel = kernel;
    c.in_channels = in;
    c.out_channels = out;
    c.stride = stride;
    c.padding = pad.value_or(Extent3{(kernel[0] - 1) / 2, (kernel[1] - 1) / 2, (kernel[2] - 1) / 2});
    c.bias = true;
    return push(id, OpKind::conv3d, {src}, c);
  }

  std::string conv3(const std::string& id, const std::string& src, std::size_t in, std::size_t out,
                    std::size_t stride = 1) {
    return conv(id, src, in, out, {3, 3, 3}, {stride, stride, stride});
  }

  std::string relu(const std::string& id, const std::string& src) { return push(id, OpKind::relu, {src}, {}); }

  std::string pool(const std::string& id, const std::string& src) {
    return push(id, OpKind::maxpool, {src}, PoolAttrs{});
  }

  std::string upsample(const std::string& id, const std::string& src, std::size_t f) {
    return push(id, OpKind::upsample, {src}, UpsampleAttrs{{f, f, f}});
  }

  std::string concat(const std::string& id, std::vector<std::string> srcs) {
    return push(id, OpKind::concat, std::move(srcs), {});
  }

  std::string add(const std::string& id, std::vector<std::string> srcs) {
    return push(id, OpKind::add, std::move(srcs), {});
  }

  ModelGraph finish(const std::string& src) {
    push("output", OpKind::output, {src}, {});
    return ModelGraph(std::move(nodes_));
  }

 private:
  std::string push(const std::string& id, OpKind op, std::vector<std::string> inputs, NodeAttrs attrs) {
    nodes_.push_back(Node{id, op, std::move(inputs), std::move(attrs)});
    return id;
  }

  std::vector<Node> nodes_;
};

}  // namespace

// Stem: 3x7x7 conv, stride 1 in depth and 2 in-plane, then 2x2x2 max pooling.
// Stages of [3, 4, 6, 3] basic blocks at base * {1, 2, 4, 8} channels. The first
// block of each later stage downsamples with a stride-2 conv and a 1x1x1 projection
// shortcut. No batch norm and no classifier head; every conv carries a bias.
ModelGraph resnet34_3d(std::size_t base, std::size_t in_channels) {
  Builder b;
  std::string x = b.input(in_channels);
  x = b.conv("stem_conv", x, in_channels, base, {3, 7, 7}, {1, 2, 2}, Extent3{1, 3, 3});
  x = b.relu("stem_relu", x);
  x = b.pool("stem_pool", x);
  const std::size_t blocks[] = {3, 4, 6, 3};
  std::size_t in = base;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t out = base << s;
    for (std::size_t k = 0; k < blocks[s]; ++k) {
      const std::string p = "s" + std::to_string(s + 1) + "b" + std::to_string(k + 1) + "_";
      const std::size_t stride = (s > 0 && k == 0) ? 2 : 1;
      std::string y = b.conv3(p + "conv1", x, in, out, stride);
      y = b.relu(p + "relu1", y);
      y = b.conv3(p + "conv2", y, out, out);
      std::string skip = x;
      if (stride != 1 || in != out) skip = b.conv(p + "proj", x, in, out, {1, 1, 1}, {stride, stride, stride});
      y = b.add(p + "add", {y, skip});
      x = b.relu(p + "relu2", y);
      in = out;
    }
  }
  return b.finish(x);
}

// Single-channel input. Dense layers are ReLU then a 3x3x3 conv producing `growth`
// channels, concatenated onto the running features. Transitions keep the channel
// count (1x1x1 conv) and halve the extent. Four poolings are undone by one x16
// nearest upsampling before the 1x1x1 classifier.
ModelGraph densenet_3d(std::size_t growth, std::size_t stem_channels, std::size_t classes) {
  Builder b;
  std::string x = b.input(1);
  x = b.conv3("stem_conv", x, 1, stem_channels);
  std::size_t ch = stem_channels;
  for (std::size_t blk = 1; blk <= 5; ++blk) {
    const std::string p = "d" + std::to_string(blk) + "_";
    for (std::size_t l = 1; l <= 4; ++l) {
      const std::string q = p + "l" + std::to_string(l) + "_";
      std::string y = b.relu(q + "relu", x);
      y = b.conv3(q + "conv", y, ch, growth);
      x = b.concat(q + "cat", {x, y});
      ch += growth;
    }
    if (blk < 5) {
      x = b.conv(p + "trans", x, ch, ch, {1, 1, 1});
      x = b.pool(p + "pool", x);
    }
  }
  x = b.relu("head_relu", x);
  x = b.upsample("head_up", x, 16);
  x = b.conv("head_conv", x, ch, classes, {1, 1, 1});
  return b.finish(x);
}

// Single-channel input, channels base * {1, 2, 4, 8} from top to bottom. Each level
// is conv-ReLU-conv-ReLU; the decoder upsamples x2 and concatenates the encoder
// features before its two convs. Classifier is a 1x1x1 conv.
ModelGraph unet_3d(std::size_t base, std::size_t classes) {
  Builder b;
  std::string x = b.input(1);
  auto level = [&](const std::string& p, const std::string& src, std::size_t in, std::size_t out) {
    std::string y = b.conv3(p + "conv1", src, in, out);
    y = b.relu(p + "relu1", y);
    y = b.conv3(p + "conv2", y, out, out);
    return b.relu(p + "relu2", y);
  };
  std::vector<std::string> skips;
  std::size_t in = 1;
  for (std::size_t l = 0; l < 3; ++l) {
    const std::string p = "enc" + std::to_string(l) + "_";
    x = level(p, x, in, base << l);
    skips.push_back(x);
    x = b.pool(p + "pool", x);
    in = base << l;
  }
  x = level("bottom_", x, in, base << 3);
  in = base << 3;
  for (std::size_t l = 3; l-- > 0;) {
    const std::string p = "dec" + std::to_string(l) + "_";
    x = b.upsample(p + "up", x, 2);
    x = b.concat(p + "cat", {skips[l], x});
    x = level(p, x, in + (base << l), base << l);
    in = base << l;
  }
  x = b.conv("head_conv", x, in, classes, {1, 1, 1});
  return b.finish(x);
}

const std::vector<std::string>& fixture_names() {
  static const std::vector<std::string> names{"resnet34_3d", "densenet_3d", "unet_3d"};
  return names;
}

ModelGraph fixture(const std::string& name, FixtureWidth width) {
  const bool full = width == FixtureWidth::full;
  if (name == "resnet34_3d") return resnet34_3d(full ? 64 : 4);
  if (name == "densenet_3d") return full ? densenet_3d(28, 56) : densenet_3d(4, 8);
  if (name == "unet_3d") return unet_3d(full ? 60 : 4);
  throw std::invalid_argument("unknown fixture '" + name + "'");
}

Shape fixture_input_shape(const std::string& name) {
  if (name == "resnet34_3d") return {1, 3, 16, 16, 16};
  if (name == "densenet_3d" || name == "unet_3d") return {1, 1, 16, 16, 16};
  throw std::invalid_argument("unknown fixture '" + name + "'");
}

}  // namespace psc
