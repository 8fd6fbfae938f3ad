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

// Layer-level model graphs and the pass that swaps chains of 3D convolutions
// for parallel separable blocks.
//
// JSON form: {"version": 1, "nodes": [{"id", "op", "inputs", "attrs"}]}.
// Serialization is canonical: sorted object keys, two-space indent, nodes in
// stored order.

#pragma once

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "psc/block.hpp"
#include "psc/conv.hpp"

namespace psc {

enum class OpKind { input, output, conv3d, relu, maxpool, upsample, concat, add, psc_block };

const char* to_string(OpKind op);
OpKind parse_op_kind(std::string_view name);

struct InputAttrs {
  std::size_t channels = 1;
  friend bool operator==(const InputAttrs&, const InputAttrs&) = default;
};

struct PoolAttrs {
  Extent3 window{2, 2, 2};
  Extent3 stride{2, 2, 2};
  friend bool operator==(const PoolAttrs&, const PoolAttrs&) = default;
};

struct UpsampleAttrs {
  Extent3 factor{2, 2, 2};
  friend bool operator==(const UpsampleAttrs&, const UpsampleAttrs&) = default;
};

struct PscBlockAttrs {
  PscBlockSpec spec;
  std::vector<std::string> replaces;  // ids of the convolutions this block stands for
  friend bool operator==(const PscBlockAttrs&, const PscBlockAttrs&) = default;
};

using NodeAttrs = std::variant<std::monostate, InputAttrs, ConvSpec, PoolAttrs, UpsampleAttrs, PscBlockAttrs>;

struct Node {
  std::string id;
  OpKind op = OpKind::relu;
  std::vector<std::string> inputs;
  NodeAttrs attrs;

  const ConvSpec& conv() const { return std::get<ConvSpec>(attrs); }
  const PscBlockAttrs& block() const { return std::get<PscBlockAttrs>(attrs); }

  friend bool operator==(const Node&, const Node&) = default;
};

/// Schema or structural violation, tagged with the node and field involved.
class GraphError : public std::runtime_error {
 public:
  GraphError(const std::string& node, const std::string& field, const std::string& message);
  const std::string& node() const noexcept { return node_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::string node_;
  std::string field_;
};

class ModelGraph {
 public:
  ModelGraph() = default;
  explicit ModelGraph(std::vector<Node> nodes);

  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  const Node& node(const std::string& id) const;
  bool contains(const std::string& id) const { return index_.count(id) != 0; }

  /// Node indices in dependency order (stable with respect to stored order).
  const std::vector<std::size_t>& topo_order() const noexcept { return topo_; }
  /// Ids of the nodes reading each node's output.
  const std::vector<std::string>& consumers(const std::string& id) const;
  /// Channel count each node produces.
  std::size_t channels(const std::string& id) const;

  const Node& input_node() const;
  const Node& output_node() const;

 private:
  void build();

  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> index_;
  std::map<std::string, std::vector<std::string>> consumers_;
  std::map<std::string, std::size_t> channels_;
  std::vector<std::size_t> topo_;
};

nlohmann::json graph_to_json(const ModelGraph& graph);
ModelGraph graph_from_json(const nlohmann::json& doc);
ModelGraph parse_model(std::string_view text);
std::string serialize_model(const ModelGraph& graph);

nlohmann::json block_spec_to_json(const PscBlockSpec& spec);
PscBlockSpec block_spec_from_json(const nlohmann::json& attrs, const std::string& node_id);

/// Consecutive 3D convolutions (optionally separated by ReLU) eligible for joint replacement.
struct ReplacementGroup {
  std::vector<std::string> node_ids;  // convolutions in chain order
  std::vector<std::string> relu_ids;  // ReLUs between consecutive convolutions
  std::vector<bool> interleaved_relu; // per gap between node_ids[i] and node_ids[i + 1]
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  Extent3 stride{1, 1, 1};   // elementwise product over the chain
  Extent3 padding{0, 0, 0};  // of the first convolution
};

/// Maximal conv chains that pass through no pooling, upsampling, branch or
/// merge node, split greedily into pieces of at most max_len convolutions
/// (0 = unbounded). Pointwise (1x1x1) convolutions never join a chain.
std::vector<ReplacementGroup> find_groups(const ModelGraph& graph, std::size_t max_len = 0);

struct RewriteResult {
  ModelGraph graph;
  std::size_t groups_replaced = 0;
  std::size_t groups_skipped = 0;
  std::vector<std::string> warnings;
};

struct RewriteOptions {
  std::size_t max_len = 0;
  bool full_M_per_stream = false;
};

RewriteResult rewrite(const ModelGraph& graph, int m, int n, const RewriteOptions& options = {});

struct NodeParams {
  std::string id;
  OpKind op = OpKind::relu;
  std::size_t params = 0;
};

struct ParamReport {
  std::vector<NodeParams> nodes;
  std::size_t total = 0;
};

ParamReport count_params(const ModelGraph& graph);

struct RewriteReport {
  std::size_t total_before = 0;
  std::size_t total_after = 0;
  double reduction_pct = 0.0;
  std::size_t groups_replaced = 0;
  std::size_t groups_skipped = 0;

  nlohmann::json to_json() const;
};

/// groups_replaced counts blocks present in `after` but not `before`;
/// groups_skipped counts convolution chains still left in `after`.
RewriteReport rewrite_report(const ModelGraph& before, const ModelGraph& after, std::size_t max_len = 0);

}  // namespace psc
