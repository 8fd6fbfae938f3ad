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

#include "psc/graph.hpp"

#include <algorithm>
#include <cstdint>
#include <optional>
#include <queue>
#include <set>

namespace psc {

using nlohmann::json;

namespace {

constexpr std::pair<OpKind, const char*> kOpNames[] = {
    {OpKind::input, "input"},     {OpKind::output, "output"},   {OpKind::conv3d, "conv3d"},
    {OpKind::relu, "relu"},       {OpKind::maxpool, "maxpool"}, {OpKind::upsample, "upsample"},
    {OpKind::concat, "concat"},   {OpKind::add, "add"},         {OpKind::psc_block, "psc_block"},
};

}  // namespace

const char* to_string(OpKind op) {
  for (const auto& [k, name] : kOpNames)
    if (k == op) return name;
  return "?";
}

OpKind parse_op_kind(std::string_view name) {
  for (const auto& [k, n] : kOpNames)
    if (name == n) return k;
  throw std::invalid_argument("unknown op kind '" + std::string(name) + "'");
}

GraphError::GraphError(const std::string& node, const std::string& field, const std::string& message)
    : std::runtime_error("node '" + node + "'" + (field.empty() ? "" : ", field '" + field + "'") + ": " + message),
      node_(node),
      field_(field) {}

ModelGraph::ModelGraph(std::vector<Node> nodes) : nodes_(std::move(nodes)) { build(); }

const Node& ModelGraph::node(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw GraphError(id, "", "no such node");
  return nodes_[it->second];
}

const std::vector<std::string>& ModelGraph::consumers(const std::string& id) const {
  static const std::vector<std::string> none;
  auto it = consumers_.find(id);
  return it == consumers_.end() ? none : it->second;
}

std::size_t ModelGraph::channels(const std::string& id) const {
  auto it = channels_.find(id);
  if (it == channels_.end()) throw GraphError(id, "", "no such node");
  return it->second;
}

const Node& ModelGraph::input_node() const {
  for (const auto& n : nodes_)
    if (n.op == OpKind::input) return n;
  throw GraphError("", "", "graph has no input node");
}

const Node& ModelGraph::output_node() const {
  for (const auto& n : nodes_)
    if (n.op == OpKind::output) return n;
  throw GraphError("", "", "graph has no output node");
}

void ModelGraph::build() {
  index_.clear();
  consumers_.clear();
  channels_.clear();
  topo_.clear();
  std::size_t inputs = 0, outputs = 0;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.id.empty()) throw GraphError("#" + std::to_string(i), "id", "node id must be non-empty");
    if (!index_.emplace(n.id, i).second) throw GraphError(n.id, "id", "duplicate node id");
    inputs += n.op == OpKind::input;
    outputs += n.op == OpKind::output;
  }
  if (inputs != 1) throw GraphError("", "nodes", "graph needs exactly one input node, found " + std::to_string(inputs));
  if (outputs != 1) {
    throw GraphError("", "nodes", "graph needs exactly one output node, found " + std::to_string(outputs));
  }

  std::vector<std::size_t> indegree(nodes_.size(), 0);
  for (const Node& n : nodes_) {
    std::size_t lo = 1, hi = 1;
    switch (n.op) {
      case OpKind::input: lo = hi = 0; break;
      case OpKind::add: lo = 2; hi = SIZE_MAX; break;
      case OpKind::concat: hi = SIZE_MAX; break;
      default: break;
    }
    if (n.inputs.size() < lo || n.inputs.size() > hi) {
      throw GraphError(n.id, "inputs", std::string(to_string(n.op)) + " cannot take " +
                                           std::to_string(n.inputs.size()) + " inputs");
    }
    for (const auto& src : n.inputs) {
      if (!index_.count(src)) throw GraphError(n.id, "inputs", "unknown input '" + src + "'");
      consumers_[src].push_back(n.id);
    }
    indegree[index_[n.id]] = n.inputs.size();
    const bool ok = [&] {
      switch (n.op) {
        case OpKind::input: return std::holds_alternative<InputAttrs>(n.attrs);
        case OpKind::conv3d: return std::holds_alternative<ConvSpec>(n.attrs);
        case OpKind::maxpool: return std::holds_alternative<PoolAttrs>(n.attrs);
        case OpKind::upsample: return std::holds_alternative<UpsampleAttrs>(n.attrs);
        case OpKind::psc_block: return std::holds_alternative<PscBlockAttrs>(n.attrs);
        default: return std::holds_alternative<std::monostate>(n.attrs);
      }
    }();
    if (!ok) throw GraphError(n.id, "attrs", std::string("attributes do not match op ") + to_string(n.op));
  }

  // Kahn's algorithm, always releasing the earliest stored node first.
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (indegree[i] == 0) ready.push(i);
  while (!ready.empty()) {
    const std::size_t i = ready.top();
    ready.pop();
    topo_.push_back(i);
    for (const auto& c : consumers(nodes_[i].id)) {
      // consumers_ holds one entry per input slot, matching the indegree count.
      const std::size_t ci = index_[c];
      if (--indegree[ci] == 0) ready.push(ci);
    }
  }
  if (topo_.size() != nodes_.size()) throw GraphError("", "nodes", "graph contains a cycle");

  for (std::size_t i : topo_) {
    const Node& n = nodes_[i];
    auto in_ch = [&](std::size_t k) { return channels_.at(n.inputs[k]); };
    std::size_t out = 0;
    switch (n.op) {
      case OpKind::input: out = std::get<InputAttrs>(n.attrs).channels; break;
      case OpKind::conv3d: {
        const ConvSpec& c = n.conv();
        try {
          c.validate();
        } catch (const std::exception& e) {
          throw GraphError(n.id, "attrs", e.what());
        }
        if (in_ch(0) != c.in_channels) {
          throw GraphError(n.id, "in_ch", "is " + std::to_string(c.in_channels) + " but input '" + n.inputs[0] +
                                              "' has " + std::to_string(in_ch(0)) + " channels");
        }
        out = c.out_channels;
        break;
      }
      case OpKind::psc_block: {
        const PscBlockSpec& b = n.block().spec;
        if (in_ch(0) != b.in_channels) {
          throw GraphError(n.id, "in_ch", "is " + std::to_string(b.in_channels) + " but input '" + n.inputs[0] +
                                              "' has " + std::to_string(in_ch(0)) + " channels");
        }
        out = b.out_channels;
        break;
      }
      case OpKind::add:
        out = in_ch(0);
        for (std::size_t k = 1; k < n.inputs.size(); ++k)
          if (in_ch(k) != out) throw GraphError(n.id, "inputs", "add inputs disagree on channel count");
        break;
      case OpKind::concat:
        for (std::size_t k = 0; k < n.inputs.size(); ++k) out += in_ch(k);
        break;
      default: out = in_ch(0); break;
    }
    channels_[n.id] = out;
  }
}

// ---------------------------------------------------------------------------
// JSON

namespace {

const json& field(const json& obj, const char* key, const std::string& node) {
  if (!obj.is_object() || !obj.contains(key)) throw GraphError(node, key, "missing");
  return obj.at(key);
}

std::size_t positive(const json& obj, const char* key, const std::string& node) {
  const json& v = field(obj, key, node);
  if (!v.is_number_integer() || v.get<std::int64_t>() <= 0) throw GraphError(node, key, "must be a positive integer");
  return v.get<std::size_t>();
}

Extent3 extent3(const json& obj, const char* key, const std::string& node, std::optional<Extent3> fallback,
                bool allow_zero) {
  if (!obj.contains(key)) {
    if (fallback) return *fallback;
    throw GraphError(node, key, "missing");
  }
  const json& v = obj.at(key);
  if (!v.is_array() || v.size() != 3) throw GraphError(node, key, "must be an array of 3 integers");
  Extent3 e{};
  for (std::size_t k = 0; k < 3; ++k) {
    if (!v[k].is_number_integer() || v[k].get<std::int64_t>() < (allow_zero ? 0 : 1)) {
      throw GraphError(node, key, allow_zero ? "entries must be non-negative integers" : "entries must be positive");
    }
    e[k] = v[k].get<std::size_t>();
  }
  return e;
}

json conv_to_json(const ConvSpec& c) {
  return json{{"kernel", c.kernel}, {"in_ch", c.in_channels}, {"out_ch", c.out_channels},
              {"stride", c.stride}, {"pad", c.padding},       {"bias", c.bias}};
}

ConvSpec conv_from_json(const json& a, const std::string& id) {
  ConvSpec c;
  c.kernel = extent3(a, "kernel", id, std::nullopt, false);
  c.in_channels = positive(a, "in_ch", id);
  c.out_channels = positive(a, "out_ch", id);
  c.stride = extent3(a, "stride", id, Extent3{1, 1, 1}, false);
  c.padding = extent3(a, "pad", id, Extent3{0, 0, 0}, true);
  if (a.contains("bias")) {
    if (!a["bias"].is_boolean()) throw GraphError(id, "bias", "must be a boolean");
    c.bias = a["bias"].get<bool>();
  } else {
    c.bias = true;
  }
  return c;
}

json attrs_to_json(const Node& n) {
  return std::visit(
      [](const auto& a) -> json {
        using T = std::decay_t<decltype(a)>;
        if constexpr (std::is_same_v<T, std::monostate>) {
          return json::object();
        } else if constexpr (std::is_same_v<T, InputAttrs>) {
          return json{{"channels", a.channels}};
        } else if constexpr (std::is_same_v<T, ConvSpec>) {
          return conv_to_json(a);
        } else if constexpr (std::is_same_v<T, PoolAttrs>) {
          return json{{"window", a.window}, {"stride", a.stride}};
        } else if constexpr (std::is_same_v<T, UpsampleAttrs>) {
          return json{{"factor", a.factor}};
        } else {
          json j = block_spec_to_json(a.spec);
          j["replaces"] = a.replaces;
          return j;
        }
      },
      n.attrs);
}

}  // namespace

json block_spec_to_json(const PscBlockSpec& s) {
  json orient = json::array();
  for (Axis a : s.orientations) {
    const auto plane = plane_axes(a);
    orient.push_back({{"axis", static_cast<int>(a)},
                      {"plane", {static_cast<int>(plane[0]), static_cast<int>(plane[1])}}});
  }
  return json{{"m", s.m},
              {"n", s.n},
              {"d", s.d},
              {"in_ch", s.in_channels},
              {"out_ch", s.out_channels},
              {"M", s.M},
              {"s", s.s},
              {"per_stream_filters", s.per_stream_filters},
              {"per_stream_out", s.per_stream_out},
              {"orientations", orient},
              {"stride", s.stride},
              {"pad", s.padding}};
}

PscBlockSpec block_spec_from_json(const json& a, const std::string& id) {
  PscBlockSpec s;
  s.m = static_cast<int>(positive(a, "m", id));
  s.n = static_cast<int>(positive(a, "n", id));
  s.d = positive(a, "d", id);
  s.in_channels = positive(a, "in_ch", id);
  s.out_channels = positive(a, "out_ch", id);
  s.M = positive(a, "M", id);
  s.s = positive(a, "s", id);
  s.per_stream_filters = positive(a, "per_stream_filters", id);
  const json& pso = field(a, "per_stream_out", id);
  if (!pso.is_array()) throw GraphError(id, "per_stream_out", "must be an array");
  for (const auto& v : pso) {
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
      throw GraphError(id, "per_stream_out", "entries must be non-negative integers");
    }
    s.per_stream_out.push_back(v.get<std::size_t>());
  }
  const json& orient = field(a, "orientations", id);
  if (!orient.is_array()) throw GraphError(id, "orientations", "must be an array");
  for (const auto& o : orient) {
    if (!o.is_object() || !o.contains("axis") || !o["axis"].is_number_integer()) {
      throw GraphError(id, "orientations", "entries need an integer \"axis\"");
    }
    const int ax = o["axis"].get<int>();
    if (ax < 1 || ax > 3) throw GraphError(id, "orientations", "axis must be 1, 2 or 3");
    const Axis axis = static_cast<Axis>(ax);
    if (o.contains("plane")) {
      const auto plane = plane_axes(axis);
      const json expect = {static_cast<int>(plane[0]), static_cast<int>(plane[1])};
      if (o["plane"] != expect) throw GraphError(id, "orientations", "plane must be the two axes other than axis");
    }
    s.orientations.push_back(axis);
  }
  s.stride = extent3(a, "stride", id, Extent3{1, 1, 1}, false);
  const std::size_t p = (s.d - 1) / 2;
  s.padding = extent3(a, "pad", id, Extent3{p, p, p}, true);
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw GraphError(id, "attrs", e.what());
  }
  return s;
}

json graph_to_json(const ModelGraph& graph) {
  json nodes = json::array();
  for (const Node& n : graph.nodes()) {
    nodes.push_back({{"id", n.id}, {"op", to_string(n.op)}, {"inputs", n.inputs}, {"attrs", attrs_to_json(n)}});
  }
  return json{{"version", 1}, {"nodes", nodes}};
}

ModelGraph graph_from_json(const json& doc) {
  if (!doc.is_object()) throw GraphError("", "", "model document must be a JSON object");
  if (!doc.contains("version") || doc["version"] != 1) throw GraphError("", "version", "must be 1");
  const json& arr = field(doc, "nodes", "");
  if (!arr.is_array()) throw GraphError("", "nodes", "must be an array");
  std::vector<Node> nodes;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const json& jn = arr[i];
    const std::string pos = "#" + std::to_string(i);
    if (!jn.is_object()) throw GraphError(pos, "", "node must be an object");
    if (!jn.contains("id") || !jn["id"].is_string()) throw GraphError(pos, "id", "missing or not a string");
    Node n;
    n.id = jn["id"].get<std::string>();
    if (!jn.contains("op") || !jn["op"].is_string()) throw GraphError(n.id, "op", "missing or not a string");
    try {
      n.op = parse_op_kind(jn["op"].get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw GraphError(n.id, "op", e.what());
    }
    if (jn.contains("inputs")) {
      if (!jn["inputs"].is_array()) throw GraphError(n.id, "inputs", "must be an array of ids");
      for (const auto& v : jn["inputs"]) {
        if (!v.is_string()) throw GraphError(n.id, "inputs", "must be an array of ids");
        n.inputs.push_back(v.get<std::string>());
      }
    }
    const json attrs = jn.contains("attrs") ? jn["attrs"] : json::object();
    if (!attrs.is_object()) throw GraphError(n.id, "attrs", "must be an object");
    switch (n.op) {
      case OpKind::input: n.attrs = InputAttrs{positive(attrs, "channels", n.id)}; break;
      case OpKind::conv3d: n.attrs = conv_from_json(attrs, n.id); break;
      case OpKind::maxpool: {
        PoolAttrs p;
        p.window = extent3(attrs, "window", n.id, std::nullopt, false);
        p.stride = extent3(attrs, "stride", n.id, p.window, false);
        n.attrs = p;
        break;
      }
      case OpKind::upsample: n.attrs = UpsampleAttrs{extent3(attrs, "factor", n.id, std::nullopt, false)}; break;
      case OpKind::psc_block: {
        PscBlockAttrs b;
        b.spec = block_spec_from_json(attrs, n.id);
        if (attrs.contains("replaces")) {
          if (!attrs["replaces"].is_array()) throw GraphError(n.id, "replaces", "must be an array of ids");
          for (const auto& v : attrs["replaces"]) b.replaces.push_back(v.get<std::string>());
        }
        n.attrs = std::move(b);
        break;
      }
      default: break;
    }
    nodes.push_back(std::move(n));
  }
  return ModelGraph(std::move(nodes));
}

ModelGraph parse_model(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw GraphError("", "", std::string("malformed JSON: ") + e.what());
  }
  return graph_from_json(doc);
}

std::string serialize_model(const ModelGraph& graph) { return graph_to_json(graph).dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Replacement groups

namespace {

bool chainable_conv(const Node& n) { return n.op == OpKind::conv3d && n.conv().kind() != ConvKind::kPointwise; }

// The next conv in a chain after `conv`, and the ReLU between them if any.
std::optional<std::pair<std::string, std::string>> chain_successor(const ModelGraph& g, const Node& conv) {
  const auto& cons = g.consumers(conv.id);
  if (cons.size() != 1) return std::nullopt;
  const Node& next = g.node(cons[0]);
  if (chainable_conv(next)) return std::make_pair(next.id, std::string());
  if (next.op != OpKind::relu) return std::nullopt;
  const auto& after = g.consumers(next.id);
  if (after.size() != 1) return std::nullopt;
  const Node& conv2 = g.node(after[0]);
  if (!chainable_conv(conv2)) return std::nullopt;
  return std::make_pair(conv2.id, next.id);
}

ReplacementGroup make_group(const ModelGraph& g, const std::vector<std::string>& convs,
                            const std::vector<std::string>& gaps) {
  ReplacementGroup r;
  r.node_ids = convs;
  for (const auto& relu : gaps) {
    r.interleaved_relu.push_back(!relu.empty());
    if (!relu.empty()) r.relu_ids.push_back(relu);
  }
  const ConvSpec& first = g.node(convs.front()).conv();
  r.in_channels = first.in_channels;
  r.out_channels = g.node(convs.back()).conv().out_channels;
  r.padding = first.padding;
  for (const auto& id : convs) {
    const ConvSpec& c = g.node(id).conv();
    for (int k = 0; k < 3; ++k) r.stride[k] *= c.stride[k];
  }
  return r;
}

}  // namespace

std::vector<ReplacementGroup> find_groups(const ModelGraph& graph, std::size_t max_len) {
  std::set<std::string> has_predecessor;
  for (const Node& n : graph.nodes()) {
    if (!chainable_conv(n)) continue;
    if (auto next = chain_successor(graph, n)) has_predecessor.insert(next->first);
  }
  std::vector<ReplacementGroup> groups;
  for (std::size_t i : graph.topo_order()) {
    const Node& start = graph.node(graph.nodes()[i].id);
    if (!chainable_conv(start) || has_predecessor.count(start.id)) continue;
    std::vector<std::string> convs{start.id};
    std::vector<std::string> gaps;
    for (auto next = chain_successor(graph, start); next; next = chain_successor(graph, graph.node(next->first))) {
      gaps.push_back(next->second);
      convs.push_back(next->first);
    }
    const std::size_t seg = max_len == 0 ? convs.size() : max_len;
    for (std::size_t b = 0; b < convs.size(); b += seg) {
      const std::size_t e = std::min(convs.size(), b + seg);
      std::vector<std::string> part(convs.begin() + std::ptrdiff_t(b), convs.begin() + std::ptrdiff_t(e));
      std::vector<std::string> part_gaps(gaps.begin() + std::ptrdiff_t(b), gaps.begin() + std::ptrdiff_t(e - 1));
      groups.push_back(make_group(graph, part, part_gaps));
    }
  }
  return groups;
}

// ---------------------------------------------------------------------------
// Rewrite

RewriteResult rewrite(const ModelGraph& graph, int m, int n, const RewriteOptions& options) {
  RewriteResult result;
  std::map<std::string, std::string> redirect;  // last conv of a group -> block id
  std::map<std::string, Node> block_at;          // first conv of a group -> block node
  std::set<std::string> removed;

  std::set<std::string> used_ids;
  for (const Node& nd : graph.nodes()) used_ids.insert(nd.id);

  for (const auto& group : find_groups(graph, options.max_len)) {
    auto skip = [&](const std::string& why) {
      std::string ids;
      for (const auto& id : group.node_ids) ids += (ids.empty() ? "" : ",") + id;
      result.warnings.push_back("group [" + ids + "] skipped: " + why);
      ++result.groups_skipped;
    };
    const Extent3 k0 = graph.node(group.node_ids.front()).conv().kernel;
    bool uniform = k0[0] == k0[1] && k0[1] == k0[2];
    for (const auto& id : group.node_ids) uniform = uniform && graph.node(id).conv().kernel == k0;
    if (!uniform) {
      skip("non-cubic or mixed kernel sizes");
      continue;
    }
    BuildOptions bo;
    bo.full_M_per_stream = options.full_M_per_stream;
    bo.stride = group.stride;
    bo.padding = group.padding;
    PscBlockSpec spec;
    try {
      spec = build_block(m, n, k0[0], group.in_channels, group.out_channels, bo);
    } catch (const std::invalid_argument& e) {
      skip(e.what());
      continue;
    }
    std::string id = "psc_" + group.node_ids.front();
    while (used_ids.count(id)) id += "_";
    used_ids.insert(id);

    Node block;
    block.id = id;
    block.op = OpKind::psc_block;
    block.inputs = graph.node(group.node_ids.front()).inputs;
    block.attrs = PscBlockAttrs{spec, group.node_ids};
    block_at.emplace(group.node_ids.front(), std::move(block));
    redirect[group.node_ids.back()] = id;
    for (const auto& c : group.node_ids) removed.insert(c);
    for (const auto& r : group.relu_ids) removed.insert(r);
    ++result.groups_replaced;
  }

  std::vector<Node> out;
  for (const Node& nd : graph.nodes()) {
    if (auto it = block_at.find(nd.id); it != block_at.end()) {
      out.push_back(it->second);
      continue;
    }
    if (removed.count(nd.id)) continue;
    Node copy = nd;
    for (auto& in : copy.inputs)
      if (auto r = redirect.find(in); r != redirect.end()) in = r->second;
    out.push_back(std::move(copy));
  }
  result.graph = ModelGraph(std::move(out));
  return result;
}

// ---------------------------------------------------------------------------
// Counting

ParamReport count_params(const ModelGraph& graph) {
  ParamReport r;
  for (const Node& n : graph.nodes()) {
    std::size_t p = 0;
    if (n.op == OpKind::conv3d) p = n.conv().param_count();
    if (n.op == OpKind::psc_block) p = block_param_count(n.block().spec);
    r.nodes.push_back({n.id, n.op, p});
    r.total += p;
  }
  return r;
}

json RewriteReport::to_json() const {
  return json{{"total_before", total_before},       {"total_after", total_after},
              {"reduction_pct", reduction_pct},     {"groups_replaced", groups_replaced},
              {"groups_skipped", groups_skipped}};
}

RewriteReport rewrite_report(const ModelGraph& before, const ModelGraph& after, std::size_t max_len) {
  RewriteReport r;
  r.total_before = count_params(before).total;
  r.total_after = count_params(after).total;
  r.reduction_pct = r.total_before == 0
                        ? 0.0
                        : 100.0 * (static_cast<double>(r.total_before) - static_cast<double>(r.total_after)) /
                              static_cast<double>(r.total_before);
  for (const Node& n : after.nodes()) {
    if (n.op == OpKind::psc_block && !(before.contains(n.id) && before.node(n.id).op == OpKind::psc_block)) {
      ++r.groups_replaced;
    }
  }
  r.groups_skipped = find_groups(after, max_len).size();
  return r;
}

}  // namespace psc
