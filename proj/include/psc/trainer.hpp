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

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "psc/graph.hpp"
#include "psc/graph_exec.hpp"
#include "psc/tensor.hpp"

namespace psc {

enum class Optimizer { adam, sgd };

struct TrainConfig {
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// 0 means full batch.
  std::size_t batch_size = 0;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::adam;

  void validate() const;
};

struct AdamState {
  std::size_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

/// One bias-corrected Adam update in place. Returns false and leaves params and
/// state untouched when any gradient entry is not finite.
bool adam_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads, AdamState& state,
               const TrainConfig& config);
/// Plain gradient descent, same rejection rule.
bool sgd_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads, const TrainConfig& config);

struct Dataset {
  Tensor train_x, train_y;  // [N, C, D1, D2, D3]
  Tensor val_x, val_y;
};

/// Inputs are uniform in [0, 1].
struct SyntheticTask {
  Dataset data;
  ConvSpec map;        // the hidden map, a padded 3x3x3 conv without bias
  Tensor map_weights;  // [C_out, C_in, 3, 3, 3]
};

struct TaskOptions {
  std::size_t samples = 10;  // split 80/20 into train and val
  std::size_t extent = 4;
  std::size_t in_channels = 8;
  std::size_t out_channels = 12;
  double noise = 0.01;
};

/// Targets from a sum of three separable kernels, one per orientation, plus noise.
SyntheticTask task_fit_separable(std::uint64_t seed, const TaskOptions& options = {});
/// Targets from a channel mix followed by a positive separable blur, plus noise.
SyntheticTask task_fit_blur(std::uint64_t seed, const TaskOptions& options = {});
SyntheticTask make_task(const std::string& name, std::uint64_t seed, const TaskOptions& options = {});

/// Rows `indices` of a batched tensor.
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& indices);

double mse(const Tensor& prediction, const Tensor& target);
double evaluate_loss(const ModelGraph& model, const GraphWeights& weights, const Tensor& x, const Tensor& y);

struct LossAndGrad {
  double loss = 0.0;
  GraphWeights grads;
};
LossAndGrad loss_and_gradient(const ModelGraph& model, const GraphWeights& weights, const Tensor& x,
                              const Tensor& y);

struct History {
  double initial_train_loss = 0.0;
  std::vector<double> train_loss;  // after each epoch
  std::vector<double> val_loss;
  std::vector<double> wall_time_ms;
  bool aborted = false;
  std::string message;

  std::string to_csv() const;
  nlohmann::json to_json() const;
};

/// Mean-squared-error training. Stops early with aborted=true when the loss
/// exceeds 1e6 or a step is rejected; the history then holds the completed epochs.
History train(const ModelGraph& model, GraphWeights& weights, const Dataset& data, const TrainConfig& config);

enum class Variant { conv3d, p1sc1, p2sc2, p3sc1 };
const char* to_string(Variant v);
Variant parse_variant(const std::string& name);
const std::vector<Variant>& all_variants();

/// A single padded 3x3x3 conv from `in` to `out` channels, rewritten for the variant.
ModelGraph variant_model(Variant v, std::size_t in, std::size_t out);

/// Defaults used by the demo and the regression checks.
TrainConfig demo_config(std::uint64_t seed, std::size_t epochs = 500);

struct DemoResult {
  std::string task;
  Variant variant = Variant::conv3d;
  std::size_t params = 0;
  History history;
};
DemoResult run_demo(const std::string& task, Variant variant, std::uint64_t seed, std::size_t epochs);

/// Train and validation curves of the 3D conv and a P2SC2 block of close parameter
/// count on a small training set of the separable task.
nlohmann::json matched_curve_report(std::uint64_t seed, std::size_t epochs);

}  // namespace psc
