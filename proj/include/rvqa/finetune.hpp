// Copyright 2026 The rvqa Authors
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

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rvqa/completeness.hpp"
#include "rvqa/grad.hpp"
#include "rvqa/quantizer.hpp"

namespace rvqa {

struct SoftAssignment {
  Matrix assignment;  // T x N, rows sum to one
  Matrix frames;      // T x d, assignment * codebook
};

/// logits_j = -||r - v_j||^2, assignment = softmax((logits + noise) / tau).
/// With `noise` null, Gumbel noise is drawn from `rng`.
SoftAssignment soft_encode_stage(const Matrix& codebook, const Matrix& residuals, double tau,
                                 Rng* rng, const Matrix* noise = nullptr);

/// Differentiable cascade of L soft-encoded stages. The output is the sum of
/// the soft-quantised frames of every stage; each stage sees the residual
/// left by the soft reconstruction of the stages before it.
class SoftRvqLayer : public Layer {
 public:
  SoftRvqLayer(const RvqModel& model, double tau);

  std::string kind() const override { return "soft_rvq"; }
  Matrix forward(const Matrix& x, ForwardContext& ctx) override;
  Matrix backward(const Matrix& grad_out) override;
  std::vector<Parameter*> parameters() override;
  std::optional<std::size_t> input_features() const override { return dim_; }
  nlohmann::json describe() const override;

  /// Reuse the noise of the last forward pass for every later pass.
  void freeze_noise() { frozen_ = true; }
  /// Drive every stage with zero noise.
  void zero_noise() { zero_noise_ = true; }
  void release_noise() { frozen_ = zero_noise_ = false; }

  /// Current codebooks as a model.
  RvqModel to_model() const;
  const Matrix& last_assignment(std::size_t stage) const { return assignments_.at(stage); }

 private:
  double tau_;
  std::size_t dim_;
  std::vector<Parameter> codebooks_;
  bool frozen_ = false;
  bool zero_noise_ = false;
  std::vector<Matrix> noise_;
  std::vector<Matrix> residuals_;    // input residual of each stage
  std::vector<Matrix> assignments_;  // soft assignment of each stage
};

struct FinetuneConfig {
  double tau = 1.0;
  /// Only "constant" is accepted.
  std::string tau_schedule = "constant";
  /// Linear or mlp probe, trained jointly and then discarded. Only its shape
  /// and init seed are used; both phases train with `train` below.
  ProbeConfig probe;
  /// Epochs during which only the probe learns, before the joint phase.
  std::size_t probe_warmup_epochs = 0;
  TrainConfig train;  // joint phase: lr, batch, epochs, seed

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static FinetuneConfig from_json(const nlohmann::json& j);
};

struct FinetuneResult {
  RvqModel model;
  std::vector<double> warmup_loss;
  std::vector<double> epoch_loss;

  nlohmann::ordered_json log_json(const FinetuneConfig& config) const;
};

/// Jointly trains every codebook and a regression probe to minimise the MSE
/// between probe(soft-decoded frames) and the log-Mel targets. The returned
/// model is meant for hard nearest-neighbour encoding.
FinetuneResult finetune_rvq(const RvqModel& model, const FrameSequence& reps, const Matrix& mels,
                            const FinetuneConfig& config);

}  // namespace rvqa
