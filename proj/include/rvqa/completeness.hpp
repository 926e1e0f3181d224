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

#include <string>
#include <vector>

#include "json.hpp"
#include "rvqa/grad.hpp"
#include "rvqa/quantizer.hpp"

namespace rvqa {

/// Regression probe families. linear is nested in mlp: an mlp whose hidden
/// layers are at least twice the input width can represent any linear map
/// exactly (see Probe::init_from_linear).
struct ProbeConfig {
  enum class Family { kLinear, kMlp, kConvStack };
  Family family = Family::kLinear;
  std::vector<std::size_t> hidden;    // mlp widths
  std::vector<std::size_t> channels;  // conv_stack widths
  std::vector<std::size_t> kernels;
  std::vector<std::size_t> strides;
  std::size_t segment = 64;  // conv_stack training segment length in frames
  TrainConfig train;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  /// Strict parse: unknown keys and wrong types raise UsageError.
  static ProbeConfig from_json(const nlohmann::json& j);
};

std::string family_name(ProbeConfig::Family family);

class Probe {
 public:
  Probe(const ProbeConfig& config, std::size_t in, std::size_t out);

  /// Predictions for every frame; conv stacks see the whole sequence at once.
  Matrix predict(const Matrix& reps);
  Sequential& network() { return net_; }
  const ProbeConfig& config() const { return config_; }
  std::size_t input_dim() const { return in_; }
  std::size_t output_dim() const { return out_; }

  /// Sets an mlp probe to compute exactly the map of a trained linear probe.
  /// Hidden unit 2j carries relu(x_j), unit 2j+1 carries relu(-x_j).
  void init_from_linear(Probe& linear);

 private:
  ProbeConfig config_;
  std::size_t in_, out_;
  Sequential net_;
};

struct ProbeFit {
  Probe probe;
  TrainingLog log;
  double train_mse = 0.0;  // per-frame MSE of the returned parameters
};

/// Trains `probe` in place to minimise per-frame squared error against
/// `targets`. The returned parameters are the best seen on the full training
/// set, the initial parameters included.
TrainingLog train_probe(Probe& probe, const Matrix& reps, const Matrix& targets,
                        LossKind loss = LossKind::kMse);

/// Builds a fresh probe from `config` and trains it. reps.T must equal mels.T.
ProbeFit fit_probe(const ProbeConfig& config, const FrameSequence& reps, const Matrix& mels);

struct CompletenessReport {
  double mse_per_frame = 0.0;  // sum over bins, mean over frames
  double mse_per_bin = 0.0;
  double snr_db = 0.0;         // +inf when mse is zero
  double bound_minus_hx = 0.0; // nats, lower bound on I(R;X) minus H(X)
  std::size_t d = 0;
  ProbeConfig probe;
  std::string dataset;
  std::size_t frames = 0;

  nlohmann::ordered_json to_json() const;
};

/// -mse/2 + (d/2) ln(2 pi e).
double bound_minus_hx(double mse_per_frame, std::size_t d);

/// Report for fixed predictions.
CompletenessReport completeness_from_predictions(const Matrix& predictions, const Matrix& mels);

CompletenessReport evaluate_completeness(Probe& probe, const FrameSequence& reps,
                                         const Matrix& mels, const std::string& dataset = "");

struct DpiAudit {
  CompletenessReport original;
  CompletenessReport quantized;
  /// quantized MSE below original MSE by more than the tolerance.
  bool violated = false;
};

/// Trains one probe on reps and one (same config and seed) on
/// decode(encode(reps)); both are evaluated on the same frames they were
/// trained on.
DpiAudit dpi_audit(const RvqModel& model, const FrameSequence& reps, const Matrix& mels,
                   const ProbeConfig& config, double tolerance = 1e-6);

}  // namespace rvqa
