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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rvqa/common.hpp"

namespace rvqa {

/// A trainable tensor. Values are kept in double precision; checkpoints store
/// float32.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool requires_grad = true;
};

struct ForwardContext {
  Rng* rng = nullptr;  // consumed by stochastic layers
};

/// Layers map a (rows x features) matrix to another. For conv1d the rows are
/// time steps of one sequence; for every other layer they are independent
/// examples. forward() caches what backward() needs, so one layer instance
/// serves one graph at a time.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string kind() const = 0;
  virtual Matrix forward(const Matrix& x, ForwardContext& ctx) = 0;
  /// Returns dLoss/dInput and accumulates parameter gradients.
  virtual Matrix backward(const Matrix& grad_out) = 0;
  virtual std::vector<Parameter*> parameters() { return {}; }
  /// Feature count this layer expects, or nullopt when any width is fine.
  virtual std::optional<std::size_t> input_features() const { return std::nullopt; }
  virtual std::size_t output_features(std::size_t input_features) const {
    return input_features;
  }
  /// Architecture description used by checkpoints.
  virtual nlohmann::json describe() const = 0;
};

class Linear : public Layer {
 public:
  /// Weights uniform in +-sqrt(1/in), biases zero.
  Linear(std::size_t in, std::size_t out, Rng& rng);
  std::string kind() const override { return "linear"; }
  Matrix forward(const Matrix& x, ForwardContext& ctx) override;
  Matrix backward(const Matrix& grad_out) override;
  std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }
  std::optional<std::size_t> input_features() const override { return in_; }
  std::size_t output_features(std::size_t) const override { return out_; }
  nlohmann::json describe() const override;

  Parameter& weight() { return weight_; }  // in x out
  Parameter& bias() { return bias_; }      // 1 x out

 private:
  std::size_t in_, out_;
  Parameter weight_, bias_;
  Matrix input_;
};

class Relu : public Layer {
 public:
  std::string kind() const override { return "relu"; }
  Matrix forward(const Matrix& x, ForwardContext& ctx) override;
  Matrix backward(const Matrix& grad_out) override;
  nlohmann::json describe() const override { return {{"kind", "relu"}}; }
  /// Smallest |input| seen by the last forward pass.
  double min_abs_input() const;

 private:
  Matrix input_;
};

/// 1-D convolution over rows (time) with zero "same" padding; the output has
/// ceil(T / stride) rows.
class Conv1d : public Layer {
 public:
  Conv1d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
         std::size_t stride, Rng& rng);
  std::string kind() const override { return "conv1d"; }
  Matrix forward(const Matrix& x, ForwardContext& ctx) override;
  Matrix backward(const Matrix& grad_out) override;
  std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }
  std::optional<std::size_t> input_features() const override { return in_; }
  std::size_t output_features(std::size_t) const override { return out_; }
  nlohmann::json describe() const override;

 private:
  std::size_t in_, out_, kernel_, stride_;
  Parameter weight_;  // out x (in * kernel), index (o, c * kernel + j)
  Parameter bias_;    // 1 x out
  Matrix input_;
};

class Softmax : public Layer {
 public:
  std::string kind() const override { return "softmax"; }
  Matrix forward(const Matrix& x, ForwardContext& ctx) override;
  Matrix backward(const Matrix& grad_out) override;
  nlohmann::json describe() const override { return {{"kind", "softmax"}}; }

 private:
  Matrix output_;
};

/// Row-wise softmax of (x + g) / tau with g ~ Gumbel(0, 1). The noise is a
/// constant for differentiation.
class GumbelSoftmax : public Layer {
 public:
  explicit GumbelSoftmax(double tau);
  std::string kind() const override { return "gumbel_softmax"; }
  Matrix forward(const Matrix& x, ForwardContext& ctx) override;
  Matrix backward(const Matrix& grad_out) override;
  nlohmann::json describe() const override { return {{"kind", "gumbel_softmax"}, {"tau", tau_}}; }

  /// Use `noise` for every subsequent forward pass instead of sampling.
  void fix_noise(Matrix noise) { fixed_noise_ = std::move(noise); }
  /// Reuse the last sampled noise from now on.
  void freeze_noise() { fixed_noise_ = last_noise_; }
  void release_noise() { fixed_noise_.reset(); }
  double tau() const { return tau_; }

 private:
  double tau_;
  std::optional<Matrix> fixed_noise_;
  Matrix last_noise_;
  Matrix output_;
};

/// Row-wise softmax((logits + noise) / tau).
Matrix softmax_rows(const Matrix& logits, double tau = 1.0, const Matrix* noise = nullptr);

/// Gumbel(0, 1) samples -log(-log u), u uniform on (0, 1).
Matrix sample_gumbel(std::size_t rows, std::size_t cols, Rng& rng);

/// Gumbel-softmax with freshly drawn noise from `rng`.
Matrix gumbel_softmax(const Matrix& logits, double tau, Rng& rng);

class Sequential {
 public:
  Sequential() = default;
  Sequential(Sequential&&) = default;
  Sequential& operator=(Sequential&&) = default;

  void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }
  /// Moves every layer of `tail` onto the end of this stack.
  void append(Sequential&& tail);
  template <typename L, typename... Args>
  L& emplace(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  /// Throws UsageError naming the first layer whose input width is wrong.
  Matrix forward(const Matrix& x, ForwardContext& ctx);
  Matrix backward(const Matrix& grad_out);
  std::vector<Parameter*> parameters();
  void zero_grad();

  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }
  nlohmann::json describe() const;

  /// Deep copy of parameter values (for snapshot/restore).
  std::vector<Matrix> snapshot();
  void restore(const std::vector<Matrix>& values);

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

/// Builds a layer from its describe() form; weights get fresh init from rng.
std::unique_ptr<Layer> make_layer(const nlohmann::json& spec, Rng& rng);
Sequential make_sequential(const nlohmann::json& layers, Rng& rng);

enum class LossKind {
  kMse,           // (1/B) sum_b ||y_b - t_b||^2
  kHalfSse,       // 1/2 sum_b ||y_b - t_b||^2
  kCrossEntropy,  // (1/B) sum_b -log softmax(y_b)[t_b]; targets are B x 1 class ids
};

struct LossValue {
  double value = 0.0;
  Matrix grad;  // dLoss/dOutput
};

/// Throws NumericError("diverged") when the loss is not finite.
LossValue compute_loss(LossKind kind, const Matrix& output, const Matrix& target);

struct BackwardResult {
  double loss = 0.0;
  Matrix input_grad;
};

/// Zeroes gradients, runs forward and backward. Parameter gradients are left
/// in Parameter::grad.
BackwardResult backward(Sequential& model, const Matrix& input, LossKind loss,
                        const Matrix& target, ForwardContext& ctx);

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst;  // "<parameter>[index]" or "input[index]"
  std::size_t checked = 0;
};

/// Central-difference check of analytic gradients. Relative error is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-3); NaN counts as a
/// failure (reported as infinity). Parameters with requires_grad == false are
/// skipped. Stochastic layers must have their noise fixed by the caller.
GradCheckResult grad_check(Sequential& model, const Matrix& input, LossKind loss,
                           const Matrix& target, double eps = 1e-5, bool check_input = true);

struct OptimizerConfig {
  enum class Kind { kSgd, kAdam };
  Kind kind = Kind::kAdam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config) : config_(config) {}
  void step(const std::vector<Parameter*>& params);
  std::size_t steps() const { return steps_; }
  const OptimizerConfig& config() const { return config_; }

 private:
  OptimizerConfig config_;
  std::size_t steps_ = 0;
  std::vector<Matrix> m_, v_;
};

struct TrainConfig {
  OptimizerConfig optimizer;
  std::size_t batch = 64;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  /// Track the full-data loss each epoch (epoch 0 = initial parameters) and
  /// restore the best parameters at the end. Without a caller-supplied
  /// full-loss function the training loss over all data is used.
  bool keep_best = false;
};

struct TrainingLog {
  std::vector<double> epoch_loss;  // mean minibatch loss per epoch
  std::vector<double> full_loss;   // only with keep_best; index 0 is the initial loss
  std::size_t best_epoch = 0;
  double final_loss = 0.0;         // full loss of the returned parameters when tracked
};

/// Row-batched training: each minibatch is a shuffled subset of rows.
TrainingLog optimize(Sequential& model, const Matrix& inputs, const Matrix& targets,
                     LossKind loss, const TrainConfig& config,
                     const std::function<double()>& full_loss = {});

struct SequenceExample {
  Matrix input;
  Matrix target;
};

/// Sequence-batched training for convolutional stacks: each example is run
/// on its own and gradients are averaged over the minibatch.
TrainingLog optimize_sequences(Sequential& model, const std::vector<SequenceExample>& data,
                               LossKind loss, const TrainConfig& config,
                               const std::function<double()>& full_loss = {});

// Checkpoint file: "RVQP" | version u16 | u32 meta length | meta JSON (the
// architecture under "layers" plus caller fields) | u32 tensor count |
// per tensor: u32 name length, name, u32 rank, u32 dims..., float32 values.
void save_checkpoint(const std::filesystem::path& path, Sequential& model,
                     const nlohmann::json& meta = nlohmann::json::object());
struct Checkpoint {
  Sequential model;
  nlohmann::json meta;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_checkpoint(Sequential& model, const nlohmann::json& meta);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

}  // namespace rvqa
