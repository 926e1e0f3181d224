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

#include "rvqa/completeness.hpp"

#include <cmath>
#include <limits>
#include <set>

namespace rvqa {

namespace {

using json = nlohmann::json;

std::vector<std::size_t> size_list(const json& j, const char* key) {
  if (!j.is_array()) throw UsageError(std::string("probe.") + key + " must be an array");
  std::vector<std::size_t> out;
  for (const auto& v : j) {
    if (!v.is_number_unsigned() || v.get<std::size_t>() == 0) {
      throw UsageError(std::string("probe.") + key + " entries must be positive integers");
    }
    out.push_back(v.get<std::size_t>());
  }
  return out;
}

}  // namespace

std::string family_name(ProbeConfig::Family family) {
  switch (family) {
    case ProbeConfig::Family::kLinear: return "linear";
    case ProbeConfig::Family::kMlp: return "mlp";
    case ProbeConfig::Family::kConvStack: return "conv_stack";
  }
  return "unknown";
}

void ProbeConfig::validate() const {
  if (family == Family::kMlp && hidden.empty()) throw UsageError("mlp probe needs hidden sizes");
  if (family == Family::kConvStack) {
    if (channels.empty()) throw UsageError("conv_stack probe needs channels");
    if (kernels.size() != channels.size() || strides.size() != channels.size()) {
      throw UsageError("conv_stack channels, kernels and strides must have equal length");
    }
    for (std::size_t k : kernels) {
      if (k % 2 == 0) throw UsageError("conv_stack kernels must be odd");
    }
    for (std::size_t s : strides) {
      // Strided stacks would predict fewer frames than the targets have.
      if (s != 1) throw UsageError("conv_stack probes require stride 1 to keep the frame rate");
    }
    if (segment == 0) throw UsageError("conv_stack segment must be positive");
  }
  if (train.batch == 0) throw UsageError("probe batch must be positive");
  if (!(train.optimizer.lr >= 0.0)) throw UsageError("probe lr must be non-negative");
}

nlohmann::ordered_json ProbeConfig::to_json() const {
  nlohmann::ordered_json j;
  j["family"] = family_name(family);
  if (family == Family::kMlp) j["hidden"] = hidden;
  if (family == Family::kConvStack) {
    j["channels"] = channels;
    j["kernels"] = kernels;
    j["strides"] = strides;
    j["segment"] = segment;
  }
  j["optimizer"] = train.optimizer.kind == OptimizerConfig::Kind::kAdam ? "adam" : "sgd";
  j["lr"] = train.optimizer.lr;
  j["batch"] = train.batch;
  j["epochs"] = train.epochs;
  j["seed"] = train.seed;
  return j;
}

ProbeConfig ProbeConfig::from_json(const json& j) {
  if (!j.is_object()) throw UsageError("probe config must be an object");
  static const std::set<std::string> known = {"family", "hidden", "channels", "kernels", "strides",
                                              "segment", "optimizer", "lr", "batch", "epochs",
                                              "seed"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) throw UsageError("unknown probe key '" + it.key() + "'");
  }
  ProbeConfig c;
  const std::string family = j.value("family", std::string("linear"));
  if (family == "linear") {
    c.family = Family::kLinear;
  } else if (family == "mlp") {
    c.family = Family::kMlp;
  } else if (family == "conv_stack") {
    c.family = Family::kConvStack;
  } else {
    throw UsageError("unknown probe family '" + family + "'");
  }
  if (j.contains("hidden")) c.hidden = size_list(j["hidden"], "hidden");
  if (j.contains("channels")) c.channels = size_list(j["channels"], "channels");
  if (j.contains("kernels")) c.kernels = size_list(j["kernels"], "kernels");
  if (j.contains("strides")) c.strides = size_list(j["strides"], "strides");
  auto get_size = [&](const char* key, std::size_t& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_number_unsigned()) throw UsageError(std::string("probe.") + key + " must be an unsigned integer");
    out = j[key].get<std::size_t>();
  };
  get_size("segment", c.segment);
  get_size("batch", c.train.batch);
  get_size("epochs", c.train.epochs);
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned()) throw UsageError("probe.seed must be an unsigned integer");
    c.train.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("lr")) {
    if (!j["lr"].is_number()) throw UsageError("probe.lr must be a number");
    c.train.optimizer.lr = j["lr"].get<double>();
  }
  const std::string opt = j.value("optimizer", std::string("adam"));
  if (opt == "adam") {
    c.train.optimizer.kind = OptimizerConfig::Kind::kAdam;
  } else if (opt == "sgd") {
    c.train.optimizer.kind = OptimizerConfig::Kind::kSgd;
  } else {
    throw UsageError("unknown optimizer '" + opt + "'");
  }
  if (c.family == Family::kConvStack && !j.contains("strides")) {
    c.strides.assign(c.channels.size(), 1);
  }
  c.train.keep_best = true;
  c.validate();
  return c;
}

Probe::Probe(const ProbeConfig& config, std::size_t in, std::size_t out)
    : config_(config), in_(in), out_(out) {
  config_.validate();
  if (in == 0 || out == 0) throw UsageError("probe dimensions must be positive");
  Rng rng(mix_seed(config_.train.seed, 77));
  switch (config_.family) {
    case ProbeConfig::Family::kLinear:
      net_.emplace<Linear>(in, out, rng);
      break;
    case ProbeConfig::Family::kMlp: {
      std::size_t width = in;
      for (std::size_t h : config_.hidden) {
        net_.emplace<Linear>(width, h, rng);
        net_.emplace<Relu>();
        width = h;
      }
      net_.emplace<Linear>(width, out, rng);
      break;
    }
    case ProbeConfig::Family::kConvStack: {
      std::size_t width = in;
      for (std::size_t i = 0; i < config_.channels.size(); ++i) {
        net_.emplace<Conv1d>(width, config_.channels[i], config_.kernels[i], config_.strides[i], rng);
        net_.emplace<Relu>();
        width = config_.channels[i];
      }
      net_.emplace<Conv1d>(width, out, 1, 1, rng);
      break;
    }
  }
}

Matrix Probe::predict(const Matrix& reps) {
  ForwardContext ctx;
  return net_.forward(reps, ctx);
}

void Probe::init_from_linear(Probe& linear) {
  if (config_.family != ProbeConfig::Family::kMlp ||
      linear.config().family != ProbeConfig::Family::kLinear) {
    throw UsageError("init_from_linear maps a linear probe into an mlp probe");
  }
  if (linear.input_dim() != in_ || linear.output_dim() != out_) {
    throw UsageError("linear probe dimensions do not match");
  }
  for (std::size_t h : config_.hidden) {
    if (h < 2 * in_) {
      throw UsageError("mlp hidden widths must be at least twice the input width to embed a linear probe");
    }
  }
  auto& src = static_cast<Linear&>(linear.network().layer(0));
  const std::size_t layers = config_.hidden.size();
  for (std::size_t l = 0; l <= layers; ++l) {
    auto& dst = static_cast<Linear&>(net_.layer(2 * l));
    dst.weight().value.fill(0.0);
    dst.bias().value.fill(0.0);
    if (l == 0) {
      for (std::size_t j = 0; j < in_; ++j) {
        dst.weight().value(j, 2 * j) = 1.0;
        dst.weight().value(j, 2 * j + 1) = -1.0;
      }
    } else if (l < layers) {
      for (std::size_t u = 0; u < 2 * in_; ++u) dst.weight().value(u, u) = 1.0;
    } else {
      for (std::size_t j = 0; j < in_; ++j) {
        for (std::size_t o = 0; o < out_; ++o) {
          dst.weight().value(2 * j, o) = src.weight().value(j, o);
          dst.weight().value(2 * j + 1, o) = -src.weight().value(j, o);
        }
      }
      dst.bias().value = src.bias().value;
    }
  }
}

TrainingLog train_probe(Probe& probe, const Matrix& reps, const Matrix& targets, LossKind loss) {
  if (reps.rows() != targets.rows()) {
    throw DataError("misaligned frames: " + std::to_string(reps.rows()) + " representation frames vs " +
                    std::to_string(targets.rows()) + " target frames");
  }
  if (reps.rows() == 0) throw DataError("zero-length input");
  TrainConfig train = probe.config().train;
  train.keep_best = true;
  auto full = [&]() { return compute_loss(loss, probe.predict(reps), targets).value; };

  if (probe.config().family != ProbeConfig::Family::kConvStack) {
    return optimize(probe.network(), reps, targets, loss, train, full);
  }
  std::vector<SequenceExample> segments;
  const std::size_t seg = probe.config().segment;
  for (std::size_t start = 0; start < reps.rows(); start += seg) {
    const std::size_t end = std::min(reps.rows(), start + seg);
    segments.push_back({reps.slice_rows(start, end), targets.slice_rows(start, end)});
  }
  return optimize_sequences(probe.network(), segments, loss, train, full);
}

ProbeFit fit_probe(const ProbeConfig& config, const FrameSequence& reps, const Matrix& mels) {
  if (reps.frames() != mels.rows()) {
    throw DataError("misaligned frames: " + std::to_string(reps.frames()) + " representation frames vs " +
                    std::to_string(mels.rows()) + " mel frames");
  }
  Probe probe(config, reps.dim(), mels.cols());
  TrainingLog log = train_probe(probe, reps.values, mels);
  const double mse = log.final_loss;
  return ProbeFit{std::move(probe), std::move(log), mse};
}

double bound_minus_hx(double mse_per_frame, std::size_t d) {
  return -0.5 * mse_per_frame + 0.5 * static_cast<double>(d) * std::log(2.0 * M_PI * M_E);
}

CompletenessReport completeness_from_predictions(const Matrix& predictions, const Matrix& mels) {
  if (mels.rows() == 0) throw DataError("zero-length input");
  if (predictions.rows() != mels.rows() || predictions.cols() != mels.cols()) {
    throw DataError("misaligned frames: predictions do not match target shape");
  }
  double error = 0.0, power = 0.0;
  for (std::size_t k = 0; k < mels.size(); ++k) {
    const double diff = mels.data()[k] - predictions.data()[k];
    error += diff * diff;
    power += mels.data()[k] * mels.data()[k];
  }
  CompletenessReport r;
  r.d = mels.cols();
  r.frames = mels.rows();
  r.mse_per_frame = error / static_cast<double>(mels.rows());
  r.mse_per_bin = r.mse_per_frame / static_cast<double>(r.d);
  r.snr_db = error > 0.0 ? 10.0 * std::log10(power / error) : std::numeric_limits<double>::infinity();
  r.bound_minus_hx = bound_minus_hx(r.mse_per_frame, r.d);
  return r;
}

CompletenessReport evaluate_completeness(Probe& probe, const FrameSequence& reps,
                                         const Matrix& mels, const std::string& dataset) {
  if (reps.frames() != mels.rows()) {
    throw DataError("misaligned frames: " + std::to_string(reps.frames()) + " vs " +
                    std::to_string(mels.rows()));
  }
  CompletenessReport r = completeness_from_predictions(probe.predict(reps.values), mels);
  r.probe = probe.config();
  r.dataset = dataset.empty() ? reps.tag : dataset;
  return r;
}

nlohmann::ordered_json CompletenessReport::to_json() const {
  nlohmann::ordered_json j;
  j["mse_per_frame"] = mse_per_frame;
  j["mse_per_bin"] = mse_per_bin;
  if (std::isinf(snr_db)) {
    j["snr_db"] = "+inf";
  } else {
    j["snr_db"] = snr_db;
  }
  j["bound_minus_hx_nats"] = bound_minus_hx;
  j["d"] = d;
  j["probe"] = probe.to_json();
  j["dataset"] = dataset;
  j["seed"] = probe.train.seed;
  j["frames"] = frames;
  return j;
}

DpiAudit dpi_audit(const RvqModel& model, const FrameSequence& reps, const Matrix& mels,
                   const ProbeConfig& config, double tolerance) {
  FrameSequence quantized = decode(model, encode(model, reps));
  quantized.tag = (reps.tag.empty() ? std::string("frames") : reps.tag) + "-rvq" +
                  std::to_string(model.stages());

  DpiAudit audit;
  ProbeFit a = fit_probe(config, reps, mels);
  audit.original = evaluate_completeness(a.probe, reps, mels);
  ProbeFit b = fit_probe(config, quantized, mels);
  audit.quantized = evaluate_completeness(b.probe, quantized, mels);
  audit.violated = audit.quantized.mse_per_frame < audit.original.mse_per_frame - tolerance;
  return audit;
}

}  // namespace rvqa
