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

#include "rvqa/finetune.hpp"

#include <cmath>
#include <set>

namespace rvqa {

namespace {

Matrix negative_sq_distances(const Matrix& codebook, const Matrix& residuals) {
  Matrix logits(residuals.rows(), codebook.rows());
  for (std::size_t b = 0; b < residuals.rows(); ++b) {
    for (std::size_t j = 0; j < codebook.rows(); ++j) {
      logits(b, j) = -squared_distance(residuals.row(b), codebook.row(j));
    }
  }
  return logits;
}

Matrix mix(const Matrix& assignment, const Matrix& codebook) {
  Matrix out(assignment.rows(), codebook.cols());
  for (std::size_t b = 0; b < assignment.rows(); ++b) {
    auto o = out.row(b);
    for (std::size_t j = 0; j < codebook.rows(); ++j) {
      const double w = assignment(b, j);
      auto v = codebook.row(j);
      for (std::size_t k = 0; k < o.size(); ++k) o[k] += w * v[k];
    }
  }
  return out;
}

}  // namespace

SoftAssignment soft_encode_stage(const Matrix& codebook, const Matrix& residuals, double tau,
                                 Rng* rng, const Matrix* noise) {
  if (!(tau > 0.0)) throw UsageError("gumbel-softmax temperature must be positive");
  if (codebook.cols() != residuals.cols()) throw DataError("dimension mismatch");
  const Matrix logits = negative_sq_distances(codebook, residuals);
  Matrix drawn;
  if (!noise) {
    if (!rng) throw UsageError("soft_encode_stage needs an RNG or explicit noise");
    drawn = sample_gumbel(logits.rows(), logits.cols(), *rng);
    noise = &drawn;
  }
  SoftAssignment out;
  out.assignment = softmax_rows(logits, tau, noise);
  out.frames = mix(out.assignment, codebook);
  return out;
}

SoftRvqLayer::SoftRvqLayer(const RvqModel& model, double tau) : tau_(tau), dim_(model.dim()) {
  if (!(tau > 0.0)) throw UsageError("gumbel-softmax temperature must be positive");
  if (model.stages() == 0) throw UsageError("soft RVQ needs at least one codebook");
  for (const auto& cb : model.codebooks()) {
    codebooks_.push_back(Parameter{"codebook" + std::to_string(cb.stage), cb.centroids,
                                   Matrix(cb.centroids.rows(), cb.centroids.cols()), true});
  }
}

std::vector<Parameter*> SoftRvqLayer::parameters() {
  std::vector<Parameter*> out;
  for (auto& p : codebooks_) out.push_back(&p);
  return out;
}

nlohmann::json SoftRvqLayer::describe() const {
  return {{"kind", "soft_rvq"}, {"tau", tau_}, {"stages", codebooks_.size()}, {"dim", dim_}};
}

Matrix SoftRvqLayer::forward(const Matrix& x, ForwardContext& ctx) {
  const std::size_t stages = codebooks_.size();
  const bool reuse = frozen_ && noise_.size() == stages && !noise_.empty() &&
                     noise_.front().rows() == x.rows();
  if (!reuse) noise_.assign(stages, Matrix());
  residuals_.assign(stages, Matrix());
  assignments_.assign(stages, Matrix());

  Matrix residual = x;
  Matrix decoded(x.rows(), dim_);
  for (std::size_t i = 0; i < stages; ++i) {
    const Matrix& cb = codebooks_[i].value;
    if (!reuse) {
      if (zero_noise_) {
        noise_[i] = Matrix(x.rows(), cb.rows());
      } else {
        if (!ctx.rng) throw UsageError("soft RVQ needs a seeded RNG in the forward context");
        noise_[i] = sample_gumbel(x.rows(), cb.rows(), *ctx.rng);
      }
    }
    SoftAssignment s = soft_encode_stage(cb, residual, tau_, nullptr, &noise_[i]);
    residuals_[i] = residual;
    assignments_[i] = std::move(s.assignment);
    for (std::size_t k = 0; k < residual.size(); ++k) {
      residual.data()[k] -= s.frames.data()[k];
      decoded.data()[k] += s.frames.data()[k];
    }
  }
  return decoded;
}

Matrix SoftRvqLayer::backward(const Matrix& grad_out) {
  const std::size_t rows = grad_out.rows(), d = dim_;
  Matrix grad_next(rows, d);  // dL/d(residual entering stage i+1)
  for (std::size_t i = codebooks_.size(); i-- > 0;) {
    Parameter& cb = codebooks_[i];
    const Matrix& y = assignments_[i];
    const Matrix& res = residuals_[i];
    const std::size_t n = cb.value.rows();

    // q_i feeds the output directly and the next residual with a minus sign.
    Matrix grad_q = grad_out;
    for (std::size_t k = 0; k < grad_q.size(); ++k) grad_q.data()[k] -= grad_next.data()[k];

    Matrix grad_res = grad_next;
    for (std::size_t b = 0; b < rows; ++b) {
      auto gq = grad_q.row(b);
      auto r = res.row(b);
      std::vector<double> gy(n);
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        auto v = cb.value.row(j);
        double acc = 0.0;
        for (std::size_t k = 0; k < d; ++k) acc += gq[k] * v[k];
        gy[j] = acc;
        dot += y(b, j) * acc;
        auto gv = cb.grad.row(j);
        for (std::size_t k = 0; k < d; ++k) gv[k] += y(b, j) * gq[k];
      }
      auto gr = grad_res.row(b);
      for (std::size_t j = 0; j < n; ++j) {
        const double g_logit = y(b, j) * (gy[j] - dot) / tau_;
        if (g_logit == 0.0) continue;
        auto v = cb.value.row(j);
        auto gv = cb.grad.row(j);
        for (std::size_t k = 0; k < d; ++k) {
          const double diff = r[k] - v[k];
          gr[k] -= 2.0 * g_logit * diff;
          gv[k] += 2.0 * g_logit * diff;
        }
      }
    }
    grad_next = std::move(grad_res);
  }
  return grad_next;
}

RvqModel SoftRvqLayer::to_model() const {
  std::vector<Codebook> books;
  for (std::size_t i = 0; i < codebooks_.size(); ++i) {
    books.push_back(Codebook{codebooks_[i].value, i + 1});
  }
  return RvqModel(std::move(books));
}

void FinetuneConfig::validate() const {
  if (!(tau > 0.0)) throw UsageError("finetune.tau must be positive");
  if (tau_schedule != "constant") {
    throw UsageError("finetune.tau_schedule must be \"constant\" (got \"" + tau_schedule + "\")");
  }
  if (probe.family == ProbeConfig::Family::kConvStack) {
    throw UsageError("finetune probe must be linear or mlp");
  }
  probe.validate();
}

nlohmann::ordered_json FinetuneConfig::to_json() const {
  nlohmann::ordered_json j;
  j["tau"] = tau;
  j["tau_schedule"] = tau_schedule;
  j["probe"] = probe.to_json();
  j["probe_warmup_epochs"] = probe_warmup_epochs;
  j["lr"] = train.optimizer.lr;
  j["batch"] = train.batch;
  j["epochs"] = train.epochs;
  j["seed"] = train.seed;
  return j;
}

FinetuneConfig FinetuneConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw UsageError("finetune config must be an object");
  static const std::set<std::string> known = {"tau", "tau_schedule", "probe", "probe_warmup_epochs",
                                              "lr", "batch", "epochs", "seed"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) throw UsageError("unknown finetune key '" + it.key() + "'");
  }
  FinetuneConfig c;
  if (j.contains("tau")) {
    if (!j["tau"].is_number()) throw UsageError("finetune.tau must be a number");
    c.tau = j["tau"];
  }
  if (j.contains("tau_schedule")) {
    if (!j["tau_schedule"].is_string()) throw UsageError("finetune.tau_schedule must be a string");
    c.tau_schedule = j["tau_schedule"];
  }
  if (j.contains("probe")) c.probe = ProbeConfig::from_json(j["probe"]);
  auto get_size = [&](const char* key, std::size_t& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_number_unsigned()) throw UsageError(std::string("finetune.") + key + " must be an unsigned integer");
    out = j[key];
  };
  get_size("probe_warmup_epochs", c.probe_warmup_epochs);
  get_size("batch", c.train.batch);
  get_size("epochs", c.train.epochs);
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned()) throw UsageError("finetune.seed must be an unsigned integer");
    c.train.seed = j["seed"];
  }
  if (j.contains("lr")) {
    if (!j["lr"].is_number()) throw UsageError("finetune.lr must be a number");
    c.train.optimizer.lr = j["lr"];
  }
  c.validate();
  return c;
}

nlohmann::ordered_json FinetuneResult::log_json(const FinetuneConfig& config) const {
  nlohmann::ordered_json j;
  j["tau"] = config.tau;
  j["tau_schedule"] = config.tau_schedule;
  j["seed"] = config.train.seed;
  j["warmup_loss"] = warmup_loss;
  j["epoch_loss"] = epoch_loss;
  j["config"] = config.to_json();
  return j;
}

FinetuneResult finetune_rvq(const RvqModel& model, const FrameSequence& reps, const Matrix& mels,
                            const FinetuneConfig& config) {
  config.validate();
  if (reps.frames() != mels.rows()) {
    throw DataError("misaligned frames: " + std::to_string(reps.frames()) + " vs " +
                    std::to_string(mels.rows()));
  }
  if (reps.dim() != model.dim()) throw DataError("dimension mismatch between frames and model");

  Sequential net;
  auto& soft = net.emplace<SoftRvqLayer>(model, config.tau);
  Probe probe(config.probe, model.dim(), mels.cols());
  net.append(std::move(probe.network()));

  FinetuneResult result;
  if (config.probe_warmup_epochs > 0) {
    for (Parameter* p : soft.parameters()) p->requires_grad = false;
    TrainConfig warm = config.train;
    warm.epochs = config.probe_warmup_epochs;
    warm.seed = mix_seed(config.train.seed, 5);
    warm.keep_best = false;
    result.warmup_loss = optimize(net, reps.values, mels, LossKind::kMse, warm).epoch_loss;
    for (Parameter* p : soft.parameters()) p->requires_grad = true;
  }
  TrainConfig joint = config.train;
  joint.keep_best = false;
  if (joint.epochs > 0) {
    result.epoch_loss = optimize(net, reps.values, mels, LossKind::kMse, joint).epoch_loss;
  }
  result.model = soft.to_model();
  return result;
}

}  // namespace rvqa
