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

#include "rvqa/grad.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>

#include "rvqa/io.hpp"

namespace rvqa {

namespace {

Parameter make_param(std::string name, std::size_t rows, std::size_t cols) {
  return Parameter{std::move(name), Matrix(rows, cols), Matrix(rows, cols), true};
}

void init_uniform(Matrix& m, double bound, Rng& rng) {
  for (double& v : m.data()) v = rng.uniform(-bound, bound);
}

void check_width(const Matrix& x, std::size_t expected, const std::string& layer) {
  if (x.cols() != expected) {
    throw UsageError(layer + " expects " + std::to_string(expected) + " features, got " +
                     std::to_string(x.cols()));
  }
}

}  // namespace

// ---------------------------------------------------------------- Linear

Linear::Linear(std::size_t in, std::size_t out, Rng& rng)
    : in_(in), out_(out), weight_(make_param("weight", in, out)),
      bias_(make_param("bias", 1, out)) {
  if (in == 0 || out == 0) throw UsageError("linear layer needs positive sizes");
  init_uniform(weight_.value, std::sqrt(1.0 / in), rng);
}

Matrix Linear::forward(const Matrix& x, ForwardContext&) {
  check_width(x, in_, "linear");
  input_ = x;
  Matrix y(x.rows(), out_);
  for (std::size_t b = 0; b < x.rows(); ++b) {
    auto xr = x.row(b);
    auto yr = y.row(b);
    for (std::size_t o = 0; o < out_; ++o) {
      double acc = bias_.value(0, o);
      for (std::size_t j = 0; j < in_; ++j) acc += xr[j] * weight_.value(j, o);
      yr[o] = acc;
    }
  }
  return y;
}

Matrix Linear::backward(const Matrix& g) {
  Matrix dx(g.rows(), in_);
  for (std::size_t b = 0; b < g.rows(); ++b) {
    auto gr = g.row(b);
    auto xr = input_.row(b);
    auto dxr = dx.row(b);
    for (std::size_t o = 0; o < out_; ++o) bias_.grad(0, o) += gr[o];
    for (std::size_t j = 0; j < in_; ++j) {
      double acc = 0.0;
      for (std::size_t o = 0; o < out_; ++o) {
        weight_.grad(j, o) += xr[j] * gr[o];
        acc += gr[o] * weight_.value(j, o);
      }
      dxr[j] = acc;
    }
  }
  return dx;
}

nlohmann::json Linear::describe() const { return {{"kind", "linear"}, {"in", in_}, {"out", out_}}; }

// ---------------------------------------------------------------- Relu

Matrix Relu::forward(const Matrix& x, ForwardContext&) {
  input_ = x;
  Matrix y = x;
  for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
  return y;
}

Matrix Relu::backward(const Matrix& g) {
  Matrix dx = g;
  for (std::size_t k = 0; k < dx.size(); ++k) {
    if (!(input_.data()[k] > 0.0)) dx.data()[k] = 0.0;
  }
  return dx;
}

double Relu::min_abs_input() const {
  double m = std::numeric_limits<double>::infinity();
  for (double v : input_.data()) m = std::min(m, std::abs(v));
  return m;
}

// ---------------------------------------------------------------- Conv1d

Conv1d::Conv1d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
               std::size_t stride, Rng& rng)
    : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride),
      weight_(make_param("weight", out_channels, in_channels * kernel)),
      bias_(make_param("bias", 1, out_channels)) {
  if (in_ == 0 || out_ == 0 || kernel_ == 0 || stride_ == 0) {
    throw UsageError("conv1d needs positive channels, kernel and stride");
  }
  init_uniform(weight_.value, std::sqrt(1.0 / (in_ * kernel_)), rng);
}

Matrix Conv1d::forward(const Matrix& x, ForwardContext&) {
  check_width(x, in_, "conv1d");
  input_ = x;
  const long steps = static_cast<long>(x.rows());
  const long pad = static_cast<long>(kernel_ - 1) / 2;
  const std::size_t out_rows = x.rows() == 0 ? 0 : (x.rows() - 1) / stride_ + 1;
  Matrix y(out_rows, out_);
  for (std::size_t t = 0; t < out_rows; ++t) {
    const long start = static_cast<long>(t * stride_) - pad;
    for (std::size_t o = 0; o < out_; ++o) {
      double acc = bias_.value(0, o);
      for (std::size_t c = 0; c < in_; ++c) {
        for (std::size_t j = 0; j < kernel_; ++j) {
          const long src = start + static_cast<long>(j);
          if (src < 0 || src >= steps) continue;
          acc += weight_.value(o, c * kernel_ + j) * x(static_cast<std::size_t>(src), c);
        }
      }
      y(t, o) = acc;
    }
  }
  return y;
}

Matrix Conv1d::backward(const Matrix& g) {
  const long steps = static_cast<long>(input_.rows());
  const long pad = static_cast<long>(kernel_ - 1) / 2;
  Matrix dx(input_.rows(), in_);
  for (std::size_t t = 0; t < g.rows(); ++t) {
    const long start = static_cast<long>(t * stride_) - pad;
    for (std::size_t o = 0; o < out_; ++o) {
      const double go = g(t, o);
      bias_.grad(0, o) += go;
      for (std::size_t c = 0; c < in_; ++c) {
        for (std::size_t j = 0; j < kernel_; ++j) {
          const long src = start + static_cast<long>(j);
          if (src < 0 || src >= steps) continue;
          const auto s = static_cast<std::size_t>(src);
          weight_.grad(o, c * kernel_ + j) += go * input_(s, c);
          dx(s, c) += go * weight_.value(o, c * kernel_ + j);
        }
      }
    }
  }
  return dx;
}

nlohmann::json Conv1d::describe() const {
  return {{"kind", "conv1d"}, {"in", in_}, {"out", out_}, {"kernel", kernel_}, {"stride", stride_}};
}

// ---------------------------------------------------------------- Softmax

Matrix softmax_rows(const Matrix& logits, double tau, const Matrix* noise) {
  Matrix y(logits.rows(), logits.cols());
  for (std::size_t b = 0; b < logits.rows(); ++b) {
    auto z = logits.row(b);
    auto out = y.row(b);
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < z.size(); ++j) {
      out[j] = (z[j] + (noise ? (*noise)(b, j) : 0.0)) / tau;
      peak = std::max(peak, out[j]);
    }
    double total = 0.0;
    for (double& v : out) {
      v = std::exp(v - peak);
      total += v;
    }
    for (double& v : out) v /= total;
  }
  return y;
}

namespace {

// dL/dz for y = softmax(z): y * (g - <y, g>), row-wise.
Matrix softmax_backward(const Matrix& y, const Matrix& g) {
  Matrix dz(y.rows(), y.cols());
  for (std::size_t b = 0; b < y.rows(); ++b) {
    auto yr = y.row(b);
    auto gr = g.row(b);
    double dot = 0.0;
    for (std::size_t j = 0; j < yr.size(); ++j) dot += yr[j] * gr[j];
    for (std::size_t j = 0; j < yr.size(); ++j) dz(b, j) = yr[j] * (gr[j] - dot);
  }
  return dz;
}

}  // namespace

Matrix Softmax::forward(const Matrix& x, ForwardContext&) {
  output_ = softmax_rows(x);
  return output_;
}

Matrix Softmax::backward(const Matrix& g) { return softmax_backward(output_, g); }

Matrix sample_gumbel(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix g(rows, cols);
  for (double& v : g.data()) v = -std::log(-std::log(rng.uniform_open()));
  return g;
}

Matrix gumbel_softmax(const Matrix& logits, double tau, Rng& rng) {
  if (!(tau > 0.0)) throw UsageError("gumbel-softmax temperature must be positive");
  const Matrix noise = sample_gumbel(logits.rows(), logits.cols(), rng);
  return softmax_rows(logits, tau, &noise);
}

GumbelSoftmax::GumbelSoftmax(double tau) : tau_(tau) {
  if (!(tau > 0.0)) throw UsageError("gumbel-softmax temperature must be positive");
}

Matrix GumbelSoftmax::forward(const Matrix& x, ForwardContext& ctx) {
  if (fixed_noise_) {
    if (fixed_noise_->rows() != x.rows() || fixed_noise_->cols() != x.cols()) {
      throw UsageError("gumbel_softmax fixed noise shape does not match logits");
    }
    last_noise_ = *fixed_noise_;
  } else {
    if (!ctx.rng) throw UsageError("gumbel_softmax needs a seeded RNG in the forward context");
    last_noise_ = sample_gumbel(x.rows(), x.cols(), *ctx.rng);
  }
  output_ = softmax_rows(x, tau_, &last_noise_);
  return output_;
}

Matrix GumbelSoftmax::backward(const Matrix& g) {
  Matrix dz = softmax_backward(output_, g);
  for (double& v : dz.data()) v /= tau_;
  return dz;
}

// ---------------------------------------------------------------- Sequential

void Sequential::append(Sequential&& tail) {
  for (auto& layer : tail.layers_) layers_.push_back(std::move(layer));
  tail.layers_.clear();
}

Matrix Sequential::forward(const Matrix& x, ForwardContext& ctx) {
  Matrix h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Layer& layer = *layers_[i];
    if (auto want = layer.input_features(); want && *want != h.cols()) {
      throw UsageError("shape mismatch at layer " + std::to_string(i) + " (" + layer.kind() +
                       "): expects " + std::to_string(*want) + " features, got " +
                       std::to_string(h.cols()));
    }
    h = layer.forward(h, ctx);
  }
  return h;
}

Matrix Sequential::backward(const Matrix& grad_out) {
  Matrix g = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g);
  return g;
}

std::vector<Parameter*> Sequential::parameters() {
  std::vector<Parameter*> out;
  for (auto& layer : layers_) {
    for (Parameter* p : layer->parameters()) out.push_back(p);
  }
  return out;
}

void Sequential::zero_grad() {
  for (Parameter* p : parameters()) p->grad.fill(0.0);
}

nlohmann::json Sequential::describe() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : layers_) layers.push_back(layer->describe());
  return layers;
}

std::vector<Matrix> Sequential::snapshot() {
  std::vector<Matrix> out;
  for (Parameter* p : parameters()) out.push_back(p->value);
  return out;
}

void Sequential::restore(const std::vector<Matrix>& values) {
  auto params = parameters();
  if (params.size() != values.size()) throw UsageError("snapshot does not match model");
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

std::unique_ptr<Layer> make_layer(const nlohmann::json& spec, Rng& rng) {
  const std::string kind = spec.at("kind");
  if (kind == "linear") {
    return std::make_unique<Linear>(spec.at("in").get<std::size_t>(),
                                    spec.at("out").get<std::size_t>(), rng);
  }
  if (kind == "relu") return std::make_unique<Relu>();
  if (kind == "softmax") return std::make_unique<Softmax>();
  if (kind == "gumbel_softmax") return std::make_unique<GumbelSoftmax>(spec.at("tau").get<double>());
  if (kind == "conv1d") {
    return std::make_unique<Conv1d>(spec.at("in").get<std::size_t>(),
                                    spec.at("out").get<std::size_t>(),
                                    spec.at("kernel").get<std::size_t>(),
                                    spec.at("stride").get<std::size_t>(), rng);
  }
  throw UsageError("unknown layer kind '" + kind + "'");
}

Sequential make_sequential(const nlohmann::json& layers, Rng& rng) {
  Sequential model;
  for (const auto& spec : layers) model.add(make_layer(spec, rng));
  return model;
}

// ---------------------------------------------------------------- losses

LossValue compute_loss(LossKind kind, const Matrix& y, const Matrix& target) {
  LossValue out;
  out.grad = Matrix(y.rows(), y.cols());
  const double rows = static_cast<double>(std::max<std::size_t>(1, y.rows()));
  switch (kind) {
    case LossKind::kMse:
    case LossKind::kHalfSse: {
      if (target.rows() != y.rows() || target.cols() != y.cols()) {
        throw UsageError("loss target shape does not match output");
      }
      const double scale = kind == LossKind::kMse ? 2.0 / rows : 1.0;
      double total = 0.0;
      for (std::size_t k = 0; k < y.size(); ++k) {
        const double diff = y.data()[k] - target.data()[k];
        total += diff * diff;
        out.grad.data()[k] = scale * diff;
      }
      out.value = kind == LossKind::kMse ? total / rows : 0.5 * total;
      break;
    }
    case LossKind::kCrossEntropy: {
      if (target.rows() != y.rows() || target.cols() != 1) {
        throw UsageError("cross-entropy targets must be a column of class ids");
      }
      const Matrix p = softmax_rows(y);
      double total = 0.0;
      for (std::size_t b = 0; b < y.rows(); ++b) {
        const double label = target(b, 0);
        if (!(label >= 0.0) || label >= static_cast<double>(y.cols())) {
          throw UsageError("class id out of range in cross-entropy target");
        }
        const auto c = static_cast<std::size_t>(label);
        // log-sum-exp form for stability
        double peak = -std::numeric_limits<double>::infinity();
        for (double v : y.row(b)) peak = std::max(peak, v);
        double lse = 0.0;
        for (double v : y.row(b)) lse += std::exp(v - peak);
        total += std::log(lse) + peak - y(b, c);
        for (std::size_t j = 0; j < y.cols(); ++j) {
          out.grad(b, j) = (p(b, j) - (j == c ? 1.0 : 0.0)) / rows;
        }
      }
      out.value = total / rows;
      break;
    }
  }
  if (!std::isfinite(out.value)) throw NumericError("diverged: loss is not finite");
  return out;
}

BackwardResult backward(Sequential& model, const Matrix& input, LossKind loss,
                        const Matrix& target, ForwardContext& ctx) {
  model.zero_grad();
  const Matrix y = model.forward(input, ctx);
  LossValue l = compute_loss(loss, y, target);
  return BackwardResult{l.value, model.backward(l.grad)};
}

// ---------------------------------------------------------------- grad check

GradCheckResult grad_check(Sequential& model, const Matrix& input, LossKind loss,
                           const Matrix& target, double eps, bool check_input) {
  ForwardContext ctx;
  BackwardResult analytic = backward(model, input, loss, target, ctx);
  GradCheckResult result;

  auto loss_at = [&](const Matrix& x) {
    return compute_loss(loss, model.forward(x, ctx), target).value;
  };
  auto record = [&](double a, double n, const std::string& where) {
    double rel = std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-3});
    if (std::isnan(rel)) rel = std::numeric_limits<double>::infinity();
    ++result.checked;
    if (result.worst.empty() || rel > result.max_relative_error) {
      result.max_relative_error = rel;
      result.worst = where;
    }
  };

  auto params = model.parameters();
  for (std::size_t p = 0; p < params.size(); ++p) {
    Parameter& param = *params[p];
    if (!param.requires_grad) continue;
    const Matrix grads = param.grad;
    for (std::size_t k = 0; k < param.value.size(); ++k) {
      const double saved = param.value.data()[k];
      param.value.data()[k] = saved + eps;
      const double up = loss_at(input);
      param.value.data()[k] = saved - eps;
      const double down = loss_at(input);
      param.value.data()[k] = saved;
      record(grads.data()[k], (up - down) / (2.0 * eps),
             "param" + std::to_string(p) + ":" + param.name + "[" + std::to_string(k) + "]");
    }
  }
  if (check_input) {
    Matrix x = input;
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double saved = x.data()[k];
      x.data()[k] = saved + eps;
      const double up = loss_at(x);
      x.data()[k] = saved - eps;
      const double down = loss_at(x);
      x.data()[k] = saved;
      record(analytic.input_grad.data()[k], (up - down) / (2.0 * eps),
             "input[" + std::to_string(k) + "]");
    }
  }
  return result;
}

// ---------------------------------------------------------------- optimizers

void Optimizer::step(const std::vector<Parameter*>& params) {
  if (m_.empty()) {
    for (Parameter* p : params) {
      m_.emplace_back(p->value.rows(), p->value.cols());
      v_.emplace_back(p->value.rows(), p->value.cols());
    }
  }
  if (m_.size() != params.size()) throw UsageError("optimizer used with a different model");
  ++steps_;
  const auto& c = config_;
  const double bias1 = 1.0 - std::pow(c.beta1, static_cast<double>(steps_));
  const double bias2 = 1.0 - std::pow(c.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    if (!p.requires_grad) continue;
    auto& value = p.value.data();
    const auto& grad = p.grad.data();
    if (c.kind == OptimizerConfig::Kind::kSgd) {
      for (std::size_t k = 0; k < value.size(); ++k) value[k] -= c.lr * grad[k];
      continue;
    }
    auto& m = m_[i].data();
    auto& v = v_[i].data();
    for (std::size_t k = 0; k < value.size(); ++k) {
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * grad[k];
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * grad[k] * grad[k];
      const double update = (m[k] / bias1) / (std::sqrt(v[k] / bias2) + c.eps);
      value[k] -= c.lr * update;
    }
  }
}

namespace {

struct BestTracker {
  const TrainConfig& config;
  std::function<double()> full_loss;
  Sequential& model;
  TrainingLog& log;
  std::vector<Matrix> best_params;
  double best = std::numeric_limits<double>::infinity();

  bool active() const { return config.keep_best && static_cast<bool>(full_loss); }

  void observe(std::size_t epoch) {
    if (!active()) return;
    const double l = full_loss();
    log.full_loss.push_back(l);
    if (l < best || best_params.empty()) {
      best = l;
      best_params = model.snapshot();
      log.best_epoch = epoch;
    }
  }

  void finish() {
    if (!active()) {
      log.final_loss = log.epoch_loss.empty() ? 0.0 : log.epoch_loss.back();
      return;
    }
    model.restore(best_params);
    log.final_loss = best;
  }
};

void check_epoch_loss(double loss, std::size_t epoch) {
  if (!std::isfinite(loss)) {
    throw NumericError("diverged: training loss not finite at epoch " + std::to_string(epoch));
  }
}

}  // namespace

TrainingLog optimize(Sequential& model, const Matrix& inputs, const Matrix& targets,
                     LossKind loss, const TrainConfig& config,
                     const std::function<double()>& full_loss) {
  if (inputs.rows() != targets.rows()) throw UsageError("inputs and targets differ in rows");
  if (!inputs.all_finite() || !targets.all_finite()) throw DataError("non-finite training data");
  if (inputs.rows() == 0) throw DataError("no training rows");
  TrainingLog log;
  const std::function<double()> whole_data = [&] {
    Rng eval_rng(config.seed);
    ForwardContext eval_ctx{&eval_rng};
    return compute_loss(loss, model.forward(inputs, eval_ctx), targets).value;
  };
  BestTracker tracker{config, full_loss ? full_loss : whole_data, model, log, {},
                      std::numeric_limits<double>::infinity()};
  tracker.observe(0);

  Rng rng(config.seed);
  ForwardContext ctx{&rng};
  Optimizer opt(config.optimizer);
  std::vector<std::size_t> order(inputs.rows());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = std::max<std::size_t>(1, config.batch);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      const Matrix x = inputs.gather_rows(idx);
      const Matrix t = targets.gather_rows(idx);
      BackwardResult r;
      try {
        r = backward(model, x, loss, t, ctx);
      } catch (const NumericError&) {
        check_epoch_loss(std::numeric_limits<double>::infinity(), epoch);
      }
      total += r.loss * static_cast<double>(end - start);
      opt.step(model.parameters());
    }
    const double epoch_loss = total / static_cast<double>(order.size());
    check_epoch_loss(epoch_loss, epoch);
    log.epoch_loss.push_back(epoch_loss);
    tracker.observe(epoch);
  }
  tracker.finish();
  return log;
}

TrainingLog optimize_sequences(Sequential& model, const std::vector<SequenceExample>& data,
                               LossKind loss, const TrainConfig& config,
                               const std::function<double()>& full_loss) {
  if (data.empty()) throw DataError("no training sequences");
  TrainingLog log;
  const std::function<double()> whole_data = [&] {
    Rng eval_rng(config.seed);
    ForwardContext eval_ctx{&eval_rng};
    double total = 0.0;
    for (const auto& ex : data) {
      total += compute_loss(loss, model.forward(ex.input, eval_ctx), ex.target).value;
    }
    return total / static_cast<double>(data.size());
  };
  BestTracker tracker{config, full_loss ? full_loss : whole_data, model, log, {},
                      std::numeric_limits<double>::infinity()};
  tracker.observe(0);

  Rng rng(config.seed);
  ForwardContext ctx{&rng};
  Optimizer opt(config.optimizer);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = std::max<std::size_t>(1, config.batch);
  auto params = model.parameters();
  std::vector<Matrix> accum;
  for (Parameter* p : params) accum.emplace_back(p->value.rows(), p->value.cols());

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      const double scale = 1.0 / static_cast<double>(end - start);
      for (auto& a : accum) a.fill(0.0);
      for (std::size_t i = start; i < end; ++i) {
        const auto& ex = data[order[i]];
        BackwardResult r;
        try {
          r = backward(model, ex.input, loss, ex.target, ctx);
        } catch (const NumericError&) {
          check_epoch_loss(std::numeric_limits<double>::infinity(), epoch);
        }
        total += r.loss;
        for (std::size_t p = 0; p < params.size(); ++p) {
          auto& a = accum[p].data();
          const auto& g = params[p]->grad.data();
          for (std::size_t k = 0; k < a.size(); ++k) a[k] += scale * g[k];
        }
      }
      for (std::size_t p = 0; p < params.size(); ++p) params[p]->grad = accum[p];
      opt.step(params);
    }
    const double epoch_loss = total / static_cast<double>(order.size());
    check_epoch_loss(epoch_loss, epoch);
    log.epoch_loss.push_back(epoch_loss);
    tracker.observe(epoch);
  }
  tracker.finish();
  return log;
}

// ---------------------------------------------------------------- checkpoints

namespace {

constexpr std::uint16_t kCheckpointVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t& at) {
  if (at + 4 > in.size()) throw DataError("checkpoint truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[at + i]) << (8 * i);
  at += 4;
  return v;
}

std::string get_string(const std::vector<std::uint8_t>& in, std::size_t& at, std::size_t n) {
  if (at + n > in.size()) throw DataError("checkpoint truncated");
  std::string s(in.begin() + at, in.begin() + at + n);
  at += n;
  return s;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(Sequential& model, const nlohmann::json& meta) {
  nlohmann::json header = meta;
  header["layers"] = model.describe();
  const std::string text = header.dump();
  std::vector<std::uint8_t> out = {'R', 'V', 'Q', 'P'};
  out.push_back(static_cast<std::uint8_t>(kCheckpointVersion));
  out.push_back(static_cast<std::uint8_t>(kCheckpointVersion >> 8));
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());

  auto params = model.parameters();
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < model.size(); ++i) {
    for (Parameter* p : model.layer(i).parameters()) {
      const std::string name = "layers." + std::to_string(i) + "." + p->name;
      put_u32(out, static_cast<std::uint32_t>(name.size()));
      out.insert(out.end(), name.begin(), name.end());
      put_u32(out, 2);
      put_u32(out, static_cast<std::uint32_t>(p->value.rows()));
      put_u32(out, static_cast<std::uint32_t>(p->value.cols()));
      for (double v : p->value.data()) {
        const float f = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(out, bits);
      }
    }
  }
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  std::size_t at = 0;
  if (get_string(bytes, at, 4) != "RVQP") throw DataError("bad magic: not a checkpoint");
  const std::string version = get_string(bytes, at, 2);
  if (static_cast<std::uint8_t>(version[0]) != kCheckpointVersion || version[1] != 0) {
    throw DataError("checkpoint version unsupported");
  }
  Checkpoint ck;
  try {
    ck.meta = nlohmann::json::parse(get_string(bytes, at, get_u32(bytes, at)));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("checkpoint header is not JSON: ") + e.what());
  }
  Rng rng(0);
  ck.model = make_sequential(ck.meta.at("layers"), rng);
  auto params = ck.model.parameters();
  const std::uint32_t count = get_u32(bytes, at);
  if (count != params.size()) throw DataError("checkpoint tensor count does not match layers");
  std::size_t p = 0;
  for (std::size_t i = 0; i < ck.model.size(); ++i) {
    for (Parameter* param : ck.model.layer(i).parameters()) {
      const std::string name = get_string(bytes, at, get_u32(bytes, at));
      if (name != "layers." + std::to_string(i) + "." + param->name) {
        throw DataError("checkpoint tensor '" + name + "' out of order");
      }
      const std::uint32_t rank = get_u32(bytes, at);
      if (rank != 2) throw DataError("checkpoint tensor '" + name + "' must be rank 2");
      const std::size_t rows = get_u32(bytes, at), cols = get_u32(bytes, at);
      if (rows != param->value.rows() || cols != param->value.cols()) {
        throw DataError("checkpoint tensor '" + name + "' has the wrong shape");
      }
      for (double& v : param->value.data()) {
        const std::uint32_t bits = get_u32(bytes, at);
        float f;
        std::memcpy(&f, &bits, 4);
        v = f;
      }
      ++p;
    }
  }
  if (at != bytes.size()) throw DataError("trailing bytes after checkpoint tensors");
  ck.meta.erase("layers");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, Sequential& model,
                     const nlohmann::json& meta) {
  write_bytes(path, encode_checkpoint(model, meta));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw DataError("checkpoint not found: '" + path.string() + "'");
  }
  return decode_checkpoint(read_bytes(path));
}

}  // namespace rvqa
