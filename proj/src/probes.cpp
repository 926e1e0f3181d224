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

#include "rvqa/probes.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace rvqa {

std::size_t FrameLabels::scored() const {
  return static_cast<std::size_t>(
      std::count_if(labels.begin(), labels.end(), [](int l) { return l != kIgnore; }));
}

namespace {

void check_classifier_family(const ProbeConfig& config) {
  if (config.family == ProbeConfig::Family::kConvStack) {
    throw UsageError("frame-level probes use linear or mlp networks");
  }
}

std::size_t argmax(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

std::vector<int> FrameClassifier::predict(const Matrix& reps) {
  const Matrix logits = probe_.predict(reps);
  std::vector<int> out(logits.rows());
  for (std::size_t t = 0; t < logits.rows(); ++t) out[t] = static_cast<int>(argmax(logits.row(t)));
  return out;
}

FrameClassifier fit_frame_classifier(const FrameSequence& reps, const FrameLabels& labels,
                                     const ProbeConfig& config) {
  check_classifier_family(config);
  if (labels.labels.size() != reps.frames()) {
    throw DataError("misaligned frames: " + std::to_string(labels.labels.size()) +
                    " labels for " + std::to_string(reps.frames()) + " frames");
  }
  if (labels.inventory < 1) throw DataError("label inventory is empty");
  std::vector<std::size_t> keep;
  for (std::size_t t = 0; t < labels.labels.size(); ++t) {
    const int l = labels.labels[t];
    if (l == FrameLabels::kIgnore) continue;
    if (l < 0 || static_cast<std::size_t>(l) >= labels.inventory) {
      throw DataError("label " + std::to_string(l) + " outside inventory of " +
                      std::to_string(labels.inventory));
    }
    keep.push_back(t);
  }
  if (keep.empty()) throw DataError("all frames are ignored");
  const Matrix x = reps.values.gather_rows(keep);
  Matrix y(keep.size(), 1);
  for (std::size_t i = 0; i < keep.size(); ++i) y(i, 0) = labels.labels[keep[i]];

  Probe probe(config, reps.dim(), labels.inventory);
  train_probe(probe, x, y, LossKind::kCrossEntropy);
  return FrameClassifier(std::move(probe), labels.inventory);
}

double frame_error_rate(std::span<const int> predicted, const FrameLabels& labels) {
  if (predicted.size() != labels.labels.size()) throw DataError("misaligned frames");
  std::size_t scored = 0, wrong = 0;
  for (std::size_t t = 0; t < predicted.size(); ++t) {
    if (labels.labels[t] == FrameLabels::kIgnore) continue;
    ++scored;
    if (predicted[t] != labels.labels[t]) ++wrong;
  }
  if (scored == 0) throw DataError("all frames are ignored");
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(scored);
}

double frame_error_rate(FrameClassifier& classifier, const FrameSequence& reps,
                        const FrameLabels& labels) {
  const auto predicted = classifier.predict(reps.values);
  return frame_error_rate(predicted, labels);
}

std::vector<double> PitchRegressor::predict(const Matrix& reps) {
  const Matrix y = probe_.predict(reps);
  std::vector<double> out(y.rows());
  for (std::size_t t = 0; t < y.rows(); ++t) out[t] = offset_ + scale_ * y(t, 0);
  return out;
}

PitchRegressor fit_pitch_regressor(const FrameSequence& reps, const PitchTrack& pitch,
                                   const ProbeConfig& config) {
  check_classifier_family(config);
  if (pitch.f0.size() != reps.frames() || pitch.voiced.size() != reps.frames()) {
    throw DataError("misaligned frames: pitch track does not match representation length");
  }
  std::vector<std::size_t> keep;
  for (std::size_t t = 0; t < pitch.f0.size(); ++t) {
    if (pitch.voiced[t]) keep.push_back(t);
  }
  if (keep.empty()) throw DataError("no voiced frames");

  double mean = 0.0;
  for (std::size_t t : keep) mean += pitch.f0[t];
  mean /= static_cast<double>(keep.size());
  double var = 0.0;
  for (std::size_t t : keep) var += (pitch.f0[t] - mean) * (pitch.f0[t] - mean);
  var /= static_cast<double>(keep.size());
  const double scale = var > 0.0 ? std::sqrt(var) : 1.0;

  const Matrix x = reps.values.gather_rows(keep);
  Matrix y(keep.size(), 1);
  for (std::size_t i = 0; i < keep.size(); ++i) y(i, 0) = (pitch.f0[keep[i]] - mean) / scale;
  Probe probe(config, reps.dim(), 1);
  train_probe(probe, x, y, LossKind::kMse);
  return PitchRegressor(std::move(probe), mean, scale);
}

double pitch_rmse(std::span<const double> predicted, const PitchTrack& pitch) {
  if (predicted.size() != pitch.f0.size() || pitch.voiced.size() != pitch.f0.size()) {
    throw DataError("misaligned frames");
  }
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < predicted.size(); ++t) {
    if (!pitch.voiced[t]) continue;
    const double e = predicted[t] - pitch.f0[t];
    total += e * e;
    ++n;
  }
  if (n == 0) throw DataError("no voiced frames");
  return std::sqrt(total / static_cast<double>(n));
}

double pitch_rmse(PitchRegressor& regressor, const FrameSequence& reps, const PitchTrack& pitch) {
  const auto predicted = regressor.predict(reps.values);
  return pitch_rmse(predicted, pitch);
}

// ---------------------------------------------------------------- speakers

Matrix pool_statistics(const FrameSequence& utterance, std::size_t crop_frames) {
  std::size_t frames = utterance.frames();
  if (crop_frames > 0) frames = std::min(frames, crop_frames);
  if (frames == 0) throw DataError("empty utterance '" + utterance.tag + "'");
  const std::size_t d = utterance.dim();
  Matrix out(1, 2 * d);
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::size_t t = 0; t < frames; ++t) mean += utterance.values(t, j);
    mean /= static_cast<double>(frames);
    double var = 0.0;
    for (std::size_t t = 0; t < frames; ++t) {
      const double c = utterance.values(t, j) - mean;
      var += c * c;
    }
    out(0, j) = mean;
    out(0, d + j) = std::sqrt(var / static_cast<double>(frames));
  }
  return out;
}

SpeakerEmbedder::SpeakerEmbedder(Sequential net, std::vector<std::string> speakers,
                                 std::size_t crop_frames)
    : net_(std::move(net)), speakers_(std::move(speakers)), crop_frames_(crop_frames) {}

std::size_t SpeakerEmbedder::embedding_dim() const {
  return static_cast<const Linear&>(net_.layer(net_.size() - 1)).describe()["in"].get<std::size_t>();
}

std::vector<double> SpeakerEmbedder::embed(const FrameSequence& utterance) {
  Matrix h = pool_statistics(utterance, crop_frames_);
  ForwardContext ctx;
  // Every layer except the final classifier.
  for (std::size_t i = 0; i + 1 < net_.size(); ++i) h = net_.layer(i).forward(h, ctx);
  return h.data();
}

std::size_t SpeakerEmbedder::classify(const FrameSequence& utterance) {
  ForwardContext ctx;
  const Matrix logits = net_.forward(pool_statistics(utterance, crop_frames_), ctx);
  return argmax(logits.row(0));
}

SpeakerEmbedder fit_speaker_embedder(const std::vector<Utterance>& dataset,
                                     const SpeakerEmbedderConfig& config) {
  if (config.hidden.empty()) throw UsageError("speaker embedder needs at least one hidden layer");
  if (dataset.empty()) throw DataError("speaker dataset is empty");
  std::map<std::string, std::size_t> index;
  for (const auto& u : dataset) index.emplace(u.speaker, 0);
  if (index.size() < 2) throw DataError("speaker verification needs at least two speakers");
  std::vector<std::string> speakers;
  for (auto& [name, id] : index) {
    id = speakers.size();
    speakers.push_back(name);
  }

  const std::size_t d = dataset.front().frames.dim();
  Matrix x(dataset.size(), 2 * d);
  Matrix y(dataset.size(), 1);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (dataset[i].frames.dim() != d) throw DataError("utterances disagree on feature dimension");
    const Matrix pooled = pool_statistics(dataset[i].frames, config.crop_frames);
    std::copy(pooled.row(0).begin(), pooled.row(0).end(), x.row(i).begin());
    y(i, 0) = static_cast<double>(index.at(dataset[i].speaker));
  }

  Rng rng(mix_seed(config.train.seed, 91));
  Sequential net;
  std::size_t width = 2 * d;
  for (std::size_t h : config.hidden) {
    net.emplace<Linear>(width, h, rng);
    net.emplace<Relu>();
    width = h;
  }
  net.emplace<Linear>(width, speakers.size(), rng);
  TrainConfig train = config.train;
  train.keep_best = false;
  optimize(net, x, y, LossKind::kCrossEntropy, train);
  return SpeakerEmbedder(std::move(net), std::move(speakers), config.crop_frames);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw UsageError("embedding sizes differ");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

double compute_eer(std::span<const double> scores, const std::vector<bool>& genuine) {
  if (scores.size() != genuine.size()) throw UsageError("scores and labels differ in length");
  const auto n_gen = static_cast<std::size_t>(std::count(genuine.begin(), genuine.end(), true));
  const std::size_t n_imp = genuine.size() - n_gen;
  if (n_gen == 0 || n_imp == 0) {
    throw DataError("EER needs both genuine and impostor trials");
  }
  for (double s : scores) {
    if (std::isnan(s)) throw DataError("NaN score");
  }

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // ROC points (P_fa, P_miss) from the lowest threshold (accept everything)
  // to above the highest score (reject everything).
  struct Point {
    double fa, miss;
  };
  std::vector<Point> roc;
  std::size_t miss = 0, fa = n_imp;
  roc.push_back({1.0, 0.0});
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (genuine[order[j]]) {
        ++miss;
      } else {
        --fa;
      }
      ++j;
    }
    roc.push_back({static_cast<double>(fa) / n_imp, static_cast<double>(miss) / n_gen});
    i = j;
  }
  std::reverse(roc.begin(), roc.end());  // P_fa ascending

  std::vector<Point> hull;
  for (const Point& p : roc) {
    while (hull.size() >= 2) {
      const Point& a = hull[hull.size() - 2];
      const Point& b = hull.back();
      const double cross = (b.fa - a.fa) * (p.miss - a.miss) - (b.miss - a.miss) * (p.fa - a.fa);
      if (cross <= 0.0) {
        hull.pop_back();
      } else {
        break;
      }
    }
    hull.push_back(p);
  }

  for (std::size_t i = 0; i + 1 < hull.size(); ++i) {
    const Point a = hull[i], b = hull[i + 1];
    const double da = a.miss - a.fa, db = b.miss - b.fa;
    if (da >= 0.0 && db <= 0.0) {
      if (da == db) return 100.0 * a.fa;
      const double s = da / (da - db);
      return 100.0 * (a.fa + s * (b.fa - a.fa));
    }
  }
  return 100.0 * hull.back().fa;
}

// ---------------------------------------------------------------- PCA

PcaResult pca_project(const Matrix& frames, std::size_t k) {
  const std::size_t t = frames.rows(), d = frames.cols();
  if (k < 1 || k > d) throw UsageError("PCA component count must be in [1, d]");
  if (t <= k) throw DataError("PCA needs more frames than components");

  PcaResult out;
  out.mean.assign(d, 0.0);
  for (std::size_t r = 0; r < t; ++r) {
    for (std::size_t j = 0; j < d; ++j) out.mean[j] += frames(r, j);
  }
  for (double& m : out.mean) m /= static_cast<double>(t);

  Eigen::MatrixXd centred(t, d);
  for (std::size_t r = 0; r < t; ++r) {
    for (std::size_t j = 0; j < d; ++j) centred(r, j) = frames(r, j) - out.mean[j];
  }
  const Eigen::MatrixXd cov = centred.transpose() * centred / static_cast<double>(t - 1);
  const double total = cov.trace();
  if (!(total > 0.0)) throw DataError("PCA input has zero variance (all points equal)");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("PCA eigen-decomposition failed");
  out.components = Matrix(k, d);
  for (std::size_t c = 0; c < k; ++c) {
    const Eigen::Index col = static_cast<Eigen::Index>(d - 1 - c);  // eigenvalues ascend
    Eigen::VectorXd v = solver.eigenvectors().col(col);
    Eigen::Index peak;
    v.cwiseAbs().maxCoeff(&peak);
    if (v(peak) < 0.0) v = -v;
    for (std::size_t j = 0; j < d; ++j) out.components(c, j) = v(static_cast<Eigen::Index>(j));
    out.explained_ratio.push_back(std::max(0.0, solver.eigenvalues()(col)) / total);
  }
  out.coordinates = Matrix(t, k);
  for (std::size_t r = 0; r < t; ++r) {
    for (std::size_t c = 0; c < k; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += centred(r, j) * out.components(c, j);
      out.coordinates(r, c) = acc;
    }
  }
  return out;
}

}  // namespace rvqa
