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

#include <span>
#include <string>
#include <vector>

#include "rvqa/completeness.hpp"
#include "rvqa/grad.hpp"
#include "rvqa/quantizer.hpp"

namespace rvqa {

/// Per-frame phone ids aligned to a FrameSequence.
struct FrameLabels {
  static constexpr int kIgnore = -1;
  std::vector<int> labels;
  std::size_t inventory = 0;  // P

  std::size_t scored() const;
};

/// f0 targets in Hz with the sonorant (voiced) mask.
struct PitchTrack {
  std::vector<double> f0;
  std::vector<bool> voiced;
};

// ---------------------------------------------------------------- phones

class FrameClassifier {
 public:
  FrameClassifier(Probe probe, std::size_t classes) : probe_(std::move(probe)), classes_(classes) {}
  std::vector<int> predict(const Matrix& reps);
  Probe& probe() { return probe_; }
  std::size_t classes() const { return classes_; }

 private:
  Probe probe_;
  std::size_t classes_;
};

/// Cross-entropy training on non-ignored frames. `config` picks the network
/// (linear or mlp); its output width is the label inventory.
FrameClassifier fit_frame_classifier(const FrameSequence& reps, const FrameLabels& labels,
                                     const ProbeConfig& config);

/// Percentage of scored (non-ignored) frames whose prediction is wrong.
double frame_error_rate(std::span<const int> predicted, const FrameLabels& labels);
double frame_error_rate(FrameClassifier& classifier, const FrameSequence& reps,
                        const FrameLabels& labels);

// ---------------------------------------------------------------- pitch

class PitchRegressor {
 public:
  PitchRegressor(Probe probe, double offset, double scale)
      : probe_(std::move(probe)), offset_(offset), scale_(scale) {}
  /// Hz for every frame.
  std::vector<double> predict(const Matrix& reps);

 private:
  Probe probe_;
  double offset_, scale_;  // targets are standardised for training
};

PitchRegressor fit_pitch_regressor(const FrameSequence& reps, const PitchTrack& pitch,
                                   const ProbeConfig& config);

/// sqrt(mean over voiced frames of squared Hz error).
double pitch_rmse(std::span<const double> predicted, const PitchTrack& pitch);
double pitch_rmse(PitchRegressor& regressor, const FrameSequence& reps, const PitchTrack& pitch);

// ---------------------------------------------------------------- speakers

struct Utterance {
  std::string id;
  std::string speaker;
  FrameSequence frames;
};

struct SpeakerEmbedderConfig {
  std::vector<std::size_t> hidden = {64, 32};  // last entry is the embedding size
  TrainConfig train;
  std::size_t crop_frames = 0;  // 0 keeps whole utterances
};

/// Mean and standard deviation pooling followed by an MLP trained to classify
/// speakers. Embeddings are the activations of the last hidden layer.
class SpeakerEmbedder {
 public:
  SpeakerEmbedder(Sequential net, std::vector<std::string> speakers, std::size_t crop_frames);

  std::vector<double> embed(const FrameSequence& utterance);
  /// Index into speakers() of the most likely speaker.
  std::size_t classify(const FrameSequence& utterance);
  const std::vector<std::string>& speakers() const { return speakers_; }
  std::size_t embedding_dim() const;

 private:
  Sequential net_;
  std::vector<std::string> speakers_;
  std::size_t crop_frames_;
};

/// 1 x 2d row of per-dimension mean and (population) standard deviation.
Matrix pool_statistics(const FrameSequence& utterance, std::size_t crop_frames = 0);

SpeakerEmbedder fit_speaker_embedder(const std::vector<Utterance>& dataset,
                                     const SpeakerEmbedderConfig& config);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Equal error rate in percent. The ROC is taken at every distinct score
/// threshold (accept when score >= threshold), its lower convex hull is
/// formed, and the hull segment crossing P_fa == P_miss is interpolated
/// linearly. Only the ordering of scores matters.
double compute_eer(std::span<const double> scores, const std::vector<bool>& genuine);

// ---------------------------------------------------------------- PCA

struct PcaResult {
  Matrix coordinates;                  // T x k
  Matrix components;                   // k x d, orthonormal rows
  std::vector<double> mean;            // d
  std::vector<double> explained_ratio; // k
};

/// Projection onto the top-k eigenvectors of the sample covariance. Each
/// component's largest-magnitude loading is made positive.
PcaResult pca_project(const Matrix& frames, std::size_t k = 2);

}  // namespace rvqa
